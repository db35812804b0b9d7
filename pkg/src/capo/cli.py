"""Command-line front end: ``capo {train,eval,check,curve}``.

Exit codes: 0 success, 1 a check suite failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from capo.advantage import advantage_curve, write_curve_csv
from capo.checks import SUITES, run_suite
from capo.config import ConfigError, RunConfig, apply_overrides, load_config
from capo.toyenv import PolicyParams, generate_task, pretrain_reference, sample_rollout
from capo.trainer import evaluate, train
from capo.tts import write_selections

__all__ = ["main"]


class UsageError(Exception):
    pass


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    """Turn leftover ``--a.b=v`` / ``--a.b v`` arguments into (key, value) pairs."""
    out = []
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--") or len(arg) == 2:
            raise UsageError(f"unexpected argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for --{body}")
            key, value = body, extra[i + 1]
            i += 1
        out.append((key.replace("-", "_"), value))
        i += 1
    return out


def _resolve_config(args, extra: list[str]) -> RunConfig:
    return apply_overrides(load_config(args.config), _split_overrides(extra))


def _reference(cfg: RunConfig):
    task = generate_task(cfg.task)
    ref = pretrain_reference(task, cfg.reference.bias_strength, cfg.reference.smoothing)
    return task, ref


def cmd_train(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    if args.print_config:
        sys.stdout.write(cfg.dumps())
        return 0
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    task, ref = _reference(cfg)
    params, history = train(task, ref, cfg.train)
    report = evaluate(params, task, cfg.train.eval_rollout_n, cfg.train.seed)
    (out / "config.json").write_text(cfg.dumps())
    if "csv" in cfg.formats:
        history.write_csv(out / "history.csv")
        report.write_pc_csv(out / "pc_curve.csv")
    if "json" in cfg.formats:
        report.write_json(out / "report.json")
    params.save(out / "checkpoint.json")
    ref.save(out / "reference.json")
    auc = "undefined" if report.auc_mean is None else f"{report.auc_mean:.4f}"
    print(
        f"{cfg.train.algo} seed={cfg.train.seed} steps={cfg.train.total_steps}: "
        f"accuracy={report.mean_at_k:.4f} auc_mean={auc} -> {out}"
    )
    return 0


def cmd_eval(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    task, ref = _reference(cfg)
    if args.checkpoint:
        path = Path(args.checkpoint)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {path}")
        params = PolicyParams.load(path)
    else:
        params = ref
    params.check_task(task)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    report = evaluate(params, task, args.n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_pc_csv(out / "pc_curve.csv")
    report.write_pc_csv(out / "tts_pc_curve.csv", tts=True)
    ro = sample_rollout(params, task, np.arange(task.n_questions), args.n, np.random.default_rng(args.seed))
    K = task.spec.reasoning_len
    groups = {
        q: ro.select([q]).to_groups(lambda _q, toks: tuple(int(t) for t in toks[K:]))[0].responses
        for q in range(task.n_questions)
    } if args.n >= 2 else None
    if groups is not None:
        write_selections(out / "tts.jsonl", groups)
    if report.auc_mean is None:
        print("warning: AUC is undefined for every question (need both correct and incorrect samples)", file=sys.stderr)
        auc = "undefined"
    else:
        auc = f"{report.auc_mean:.4f} over {report.n_questions_counted} questions ({report.n_skipped} skipped)"
    print(f"mean@{args.n}={report.mean_at_k:.4f} auc_mean={auc} tts_accuracy={report.tts_accuracy:.4f} -> {out}")
    return 0


def cmd_check(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    kwargs = {}
    if args.n is not None:
        if args.suite == "identities":
            raise UsageError("--n is not supported for the identities suite")
        kwargs["n"] = args.n
    if args.kind:
        if args.suite != "regret":
            raise UsageError("--kind only applies to the regret suite")
        kwargs["kinds"] = (args.kind,)
        kwargs["tau"] = args.tau
    res = run_suite(args.suite, seed=args.seed, **kwargs)
    print(res.summary())
    return 0 if res.ok else 1


def cmd_curve(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    if not args.tau > 0:
        raise UsageError("--tau must be positive")
    try:
        curve = advantage_curve(args.gap_min, args.gap_max, args.steps, args.tau)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.out == "-":
        write_curve_csv(sys.stdout, curve)
    else:
        write_curve_csv(args.out, curve)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train GRPO or CAPO on the toy task",
                       epilog="Any config field can be overridden as --section.field=value, "
                              "e.g. --algo grpo --seed 1 --mask.enabled=false.")
    t.add_argument("--config", help="JSON run config (defaults when omitted)")
    t.add_argument("--out", help="output directory (overrides output.dir)")
    t.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (the reference policy by default)")
    e.add_argument("--config", help="JSON run config defining the task")
    e.add_argument("--checkpoint", help="policy checkpoint written by train")
    e.add_argument("--n", type=int, default=16, help="samples per question")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run a property suite")
    c.add_argument("suite", choices=sorted(SUITES))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n", type=int, help="number of random instances")
    c.add_argument("--kind", choices=("logistic", "exponential", "hinge", "squared"),
                   help="regret suite: a single surrogate")
    c.add_argument("--tau", type=float, default=1.0, help="logistic temperature for --kind logistic")
    c.set_defaults(func=cmd_check)

    v = sub.add_parser("curve", help="write advantage magnitude against confidence gap as CSV")
    v.add_argument("--tau", type=float, default=0.6)
    v.add_argument("--gap-min", type=float, default=-4.0)
    v.add_argument("--gap-max", type=float, default=4.0)
    v.add_argument("--steps", type=int, default=81)
    v.add_argument("--out", default="-", help="CSV path, or - for stdout")
    v.set_defaults(func=cmd_curve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args, extra)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
