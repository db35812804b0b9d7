"""GRPO / CAPO training loop on the toy task, with periodic calibration evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import IO

import numpy as np

from capo.advantage import (
    PEER_MODES,
    MaskConfig,
    capo_advantage,
    grpo_advantage,
    masked_advantage_arrays,
    quartile_mask_config,
)
from capo.metrics import CalibrationReport, auc, mean_at_k, precision_coverage
from capo.objective import ObjectiveConfig, analytic_gradient
from capo.toyenv import PolicyParams, Rollout, Task, sample_rollout
from capo.tts import select_with_confidence

__all__ = [
    "ALGOS",
    "THRESHOLD_SOURCES",
    "TrainConfig",
    "HistoryRecord",
    "TrainHistory",
    "train",
    "evaluate",
    "policy_entropy",
    "reference_mask_config",
]

ALGOS = ("grpo", "capo")
THRESHOLD_SOURCES = ("quartile", "fixed")

EVAL_SEED_OFFSET = 7919
QUARTILE_SEED_OFFSET = 104729


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "capo"
    group_size: int = 8
    batch_questions: int = 32
    mini_batch: int = 16
    inner_epochs: int = 1
    clip_eps: float = 0.2
    kl_coeff: float = 0.0
    learning_rate: float = 4.8
    tau: float = 0.6
    mask: MaskConfig = field(default_factory=MaskConfig)
    mask_enabled: bool = True
    mask_thresholds: str = "quartile"
    use_std: bool = False
    peer_mode: str = "multiplicative"
    total_steps: int = 600
    eval_every: int = 20
    rollout_temperature: float = 1.0
    eval_rollout_n: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if not 1 <= self.mini_batch <= self.batch_questions:
            raise ValueError("need 1 <= mini_batch <= batch_questions")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be at least 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.rollout_temperature > 0:
            raise ValueError("rollout_temperature must be positive")
        if self.eval_rollout_n < 2:
            raise ValueError("eval_rollout_n must be at least 2")
        if self.peer_mode not in PEER_MODES:
            raise ValueError(f"peer_mode must be one of {PEER_MODES}")
        if self.mask_thresholds not in THRESHOLD_SOURCES:
            raise ValueError(f"mask_thresholds must be one of {THRESHOLD_SOURCES}")
        ObjectiveConfig(self.clip_eps, self.kl_coeff)

    @property
    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.clip_eps, self.kl_coeff)

    @property
    def uses_mask(self) -> bool:
        return self.algo == "capo" and self.mask_enabled


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    train_accuracy: float
    eval_accuracy: float
    auc_mean: float
    entropy: float
    masked_fraction: float
    precision_at_half: float
    tts_accuracy: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    mask: MaskConfig | None = None

    COLUMNS = tuple(f.name for f in fields(HistoryRecord))

    def append(self, rec: HistoryRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("history steps must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @property
    def final(self) -> HistoryRecord:
        return self.records[-1]

    def write_csv(self, dest: str | Path | IO[str]) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                return self.write_csv(fh)
        w = csv.writer(dest)
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([getattr(r, c) if c == "step" else repr(float(getattr(r, c))) for c in self.COLUMNS])


def policy_entropy(params: PolicyParams) -> float:
    """Mean entropy (nats) of the per-(question, position) token distributions."""
    lp = params.log_probs()
    return float(-(np.exp(lp) * lp).sum(axis=-1).mean())


def evaluate(params: PolicyParams, task: Task, n: int, seed: int) -> CalibrationReport:
    """Sample ``n`` responses per question and score ranking calibration with lpm.

    Also selects one answer per question by summed ``exp(lpm)`` and reports
    the resulting accuracy and per-question abstention curve.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    Q = task.n_questions
    ro = sample_rollout(params, task, np.arange(Q), n, rng)
    lpm = ro.lpm_old()
    per_q = {}
    defined = []
    for q in range(Q):
        a = auc(lpm[q], ro.rewards[q])
        per_q[q] = a
        if a is not None:
            defined.append(a)
    K = task.spec.reasoning_len
    tts_items = []
    for q in range(Q):
        labels = [tuple(int(t) for t in row) for row in ro.tokens[q, :, K:]]
        best = select_with_confidence(labels, lpm[q])
        tts_items.append((best.aggregated_confidence, int(best.answer_label == task.answer_label(q))))
    return CalibrationReport(
        per_question_auc=per_q,
        auc_mean=math.fsum(defined) / len(defined) if defined else None,
        n_questions_counted=len(defined),
        n_skipped=Q - len(defined),
        mean_at_k=mean_at_k(ro.rewards),
        k=n,
        pc_curve=precision_coverage(zip(lpm.ravel(), ro.rewards.ravel())),
        tts_accuracy=sum(r for _, r in tts_items) / Q,
        tts_pc_curve=precision_coverage(tts_items),
    )


def reference_mask_config(ref: PolicyParams, task: Task, n: int, seed: int) -> MaskConfig:
    """Mask thresholds from quartiles of the reference policy's own PPL."""
    rng = np.random.default_rng(seed)
    ro = sample_rollout(ref, task, np.arange(task.n_questions), n, rng)
    return quartile_mask_config(np.exp(-ro.lpm_old()))


def _advantages(ro: Rollout, cfg: TrainConfig, mask_cfg: MaskConfig | None):
    """Advantages and the 0/1 keep mask for one batch."""
    if cfg.algo == "grpo":
        return grpo_advantage(ro.rewards, cfg.use_std), np.ones(ro.rewards.shape)
    lpm = ro.lpm_old()
    if mask_cfg is None:
        return capo_advantage(lpm, ro.rewards, cfg.tau), np.ones(ro.rewards.shape)
    return masked_advantage_arrays(lpm, ro.rewards, ro.ppl_ref(), cfg.tau, mask_cfg, cfg.peer_mode)


def _record(step, params, task, cfg, train_acc, masked) -> HistoryRecord:
    rep = evaluate(params, task, cfg.eval_rollout_n, cfg.seed + EVAL_SEED_OFFSET)
    nan = float("nan")
    return HistoryRecord(
        step=step,
        train_accuracy=float(np.mean(train_acc)) if train_acc else nan,
        eval_accuracy=rep.mean_at_k,
        auc_mean=nan if rep.auc_mean is None else rep.auc_mean,
        entropy=policy_entropy(params),
        masked_fraction=float(np.mean(masked)) if masked else nan,
        precision_at_half=rep.precision_at(0.5),
        tts_accuracy=rep.tts_accuracy,
    )


def train(task: Task, ref: PolicyParams | None, cfg: TrainConfig, init: PolicyParams | None = None):
    """Run ``cfg.total_steps`` outer steps; return final params and history.

    Each outer step samples ``batch_questions`` groups under the current
    policy, computes advantages once, then takes one gradient-ascent step per
    mini-batch for ``inner_epochs`` passes. The policy starts from ``init``,
    or from ``ref`` when ``init`` is omitted.
    """
    if cfg.batch_questions > task.n_questions:
        raise ValueError("batch_questions exceeds the number of questions")
    if cfg.uses_mask and ref is None:
        raise ValueError("masking enabled without a reference policy")
    if cfg.kl_coeff > 0 and ref is None:
        raise ValueError("a KL penalty needs a reference policy")
    start = init if init is not None else ref
    if start is None:
        raise ValueError("need a reference or initial policy")
    start.check_task(task)
    params = start.copy()
    ref = None if ref is None else ref.copy()

    mask_cfg = None
    if cfg.uses_mask:
        if cfg.mask_thresholds == "quartile":
            mask_cfg = reference_mask_config(ref, task, cfg.eval_rollout_n, cfg.seed + QUARTILE_SEED_OFFSET)
        else:
            mask_cfg = cfg.mask
    need_ref = cfg.uses_mask or cfg.kl_coeff > 0

    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory(mask=mask_cfg)
    obj = cfg.objective
    train_acc: list[float] = []
    masked: list[float] = []
    n_mb = math.ceil(cfg.batch_questions / cfg.mini_batch)

    for step in range(cfg.total_steps + 1):
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            history.append(_record(step, params, task, cfg, train_acc, masked))
            train_acc, masked = [], []
        if step == cfg.total_steps:
            break
        qids = rng.choice(task.n_questions, cfg.batch_questions, replace=False)
        ro = sample_rollout(
            params, task, qids, cfg.group_size, rng, cfg.rollout_temperature,
            ref if need_ref else None,
        )
        adv, keep = _advantages(ro, cfg, mask_cfg)
        train_acc.append(float(ro.rewards.mean()))
        masked.append(float(1.0 - keep.mean()))
        if cfg.learning_rate == 0:
            continue
        for _ in range(cfg.inner_epochs):
            for k in range(n_mb):
                idx = np.arange(k * cfg.mini_batch, min((k + 1) * cfg.mini_batch, cfg.batch_questions))
                g = analytic_gradient(ro.select(idx), adv[idx], params, obj)
                params = params.with_vector(params.vector() + cfg.learning_rate * g)
    return params, history
