"""Property suites behind ``capo check``.

Each suite draws its own random instances from a seed and returns a
:class:`SuiteResult` with pass/fail counts and the worst error it saw.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from capo.advantage import capo_advantage, grpo_advantage
from capo.metrics import auc, auc_brute, regret_bound_check, scaling_counterexample_check
from capo.objective import (
    ObjectiveConfig,
    analytic_gradient,
    batch_objective,
    pairwise_grpo_gradient,
    pairwise_logistic_gradient,
    reinforce_gradient,
    response_lpm,
    response_lpm_gradients,
    u_statistic_check,
)
from capo.surrogate import EXPONENTIAL, HINGE, SQUARED, SurrogateKind, logistic, sigmoid
from capo.toyenv import PolicyParams, Rollout, _gather
from capo.tts import select_answer

__all__ = [
    "SUITES",
    "SuiteResult",
    "run_suite",
    "random_params",
    "random_rollout",
    "max_relative_error",
    "term_scale",
    "USTAT_KERNELS",
    "brute_select",
]


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    worst: float = 0.0
    seconds: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.passed > 0

    def add(self, ok: bool, err: float = 0.0) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
        if not math.isnan(err):
            self.worst = max(self.worst, err)

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = "; ".join(self.notes)
        return (
            f"{status} {self.name}: {self.passed} passed, {self.failed} failed, "
            f"worst {self.worst:.3g}, {self.seconds:.1f}s" + (f" ({extra})" if extra else "")
        )


def max_relative_error(a, b, scale: float = 0.0) -> float:
    """``max|a - b| / max(max|b|, scale)``; zero when both sides vanish.

    ``scale`` is the magnitude of the terms summed into ``b``. When those
    terms cancel exactly, ``b`` is pure round-off and measuring against it
    would be meaningless.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = float(np.max(np.abs(a - b), initial=0.0))
    den = max(float(np.max(np.abs(b), initial=0.0)), scale)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


# -- random instances -------------------------------------------------------------


def random_params(rng: np.random.Generator, n_questions: int, positions: int, vocab: int, scale: float = 1.0) -> PolicyParams:
    """Random logits with a random cluster structure."""
    n_clusters = int(rng.integers(1, n_questions + 1))
    cluster = rng.integers(0, n_clusters, n_questions)
    own = rng.normal(0.0, scale, (n_questions, positions, vocab))
    shared = rng.normal(0.0, scale, (n_clusters, positions, vocab))
    return PolicyParams(own, shared, cluster)


def random_rollout(
    rng: np.random.Generator,
    params: PolicyParams,
    n_groups: int,
    group_size: int,
    behaviour: PolicyParams | None = None,
    ragged: bool = False,
    reference: PolicyParams | None = None,
) -> Rollout:
    """Groups of uniformly random token sequences.

    Recorded ``logp_old`` comes from ``behaviour`` (``params`` when omitted)
    and ``logp_ref`` from ``reference`` when given. ``ragged`` gives
    responses random lengths up to the table's.
    """
    Q, T, V = params.shape
    behaviour = behaviour or params
    qids = rng.integers(0, Q, n_groups)
    tokens = rng.integers(0, V, (n_groups, group_size, T))
    mask = np.ones(tokens.shape, dtype=bool)
    if ragged:
        lengths = rng.integers(1, T + 1, (n_groups, group_size))
        mask = np.arange(T)[None, None, :] < lengths[..., None]
        tokens = np.where(mask, tokens, 0)
    logp_old = np.where(mask, _gather(behaviour.log_probs(), qids, tokens), 0.0)
    rewards = rng.integers(0, 2, (n_groups, group_size)).astype(np.float64)
    ref = None
    if reference is not None:
        ref = np.where(mask, _gather(reference.log_probs(), qids, tokens), 0.0)
    return Rollout(qids, tokens, logp_old, rewards, mask, ref)


def term_scale(ro: Rollout, adv, params: PolicyParams) -> float:
    """Largest entry of ``mean_b (1/G) sum_i |A_bi| |grad lpm_bi|``."""
    adv = np.abs(np.asarray(adv, dtype=np.float64))
    total = np.zeros(params.size)
    for b in range(ro.n_groups):
        g = response_lpm_gradients(ro.select([b]), params)
        total += np.abs(g).T @ adv[b] / ro.group_size
    return float(np.max(total / ro.n_groups))


def _single(rng, G, Q=3, T=3, V=4) -> tuple[Rollout, PolicyParams]:
    params = random_params(rng, Q, T, V)
    ro = random_rollout(rng, params, 1, G, ragged=bool(rng.integers(0, 2)))
    return ro, params


# -- suites -----------------------------------------------------------------------------


def suite_gradients(seed: int = 0, n: int = 100, h: float = 1e-5, tol: float = 1e-6, floor: float = 1e-4) -> SuiteResult:
    """Analytic gradient of the clipped objective against central differences.

    Per-parameter error is ``|a - fd| / max(|a|, |fd|, floor)``; the floor
    keeps entries that are zero up to round-off from dominating. Instances
    whose ratios lie within 1e-3 of a clip boundary are redrawn, since the
    objective has a kink there and differences straddling it are meaningless.
    """
    res = SuiteResult("gradients")
    rng = np.random.default_rng(seed)
    done = 0
    while done < n:
        Q = int(rng.integers(1, 9))
        T = int(rng.integers(1, 4))
        V = int(rng.integers(2, 7))
        params = random_params(rng, Q, T, V)
        behaviour = params.with_vector(params.vector() + rng.normal(0, 0.15, params.size))
        reference = params.with_vector(params.vector() + rng.normal(0, 0.5, params.size))
        cfg = ObjectiveConfig(
            clip_eps=float(rng.choice([0.1, 0.2, 0.3])),
            kl_coeff=float(rng.choice([0.0, 0.1, 0.5])),
            token_mean=bool(rng.integers(0, 2)),
        )
        ro = random_rollout(
            rng, params, int(rng.integers(1, 4)), int(rng.integers(2, 5)),
            behaviour=behaviour, ragged=bool(rng.integers(0, 2)), reference=reference,
        )
        ratio = np.exp(_gather(params.log_probs(), ro.question_ids, ro.tokens) - ro.logp_old)
        near = np.abs(np.abs(ratio - 1.0) - cfg.clip_eps) < 1e-3
        if np.any(near & ro.mask):
            continue
        adv = rng.normal(0.0, 1.0, ro.rewards.shape)
        a = analytic_gradient(ro, adv, params, cfg)
        v = params.vector()
        fd = np.empty_like(v)
        for i in range(v.size):
            e = np.zeros_like(v)
            e[i] = h
            fd[i] = (
                batch_objective(ro, adv, params.with_vector(v + e), cfg)
                - batch_objective(ro, adv, params.with_vector(v - e), cfg)
            ) / (2 * h)
        err = float(np.max(np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)))
        res.add(err <= tol, err)
        done += 1
    return res


def suite_grpo_pairwise(seed: int = 0, n: int = 1000, tol: float = 1e-10) -> SuiteResult:
    res = SuiteResult("pairwise-grpo")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        G = int(rng.integers(2, 9))
        ro, params = _single(rng, G)
        lhs = pairwise_grpo_gradient(ro, params)
        adv = grpo_advantage(ro.rewards, use_std=False)
        rhs = G**2 * reinforce_gradient(ro, adv, params)
        err = max_relative_error(lhs, rhs, G**2 * term_scale(ro, adv, params))
        res.add(err <= tol, err)
    return res


def suite_logistic_pairwise(seed: int = 0, n: int = 1000, tol: float = 1e-10) -> SuiteResult:
    res = SuiteResult("pairwise-logistic")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        G = int(rng.integers(2, 9))
        ro, params = _single(rng, G)
        tau = float(rng.uniform(0.2, 2.0))
        lhs = pairwise_logistic_gradient(ro, params, tau)
        adv = capo_advantage(response_lpm(ro, params), ro.rewards[0], tau)
        rhs = reinforce_gradient(ro, adv[None, :], params)
        err = max_relative_error(lhs, rhs, term_scale(ro, adv[None, :], params))
        res.add(err <= tol, err)
    return res


def suite_clip_at_old(seed: int = 0, n: int = 200, tol: float = 1e-10) -> SuiteResult:
    """At the behaviour policy the clipped objective's gradient is the REINFORCE form."""
    res = SuiteResult("clip-at-old")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        params = random_params(rng, int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 7)))
        ro = random_rollout(rng, params, int(rng.integers(1, 5)), int(rng.integers(2, 9)), ragged=bool(rng.integers(0, 2)))
        adv = rng.normal(0.0, 2.0, ro.rewards.shape)
        cfg = ObjectiveConfig(clip_eps=float(rng.uniform(0.05, 0.5)))
        rhs = reinforce_gradient(ro, adv, params)
        err = max_relative_error(analytic_gradient(ro, adv, params, cfg), rhs, term_scale(ro, adv, params))
        res.add(err <= tol, err)
    return res


def suite_identities(seed: int = 0) -> SuiteResult:
    parts = [suite_grpo_pairwise(seed), suite_logistic_pairwise(seed), suite_clip_at_old(seed)]
    res = SuiteResult("identities")
    for p in parts:
        res.passed += p.passed
        res.failed += p.failed
        res.worst = max(res.worst, p.worst)
        res.notes.append(f"{p.name} {p.passed}/{p.passed + p.failed}")
    return res


REGRET_KINDS = {
    "logistic": logistic(1.0),
    "exponential": EXPONENTIAL,
    "hinge": HINGE,
    "squared": SQUARED,
}


def suite_regret(seed: int = 0, n: int = 1000, kinds: tuple[str, ...] | None = None, tau: float = 1.0) -> SuiteResult:
    res = SuiteResult("regret")
    for name in kinds or tuple(REGRET_KINDS):
        kind = logistic(tau) if name == "logistic" else SurrogateKind.parse(name)
        rep = regret_bound_check(n, kind, seed)
        res.passed += rep.n_instances - rep.violations
        res.failed += rep.violations
        res.worst = max(res.worst, rep.max_ratio)
        res.notes.append(f"{kind}: {rep.violations} violations, max ratio {rep.max_ratio:.3f}")
    return res


def suite_scaling(seed: int = 0, n: int = 100) -> SuiteResult:
    res = SuiteResult("scaling")
    rep = scaling_counterexample_check(n, seed)
    checks = n * len(rep.alphas)
    bad = rep.auc_failures + rep.linear_failures + rep.logistic_negative
    res.passed, res.failed = 3 * checks - bad, bad
    res.worst = rep.max_linear_rel_err
    res.notes.append(
        f"auc changed {rep.auc_failures}, linear off {rep.linear_failures}, logistic < 0 {rep.logistic_negative}"
    )
    return res


def _k_gap(r1, s1, r2, s2):
    return (r1 - r2) * (s1 - s2)


def _k_rank(r1, s1, r2, s2):
    return ((r1 - r2) * (s1 - s2) > 0).astype(np.float64)


def _k_logistic(r1, s1, r2, s2):
    return np.abs(r1 - r2) * sigmoid(-(r1 - r2) * (s1 - s2) / 0.6)


USTAT_KERNELS: dict[str, Callable] = {
    "gap-product": _k_gap,
    "concordance": _k_rank,
    "logistic-weight": _k_logistic,
}


def synthetic_groups(rng: np.random.Generator, n: int, G: int = 8, p_correct: float = 0.4):
    """Independent groups: Bernoulli rewards, normal lpm shifted up for correct responses."""
    rewards = (rng.random((n, G)) < p_correct).astype(np.float64)
    scores = rng.normal(-1.0 + 0.5 * rewards, 0.5)
    return rewards, scores


def suite_ustat(seed: int = 0, n: int = 10000) -> SuiteResult:
    res = SuiteResult("ustat")
    rng = np.random.default_rng(seed)
    rewards, scores = synthetic_groups(rng, n)
    for name, kernel in USTAT_KERNELS.items():
        rep = u_statistic_check(rewards, scores, kernel, seed=seed)
        res.add(rep.passed, abs(rep.z))
        res.notes.append(f"{name}: group {rep.group_mean:.4f} vs pairs {rep.pair_mean:.4f}, z={rep.z:+.2f}")
    return res


def suite_auc_oracle(seed: int = 0, n: int = 10000, max_len: int = 200) -> SuiteResult:
    res = SuiteResult("auc-oracle")
    rng = np.random.default_rng(seed)
    for k in range(n):
        m = int(rng.integers(2, max_len + 1))
        if k % 2:
            scores = rng.integers(-5, 6, m).astype(np.float64) / 4.0  # heavy ties
        else:
            scores = rng.normal(-1.0, 1.0, m)
        rewards = rng.integers(0, 2, m)
        strict = bool(k % 3 == 0)
        fast, slow = auc(scores, rewards, strict), auc_brute(scores, rewards, strict)
        res.add(fast == slow, 0.0 if fast == slow else abs((fast or 0) - (slow or 0)))
    return res


def brute_select(labels, lpms):
    """Reference answer selection: materialise every answer group and compare all of them."""
    groups: dict = {}
    for a, l in zip(labels, lpms):
        groups.setdefault(a, []).append(l)
    scored = [(math.fsum(math.exp(l) for l in ls), len(ls), a) for a, ls in groups.items()]
    best = scored[0]
    for cand in scored[1:]:
        if cand[0] > best[0] or (
            cand[0] == best[0] and (cand[1] > best[1] or (cand[1] == best[1] and cand[2] < best[2]))
        ):
            best = cand
    return best[2]


def suite_tts_oracle(seed: int = 0, n: int = 10000) -> SuiteResult:
    res = SuiteResult("tts-oracle")
    rng = np.random.default_rng(seed)
    for k in range(n):
        N = int(rng.integers(1, 17))
        labels = [int(x) for x in rng.integers(0, int(rng.integers(1, 6)), N)]
        if k % 4 == 0:
            lpms = [-1.0] * N  # every answer ties on confidence per supporter
        else:
            lpms = [float(x) for x in -rng.exponential(1.0, N)]
        ok = select_answer(labels, lpms) == brute_select(labels, lpms)
        res.add(ok)
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "gradients": suite_gradients,
    "identities": suite_identities,
    "regret": suite_regret,
    "scaling": suite_scaling,
    "ustat": suite_ustat,
    "auc-oracle": suite_auc_oracle,
    "tts-oracle": suite_tts_oracle,
}


def run_suite(name: str, seed: int = 0, **kwargs) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    t0 = time.perf_counter()
    res = SUITES[name](seed=seed, **kwargs)
    res.seconds = time.perf_counter() - t0
    return res
