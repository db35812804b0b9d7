"""Clipped policy objective and closed-form gradients for the tabular policy.

Every batch function accepts either a :class:`~capo.toyenv.Rollout` or a
list of :class:`~capo.types.Group`; advantages are a ``(n_groups, G)`` array.
Gradients are flat vectors in :meth:`PolicyParams.vector` layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from capo.advantage import capo_advantage
from capo.surrogate import ScoredInstance, logistic, sigmoid, surrogate_risk
from capo.toyenv import PolicyParams, Rollout, _gather
from capo.types import Group

__all__ = [
    "ObjectiveConfig",
    "token_ratio",
    "clipped_term",
    "kl_k3",
    "batch_objective",
    "analytic_gradient",
    "reinforce_gradient",
    "response_lpm",
    "response_lpm_gradients",
    "pairwise_grpo_gradient",
    "pairwise_logistic_gradient",
    "logistic_pairwise_objective",
    "UStatReport",
    "u_statistic_check",
]


@dataclass(frozen=True)
class ObjectiveConfig:
    clip_eps: float = 0.2
    kl_coeff: float = 0.0
    token_mean: bool = True

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be non-negative")


def token_ratio(logp_new, logp_old):
    out = np.exp(np.asarray(logp_new, dtype=np.float64) - logp_old)
    return out if out.ndim else float(out)


def clipped_term(ratio, adv, eps: float):
    """``min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    out = np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    return out if out.ndim else float(out)


def kl_k3(logp_ref, logp_theta):
    """Non-negative KL estimate ``r - log r - 1`` with ``r = pi_ref / pi_theta``."""
    log_r = np.asarray(logp_ref, dtype=np.float64) - logp_theta
    out = np.expm1(log_r) - log_r
    return out if out.ndim else float(out)


def _as_rollout(batch) -> Rollout:
    return batch if isinstance(batch, Rollout) else Rollout.from_groups(batch)


def _check(ro: Rollout, adv, params: PolicyParams) -> np.ndarray:
    a = np.asarray(adv, dtype=np.float64)
    if a.shape != ro.rewards.shape:
        raise ValueError(f"advantages have shape {a.shape}, expected {ro.rewards.shape}")
    Q, T, V = params.shape
    if ro.tokens.shape[-1] > T:
        raise ValueError("responses are longer than the policy table")
    if ro.question_ids.min() < 0 or ro.question_ids.max() >= Q:
        raise ValueError("question id outside the policy table")
    if ro.tokens.min() < 0 or ro.tokens.max() >= V:
        raise ValueError("token id outside the vocabulary")
    return a


def _token_weights(ro: Rollout, token_mean: bool) -> np.ndarray:
    """Per-token weight ``1 / (n_groups * G * |o_i|)`` (or without the length factor)."""
    B, G, _ = ro.tokens.shape
    w = ro.mask / (B * G)
    if token_mean:
        w = w / ro.lengths[..., None]
    return w


def _current_logp(ro: Rollout, table: np.ndarray) -> np.ndarray:
    return _gather(table, ro.question_ids, ro.tokens)


def batch_objective(batch, advantages, params: PolicyParams, cfg: ObjectiveConfig = ObjectiveConfig()) -> float:
    """Mean over groups of ``(1/G) sum_i (1/|o_i|) sum_t [clipped term - kl_coeff * kl]``."""
    ro = _as_rollout(batch)
    a = _check(ro, advantages, params)
    lp = _current_logp(ro, params.log_probs())
    ratio = token_ratio(lp, ro.logp_old)
    per_token = clipped_term(ratio, a[..., None], cfg.clip_eps)
    if cfg.kl_coeff > 0:
        if ro.logp_ref is None:
            raise ValueError("reference log-probabilities required for the KL term")
        per_token = per_token - cfg.kl_coeff * kl_k3(ro.logp_ref, lp)
    w = _token_weights(ro, cfg.token_mean)
    return float(np.sum(np.where(ro.mask, per_token, 0.0) * w))


def _scatter(ro: Rollout, coef: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Gradient on the logits of ``sum coef * log pi(token)``.

    Each token contributes ``coef * (onehot(token) - p)`` at its
    (question, position) row. Accumulation uses bincount, so the reduction
    order is fixed.
    """
    Q, T, V = table.shape
    B, G, L = ro.tokens.shape
    rows = (ro.question_ids[:, None, None] * T + np.arange(L)[None, None, :])
    rows = np.broadcast_to(rows, (B, G, L)).ravel()
    c = coef.ravel()
    onehot = np.bincount(rows * V + ro.tokens.ravel(), weights=c, minlength=Q * T * V)
    row_sum = np.bincount(rows, weights=c, minlength=Q * T)
    probs = np.exp(table).reshape(Q * T, V)
    return (onehot.reshape(Q * T, V) - row_sum[:, None] * probs).reshape(Q, T, V)


def analytic_gradient(batch, advantages, params: PolicyParams, cfg: ObjectiveConfig = ObjectiveConfig()) -> np.ndarray:
    """Exact gradient of :func:`batch_objective`.

    Where the clip is active the term is constant and contributes nothing;
    at the exact clip boundary the unclipped branch is used.
    """
    ro = _as_rollout(batch)
    a = _check(ro, advantages, params)[..., None]
    table = params.log_probs()
    lp = _current_logp(ro, table)
    ratio = token_ratio(lp, ro.logp_old)
    eps = cfg.clip_eps
    clipped = ((a > 0) & (ratio > 1.0 + eps)) | ((a < 0) & (ratio < 1.0 - eps))
    d = np.where(clipped, 0.0, ratio * a)
    if cfg.kl_coeff > 0:
        if ro.logp_ref is None:
            raise ValueError("reference log-probabilities required for the KL term")
        # d/dlogp of (r - log r - 1) with r = exp(ref - logp) is 1 - r
        d = d - cfg.kl_coeff * -np.expm1(ro.logp_ref - lp)
    coef = np.where(ro.mask, d, 0.0) * _token_weights(ro, cfg.token_mean)
    return params.pull_back(_scatter(ro, coef, table))


def reinforce_gradient(batch, advantages, params: PolicyParams) -> np.ndarray:
    """Mean over groups of ``(1/G) sum_i A_i * grad lpm(o_i)``."""
    ro = _as_rollout(batch)
    a = _check(ro, advantages, params)
    coef = a[..., None] * _token_weights(ro, token_mean=True)
    return params.pull_back(_scatter(ro, coef, params.log_probs()))


# -- pairwise forms -----------------------------------------------------------------


def _single_group(group) -> Rollout:
    ro = _as_rollout([group] if isinstance(group, Group) else group)
    if ro.n_groups != 1:
        raise ValueError("expected a single group")
    return ro


def response_lpm(group, params: PolicyParams) -> np.ndarray:
    """Mean token log-probability of each response under ``params``."""
    ro = _single_group(group)
    lp = _current_logp(ro, params.log_probs())
    return (np.where(ro.mask, lp, 0.0).sum(axis=-1) / ro.lengths)[0]


def response_lpm_gradients(group, params: PolicyParams) -> np.ndarray:
    """``(G, n_params)`` matrix whose rows are the gradients of each response's lpm."""
    ro = _single_group(group)
    table = params.log_probs()
    G = ro.group_size
    out = np.empty((G, params.size))
    for i in range(G):
        coef = np.zeros(ro.tokens.shape)
        coef[0, i] = ro.mask[0, i] / ro.lengths[0, i]
        out[i] = params.pull_back(_scatter(ro, coef, table))
    return out


def pairwise_grpo_gradient(group, params: PolicyParams) -> np.ndarray:
    """``sum_{i<j} (R_i - R_j)(grad lpm_i - grad lpm_j)``, one pair at a time."""
    ro = _single_group(group)
    g = response_lpm_gradients(ro, params)
    r = ro.rewards[0]
    out = np.zeros(params.size)
    G = ro.group_size
    for i in range(G):
        for j in range(i + 1, G):
            if r[i] != r[j]:
                out += (r[i] - r[j]) * (g[i] - g[j])
    return out


def pairwise_logistic_gradient(group, params: PolicyParams, tau: float) -> np.ndarray:
    """Gradient of :func:`logistic_pairwise_objective`, one (correct, incorrect) pair at a time.

    ``(1/G) sum sigmoid(-(lpm_i - lpm_j)/tau) (grad lpm_i - grad lpm_j)``.
    """
    ro = _single_group(group)
    r = ro.rewards[0]
    out = np.zeros(params.size)
    if r.min() == r.max():
        return out
    lpm = response_lpm(ro, params)
    g = response_lpm_gradients(ro, params)
    for i in np.flatnonzero(r == 1):
        for j in np.flatnonzero(r == 0):
            out += sigmoid(-(lpm[i] - lpm[j]) / tau) * (g[i] - g[j])
    return out / ro.group_size


def logistic_pairwise_objective(group, params: PolicyParams, tau: float) -> float:
    """``-(tau * n_pos * n_neg / G)`` times the mean logistic pair loss of the lpm scores.

    Its gradient is the pairwise logistic gradient above; zero on single-class groups.
    """
    ro = _single_group(group)
    r = ro.rewards[0]
    if r.min() == r.max():
        return 0.0
    inst = ScoredInstance(response_lpm(ro, params), r.astype(int))
    n_pos = int(r.sum())
    n_neg = r.size - n_pos
    return -tau * n_pos * n_neg / r.size * surrogate_risk(inst, logistic(tau))


def capo_reinforce_gradient(group, params: PolicyParams, tau: float) -> np.ndarray:
    """REINFORCE form with CAPO advantages computed from the current lpm."""
    ro = _single_group(group)
    adv = capo_advantage(response_lpm(ro, params), ro.rewards[0], tau)
    return reinforce_gradient(ro, adv[None, :], params)


# -- U-statistic check ---------------------------------------------------------------


@dataclass(frozen=True)
class UStatReport:
    n_groups: int
    group_mean: float
    pair_mean: float
    std_error: float
    z: float

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def u_statistic_check(
    rewards,
    scores,
    kernel: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    seed: int = 0,
    min_groups: int = 1000,
) -> UStatReport:
    """Compare the within-group order-2 U-statistic with independent pairs.

    ``rewards`` and ``scores`` are ``(n, G)`` arrays, one row per sampled
    group. ``kernel(r1, s1, r2, s2)`` is vectorised over its arguments. The
    group estimate averages the per-group U-statistic over all ``i < j``;
    the reference estimate pairs one random response from each of two
    disjoint, randomly matched groups, so every pair is an independent draw.
    """
    r = np.asarray(rewards, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if r.ndim != 2 or r.shape != s.shape:
        raise ValueError("rewards and scores must be matching (n, G) arrays")
    n, G = r.shape
    if n < min_groups:
        raise ValueError(f"need at least {min_groups} groups, got {n}")
    if G < 2:
        raise ValueError("groups need at least 2 responses")
    iu, ju = np.triu_indices(G, k=1)
    per_group = kernel(r[:, iu], s[:, iu], r[:, ju], s[:, ju]).mean(axis=1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    a, b = order[0 : n - n % 2 : 2], order[1 : n - n % 2 : 2]
    col_a = rng.integers(0, G, a.size)
    col_b = rng.integers(0, G, b.size)
    pairs = kernel(r[a, col_a], s[a, col_a], r[b, col_b], s[b, col_b])
    gm, pm = float(per_group.mean()), float(pairs.mean())
    se = float(np.sqrt(per_group.var(ddof=1) / n + pairs.var(ddof=1) / pairs.size))
    diff = gm - pm
    z = 0.0 if diff == 0 else (diff / se if se > 0 else float("inf"))
    return UStatReport(n, gm, pm, se, z)
