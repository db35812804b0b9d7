"""Advantage estimators: group-relative (GRPO) and calibration-aware (CAPO).

All array functions operate on the last axis, so a ``(G,)`` vector is one
group and a ``(B, G)`` array is a batch of equally sized groups.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from capo.surrogate import sigmoid
from capo.types import Group

__all__ = [
    "MaskConfig",
    "PEER_MODES",
    "grpo_advantage",
    "capo_advantage",
    "ref_mask",
    "quartile_mask_config",
    "capo_masked_advantage",
    "masked_advantage_arrays",
    "advantage_curve",
    "write_curve_csv",
]

PEER_MODES = ("multiplicative", "exclusive")


@dataclass(frozen=True)
class MaskConfig:
    """Reference-perplexity band used to drop noisy responses."""

    ref_high: float = 2.5
    ref_low: float = 1.05

    def __post_init__(self):
        if not (1.0 <= self.ref_low < self.ref_high):
            raise ValueError(
                f"need 1 <= ref_low < ref_high, got ref_low={self.ref_low}, ref_high={self.ref_high}"
            )


def _check_rewards(rewards: np.ndarray) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 2:
        raise ValueError("a group needs at least 2 responses")
    if not np.all((r == 0.0) | (r == 1.0)):
        raise ValueError("rewards must be binary")
    return r


def grpo_advantage(rewards, use_std: bool = False) -> np.ndarray:
    """``R_i - mean(R)``, optionally divided by the population std.

    Groups whose rewards are all equal get zero advantage either way.
    """
    r = _check_rewards(rewards)
    adv = r - r.mean(axis=-1, keepdims=True)
    if use_std:
        std = r.std(axis=-1, keepdims=True)
        adv = np.divide(adv, std, out=np.zeros_like(adv), where=std > 0)
    return adv


def capo_advantage(
    lpms,
    rewards,
    tau: float,
    include_tau_factor: bool = False,
    peer_mean: bool = False,
    active=None,
) -> np.ndarray:
    """Uncertainty-aware advantage from the logistic pairwise surrogate.

    A correct response gets ``sum_j sigmoid(-(lpm_i - lpm_j)/tau)`` over the
    incorrect responses ``j``; an incorrect one gets minus the same sum over
    the correct responses. Empty opposite classes give zero.

    ``active`` (boolean, same shape) restricts both the responses that
    receive an advantage and the peers entering each sum. ``peer_mean``
    divides each sum by its number of peers.
    """
    lp = np.asarray(lpms, dtype=np.float64)
    r = _check_rewards(rewards)
    if lp.shape != r.shape:
        raise ValueError(f"lpms shape {lp.shape} != rewards shape {r.shape}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    act = np.ones(r.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool)

    pos = r * act
    neg = (1.0 - r) * act
    # w[..., i, j] = sigmoid(-(lpm_i - lpm_j) / tau)
    w = sigmoid(-(lp[..., :, None] - lp[..., None, :]) / tau)
    if include_tau_factor:
        w = w / tau
    up = np.einsum("...ij,...j->...i", w, neg)
    down = np.einsum("...ji,...j->...i", w, pos)
    if peer_mean:
        n_neg = neg.sum(axis=-1, keepdims=True)
        n_pos = pos.sum(axis=-1, keepdims=True)
        up = np.divide(up, n_neg, out=np.zeros_like(up), where=n_neg > 0)
        down = np.divide(down, n_pos, out=np.zeros_like(down), where=n_pos > 0)
    return pos * up - neg * down


def ref_mask(reward, ppl_ref, cfg: MaskConfig):
    """1 to keep a response, 0 to drop it.

    Correct responses are kept when reference PPL <= ref_high, incorrect
    ones when reference PPL >= ref_low.
    """
    r = np.asarray(reward)
    p = np.asarray(ppl_ref, dtype=np.float64)
    keep = np.where(r == 1, p <= cfg.ref_high, p >= cfg.ref_low).astype(np.int64)
    return keep if keep.ndim else int(keep)


def quartile_mask_config(ppl_ref) -> MaskConfig:
    """Thresholds from the quartiles of a sample of reference PPL values.

    ``ref_high`` is the upper quartile and ``ref_low`` the lower quartile
    (floored at 1) of the pooled sample, correct and incorrect together.
    """
    p = np.asarray(ppl_ref, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("no reference PPL values")
    high = float(np.quantile(p, 0.75))
    low = max(1.0, float(np.quantile(p, 0.25)))
    if not low < high:
        raise ValueError(f"reference PPL quartiles coincide: low={low}, high={high}")
    return MaskConfig(ref_high=high, ref_low=low)


def masked_advantage_arrays(
    lpms,
    rewards,
    ppl_ref,
    tau: float,
    cfg: MaskConfig,
    peer_mode: str = "multiplicative",
    **kwargs,
) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`capo_masked_advantage`; also returns the mask."""
    if peer_mode not in PEER_MODES:
        raise ValueError(f"unknown peer_mode {peer_mode!r}")
    m = ref_mask(np.asarray(rewards), ppl_ref, cfg)
    m = np.asarray(m, dtype=np.float64)
    if peer_mode == "multiplicative":
        adv = m * capo_advantage(lpms, rewards, tau, **kwargs)
    else:
        adv = capo_advantage(lpms, rewards, tau, active=m.astype(bool), **kwargs)
    return adv, m


def capo_masked_advantage(
    group: Group,
    tau: float,
    cfg: MaskConfig,
    peer_mode: str = "multiplicative",
    **kwargs,
) -> np.ndarray:
    """CAPO advantage for a sampled group, with reference-PPL noise masking.

    Confidence is the behavior-policy lpm of each response. In
    ``multiplicative`` mode the unmasked advantage is multiplied by the
    mask; in ``exclusive`` mode masked responses are also removed as peers.
    """
    if not group.has_reference:
        raise ValueError("reference log-probabilities required")
    lpms = np.array([r.lpm_old for r in group])
    ppl_ref = np.array([r.ppl_ref for r in group])
    adv, _ = masked_advantage_arrays(lpms, group.rewards, ppl_ref, tau, cfg, peer_mode, **kwargs)
    return adv


def advantage_curve(gap_min: float, gap_max: float, steps: int, tau: float) -> list[tuple[float, float]]:
    """Advantage magnitude ``sigmoid(-gap/tau)`` of a correct/incorrect pair
    on a uniform grid of confidence gaps."""
    if not gap_min < gap_max:
        raise ValueError("gap_min must be below gap_max")
    if steps < 2:
        raise ValueError("need at least 2 grid points")
    gaps = np.linspace(gap_min, gap_max, steps)
    mags = sigmoid(-gaps / tau)
    return [(float(g), float(m)) for g, m in zip(gaps, mags)]


def write_curve_csv(dest: str | Path | IO[str], curve) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            return write_curve_csv(fh, curve)
    w = csv.writer(dest)
    w.writerow(["gap", "magnitude"])
    for g, m in curve:
        w.writerow([repr(g), repr(m)])
