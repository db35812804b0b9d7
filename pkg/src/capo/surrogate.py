"""Pairwise surrogate losses for AUC maximization.

A surrogate ``phi`` replaces the misranking indicator of a (positive, negative)
pair by a convex function of their score gap ``t = f(pos) - f(neg)``.
The linear member ``phi(t) = -t`` is the one implied by reward-only advantage
estimation; it is included so its inconsistency can be demonstrated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "KINDS",
    "SurrogateKind",
    "ScoredInstance",
    "logistic",
    "EXPONENTIAL",
    "HINGE",
    "SQUARED",
    "LINEAR",
    "sigmoid",
    "phi",
    "phi_prime",
    "surrogate_risk",
    "true_auc_risk",
    "is_consistent",
    "regret_constant",
]

KINDS = ("logistic", "exponential", "hinge", "squared", "linear")


@dataclass(frozen=True)
class SurrogateKind:
    name: str
    tau: float = 1.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown surrogate {self.name!r}; expected one of {KINDS}")
        if self.name == "logistic" and not self.tau > 0:
            raise ValueError("logistic temperature must be positive")

    def __str__(self):
        return f"logistic(tau={self.tau:g})" if self.name == "logistic" else self.name

    @classmethod
    def parse(cls, text: str, tau: float = 1.0) -> "SurrogateKind":
        return cls(text, tau if text == "logistic" else 1.0)


def logistic(tau: float = 1.0) -> SurrogateKind:
    return SurrogateKind("logistic", tau)


EXPONENTIAL = SurrogateKind("exponential")
HINGE = SurrogateKind("hinge")
SQUARED = SurrogateKind("squared")
LINEAR = SurrogateKind("linear")


def sigmoid(x):
    """Logistic sigmoid, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def phi(kind: SurrogateKind, t):
    """Surrogate loss value at gap ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    if kind.name == "logistic":
        out = np.logaddexp(0.0, -t / kind.tau)
    elif kind.name == "exponential":
        out = np.exp(-t)
    elif kind.name == "hinge":
        out = np.maximum(0.0, 1.0 - t)
    elif kind.name == "squared":
        out = (1.0 - t) ** 2
    else:
        out = -t
    return out if out.ndim else float(out)


def phi_prime(kind: SurrogateKind, t, include_tau_factor: bool = False):
    """Derivative of ``phi`` with respect to the gap.

    For the logistic loss this returns ``-sigmoid(-t/tau)``, i.e. the
    ``1/tau`` chain-rule factor is left out unless ``include_tau_factor``.
    The hinge subgradient at ``t = 1`` is taken as 0.
    """
    t = np.asarray(t, dtype=np.float64)
    if kind.name == "logistic":
        out = -np.asarray(sigmoid(-t / kind.tau))
        if include_tau_factor:
            out = out / kind.tau
    elif kind.name == "exponential":
        out = -np.exp(-t)
    elif kind.name == "hinge":
        out = np.where(t < 1.0, -1.0, 0.0)
    elif kind.name == "squared":
        out = -2.0 * (1.0 - t)
    else:
        out = np.full_like(t, -1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ScoredInstance:
    """Confidence scores with binary correctness labels for one question."""

    scores: np.ndarray
    rewards: np.ndarray

    def __init__(self, scores: Sequence[float], rewards: Sequence[int]):
        s = np.asarray(scores, dtype=np.float64)
        r = np.asarray(rewards)
        if s.ndim != 1 or s.shape != r.shape:
            raise ValueError("scores and rewards must be 1-d and the same length")
        if s.size < 2:
            raise ValueError("need at least 2 scored responses")
        if not np.all((r == 0) | (r == 1)):
            raise ValueError("rewards must be binary")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "rewards", r.astype(np.int64))

    @property
    def is_degenerate(self) -> bool:
        return bool(self.rewards.min() == self.rewards.max())

    def pair_gaps(self) -> np.ndarray:
        """``f(pos) - f(neg)`` for every cross-class pair, positive-major order."""
        if self.is_degenerate:
            raise ValueError("degenerate instance")
        pos = self.scores[self.rewards == 1]
        neg = self.scores[self.rewards == 0]
        return (pos[:, None] - neg[None, :]).ravel()

    def scaled(self, alpha: float) -> "ScoredInstance":
        return ScoredInstance(alpha * self.scores, self.rewards)


def surrogate_risk(inst: ScoredInstance, kind: SurrogateKind) -> float:
    """Mean surrogate loss over all (positive, negative) pairs."""
    return float(np.mean(phi(kind, inst.pair_gaps())))


def true_auc_risk(inst: ScoredInstance) -> float:
    """``-AUC`` with ties credited one half."""
    from capo.metrics import auc

    if inst.is_degenerate:
        raise ValueError("degenerate instance")
    return -auc(inst.scores, inst.rewards)


def is_consistent(kind: SurrogateKind) -> bool:
    """Whether minimizing ``kind`` is known to be AUC-consistent."""
    return kind.name != "linear"


def regret_constant(kind: SurrogateKind) -> float:
    """Multiplier on surrogate regret in the AUC regret bound."""
    if kind.name == "linear":
        raise ValueError("no regret bound for inconsistent surrogate")
    return 1.0 / np.log(2.0) if kind.name == "logistic" else 1.0
