"""Ranking-calibration and accuracy metrics, plus the surrogate regret harnesses."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Hashable, Iterable, Sequence

import numpy as np

from capo.surrogate import (
    LINEAR,
    ScoredInstance,
    SurrogateKind,
    logistic,
    regret_constant,
    surrogate_risk,
    true_auc_risk,
)

__all__ = [
    "auc",
    "auc_brute",
    "AucMean",
    "auc_mean",
    "mean_at_k",
    "precision_coverage",
    "precision_at_coverage",
    "CalibrationReport",
    "RegretReport",
    "regret_bound_check",
    "ScalingReport",
    "scaling_counterexample_check",
    "random_instance",
]


def _split(scores, rewards):
    s = np.asarray(scores, dtype=np.float64)
    r = np.asarray(rewards)
    if s.shape != r.shape or s.ndim != 1:
        raise ValueError(f"scores and rewards must be 1-d of equal length, got {s.shape} and {r.shape}")
    if np.isnan(s).any():
        raise ValueError("scores must not be NaN")
    return s[r == 1], s[r == 0]


def auc(scores, rewards, strict: bool = False) -> float | None:
    """Fraction of (correct, incorrect) pairs ranked correctly by ``scores``.

    Ties earn half credit, or none with ``strict``. Returns ``None`` when one
    class is empty. The credit is counted in half-units as an integer before
    the single final division, so the result is exact for a given pair count.
    """
    pos, neg = _split(scores, rewards)
    if pos.size == 0 or neg.size == 0:
        return None
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    if strict:
        halves = 2 * int(below.sum())
    else:
        halves = int(below.sum()) + int(np.searchsorted(neg, pos, side="right").sum())
    return halves / (2 * pos.size * neg.size)


def auc_brute(scores, rewards, strict: bool = False) -> float | None:
    """Full pair-matrix enumeration; the reference for :func:`auc`."""
    pos, neg = _split(scores, rewards)
    if pos.size == 0 or neg.size == 0:
        return None
    p, n = pos[:, None], neg[None, :]
    halves = 2 * int(np.count_nonzero(p > n))
    if not strict:
        halves += int(np.count_nonzero(p == n))
    return halves / (2 * pos.size * neg.size)


@dataclass(frozen=True)
class AucMean:
    value: float
    n_defined: int
    n_skipped: int


def auc_mean(items: Iterable[tuple[Sequence[float], Sequence[int]]], strict: bool = False) -> AucMean:
    """Average per-question AUC, skipping questions with a single class."""
    vals = []
    skipped = 0
    for scores, rewards in items:
        a = auc(scores, rewards, strict)
        if a is None:
            skipped += 1
        else:
            vals.append(a)
    if not vals:
        raise ValueError("no rankable questions")
    return AucMean(math.fsum(vals) / len(vals), len(vals), skipped)


def mean_at_k(rewards) -> float:
    """Mean reward over ``k`` responses for each of several questions."""
    rows = [list(r) for r in rewards]
    if not rows or len({len(r) for r in rows}) != 1 or not rows[0]:
        raise ValueError("every question needs the same non-zero number of responses")
    return float(np.mean(np.asarray(rows, dtype=np.float64)))


def precision_coverage(items: Iterable[tuple[float, int]]) -> list[tuple[float, float]]:
    """Abstention curve: one ``(coverage, precision)`` point per distinct confidence.

    A point answers every item whose confidence is at least the threshold.
    Points are ordered by decreasing threshold, so coverage rises to 1.
    """
    arr = np.asarray(list(items), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no items")
    conf, rew = arr[:, 0], arr[:, 1]
    order = np.argsort(-conf, kind="stable")
    conf, rew = conf[order], rew[order]
    hits = np.cumsum(rew)
    # last index of each run of equal confidence
    ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    n = conf.size
    return [(float((e + 1) / n), float(hits[e] / (e + 1))) for e in ends]


def precision_at_coverage(curve: Sequence[tuple[float, float]], coverage: float) -> float:
    """Precision at the first curve point whose coverage reaches ``coverage``."""
    for cov, prec in curve:
        if cov >= coverage:
            return prec
    raise ValueError(f"coverage {coverage} not reached")


@dataclass
class CalibrationReport:
    per_question_auc: dict[Hashable, float | None]
    auc_mean: float | None
    n_questions_counted: int
    n_skipped: int
    mean_at_k: float
    k: int
    pc_curve: list[tuple[float, float]]
    tts_accuracy: float | None = None
    tts_pc_curve: list[tuple[float, float]] = field(default_factory=list)

    def precision_at(self, coverage: float, tts: bool = False) -> float:
        return precision_at_coverage(self.tts_pc_curve if tts else self.pc_curve, coverage)

    def to_dict(self) -> dict:
        return {
            "auc_mean": self.auc_mean,
            "n_questions_counted": self.n_questions_counted,
            "n_skipped": self.n_skipped,
            "mean_at_k": self.mean_at_k,
            "k": self.k,
            "tts_accuracy": self.tts_accuracy,
            "per_question_auc": {str(q): a for q, a in self.per_question_auc.items()},
            "pc_curve": [list(p) for p in self.pc_curve],
            "tts_pc_curve": [list(p) for p in self.tts_pc_curve],
        }

    def write_json(self, dest: str | Path | IO[str]) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w") as fh:
                return self.write_json(fh)
        json.dump(self.to_dict(), dest, indent=2)
        dest.write("\n")

    def write_pc_csv(self, dest: str | Path | IO[str], tts: bool = False) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                return self.write_pc_csv(fh, tts)
        w = csv.writer(dest)
        w.writerow(["coverage", "precision"])
        for cov, prec in self.tts_pc_curve if tts else self.pc_curve:
            w.writerow([repr(cov), repr(prec)])


# -- theorem harnesses -----------------------------------------------------------


def random_instance(rng: np.random.Generator, max_n: int = 12, distinct: bool = True) -> ScoredInstance:
    """A random two-class instance of 2..max_n scores."""
    n = int(rng.integers(2, max_n + 1))
    n_pos = int(rng.integers(1, n))
    rewards = np.r_[np.ones(n_pos, dtype=int), np.zeros(n - n_pos, dtype=int)]
    rng.shuffle(rewards)
    if distinct:
        scores = rng.normal(0.0, 2.0, n)
        while np.unique(scores).size < n:
            scores = rng.normal(0.0, 2.0, n)
    else:
        scores = rng.integers(-3, 4, n).astype(np.float64)
    return ScoredInstance(scores, rewards)


@dataclass(frozen=True)
class RegretReport:
    kind: str
    n_instances: int
    violations: int
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def regret_bound_check(n_instances: int, kind: SurrogateKind, seed: int = 0) -> RegretReport:
    """Count instances where AUC regret exceeds the scaled surrogate regret.

    The optimal AUC risk is -1 on any instance with both classes, and the
    surrogate infimum is 0 (approached by stretching a perfect ranking).
    ``max_ratio`` is the largest observed ``lhs / rhs``.
    """
    c = regret_constant(kind)
    rng = np.random.default_rng(seed)
    violations = 0
    max_ratio = 0.0
    for _ in range(n_instances):
        inst = random_instance(rng)
        lhs = true_auc_risk(inst) - (-1.0)
        rhs = c * (surrogate_risk(inst, kind) - 0.0)
        if lhs > rhs:
            violations += 1
        if rhs > 0:
            max_ratio = max(max_ratio, lhs / rhs)
    return RegretReport(str(kind), n_instances, violations, max_ratio)


@dataclass(frozen=True)
class ScalingReport:
    n_trials: int
    alphas: tuple[float, ...]
    auc_failures: int
    linear_failures: int
    logistic_negative: int
    max_linear_rel_err: float

    @property
    def passed(self) -> bool:
        return self.auc_failures == 0 and self.linear_failures == 0 and self.logistic_negative == 0


def scaling_counterexample_check(
    n_trials: int,
    seed: int = 0,
    alphas: Sequence[float] = (0.1, 10.0, 1000.0),
    rel_tol: float = 1e-9,
) -> ScalingReport:
    """Scaling scores leaves AUC unchanged but scales the linear risk.

    So the linear risk can be pushed toward minus infinity with no change in
    ranking quality, while the logistic risk stays non-negative.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rng = np.random.default_rng(seed)
    auc_fail = lin_fail = log_neg = 0
    worst = 0.0
    for _ in range(n_trials):
        inst = random_instance(rng)
        base_auc = auc(inst.scores, inst.rewards)
        base_lin = surrogate_risk(inst, LINEAR)
        for a in alphas:
            s = inst.scaled(a)
            if auc(s.scores, s.rewards) != base_auc:
                auc_fail += 1
            lin = surrogate_risk(s, LINEAR)
            err = abs(lin - a * base_lin) / max(abs(a * base_lin), 1e-300)
            worst = max(worst, err)
            if err > rel_tol:
                lin_fail += 1
            if surrogate_risk(s, logistic(1.0)) < 0:
                log_neg += 1
    return ScalingReport(n_trials, tuple(alphas), auc_fail, lin_fail, log_neg, worst)
