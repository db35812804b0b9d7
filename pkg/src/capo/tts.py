"""Answer selection from N samples by summed sequence probability.

Responses are grouped by their extracted answer; each answer scores
``C(a) = sum exp(lpm)`` over its supporters and the highest score wins.
Ties go to the answer with more supporters, then to the smallest label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Hashable, Mapping, Sequence

from capo.types import Response

__all__ = ["AnswerAggregate", "aggregate", "select_answer", "tts_accuracy", "write_selections"]


@dataclass(frozen=True)
class AnswerAggregate:
    answer_label: Hashable
    aggregated_confidence: float
    supporter_count: int


def _label_key(label):
    # a total order that also works across label types
    return (type(label).__name__, label)


def _sorted_labels(labels):
    try:
        return sorted(labels, key=_label_key)
    except TypeError:
        return sorted(labels, key=lambda x: (type(x).__name__, repr(x)))


def _pairs(responses, lpms):
    if lpms is None:
        return [(r.answer_label, r.lpm_old) for r in responses]
    if len(lpms) != len(responses):
        raise ValueError("one lpm per response required")
    return [(r.answer_label if isinstance(r, Response) else r, float(l)) for r, l in zip(responses, lpms)]


def aggregate(responses: Sequence[Response], lpms: Sequence[float] | None = None) -> list[AnswerAggregate]:
    """Per-answer aggregates in label order.

    ``lpms`` overrides the responses' own behaviour-policy lpm; with it,
    ``responses`` may also be a plain list of answer labels. Sums use
    ``math.fsum`` so they do not depend on response order.
    """
    pairs = _pairs(responses, lpms)
    if not pairs:
        raise ValueError("no responses")
    support: dict = {}
    for label, l in pairs:
        support.setdefault(label, []).append(math.exp(l))
    return [AnswerAggregate(a, math.fsum(support[a]), len(support[a])) for a in _sorted_labels(support)]


def select_answer(responses: Sequence[Response], lpms: Sequence[float] | None = None) -> Hashable:
    best = None
    for agg in aggregate(responses, lpms):
        if best is None or (agg.aggregated_confidence, agg.supporter_count) > (
            best.aggregated_confidence,
            best.supporter_count,
        ):
            best = agg
    return best.answer_label


def select_with_confidence(responses, lpms=None) -> AnswerAggregate:
    """Winning aggregate, for abstention curves over questions."""
    label = select_answer(responses, lpms)
    return next(a for a in aggregate(responses, lpms) if a.answer_label == label)


def tts_accuracy(
    per_question: Mapping[Hashable, Sequence[Response]],
    ground_truth: Mapping[Hashable, Hashable],
) -> float:
    """Fraction of questions whose selected answer equals the ground truth."""
    if not per_question:
        raise ValueError("no questions")
    hits = 0
    for q, responses in per_question.items():
        if q not in ground_truth:
            raise ValueError(f"missing ground truth for question {q!r}")
        hits += select_answer(responses) == ground_truth[q]
    return hits / len(per_question)


def write_selections(dest: str | Path | IO[str], per_question: Mapping[Hashable, Sequence[Response]]) -> None:
    """One JSON object per question: selected answer, its confidence and support."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            return write_selections(fh, per_question)
    for q, responses in per_question.items():
        agg = select_with_confidence(responses)
        label = list(agg.answer_label) if isinstance(agg.answer_label, tuple) else agg.answer_label
        dest.write(json.dumps({
            "question_id": q,
            "answer_label": label,
            "aggregated_confidence": agg.aggregated_confidence,
            "supporter_count": agg.supporter_count,
        }) + "\n")
