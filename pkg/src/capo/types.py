"""Shared domain objects: sampled responses, groups, and sequence confidence.

Confidence is always expressed as ``lpm`` (mean token log-probability), so a
higher score means a more confident response. ``ppl`` is its monotone
inverse, ``exp(-lpm)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Hashable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Response",
    "Group",
    "lpm",
    "ppl",
    "response_to_dict",
    "response_from_dict",
    "write_responses",
    "read_responses",
]


def lpm(logps: Sequence[float]) -> float:
    """Mean of per-token log-probabilities."""
    arr = np.asarray(logps, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty response")
    if not np.all(np.isfinite(arr)):
        raise ValueError("log-probabilities must be finite")
    return float(arr.mean())


def ppl(logps: Sequence[float]) -> float:
    """Perplexity, ``exp(-lpm(logps))``."""
    return math.exp(-lpm(logps))


def _check_logps(name: str, values: tuple[float, ...], n: int) -> None:
    if len(values) != n:
        raise ValueError(f"{name} has length {len(values)}, expected {n}")
    for v in values:
        if not math.isfinite(v) or v > 0.0:
            raise ValueError(f"{name} entries must be finite and <= 0, got {v}")


@dataclass(frozen=True)
class Response:
    """One sampled answer to a question.

    ``logp_old`` holds per-token log-probabilities under the sampling
    (behavior) policy, ``logp_ref`` the same under the frozen reference
    policy when available.
    """

    question_id: Hashable
    tokens: tuple[int, ...]
    logp_old: tuple[float, ...]
    reward: int
    answer_label: Hashable = None
    logp_ref: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "logp_old", tuple(float(x) for x in self.logp_old))
        if self.logp_ref is not None:
            object.__setattr__(self, "logp_ref", tuple(float(x) for x in self.logp_ref))
        if len(self.tokens) < 1:
            raise ValueError("empty response")
        _check_logps("logp_old", self.logp_old, len(self.tokens))
        if self.logp_ref is not None:
            _check_logps("logp_ref", self.logp_ref, len(self.tokens))
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward!r}")
        object.__setattr__(self, "reward", int(self.reward))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def lpm_old(self) -> float:
        return lpm(self.logp_old)

    @property
    def ppl_ref(self) -> float:
        if self.logp_ref is None:
            raise ValueError("reference log-probabilities required")
        return ppl(self.logp_ref)


@dataclass(frozen=True)
class Group:
    """G >= 2 responses sampled for the same question."""

    question_id: Hashable
    responses: tuple[Response, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "responses", tuple(self.responses))
        if len(self.responses) < 2:
            raise ValueError("a group needs at least 2 responses")
        for r in self.responses:
            if r.question_id != self.question_id:
                raise ValueError(
                    f"response for question {r.question_id!r} in group {self.question_id!r}"
                )

    def __len__(self) -> int:
        return len(self.responses)

    def __iter__(self) -> Iterator[Response]:
        return iter(self.responses)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.responses], dtype=np.float64)

    @property
    def has_reference(self) -> bool:
        return all(r.logp_ref is not None for r in self.responses)


# -- line-delimited JSON interchange ------------------------------------------------


def response_to_dict(r: Response) -> dict:
    d = {
        "question_id": r.question_id,
        "tokens": list(r.tokens),
        "logp_old": list(r.logp_old),
        "reward": r.reward,
        "answer_label": r.answer_label,
    }
    if r.logp_ref is not None:
        d["logp_ref"] = list(r.logp_ref)
    return d


def response_from_dict(d: dict) -> Response:
    def _key(v):
        # JSON has no tuples; lists come back for tuple-valued labels
        return tuple(v) if isinstance(v, list) else v

    return Response(
        question_id=_key(d["question_id"]),
        tokens=d["tokens"],
        logp_old=d["logp_old"],
        reward=d["reward"],
        answer_label=_key(d.get("answer_label")),
        logp_ref=d.get("logp_ref"),
    )


def write_responses(dest: str | Path | IO[str], responses: Iterable[Response]) -> None:
    """Write responses as one JSON object per line."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            write_responses(fh, responses)
        return
    for r in responses:
        dest.write(json.dumps(response_to_dict(r)) + "\n")


def read_responses(src: str | Path | IO[str]) -> list[Response]:
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_responses(fh)
    return [response_from_dict(json.loads(line)) for line in src if line.strip()]
