"""A small verifiable-reward task with a tabular, position-factored policy.

Each question asks for a token sequence made of ``reasoning_len`` free
"reasoning" tokens followed by ``answer_len`` answer tokens; only the answer
tokens are verified. Questions come in clusters that share a template answer.
Easy questions have the template as their answer. Hard questions differ from
the template at a single "trap" position, so a policy that leans on the
shared template is confidently wrong on them.

The policy's logits for question ``q`` are ``own[q] + shared[cluster[q]]``,
so learning on one question moves its cluster mates too. That coupling is
what lets reward-only training sharpen confident mistakes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, IO, Sequence

import numpy as np

from capo.surrogate import ScoredInstance
from capo.types import Group, Response

__all__ = [
    "TaskSpec",
    "Task",
    "PolicyParams",
    "Rollout",
    "generate_task",
    "pretrain_reference",
    "log_softmax",
    "sample_rollout",
    "sample_group",
    "verify",
    "synth_group",
]


@dataclass(frozen=True)
class TaskSpec:
    n_questions: int = 64
    answer_len: int = 3
    vocab: int = 10
    hard_fraction: float = 0.25
    seed: int = 0
    reasoning_len: int = 3
    cluster_size: int = 8

    def __post_init__(self):
        if self.n_questions < 1:
            raise ValueError("n_questions must be at least 1")
        if self.answer_len < 1:
            raise ValueError("answer_len must be at least 1")
        if self.vocab < 2:
            raise ValueError("vocab must be at least 2")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")
        if self.reasoning_len < 0:
            raise ValueError("reasoning_len must be non-negative")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be at least 1")

    @property
    def seq_len(self) -> int:
        return self.reasoning_len + self.answer_len

    @property
    def n_clusters(self) -> int:
        return -(-self.n_questions // self.cluster_size)


@dataclass(frozen=True, eq=False)
class Task:
    """Ground truth plus the latent structure the reference policy is built from.

    ``trap_pos`` is -1 on easy questions. ``trap_strength`` in [0, 1] sets how
    strongly the reference model knows each hard question's exception.
    """

    spec: TaskSpec
    answers: np.ndarray  # (Q, L)
    hard: np.ndarray  # (Q,) bool
    cluster: np.ndarray  # (Q,)
    templates: np.ndarray  # (C, L)
    fluent: np.ndarray  # (C, K) preferred reasoning tokens per cluster
    trap_pos: np.ndarray  # (Q,)
    trap_strength: np.ndarray  # (Q,)

    @property
    def n_questions(self) -> int:
        return self.spec.n_questions

    def answer_label(self, q: int) -> tuple[int, ...]:
        return tuple(int(t) for t in self.answers[q])


def generate_task(spec: TaskSpec) -> Task:
    rng = np.random.default_rng(spec.seed)
    Q, L, V, K = spec.n_questions, spec.answer_len, spec.vocab, spec.reasoning_len
    cluster = np.arange(Q) // spec.cluster_size
    C = spec.n_clusters
    templates = rng.integers(0, V, (C, L))
    answers = templates[cluster].copy()

    hard = np.zeros(Q, dtype=bool)
    for c in range(C):
        members = np.flatnonzero(cluster == c)
        n_hard = int(round(spec.hard_fraction * members.size))
        hard[members[rng.permutation(members.size)[:n_hard]]] = True

    trap_pos = np.full(Q, -1)
    for q in np.flatnonzero(hard):
        p = int(rng.integers(0, L))
        trap_pos[q] = p
        answers[q, p] = (answers[q, p] + rng.integers(1, V)) % V

    fluent = rng.integers(0, V, (C, K))
    trap_strength = np.where(hard, rng.random(Q), 0.0)
    return Task(spec, answers, hard, cluster, templates, fluent, trap_pos, trap_strength)


# -- policy parameters ----------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    return z - np.logaddexp.reduce(z, axis=-1, keepdims=True)


@dataclass(eq=False)
class PolicyParams:
    """Per-question logits ``own`` (Q, T, V) plus per-cluster logits ``shared`` (C, T, V).

    The flat parameter vector is ``own`` followed by ``shared``, each in
    question-major (or cluster-major), then position, then token order.
    """

    own: np.ndarray
    shared: np.ndarray
    cluster: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.own = np.asarray(self.own, dtype=np.float64)
        self.shared = np.asarray(self.shared, dtype=np.float64)
        self.cluster = np.asarray(self.cluster, dtype=np.int64)
        if self.own.ndim != 3 or self.shared.ndim != 3:
            raise ValueError("own and shared must be 3-d tables")
        if self.own.shape[1:] != self.shared.shape[1:]:
            raise ValueError("own and shared disagree on (positions, vocab)")
        if self.cluster.shape != (self.own.shape[0],):
            raise ValueError("cluster map must have one entry per question")
        if self.cluster.size and (self.cluster.min() < 0 or self.cluster.max() >= self.shared.shape[0]):
            raise ValueError("cluster index out of range")
        if not (np.all(np.isfinite(self.own)) and np.all(np.isfinite(self.shared))):
            raise ValueError("logits must be finite")

    @classmethod
    def tabular(cls, logits) -> "PolicyParams":
        """Plain per-question table with no sharing (one cluster of zeros)."""
        z = np.asarray(logits, dtype=np.float64)
        return cls(z, np.zeros((1,) + z.shape[1:]), np.zeros(z.shape[0], dtype=np.int64))

    @classmethod
    def uniform(cls, task: Task) -> "PolicyParams":
        s = task.spec
        return cls(
            np.zeros((s.n_questions, s.seq_len, s.vocab)),
            np.zeros((s.n_clusters, s.seq_len, s.vocab)),
            task.cluster,
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.own.shape

    @property
    def size(self) -> int:
        return self.own.size + self.shared.size

    def logits(self) -> np.ndarray:
        return self.own + self.shared[self.cluster]

    def log_probs(self, temperature: float = 1.0) -> np.ndarray:
        z = self.logits()
        return log_softmax(z if temperature == 1.0 else z / temperature)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.own.ravel(), self.shared.ravel()])

    def with_vector(self, v) -> "PolicyParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.size,):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.size},)")
        n = self.own.size
        return PolicyParams(v[:n].reshape(self.own.shape), v[n:].reshape(self.shared.shape), self.cluster)

    def pull_back(self, grad_logits: np.ndarray) -> np.ndarray:
        """Map a gradient on the effective logits to the flat parameter vector."""
        g = np.asarray(grad_logits, dtype=np.float64)
        T, V = self.own.shape[1:]
        g_shared = np.zeros(self.shared.shape)
        for c in range(self.shared.shape[0]):
            members = self.cluster == c
            if members.any():
                g_shared[c] = g[members].sum(axis=0)
        return np.concatenate([g.ravel(), g_shared.ravel()])

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.own.copy(), self.shared.copy(), self.cluster.copy())

    # -- checkpoint ------------------------------------------------------------

    def to_dict(self) -> dict:
        Q, T, V = self.own.shape
        return {
            "order": "question, position, token",
            "n_questions": Q,
            "positions": T,
            "vocab": V,
            "n_clusters": self.shared.shape[0],
            "cluster": self.cluster.tolist(),
            "own": self.own.ravel().tolist(),
            "shared": self.shared.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        Q, T, V, C = d["n_questions"], d["positions"], d["vocab"], d["n_clusters"]
        own = np.asarray(d["own"], dtype=np.float64)
        shared = np.asarray(d["shared"], dtype=np.float64)
        if own.size != Q * T * V or shared.size != C * T * V:
            raise ValueError("checkpoint table sizes do not match its header")
        return cls(own.reshape(Q, T, V), shared.reshape(C, T, V), d["cluster"])

    def save(self, dest: str | Path | IO[str]) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w") as fh:
                return self.save(fh)
        json.dump(self.to_dict(), dest)

    @classmethod
    def load(cls, src: str | Path | IO[str]) -> "PolicyParams":
        if isinstance(src, (str, Path)):
            with open(src) as fh:
                return cls.load(fh)
        return cls.from_dict(json.load(src))

    def check_task(self, task: Task) -> None:
        s = task.spec
        if self.own.shape != (s.n_questions, s.seq_len, s.vocab):
            raise ValueError(
                f"policy table {self.own.shape} does not fit task "
                f"({s.n_questions}, {s.seq_len}, {s.vocab})"
            )


def pretrain_reference(
    task: Task,
    bias_strength: float = 1.0,
    smoothing: float = 1.0,
    *,
    template_margin: float = 1.5,
    easy_margin: float = 0.5,
    fluency_margin: float = 2.0,
    trap_margin: tuple[float, float] = (0.75, 1.25),
) -> PolicyParams:
    """Build the base policy the way pretraining might have left it.

    Shared cluster logits favour the template answer and a fluent reasoning
    prefix. Easy questions add a little extra weight on their own answer.
    Hard questions add weight on their exceptional token at the trap position,
    drawn between ``trap_margin`` bounds by the question's trap strength, so
    the reference is usually right about them but not by much.

    Every margin is multiplied by ``bias_strength / smoothing``; zero bias
    gives the uniform policy.
    """
    if bias_strength < 0:
        raise ValueError("bias_strength must be non-negative")
    if not smoothing > 0:
        raise ValueError("smoothing must be positive")
    s = task.spec
    K, L = s.reasoning_len, s.answer_len
    params = PolicyParams.uniform(task)
    own, shared = params.own, params.shared
    ans_pos = K + np.arange(L)
    for c in range(s.n_clusters):
        shared[c, ans_pos, task.templates[c]] = template_margin
        shared[c, np.arange(K), task.fluent[c]] = fluency_margin
    lo, hi = trap_margin
    for q in range(s.n_questions):
        if task.hard[q]:
            p = task.trap_pos[q]
            own[q, K + p, task.answers[q, p]] += lo + (hi - lo) * task.trap_strength[q]
        else:
            own[q, ans_pos, task.answers[q]] += easy_margin
    scale = bias_strength / smoothing
    return PolicyParams(own * scale, shared * scale, task.cluster)


# -- rollouts -------------------------------------------------------------------


@dataclass(eq=False)
class Rollout:
    """A batch of equally sized groups in array form.

    ``mask`` marks real tokens so responses of different lengths can share one
    array; padded entries carry token 0 and log-probability 0.
    """

    question_ids: np.ndarray  # (B,)
    tokens: np.ndarray  # (B, G, T)
    logp_old: np.ndarray  # (B, G, T)
    rewards: np.ndarray  # (B, G)
    mask: np.ndarray | None = None  # (B, G, T) bool
    logp_ref: np.ndarray | None = None

    def __post_init__(self):
        self.question_ids = np.asarray(self.question_ids, dtype=np.int64)
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.logp_old = np.asarray(self.logp_old, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.tokens.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if self.logp_ref is not None:
            self.logp_ref = np.asarray(self.logp_ref, dtype=np.float64)
        B, G, T = self.tokens.shape
        if self.question_ids.shape != (B,) or self.rewards.shape != (B, G):
            raise ValueError("rollout arrays disagree on batch or group size")
        for name in ("logp_old", "mask", "logp_ref"):
            a = getattr(self, name)
            if a is not None and a.shape != (B, G, T):
                raise ValueError(f"{name} has shape {a.shape}, expected {(B, G, T)}")
        if np.any(self.mask.sum(axis=-1) == 0):
            raise ValueError("empty response")

    @property
    def n_groups(self) -> int:
        return self.tokens.shape[0]

    @property
    def group_size(self) -> int:
        return self.tokens.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=-1)

    def _mean(self, logp):
        return np.where(self.mask, logp, 0.0).sum(axis=-1) / self.lengths

    def lpm_old(self) -> np.ndarray:
        return self._mean(self.logp_old)

    def ppl_ref(self) -> np.ndarray:
        if self.logp_ref is None:
            raise ValueError("reference log-probabilities required")
        return np.exp(-self._mean(self.logp_ref))

    def select(self, idx) -> "Rollout":
        idx = np.asarray(idx)
        ref = None if self.logp_ref is None else self.logp_ref[idx]
        return Rollout(
            self.question_ids[idx], self.tokens[idx], self.logp_old[idx],
            self.rewards[idx], self.mask[idx], ref,
        )

    @classmethod
    def from_groups(cls, groups: Sequence[Group]) -> "Rollout":
        groups = list(groups)
        if not groups:
            raise ValueError("no groups")
        G = len(groups[0])
        if any(len(g) != G for g in groups):
            raise ValueError("groups must share one size")
        T = max(len(r) for g in groups for r in g)
        B = len(groups)
        tokens = np.zeros((B, G, T), dtype=np.int64)
        logp = np.zeros((B, G, T))
        mask = np.zeros((B, G, T), dtype=bool)
        with_ref = all(g.has_reference for g in groups)
        ref = np.zeros((B, G, T)) if with_ref else None
        for b, g in enumerate(groups):
            for i, r in enumerate(g):
                n = len(r)
                tokens[b, i, :n] = r.tokens
                logp[b, i, :n] = r.logp_old
                mask[b, i, :n] = True
                if with_ref:
                    ref[b, i, :n] = r.logp_ref
        qids = [g.question_id for g in groups]
        rewards = np.array([g.rewards for g in groups])
        return cls(qids, tokens, logp, rewards, mask, ref)

    def to_groups(self, labels: Callable[[int, np.ndarray], object] | None = None) -> list[Group]:
        out = []
        for b, q in enumerate(self.question_ids.tolist()):
            rs = []
            for i in range(self.group_size):
                m = self.mask[b, i]
                toks = self.tokens[b, i][m]
                rs.append(Response(
                    question_id=q,
                    tokens=toks.tolist(),
                    logp_old=self.logp_old[b, i][m].tolist(),
                    reward=int(self.rewards[b, i]),
                    answer_label=None if labels is None else labels(q, toks),
                    logp_ref=None if self.logp_ref is None else self.logp_ref[b, i][m].tolist(),
                ))
            out.append(Group(q, rs))
        return out


def _gather(table: np.ndarray, qids: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """``table[q, t, tokens[b, g, t]]`` for every rollout entry."""
    T = tokens.shape[-1]
    return table[qids[:, None, None], np.arange(T)[None, None, :], tokens]


def sample_rollout(
    params: PolicyParams,
    task: Task,
    question_ids,
    n: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    ref: PolicyParams | None = None,
) -> Rollout:
    """Draw ``n`` ancestral samples for each listed question."""
    if n < 1:
        raise ValueError("need at least one sample per question")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    params.check_task(task)
    qids = np.asarray(question_ids, dtype=np.int64)
    table = params.log_probs(temperature)
    lp = table[qids]  # (B, T, V)
    B, T, V = lp.shape
    cdf = np.cumsum(np.exp(lp), axis=-1)
    u = rng.random((B, n, T, 1))
    tokens = np.minimum((u > cdf[:, None]).sum(axis=-1), V - 1)
    logp_old = _gather(table, qids, tokens)
    K = task.spec.reasoning_len
    rewards = np.all(tokens[..., K:] == task.answers[qids][:, None, :], axis=-1).astype(np.float64)
    logp_ref = None if ref is None else _gather(ref.log_probs(), qids, tokens)
    return Rollout(qids, tokens, logp_old, rewards, None, logp_ref)


def sample_group(
    params: PolicyParams,
    task: Task,
    question: int,
    G: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    ref: PolicyParams | None = None,
) -> Group:
    if G < 2:
        raise ValueError("a group needs at least 2 responses")
    ro = sample_rollout(params, task, [question], G, rng, temperature, ref)
    return ro.to_groups(lambda q, toks: answer_label(task, toks))[0]


def answer_label(task: Task, tokens) -> tuple[int, ...]:
    """The verifiable part of a response: its final ``answer_len`` tokens."""
    toks = np.asarray(tokens)
    return tuple(int(t) for t in toks[task.spec.reasoning_len:])


def verify(task: Task, question: int, tokens) -> int:
    toks = np.asarray(tokens)
    if toks.shape != (task.spec.seq_len,):
        raise ValueError(f"response has length {toks.size}, expected {task.spec.seq_len}")
    return int(np.array_equal(toks[task.spec.reasoning_len:], task.answers[question]))


def synth_group(
    lpm_pos_dist,
    lpm_neg_dist,
    n_pos: int,
    n_neg: int,
    rng: np.random.Generator,
) -> ScoredInstance:
    """Labelled scores without any policy behind them.

    Each distribution is either ``(mean, std)`` of a normal or a callable
    ``(rng, size) -> array``.
    """
    if n_pos < 0 or n_neg < 0 or n_pos + n_neg < 2:
        raise ValueError("need at least 2 responses")

    def draw(dist, size):
        if callable(dist):
            return np.asarray(dist(rng, size), dtype=np.float64)
        mean, std = dist
        return rng.normal(mean, std, size)

    scores = np.concatenate([draw(lpm_pos_dist, n_pos), draw(lpm_neg_dist, n_neg)])
    rewards = np.concatenate([np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)])
    return ScoredInstance(scores, rewards)
