import io
import math

import numpy as np
import pytest

from capo.metrics import auc, auc_mean
from capo.toyenv import (
    PolicyParams,
    Rollout,
    TaskSpec,
    generate_task,
    pretrain_reference,
    sample_group,
    sample_rollout,
    synth_group,
    verify,
)


@pytest.fixture(scope="module")
def task():
    return generate_task(TaskSpec(seed=1))


@pytest.fixture(scope="module")
def ref(task):
    return pretrain_reference(task)


def test_generate_task_is_deterministic():
    a, b = generate_task(TaskSpec(seed=1)), generate_task(TaskSpec(seed=1))
    np.testing.assert_array_equal(a.answers, b.answers)
    np.testing.assert_array_equal(a.hard, b.hard)
    assert not np.array_equal(a.answers, generate_task(TaskSpec(seed=2)).answers)


def test_task_structure(task):
    s = task.spec
    assert task.answers.shape == (s.n_questions, s.answer_len)
    assert task.hard.mean() == pytest.approx(s.hard_fraction)
    for q in range(s.n_questions):
        diff = np.flatnonzero(task.answers[q] != task.templates[task.cluster[q]])
        if task.hard[q]:
            assert diff.tolist() == [task.trap_pos[q]]
        else:
            assert diff.size == 0 and task.trap_pos[q] == -1


def test_no_hard_questions_without_hard_fraction():
    t = generate_task(TaskSpec(hard_fraction=0.0))
    assert not t.hard.any()


@pytest.mark.parametrize("kw", [{"n_questions": 0}, {"vocab": 1}, {"answer_len": 0}, {"hard_fraction": 1.5}])
def test_task_spec_validation(kw):
    with pytest.raises(ValueError):
        TaskSpec(**kw)


def test_uniform_reference_has_ppl_equal_vocab(task):
    flat = pretrain_reference(task, bias_strength=0.0)
    np.testing.assert_allclose(flat.log_probs(), -math.log(10), rtol=1e-15)
    rng = np.random.default_rng(0)
    ro = sample_rollout(flat, task, np.arange(4), 5, rng, ref=flat)
    np.testing.assert_allclose(ro.ppl_ref(), 10.0, rtol=1e-12)


def test_heavy_smoothing_approaches_uniform(task):
    near = pretrain_reference(task, smoothing=1e6)
    assert np.abs(near.log_probs() + math.log(10)).max() < 1e-5


def test_easy_correct_answer_beats_uniform_ppl(task, ref):
    lp = ref.log_probs()
    K = task.spec.reasoning_len
    for q in np.flatnonzero(~task.hard):
        seq = np.r_[task.fluent[task.cluster[q]], task.answers[q]]
        ppl = math.exp(-np.mean([lp[q, t, tok] for t, tok in enumerate(seq)]))
        assert ppl < task.spec.vocab
        assert lp[q, K:, :].argmax(axis=-1).tolist() == task.answers[q].tolist()


def test_reference_validation(task):
    with pytest.raises(ValueError):
        pretrain_reference(task, bias_strength=-1)
    with pytest.raises(ValueError):
        pretrain_reference(task, smoothing=0)


def test_softmax_rows_normalised(ref):
    np.testing.assert_allclose(np.exp(ref.log_probs()).sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(ref.log_probs(0.3)).sum(axis=-1), 1.0, atol=1e-12)


def test_recorded_log_probs_reevaluate_exactly(task, ref):
    rng = np.random.default_rng(5)
    ro = sample_rollout(ref, task, np.arange(task.n_questions), 8, rng, ref=ref)
    table = ref.log_probs()
    T = task.spec.seq_len
    again = table[ro.question_ids[:, None, None], np.arange(T), ro.tokens]
    np.testing.assert_array_equal(ro.logp_old, again)
    np.testing.assert_array_equal(ro.logp_ref, again)
    for b in range(0, task.n_questions, 7):
        for i in range(8):
            assert ro.rewards[b, i] == verify(task, ro.question_ids[b], ro.tokens[b, i])


def test_sampling_is_deterministic(task, ref):
    a = sample_group(ref, task, 3, 8, np.random.default_rng(11))
    b = sample_group(ref, task, 3, 8, np.random.default_rng(11))
    assert a == b
    assert a.responses[0].answer_label == tuple(a.responses[0].tokens[task.spec.reasoning_len:])


def test_greedy_limit(task, ref):
    g = sample_group(ref, task, 0, 6, np.random.default_rng(0), temperature=1e-3)
    greedy = ref.logits()[0].argmax(axis=-1).tolist()
    assert all(list(r.tokens) == greedy for r in g)


def test_sampling_frequencies_match_policy(task, ref):
    rng = np.random.default_rng(9)
    ro = sample_rollout(ref, task, [2], 40000, rng)
    freq = np.bincount(ro.tokens[0, :, 0], minlength=10) / 40000
    p = np.exp(ref.log_probs()[2, 0])
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / 40000) + 1e-9)


def test_sampling_validation(task, ref):
    with pytest.raises(ValueError):
        sample_group(ref, task, 0, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_rollout(ref, task, [0], 4, np.random.default_rng(0), temperature=0)


def test_verify(task):
    q = 5
    good = np.r_[np.zeros(task.spec.reasoning_len, dtype=int), task.answers[q]]
    assert verify(task, q, good) == 1
    bad = good.copy()
    bad[-1] = (bad[-1] + 1) % task.spec.vocab
    assert verify(task, q, bad) == 0
    with pytest.raises(ValueError):
        verify(task, q, good[:-1])


def test_reference_is_calibrated(task, ref):
    ro = sample_rollout(ref, task, np.arange(task.n_questions), 16, np.random.default_rng(3))
    lpm = ro.lpm_old()
    m = auc_mean((lpm[q], ro.rewards[q]) for q in range(task.n_questions))
    assert m.value > 0.5


def test_params_vector_round_trip(ref):
    v = ref.vector()
    np.testing.assert_array_equal(ref.with_vector(v).logits(), ref.logits())
    with pytest.raises(ValueError):
        ref.with_vector(v[:-1])


def test_pull_back_matches_chain_rule(rng):
    p = PolicyParams(rng.normal(size=(4, 2, 3)), rng.normal(size=(2, 2, 3)), np.array([0, 1, 1, 0]))
    g = rng.normal(size=(4, 2, 3))
    pulled = p.pull_back(g)
    own, shared = pulled[: g.size].reshape(g.shape), pulled[g.size :].reshape(2, 2, 3)
    np.testing.assert_array_equal(own, g)
    np.testing.assert_allclose(shared[0], g[0] + g[3])
    np.testing.assert_allclose(shared[1], g[1] + g[2])


def test_checkpoint_round_trip(ref, task):
    buf = io.StringIO()
    ref.save(buf)
    buf.seek(0)
    back = PolicyParams.load(buf)
    np.testing.assert_array_equal(back.logits(), ref.logits())
    back.check_task(task)
    with pytest.raises(ValueError):
        back.check_task(generate_task(TaskSpec(n_questions=8)))


def test_rollout_group_round_trip(task, ref):
    ro = sample_rollout(ref, task, [1, 4], 3, np.random.default_rng(0), ref=ref)
    back = Rollout.from_groups(ro.to_groups())
    for name in ("question_ids", "tokens", "logp_old", "rewards", "mask", "logp_ref"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ro, name))


def test_synth_group_examples():
    rng = np.random.default_rng(0)
    sep = synth_group((0.0, 0.1), (-10.0, 0.1), 5, 5, rng)
    assert auc(sep.scores, sep.rewards) == 1.0
    same = synth_group((0.0, 1.0), (0.0, 1.0), 2000, 2000, rng)
    a = auc(same.scores, same.rewards)
    sigma = math.sqrt((2000 + 2000 + 1) / (12 * 2000 * 2000))
    assert abs(a - 0.5) <= 3 * sigma
    assert auc(*_pair(synth_group((0, 1), (0, 1), 3, 0, rng))) is None
    uniform = synth_group(lambda r, n: r.uniform(-1, 0, n), (-5, 0.1), 3, 2, rng)
    assert np.all(uniform.scores[:3] <= 0)
    with pytest.raises(ValueError):
        synth_group((0, 1), (0, 1), 1, 0, rng)


def _pair(inst):
    return inst.scores, inst.rewards
