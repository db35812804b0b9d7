import io
import math
from dataclasses import astuple, replace

import numpy as np
import pytest

from capo.advantage import MaskConfig
from capo.toyenv import PolicyParams, TaskSpec, generate_task, pretrain_reference
from capo.trainer import TrainConfig, TrainHistory, evaluate, policy_entropy, reference_mask_config, train

SHORT = TrainConfig(total_steps=6, eval_every=3, eval_rollout_n=8)


@pytest.fixture(scope="module")
def task():
    return generate_task(TaskSpec(seed=0))


@pytest.fixture(scope="module")
def ref(task):
    return pretrain_reference(task)


def test_entropy_examples(task):
    assert policy_entropy(PolicyParams.uniform(task)) == pytest.approx(math.log(10), rel=1e-14)
    peaked = PolicyParams.tabular(np.where(np.arange(10) == 3, 800.0, 0.0)[None, None, :].repeat(2, 1))
    assert policy_entropy(peaked) < 1e-12


def test_entropy_falls_under_repeated_sharpening(task, ref):
    mode = ref.logits().argmax(axis=-1)
    onehot = np.eye(task.spec.vocab)[mode]
    p = ref
    last = policy_entropy(p)
    for _ in range(20):
        p = PolicyParams(p.own + 0.3 * onehot, p.shared, p.cluster)
        now = policy_entropy(p)
        assert now < last
        last = now


def test_zero_learning_rate_is_a_no_op(task, ref):
    params, hist = train(task, ref, replace(SHORT, learning_rate=0.0))
    np.testing.assert_array_equal(params.vector(), ref.vector())
    acc = hist.column("eval_accuracy")
    assert np.all(acc == acc[0])


def test_training_is_deterministic(task, ref):
    cfg = replace(SHORT, algo="capo", seed=3)
    p1, h1 = train(task, ref, cfg)
    p2, h2 = train(task, ref, cfg)
    np.testing.assert_array_equal(p1.vector(), p2.vector())
    a, b = io.StringIO(), io.StringIO()
    h1.write_csv(a)
    h2.write_csv(b)
    assert a.getvalue() == b.getvalue()


def test_mask_does_not_change_step_zero(task, ref):
    _, masked = train(task, ref, SHORT)
    _, plain = train(task, ref, replace(SHORT, mask_enabled=False))
    np.testing.assert_array_equal(astuple(masked.records[0]), astuple(plain.records[0]))
    assert masked.records[-1] != plain.records[-1]


def test_history_layout(task, ref):
    _, hist = train(task, ref, replace(SHORT, total_steps=7))
    assert [r.step for r in hist.records] == [0, 3, 6, 7]
    assert math.isnan(hist.records[0].train_accuracy)
    assert all(0.0 <= r.masked_fraction <= 1.0 for r in hist.records[1:])
    buf = io.StringIO()
    hist.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(TrainHistory.COLUMNS)
    assert len(lines) == 5
    with pytest.raises(ValueError):
        hist.append(hist.records[0])


def test_grpo_never_masks(task, ref):
    _, hist = train(task, None, replace(SHORT, algo="grpo"), init=ref)
    assert np.all(hist.column("masked_fraction")[1:] == 0.0)


def test_masked_fraction_matches_mask_rule(task, ref, monkeypatch):
    import capo.trainer as tr

    seen = []
    original = tr.masked_advantage_arrays

    def spy(*args, **kw):
        adv, m = original(*args, **kw)
        seen.append(1.0 - m.mean())
        return adv, m

    monkeypatch.setattr(tr, "masked_advantage_arrays", spy)
    _, hist = train(task, ref, replace(SHORT, total_steps=3, eval_every=3))
    assert hist.records[1].masked_fraction == pytest.approx(np.mean(seen))


def test_fixed_thresholds_are_used(task, ref):
    cfg = replace(SHORT, mask_thresholds="fixed", mask=MaskConfig(1e9, 1.0))
    _, hist = train(task, ref, cfg)
    assert hist.mask == MaskConfig(1e9, 1.0)
    assert np.all(hist.column("masked_fraction")[1:] == 0.0)


def test_quartile_thresholds_come_from_reference(task, ref):
    _, hist = train(task, ref, SHORT)
    expected = reference_mask_config(ref, task, SHORT.eval_rollout_n, SHORT.seed + 104729)
    assert hist.mask == expected
    assert 1.0 <= expected.ref_low < expected.ref_high


def test_train_errors(task, ref):
    with pytest.raises(ValueError, match="without a reference"):
        train(task, None, SHORT, init=ref)
    with pytest.raises(ValueError, match="KL"):
        train(task, None, replace(SHORT, algo="grpo", kl_coeff=0.1), init=ref)


@pytest.mark.parametrize(
    "kw",
    [{"algo": "ppo"}, {"mini_batch": 64}, {"total_steps": 0}, {"group_size": 1}, {"tau": 0.0}, {"peer_mode": "x"}],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_evaluate_on_uniform_policy_is_chance(task):
    rep = evaluate(PolicyParams.uniform(task), task, 16, seed=0)
    assert abs(rep.mean_at_k - 1e-3) < 3 * math.sqrt(1e-3 / (16 * 64)) + 1e-3
    assert rep.k == 16


def test_evaluate_on_peaked_correct_policy(task):
    K = task.spec.reasoning_len
    logits = np.zeros((task.n_questions, task.spec.seq_len, task.spec.vocab))
    for q in range(task.n_questions):
        logits[q, np.arange(K, task.spec.seq_len), task.answers[q]] = 1e3
    rep = evaluate(PolicyParams.tabular(logits), task, 4, seed=0)
    assert rep.mean_at_k == 1.0 and rep.tts_accuracy == 1.0
    assert rep.auc_mean is None and rep.n_skipped == task.n_questions
    assert all(a is None for a in rep.per_question_auc.values())


def test_evaluate_is_deterministic(task, ref):
    a, b = evaluate(ref, task, 8, 2), evaluate(ref, task, 8, 2)
    assert a.to_dict() == b.to_dict()
    assert a.auc_mean > 0.5


def test_first_inner_pass_starts_at_ratio_one(task, ref, monkeypatch):
    import capo.trainer as tr

    ratios = []
    original = tr.analytic_gradient

    def spy(batch, adv, params, cfg):
        lp = params.log_probs()
        cur = lp[batch.question_ids[:, None, None], np.arange(batch.tokens.shape[-1]), batch.tokens]
        ratios.append(np.exp(cur - batch.logp_old))
        return original(batch, adv, params, cfg)

    monkeypatch.setattr(tr, "analytic_gradient", spy)
    train(task, ref, replace(SHORT, total_steps=2, eval_every=2, inner_epochs=2))
    n_mb = 2
    # first mini-batch of every outer step sees the sampling policy exactly
    for step in range(2):
        np.testing.assert_array_equal(ratios[step * 2 * n_mb], 1.0)
    assert not np.all(ratios[n_mb] == 1.0)
