import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from capo.checks import brute_select
from capo.tts import aggregate, select_answer, select_with_confidence, tts_accuracy, write_selections
from capo.types import Response


def _resp(label, lp, q=0, reward=0):
    return Response(q, tokens=[0], logp_old=[lp], reward=reward, answer_label=label)


def test_select_examples():
    assert select_answer(["a", "a", "b"], [-1, -1, -0.5]) == "a"
    assert select_answer(["z"], [-9.0]) == "z"
    assert select_answer(["b", "a"], [-1, -1]) == "a"
    assert select_answer(["w", "w", "c"], [-5, -5, -0.1]) == "c"
    with pytest.raises(ValueError):
        select_answer([], [])


def test_aggregate_values():
    aggs = aggregate(["a", "a", "b"], [-1, -1, -0.5])
    assert [a.answer_label for a in aggs] == ["a", "b"]
    assert aggs[0].aggregated_confidence == pytest.approx(2 * math.exp(-1))
    assert aggs[0].supporter_count == 2
    assert aggs[1].aggregated_confidence == pytest.approx(math.exp(-0.5))


def test_supporter_count_breaks_ties():
    # one b response worth exactly as much as two a responses (1.0 = 0.5 + 0.5)
    assert select_answer(["b", "a", "a"], [0.0, math.log(0.5), math.log(0.5)]) == "a"


def test_responses_use_their_own_lpm():
    rs = [_resp("x", -3.0), _resp("y", -0.2)]
    assert select_answer(rs) == "y"
    assert select_with_confidence(rs).aggregated_confidence == pytest.approx(math.exp(-0.2))


labels_lpms = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from("abcd"), min_size=n, max_size=n),
        st.lists(st.sampled_from([-3.0, -1.0, -0.5, -0.25]), min_size=n, max_size=n),
    )
)


@given(labels_lpms)
def test_matches_brute_oracle(data):
    labels, lpms = data
    assert select_answer(labels, lpms) == brute_select(labels, lpms)


@given(labels_lpms, st.randoms())
def test_permutation_invariant(data, r):
    labels, lpms = data
    idx = list(range(len(labels)))
    r.shuffle(idx)
    assert select_answer([labels[i] for i in idx], [lpms[i] for i in idx]) == select_answer(labels, lpms)


@given(st.lists(st.floats(-20, 0), min_size=1, max_size=10))
def test_unanimous_answer_wins(lpms):
    assert select_answer(["k"] * len(lpms), lpms) == "k"


@given(labels_lpms, st.floats(-20, 0))
def test_adding_a_winning_supporter_keeps_selection(data, extra):
    labels, lpms = data
    win = select_answer(labels, lpms)
    assert select_answer(labels + [win], lpms + [extra]) == win


def test_tts_accuracy_examples():
    per_q = {
        0: [_resp("w", -5.0), _resp("w", -5.0), _resp("c", -0.1)],
        1: [_resp("x", -1.0), _resp("y", -2.0)],
        2: [_resp("x", -1.0), _resp("x", -1.0)],
    }
    assert tts_accuracy(per_q, {0: "c", 1: "x", 2: "x"}) == 1.0
    assert tts_accuracy(per_q, {0: "c", 1: "y", 2: "z"}) == pytest.approx(1 / 3)
    with pytest.raises(ValueError, match="missing ground truth"):
        tts_accuracy(per_q, {0: "c"})


def test_write_selections():
    buf = io.StringIO()
    write_selections(buf, {3: [_resp((1, 2), -1.0), _resp((1, 2), -1.0), _resp((0, 0), -0.9)]})
    row = json.loads(buf.getvalue())
    assert row == {
        "question_id": 3,
        "answer_label": [1, 2],
        "aggregated_confidence": pytest.approx(2 * math.exp(-1)),
        "supporter_count": 2,
    }
