import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mttppi import errors, metrics

from oracles import ap_ranks, auc_pairs, welch_reference


@pytest.mark.parametrize(
    "scores, labels, expected",
    [
        ([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 1.0),
        ([0.5, 0.5], [1, 0], 0.5),
        ([0.8, 0.4, 0.5, 0.6], [1, 0, 1, 0], 0.75),
    ],
)
def test_auc_examples(scores, labels, expected):
    assert metrics.auc(scores, labels) == expected


@pytest.mark.parametrize(
    "scores, labels, expected",
    [
        ([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 1.0),
        ([0.4, 0.3, 0.2, 0.1], [1, 0, 1, 0], (1 + 2 / 3) / 2),
        ([0.4, 0.3, 0.2, 0.1], [0, 0, 0, 1], 0.25),
    ],
)
def test_ap_examples(scores, labels, expected):
    assert metrics.average_precision(scores, labels) == pytest.approx(expected, abs=1e-12)


def test_degenerate_labels():
    with pytest.raises(errors.DegenerateLabels):
        metrics.auc([0.1, 0.2], [1, 1])
    with pytest.raises(errors.DegenerateLabels):
        metrics.average_precision([0.1, 0.2], [0, 0])


def _random_sets(n_sets, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n_sets):
        n = int(rng.integers(2, 51))
        # coarse grid so ties are common
        scores = rng.integers(0, 8, size=n) / 8 if rng.random() < 0.5 else rng.random(n)
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 1, 0
        yield scores.tolist(), labels.tolist()


def test_fast_paths_equal_brute_force():
    for scores, labels in _random_sets(200, 0):
        assert metrics.auc(scores, labels) == auc_pairs(scores, labels)
        assert metrics.average_precision(scores, labels) == ap_ranks(scores, labels)


def test_auc_monotone_invariance():
    for scores, labels in _random_sets(100, 1):
        s = np.asarray(scores)
        base = metrics.auc(s, labels)
        assert metrics.auc(2 * s + 1, labels) == base
        assert metrics.auc(s**3, labels) == base


def test_auc_label_flip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        s = rng.permutation(n).astype(float)
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        assert metrics.auc(s, y) == pytest.approx(1 - metrics.auc(s, 1 - y), abs=1e-15)


def test_prf1_examples():
    p, r, f1, c = metrics.prf1([0.9, 0.6, 0.4, 0.3], [1, 0, 1, 0], 0.5)
    assert (p, r, f1) == (50.0, 50.0, 50.0)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)
    assert metrics.prf1([0.7, 0.9], [1, 1])[:3] == (100.0, 100.0, 100.0)
    assert metrics.prf1([0.1, 0.2], [1, 0])[:3] == (0.0, 0.0, 0.0)


def test_threshold_is_inclusive():
    assert metrics.prf1([0.5], [1])[3].tp == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50), st.floats(0, 1))
def test_prf1_invariants(pairs, threshold):
    s, y = zip(*pairs)
    p, r, f1, c = metrics.prf1(s, y, threshold)
    assert c.tp + c.fp + c.tn + c.fn == len(s)
    if c.tp == 0:
        assert f1 == 0
    else:
        assert f1 == pytest.approx(2 * p * r / (p + r))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_r_precision_matches_sort_oracle(pairs):
    s, y = zip(*pairs)
    k = sum(y)
    ranked = sorted(range(len(s)), key=lambda i: -s[i])
    expected = 100.0 * sum(y[i] for i in ranked[:k]) / k if k else 0.0
    p, r, f1, _ = metrics.prf1(s, y, r_precision=True)
    assert p == pytest.approx(expected)
    if k:
        assert p == r == pytest.approx(f1)


def test_topk_examples():
    cands = {f"c{i:02d}": i / 100 for i in range(51)}
    cands["true"] = 0.99
    assert metrics.topk_hits(cands, "true") == [True] * 10
    third = {"a": 0.9, "b": 0.8, "t": 0.7, "d": 0.1}
    hits = metrics.topk_hits(third, "t")
    assert hits[1] is False and hits[2] is True
    tied = {"a": 0.5, "b": 0.5, "t": 0.5, "d": 0.1}
    assert metrics.rank_of(tied, "t") == 3
    with pytest.raises(errors.UnknownProtein):
        metrics.topk_hits(third, "zzz")


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(0, 1), min_size=1, max_size=30), st.data())
def test_topk_monotone(cands, data):
    true = data.draw(st.sampled_from(sorted(cands)))
    hits = metrics.topk_hits(cands, true)
    assert all(not a or b for a, b in zip(hits, hits[1:]))


def test_welch_examples():
    t, p = metrics.welch_ttest([80, 82, 84], [80, 82, 84])
    assert t == 0 and p == 1
    with pytest.raises(errors.DegenerateSample):
        metrics.welch_ttest([10, 10, 10], [10, 10, 10])
    with pytest.raises(errors.DegenerateSample):
        metrics.welch_ttest([1], [2, 3])
    a, b = [85, 86, 87, 88], [80, 81, 82, 83]
    t, p = metrics.welch_ttest(a, b)
    t_ref, p_ref = welch_reference(a, b)
    assert abs(t - t_ref) < 1e-6 and abs(p - p_ref) < 1e-6


def test_welch_random_against_references():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.normal(80, 5, size=int(rng.integers(2, 12)))
        b = rng.normal(78, 2, size=int(rng.integers(2, 12)))
        t, p = metrics.welch_ttest(a, b)
        t_ref, p_ref = welch_reference(a.tolist(), b.tolist())
        assert abs(t - t_ref) < 1e-6 and abs(p - p_ref) < 1e-6
        sp = stats.ttest_ind(a, b, equal_var=False)
        assert t == pytest.approx(sp.statistic, rel=1e-9) and p == pytest.approx(sp.pvalue, rel=1e-7, abs=1e-12)


def test_evaluate_report_keys():
    rep = metrics.evaluate([0.9, 0.2], [1, 0])
    d = rep.to_dict()
    assert set(d) == {"auc", "ap", "precision", "recall", "f1", "threshold", "tp", "fp", "tn", "fn", "topk", "mode"}
    assert metrics.ExperimentReport.from_dict(d).to_dict() == d
    assert metrics.evaluate([0.9, 0.2], [1, 1]).auc is None
    assert metrics.evaluate([0.9, 0.2], [1, 0], r_precision=True).mode == "r_precision"


def test_midranks():
    assert metrics.midranks([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]
