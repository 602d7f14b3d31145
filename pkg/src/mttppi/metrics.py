"""Ranking and classification metrics, topK hits and Welch's t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import DegenerateLabels, DegenerateSample, UnknownProtein


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if len(s) == 0:
        raise DegenerateLabels("empty scored set")
    return s, (y >= 0.5).astype(np.int64)


def midranks(values):
    """1-based ranks, ties sharing the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(len(v))
    # start of each run of equal values
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], len(v)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def auc(scores, labels):
    """ROC AUC as the Mann-Whitney statistic; ties count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative")
    r = midranks(s)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels):
    """Un-interpolated AP: mean precision at the rank of each positive.

    Scores are sorted descending; equal scores keep their input order.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateLabels("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    # fsum: correctly rounded, so the result does not depend on summation order
    return math.fsum(tp[hits == 1] / ranks[hits == 1]) / n_pos


@dataclass
class Counts:
    tp: int
    fp: int
    tn: int
    fn: int


def prf1(scores, labels, threshold=0.5, r_precision=False):
    """Precision, recall and F1 (percent) plus confusion counts.

    Predicts positive iff ``score >= threshold``.  With ``r_precision`` the
    top ``#positives`` ranked items are predicted positive instead.
    """
    s, y = _as_arrays(scores, labels)
    if r_precision:
        k = int(y.sum())
        pred = np.zeros(len(s), dtype=bool)
        pred[np.argsort(-s, kind="stable")[:k]] = True
    else:
        pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return 100.0 * p, 100.0 * r, 100.0 * f1, Counts(tp, fp, tn, fn)


def topk_hits(candidate_scores, true_id, ks=range(1, 11)):
    """Hit indicators per K; ties with the true id are ranked above it."""
    if true_id not in candidate_scores:
        raise UnknownProtein(true_id, "not among the candidates")
    rank = rank_of(candidate_scores, true_id)
    return [rank <= k for k in ks]


def rank_of(candidate_scores, true_id):
    target = candidate_scores[true_id]
    above = sum(1 for pid, v in candidate_scores.items() if pid != true_id and v >= target)
    return above + 1


def ranked(candidate_scores):
    """Candidate ids ordered by descending score, then id."""
    return sorted(candidate_scores, key=lambda pid: (-candidate_scores[pid], pid))


def _t_sf_two_sided(t, df):
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_ttest(a, b):
    """Welch's unequal-variance t-test; returns ``(t, two-sided p)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateSample("each sample needs at least two values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        raise DegenerateSample("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(t), _t_sf_two_sided(float(t), float(df))


@dataclass
class ExperimentReport:
    auc: float | None
    ap: float | None
    precision: float
    recall: float
    f1: float
    threshold: float
    counts: Counts
    mode: str = "threshold"
    topk: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "auc": self.auc,
            "ap": self.ap,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "threshold": self.threshold,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
            "topk": self.topk,
            "mode": self.mode,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(
            auc=d.get("auc"),
            ap=d.get("ap"),
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            threshold=d.get("threshold", 0.5),
            counts=Counts(d["tp"], d["fp"], d["tn"], d["fn"]),
            mode=d.get("mode", "threshold"),
            topk=d.get("topk"),
        )


def evaluate(scores, labels, threshold=0.5, r_precision=False):
    """Full report; AUC/AP are ``None`` when only one class is present."""
    s, y = _as_arrays(scores, labels)
    try:
        a = auc(s, y)
    except DegenerateLabels:
        a = None
    try:
        ap = average_precision(s, y)
    except DegenerateLabels:
        ap = None
    p, r, f1, counts = prf1(s, y, threshold, r_precision)
    return ExperimentReport(a, ap, p, r, f1, threshold, counts, "r_precision" if r_precision else "threshold")
