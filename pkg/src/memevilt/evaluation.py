"""Binary classification metrics, data splits and k-fold plans."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .data.manifest import Corpus
from .errors import ShapeError, ValidationError
from .rng import RngStream

METRIC_FIELDS = ("loss", "precision", "recall", "f1_micro", "f1_macro", "f1_weighted")
AVERAGES = ("macro", "micro", "weighted", "binary")


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_labels, true_labels) -> ConfusionMatrix:
    """Counts with class 1 as the positive class."""
    p = np.asarray(pred_labels).astype(np.int64).reshape(-1)
    t = np.asarray(true_labels).astype(np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"{p.size} predictions vs {t.size} labels")
    if p.size == 0:
        raise ShapeError("no predictions to score")
    if not (np.isin(p, (0, 1)).all() and np.isin(t, (0, 1)).all()):
        raise ValidationError("labels and predictions must be 0 or 1")
    return ConfusionMatrix(
        tp=int(((p == 1) & (t == 1)).sum()),
        fp=int(((p == 1) & (t == 0)).sum()),
        fn=int(((p == 0) & (t == 1)).sum()),
        tn=int(((p == 0) & (t == 0)).sum()),
    )


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    loss: float
    precision: float
    recall: float
    f1_micro: float
    f1_macro: float
    f1_weighted: float
    per_class: dict = field(default_factory=dict)
    n: int = 0
    confusion: ConfusionMatrix | None = None

    def row(self) -> list:
        return [getattr(self, k) for k in METRIC_FIELDS]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_FIELDS}
        d["n"] = self.n
        d["per_class"] = {str(c): asdict(m) for c, m in self.per_class.items()}
        if self.confusion is not None:
            d["confusion"] = asdict(self.confusion)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_class = {int(c): ClassMetrics(**m) for c, m in d.get("per_class", {}).items()}
        conf = ConfusionMatrix(**d["confusion"]) if d.get("confusion") else None
        return cls(*(d[k] for k in METRIC_FIELDS), per_class=per_class, n=d.get("n", 0), confusion=conf)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def class_scores(cm: ConfusionMatrix) -> dict:
    """Per-class precision/recall/F1/support for classes 0 and 1 (empty denominators give 0)."""
    out = {}
    for cls, (tp, fp, fn) in ((1, (cm.tp, cm.fp, cm.fn)), (0, (cm.tn, cm.fn, cm.fp))):
        out[cls] = ClassMetrics(
            precision=_ratio(tp, tp + fp),
            recall=_ratio(tp, tp + fn),
            f1=_ratio(2 * tp, 2 * tp + fp + fn),
            support=tp + fn,
        )
    return dict(sorted(out.items()))


def _average(per_class: dict, key: str, how: str, cm: ConfusionMatrix) -> float:
    if how == "micro":
        return _ratio(cm.tp + cm.tn, cm.n)
    if how == "binary":
        return getattr(per_class[1], key)
    if how == "macro":
        return (getattr(per_class[0], key) + getattr(per_class[1], key)) / 2
    if how == "weighted":
        return sum(getattr(m, key) * m.support for m in per_class.values()) / cm.n
    raise ValidationError(f"unknown averaging {how!r}; choose from {AVERAGES}")


def compute_metrics(probs, labels, threshold: float = 0.5, loss: float = float("nan"),
                    precision_average: str = "macro", recall_average: str = "micro") -> MetricsReport:
    """Score probabilities against 0/1 labels.

    Predictions are ``prob >= threshold``. ``f1_micro`` equals accuracy in the
    single-label binary case. The headline ``precision`` is macro-averaged and
    ``recall`` micro-averaged unless overridden.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if probs.shape != labels.shape:
        raise ShapeError(f"{probs.size} probabilities vs {labels.size} labels")
    preds = (probs >= threshold).astype(np.int64)
    return metrics_from_predictions(preds, labels, loss, precision_average, recall_average)


def metrics_from_predictions(preds, labels, loss: float = float("nan"),
                             precision_average: str = "macro", recall_average: str = "micro") -> MetricsReport:
    cm = confusion(preds, labels)
    per_class = class_scores(cm)
    return MetricsReport(
        loss=float(loss),
        precision=_average(per_class, "precision", precision_average, cm),
        recall=_average(per_class, "recall", recall_average, cm),
        f1_micro=_ratio(cm.tp + cm.tn, cm.n),
        f1_macro=_average(per_class, "f1", "macro", cm),
        f1_weighted=_average(per_class, "f1", "weighted", cm),
        per_class=per_class,
        n=cm.n,
        confusion=cm,
    )


def aggregate_reports(reports, how: str = "median") -> MetricsReport:
    """Combine run reports field by field (median, mean) or pick the best F1-weighted run."""
    reports = list(reports)
    if not reports:
        raise ValidationError("nothing to aggregate")
    if how == "best":
        return max(reports, key=lambda r: r.f1_weighted)
    if how == "median":
        reduce = statistics.median
    elif how == "mean":
        reduce = statistics.fmean
    else:
        raise ValidationError(f"unknown aggregation {how!r}")
    values = {k: float(reduce([getattr(r, k) for r in reports])) for k in METRIC_FIELDS}
    per_class = {}
    classes = sorted(set().union(*(r.per_class.keys() for r in reports)))
    for c in classes:
        rows = [r.per_class[c] for r in reports if c in r.per_class]
        per_class[c] = ClassMetrics(
            precision=float(reduce([m.precision for m in rows])),
            recall=float(reduce([m.recall for m in rows])),
            f1=float(reduce([m.f1 for m in rows])),
            support=int(round(reduce([m.support for m in rows]))),
        )
    n = int(round(reduce([r.n for r in reports])))
    return MetricsReport(**values, per_class=per_class, n=n)


def aggregate_median(reports) -> MetricsReport:
    return aggregate_reports(reports, "median")


# ---------------------------------------------------------------------------
# splits


def _floor_share(ratio: float, n: int) -> int:
    return math.floor(Fraction(ratio).limit_denominator(10**9) * n)


def _by_class(corpus: Corpus) -> dict:
    groups = {}
    for rec in corpus.records:
        if rec.label is None:
            raise ValidationError(f"record {rec.id!r} has no label; splits need a labeled corpus")
        groups.setdefault(rec.label, []).append(rec.id)
    return dict(sorted(groups.items()))


def split_train_val_test(corpus: Corpus, ratios=(0.8, 0.1, 0.1), seed: int = 0, stratified: bool = True):
    """Disjoint train/val/test corpora; val and test get the floored share of each class."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if stratified:
        groups = _by_class(corpus)
        small = [c for c, ids in groups.items() if len(ids) < 3]
        if small:
            raise ValidationError(f"class(es) {small} have fewer than 3 members; use stratified=False")
    else:
        _by_class(corpus)
        groups = {"all": corpus.ids}
    rng = RngStream(seed, 0x73706C6974)
    train, val, test = [], [], []
    for cls, ids in groups.items():
        order = rng.derive(str(cls)).permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n_val = _floor_share(ratios[1], len(ids))
        n_test = _floor_share(ratios[2], len(ids))
        val += shuffled[:n_val]
        test += shuffled[n_val:n_val + n_test]
        train += shuffled[n_val + n_test:]
    return corpus.subset(train), corpus.subset(val), corpus.subset(test)


@dataclass
class FoldPlan:
    holdout_ids: list
    folds: list
    k: int
    seed: int
    holdout_ratio: float = 0.10

    def split(self, i: int):
        """(training ids, validation ids) for fold ``i``."""
        train = [x for j, fold in enumerate(self.folds) if j != i for x in fold]
        return train, list(self.folds[i])

    @property
    def fold_sizes(self) -> list:
        return [len(f) for f in self.folds]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "holdout_ratio": self.holdout_ratio,
            "holdout_size": len(self.holdout_ids),
            "fold_sizes": self.fold_sizes,
            "holdout_ids": list(self.holdout_ids),
            "folds": [list(f) for f in self.folds],
        }


def _largest_remainder(total: int, quotas: dict) -> dict:
    alloc = {c: math.floor(q) for c, q in quotas.items()}
    spare = total - sum(alloc.values())
    for c in sorted(quotas, key=lambda c: (-(quotas[c] - alloc[c]), str(c)))[:spare]:
        alloc[c] += 1
    return alloc


def kfold_plan(corpus: Corpus, k: int, holdout_ratio: float = 0.10, seed: int = 0,
               stratified: bool = True) -> FoldPlan:
    """Hold out floor(ratio * N) records, then deal the rest into ``k`` folds.

    With stratification the holdout takes each class's share (largest
    remainder rounding) and the remaining ids are dealt round-robin class by
    class, continuing where the previous class stopped, so fold sizes differ
    by at most one both per class and overall.
    """
    if k < 2:
        raise ValidationError("k must be at least 2")
    if not 0 < holdout_ratio < 1:
        raise ValidationError("holdout_ratio must lie in (0, 1)")
    groups = _by_class(corpus) if stratified else {"all": corpus.ids}
    if not stratified:
        _by_class(corpus)
    n = len(corpus)
    total = _floor_share(holdout_ratio, n)
    frac = Fraction(holdout_ratio).limit_denominator(10**9)
    alloc = _largest_remainder(total, {c: frac * len(ids) for c, ids in groups.items()})
    rng = RngStream(seed, 0x6B666F6C64)
    holdout, folds, cursor = [], [[] for _ in range(k)], 0
    for cls, ids in groups.items():
        order = rng.derive(str(cls)).permutation(len(ids))
        shuffled = [ids[i] for i in order]
        holdout += shuffled[: alloc[cls]]
        rest = shuffled[alloc[cls]:]
        if len(rest) < k:
            raise ValidationError(f"class {cls!r} has {len(rest)} records outside the holdout, fewer than k={k}")
        for x in rest:
            folds[cursor].append(x)
            cursor = (cursor + 1) % k
    position = {rid: i for i, rid in enumerate(corpus.ids)}
    holdout.sort(key=position.__getitem__)
    for fold in folds:
        fold.sort(key=position.__getitem__)
    return FoldPlan(holdout, folds, k, seed, holdout_ratio)
