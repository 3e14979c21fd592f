"""Independent reference implementations used as test oracles."""

from fractions import Fraction


def brute_force_metrics(preds, labels):
    """Binary metrics from first principles in exact rational arithmetic.

    Returns precision (macro), recall (micro), f1 micro/macro/weighted.
    Undefined ratios count as 0.
    """
    pairs = list(zip(preds, labels))
    n = len(pairs)

    def div(a, b):
        return Fraction(a, b) if b else Fraction(0)

    per = {}
    for c in (0, 1):
        tp = sum(1 for p, y in pairs if p == c and y == c)
        pred_c = sum(1 for p, _ in pairs if p == c)
        true_c = sum(1 for _, y in pairs if y == c)
        prec, rec = div(tp, pred_c), div(tp, true_c)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        per[c] = (prec, rec, f1, true_c)
    correct = sum(1 for p, y in pairs if p == y)
    return {
        "precision": (per[0][0] + per[1][0]) / 2,
        "recall": Fraction(correct, n),
        "f1_micro": Fraction(correct, n),
        "f1_macro": (per[0][2] + per[1][2]) / 2,
        "f1_weighted": (per[0][2] * per[0][3] + per[1][2] * per[1][3]) / n,
    }


def exact_median(values):
    s = sorted(values)
    m = len(s) // 2
    return s[m] if len(s) % 2 else (s[m - 1] + s[m]) / 2
