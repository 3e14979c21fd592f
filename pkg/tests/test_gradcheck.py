import numpy as np
import pytest

from memevilt import gradcheck
from memevilt import tensor as tm
from memevilt.errors import EvaluationError
from memevilt.gradcheck import check_gradient, check_ops, relative_error


def test_quadratic_exact():
    report = check_gradient(lambda p: tm.sum_all(tm.mul(p["t"], p["t"])), {"t": np.array([1.0, 2.0, 3.0])})
    assert report.passed
    assert report.max_rel_error <= 1e-12


@pytest.mark.parametrize("h", [1e-1, 1e-3, 1e-5])
def test_linear_exact_for_any_h(h):
    report = check_gradient(lambda p: tm.sum_all(p["t"]), {"t": np.array([0.3, -2.0, 5.0])}, h=h)
    assert report.max_rel_error <= 1e-9


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_non_finite_loss_names_parameter():
    def loss(p):
        if p["w"].data[0] > 1.0:
            return tm.sum_all(tm.scale(p["w"], float("inf")))
        return tm.sum_all(p["w"])

    with pytest.raises(EvaluationError, match="'w'"):
        check_gradient(loss, {"w": np.array([1.0])})


def test_report_fields():
    report = check_gradient(lambda p: tm.sum_all(tm.mul(p["a"], p["a"])), {"a": np.ones(3)}, h=1e-3, tol=1e-4)
    d = report.to_dict()
    assert d["h"] == 1e-3 and d["tol"] == 1e-4 and d["pass"] is True
    assert [p["name"] for p in d["params"]] == ["a"]


@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes(seed):
    failed = {k: r.max_rel_error for k, r in check_ops(seed).items() if not r.passed}
    assert not failed


def test_mutated_backward_is_caught(monkeypatch):
    def broken_tanh(x):
        y = np.tanh(x.data)
        return tm._result(y, (x,), lambda g: (g * (1 - y),), "tanh")  # missing square

    monkeypatch.setattr(tm, "tanh", broken_tanh)
    reports = check_ops(0)
    assert not reports["tanh"].passed
    assert reports["sigmoid"].passed


def test_kink_margin_respected(tiny_cfg):
    batch, params = gradcheck.model_check_case(tiny_cfg, seed=3)
    assert np.abs(gradcheck._relu_inputs(batch, params, tiny_cfg)).min() >= gradcheck.KINK_MARGIN


def test_tiny_model_gradient(tiny_cfg):
    report = gradcheck.check_model_gradient(tiny_cfg, seed=1, max_coords=8)
    assert report.passed, report.to_dict()
