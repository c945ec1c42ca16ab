import numpy as np
import pytest

from coupalign.data.vocab import tokenize
from coupalign.engine.diagnostics import CHECKS, pipeline_config, render_rows, run_check, run_suite
from coupalign.network.model import CoupAlign
from coupalign.tensor import Tensor, grad_check, log, matmul, relu, softmax, tsum
from coupalign.utils.errors import ContractError, NumericError

ELEMENTARY = [name for name in CHECKS if not name.startswith("pipeline")]


def test_softmax_matmul_passes():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 3)))
    weights = Tensor(rng.normal(size=(3, 3)))
    error = grad_check(lambda t: tsum(softmax(matmul(t, w)) * weights), Tensor(rng.normal(size=(3, 3))))
    assert error < 1e-6


def test_constant_function_has_zero_error():
    assert grad_check(lambda t: Tensor(3.0), Tensor(np.ones(4))) == 0.0


def test_relu_kink_is_excluded():
    error = grad_check(lambda t: tsum(relu(t)), Tensor(np.array([0.0, 1.0, -2.0])))
    assert error < 1e-6


def test_float32_input_rejected():
    with pytest.raises(ContractError):
        grad_check(lambda t: tsum(t), Tensor(np.ones(2, dtype=np.float32)))


def test_non_finite_forward_names_the_op():
    with pytest.raises(NumericError, match="forward.*log"):
        grad_check(lambda t: tsum(log(t)), Tensor(np.array([-1.0, 2.0])))
    with pytest.raises(NumericError, match="forward.*mul"):
        grad_check(lambda t: tsum(t * Tensor(np.array([np.inf, 1.0]))), Tensor(np.array([1.0, 2.0])))


def test_non_finite_perturbation_names_the_op():
    with pytest.raises(NumericError, match=r"f\(x-h\).*log"):
        grad_check(lambda t: tsum(log(t)), Tensor(np.array([1e-6, 2.0])))


@pytest.mark.parametrize("name", ELEMENTARY)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elementary_checks_pass(name, seed):
    row = run_check(name, seed)
    assert row.passed, f"{name} seed={seed}: {row.error:.3e}"


@pytest.mark.parametrize("name", ["pipeline16x16", "pipeline16x16(train)"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pipeline_checks_pass(name, seed):
    row = run_check(name, seed)
    assert row.passed, f"{name} seed={seed}: {row.error:.3e}"


def test_training_pipeline_updates_only_running_statistics(f64):
    model = CoupAlign(pipeline_config(0))
    tokens = tokenize(["red", "circle", "left"], 4)[None, :]
    images = np.random.default_rng(0).uniform(size=(1, 16, 16, 3))
    first = model.predict(images, tokens, training=True).logits.data
    second = model.predict(images, tokens, training=True).logits.data
    assert np.array_equal(first, second)
    evaluated = model.predict(images, tokens, training=False).logits.data
    assert not np.array_equal(first, evaluated)


def test_run_suite_and_render():
    rows = run_suite(["matmul", "relu"], seeds=[0, 1])
    assert [(row.name, row.seed) for row in rows] == [("matmul", 0), ("matmul", 1), ("relu", 0), ("relu", 1)]
    text = render_rows(rows)
    assert text.splitlines()[0].startswith("check")
    assert text.count("ok") == 4
