import numpy as np
import pytest

from metattr import autodiff as ad
from metattr.gradcheck import gradient_error
from op_cases import OPS, draw


def gelu_ref(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_finite_differences(name, rng):
    fn, shapes, positive = OPS[name]
    worst = max(gradient_error(fn, draw(rng, shapes, positive), rng) for _ in range(10))
    assert worst <= 1e-2, f"{name}: {worst}"


def test_gelu_is_tanh_approximation():
    x = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(ad.gelu(ad.Tensor(x)).data, gelu_ref(x), atol=1e-6)


def test_softmax_rows_sum_to_one_and_positive(rng):
    x = rng.standard_normal((50, 10)) * 5
    s = ad.softmax(ad.Tensor(x)).data
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_is_shift_invariant(rng):
    x = rng.standard_normal((4, 5))
    a = ad.softmax(ad.Tensor(x)).data
    b = ad.softmax(ad.Tensor(x + 7.0)).data
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_log_softmax_matches_log_of_softmax(rng):
    x = rng.standard_normal((4, 5))
    np.testing.assert_allclose(ad.log_softmax(ad.Tensor(x)).data,
                               np.log(ad.softmax(ad.Tensor(x)).data), atol=1e-6)


def test_layer_norm_statistics(rng):
    y = ad.layer_norm(ad.Tensor(rng.standard_normal((6, 32)) * 5 + 3)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=-1), 1, atol=1e-3)


def test_cross_entropy_value():
    logits = np.array([[2.0, 0.0, -1.0]])
    expect = -np.log(np.exp(2) / (np.exp(2) + 1 + np.exp(-1)))
    assert ad.cross_entropy(ad.Tensor(logits), [0]).item() == pytest.approx(expect, rel=1e-6)


def test_storage_is_float32():
    t = ad.Tensor(np.arange(3, dtype=np.float64)) * 2.0
    assert t.data.dtype == np.float32


def test_reduction_accumulates_in_double():
    # 1e8 + many ones: float32 accumulation would lose the small terms
    x = np.concatenate([[1e8], np.ones(1000)]).astype(np.float32)
    assert ad.sum(ad.Tensor(x)).item() == pytest.approx(1e8 + 1000, rel=1e-7)


def test_shared_subexpression_gradients_accumulate():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.sum(x * x + x)
    y.backward()
    np.testing.assert_allclose(x.grad, [3.0, 5.0])


def test_matmul_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.ones(3)), ad.Tensor(np.ones((3, 2))))


def test_elementwise_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2,))))


def test_nonfinite_values_rejected():
    with pytest.raises(ad.NonFiniteError):
        ad.Tensor([1.0, np.nan])
    with pytest.raises(ad.NonFiniteError):
        ad.Tensor([1e30]) * ad.Tensor([1e30])


def test_log_of_nonpositive_rejected():
    with pytest.raises(ValueError):
        ad.log(ad.Tensor([1.0, 0.0]))


def test_backward_needs_scalar_without_seed():
    with pytest.raises(ad.ShapeError):
        (ad.Tensor(np.ones(3), requires_grad=True) * 2.0).backward()


def test_no_grad_records_nothing():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert y._parents == () and not y.requires_grad
    assert ad.grad_enabled()


def test_constants_receive_no_gradient():
    w = ad.Tensor(np.ones((3, 2)), requires_grad=True)
    c = ad.Tensor(np.ones((4, 3)))
    ad.sum(c @ w).backward()
    assert c.grad is None and w.grad.shape == (3, 2)


def test_results_are_deterministic(rng):
    a, b = rng.standard_normal((16, 32)), rng.standard_normal((32, 8))

    def run():
        x = ad.Tensor(a, requires_grad=True)
        out = ad.sum(ad.gelu(ad.layer_norm(x @ ad.Tensor(b))))
        out.backward()
        return out.data.tobytes() + x.grad.tobytes()

    assert run() == run()
