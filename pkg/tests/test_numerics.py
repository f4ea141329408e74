import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv3d_direct, conv_transpose3d_direct, matmul_loops
from refsam3d.errors import ConfigError, DimensionError, EvaluationError
from refsam3d.gradsuite import OPERATION_CASES, run_suite
from refsam3d.numerics import backend
from refsam3d.numerics import tensor as T
from refsam3d.numerics.conv import ConvSpec, conv1d, conv2d, conv3d
from refsam3d.numerics.gradcheck import grad_check
from refsam3d.numerics.nn import Conv3d, Linear, Module, Parameter, count_parameters
from refsam3d.numerics.tensor import Tensor, no_grad

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@pytest.fixture(params=backend.available())
def each_backend(request):
    before = backend.current()
    backend.use_backend(request.param)
    yield request.param
    backend.use_backend(before)


# ---------------------------------------------------------------- convolution
def test_identity_kernel_returns_input(rng):
    x = Tensor(rng.normal(size=(1, 1, 3, 4, 5)))
    y = conv3d(x, Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)), ConvSpec((1, 1, 1)))
    np.testing.assert_array_equal(y.data, x.data)


def test_all_ones_stride_two_sums_eight():
    x = Tensor(np.ones((1, 1, 4, 4, 4)))
    y = conv3d(x, Tensor(np.ones((1, 1, 2, 2, 2))), None, ConvSpec((2, 2, 2), stride=2))
    assert y.shape == (1, 1, 2, 2, 2)
    np.testing.assert_array_equal(y.data, 8.0)


@pytest.mark.parametrize("kernel,stride,padding,groups,c_out", [
    ((3, 3, 3), (1, 1, 1), (0, 0, 0), 1, 3),
    ((2, 3, 1), (2, 1, 2), (1, 0, 1), 1, 2),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1), 2, 4),
    ((1, 1, 1), (1, 1, 1), (0, 0, 0), 1, 3),
    ((3, 1, 1), (2, 1, 1), (0, 0, 0), 2, 2),
])
def test_conv3d_matches_direct_sum(rng, each_backend, kernel, stride, padding, groups, c_out):
    x = rng.normal(size=(1, 2, 5, 5, 5))
    spec = ConvSpec(kernel, stride, padding, groups)
    w = rng.normal(size=spec.weight_shape(2, c_out))
    b = rng.normal(size=c_out)
    got = conv3d(Tensor(x), Tensor(w), Tensor(b), spec).data
    want = conv3d_direct(x, w, b, stride, padding, groups)
    assert np.abs(got - want).max() <= 1e-10


@pytest.mark.parametrize("kernel,stride,padding,dims", [
    ((2, 2, 2), (2, 2, 2), (0, 0, 0), (2, 3, 2)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1), (3, 2, 4)),
    ((3, 2, 1), (2, 1, 1), (1, 0, 0), (3, 3, 2)),
])
def test_conv_transpose_matches_scatter_oracle(rng, each_backend, kernel, stride, padding, dims):
    x = rng.normal(size=(1, 3, *dims))
    spec = ConvSpec(kernel, stride, padding, transposed=True)
    w = rng.normal(size=spec.weight_shape(3, 2))
    b = rng.normal(size=2)
    got = conv3d(Tensor(x), Tensor(w), Tensor(b), spec)
    want = conv_transpose3d_direct(x, w, b, stride, padding, got.shape[2:])
    assert got.shape[2:] == spec.output_dims(dims)
    assert np.abs(got.data - want).max() <= 1e-10


@pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (2, 0, 1), (1, 1, 2), (2, 1, 1)])
def test_transposed_conv_is_adjoint(rng, each_backend, stride, padding, groups):
    kernel = (2, 3, 3)
    # Sizes with (n + 2p - k) divisible by the stride, so the transposed conv maps back onto x's shape.
    dims = tuple(k - 2 * padding + 2 * stride for k in kernel)
    fwd = ConvSpec(kernel, stride, padding, groups)
    adj = ConvSpec(kernel, stride, padding, groups, transposed=True)
    x = rng.normal(size=(2, 4, *dims))
    w = rng.normal(size=fwd.weight_shape(4, 6))
    y = rng.normal(size=(2, 6, *fwd.output_dims(dims)))
    # The forward weight (C_out, C_in/G, k) is the transposed-layout weight of the C_out -> C_in map.
    back = conv3d(Tensor(y), Tensor(w), None, adj).data
    assert back.shape == x.shape
    lhs = np.sum(conv3d(Tensor(x), Tensor(w), None, fwd).data * y)
    rhs = np.sum(x * back)
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))


def test_backends_agree_bitwise(rng):
    if len(backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    x = rng.normal(size=(2, 3, 5, 6, 4)).astype(np.float32)
    spec = ConvSpec((3, 2, 3), (1, 2, 1), (1, 0, 1))
    w = rng.normal(size=spec.weight_shape(3, 4)).astype(np.float32)
    outs = []
    before = backend.current()
    for name in ("compiled", "python"):
        backend.use_backend(name)
        outs.append(conv3d(Tensor(x), Tensor(w), None, spec).data)
    backend.use_backend(before)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_conv_errors_name_axis_and_groups():
    with pytest.raises(DimensionError, match="height"):
        conv3d(Tensor(np.zeros((1, 1, 4, 1, 4))), Tensor(np.zeros((1, 1, 2, 2, 2))), None, ConvSpec(2))
    with pytest.raises(ConfigError, match="groups"):
        ConvSpec(1, groups=3).check_channels(4, 6)
    with pytest.raises(DimensionError, match="channel"):
        conv3d(Tensor(np.zeros((1, 2, 2, 2, 2))), Tensor(np.zeros((1, 3, 1, 1, 1))), None, ConvSpec(1))


def test_conv1d_conv2d_match_conv3d(rng):
    x2 = rng.normal(size=(1, 2, 5, 6))
    w2 = rng.normal(size=(3, 2, 3, 3))
    y2 = conv2d(Tensor(x2), Tensor(w2), None, stride=1, padding=1).data
    ref = conv3d_direct(x2[:, :, None], w2[:, :, None], None, (1, 1, 1), (0, 1, 1))[:, :, 0]
    assert np.abs(y2 - ref).max() <= 1e-10
    x1 = rng.normal(size=(2, 2, 7))
    w1 = rng.normal(size=(2, 2, 3))
    y1 = conv1d(Tensor(x1), Tensor(w1), None, stride=2).data
    ref1 = conv3d_direct(x1[:, :, None, None], w1[:, :, None, None], None, (1, 1, 2))[:, :, 0, 0]
    assert np.abs(y1 - ref1).max() <= 1e-10


def test_transposed_stride_doubles_dims():
    spec = ConvSpec(2, stride=2, transposed=True)
    assert spec.output_dims((2, 3, 4)) == (4, 6, 8)


# ---------------------------------------------------------------- dense ops
def test_linear_examples(rng):
    y = T.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([3.0, 3.0]))
    np.testing.assert_array_equal(y.data, [[4.0, 5.0]])
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(T.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    W = rng.normal(size=(4, 5))
    b = rng.normal(size=5)
    assert np.abs(T.linear(Tensor(x), Tensor(W), Tensor(b)).data - (matmul_loops(x, W) + b)).max() <= 1e-12
    with pytest.raises(DimensionError):
        T.linear(Tensor(x), Tensor(np.zeros((3, 2))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(x), Tensor(np.zeros((3, 2))))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(4))).data, 0.25)
    np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)
    big = T.softmax(Tensor([1000.0, 1000.0])).data
    np.testing.assert_array_equal(big, [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite),
       st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(x, c):
    s = T.softmax(Tensor(x), axis=-1).data
    assert np.all(s > 0) and np.all(s <= 1)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=-1).data, s, atol=1e-12)


def test_layernorm_examples(rng):
    np.testing.assert_array_equal(T.layernorm(Tensor(np.full((2, 5), 3.0)), None, None).data, 0.0)
    y = T.layernorm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(y, [[-1.0, 1.0]], atol=1e-9)
    z = T.layernorm(Tensor(rng.normal(size=(4, 16))), None, None).data
    assert np.abs(z.mean(axis=-1)).max() <= 1e-6
    np.testing.assert_allclose(z.var(axis=-1), 1.0, atol=1e-4)


def test_gelu_tanh_approximation():
    x = np.linspace(-4, 4, 17)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, rtol=1e-14, atol=1e-15)


def test_gelu_keeps_float32():
    assert T.gelu(Tensor(np.ones(3, np.float32))).dtype == np.float32


def test_shared_input_gradients_accumulate():
    x = Tensor([2.0, -1.0], requires_grad=True)
    y = (x * x + x * 3.0).sum()
    y.backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data + 3)


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_ops_deterministic(rng):
    x = rng.normal(size=(1, 2, 4, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    a = conv3d(Tensor(x), Tensor(w), None, ConvSpec(3, padding=1)).data
    b = conv3d(Tensor(x), Tensor(w), None, ConvSpec(3, padding=1)).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- grad_check
def test_grad_check_square():
    w = Tensor([3.0])
    rep = grad_check(lambda: (w * w).sum(), {"w": w}, eps=1e-5)
    assert rep.errors["w"] <= 1e-9


def test_grad_check_constant_function():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    rep = grad_check(lambda: T.softmax(x, axis=-1).sum(), {"x": x}, eps=1e-5)
    assert rep.passed


def test_grad_check_detects_wrong_gradient():
    x = Tensor([1.0, 2.0])

    def bad():
        y = T._make(x.data**2, (x,), "bad")
        y._backward = lambda g: x._send(g * 3 * x.data)
        return y.sum()

    assert not grad_check(bad, {"x": x}).passed


def test_grad_check_rejects_non_finite():
    x = Tensor([-1.0])
    with pytest.raises(EvaluationError), np.errstate(invalid="ignore"):
        grad_check(lambda: T.log(x).sum(), {"x": x})


@pytest.mark.parametrize("name", sorted(OPERATION_CASES))
def test_operation_gradients(name):
    case = OPERATION_CASES[name]
    f, params = case(np.random.default_rng(7))
    rep = grad_check(f, params, eps=1e-5, tolerance=1e-5)
    assert rep.passed, str(rep)


def test_full_model_gradient_on_8cube():
    [res] = [r for r in run_suite(1e-4) if r.name.startswith("full_model")]
    assert res.report.passed, str(res.report)


# ---------------------------------------------------------------- modules
def test_parameter_tags_and_census(rng):
    class Net(Module):
        def __init__(self):
            self.a = Linear(3, 4, rng, origin="pretrained-2d")
            self.b = Conv3d(2, 2, 3, rng)

    net = Net()
    c = count_parameters(net)
    assert c["frozen_count"] == 3 * 4 + 4
    assert c["trainable_count"] == 2 * 2 * 27 + 2
    assert all(not p.requires_grad for p in net.a.parameters())
    with pytest.raises(ConfigError):
        Parameter(np.zeros(1), origin="borrowed")


def test_module_astype_casts_all(rng):
    lin = Linear(3, 2, rng)
    lin.astype(np.float32)
    assert all(p.dtype == np.float32 for p in lin.parameters())
