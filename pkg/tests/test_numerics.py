import numpy as np
import pytest

from graspdict import numerics as nx
from graspdict.paramstore import ParamStore


def _store(**values):
    store = ParamStore()
    for name, value in values.items():
        store.add(name, value)
    return store


def _check(store, forward, tolerance=1e-4):
    report = nx.gradcheck(nx.GradProgram(store, forward), tolerance=tolerance)
    assert report.passed, list(report.lines())
    return report


def test_square_gradient():
    store = _store(x=[[3.0]])
    nx.backward(nx.tsum(nx.square(store.var("x"))), store)
    np.testing.assert_allclose(store.entry("x").grad, [[6.0]])


def test_softmax_sum_has_zero_gradient():
    store = _store(v=np.random.default_rng(0).normal(size=(2, 5)))
    nx.backward(nx.tsum(nx.softmax(store.var("v"))), store)
    np.testing.assert_allclose(store.entry("v").grad, 0.0, atol=1e-12)


def test_unreached_parameter_gets_zero_gradient():
    store = _store(a=np.ones(3), b=np.ones(3))
    store.entry("b").grad[...] = 5.0
    nx.backward(nx.tsum(store.var("a") * 2.0), store)
    np.testing.assert_allclose(store.entry("a").grad, 2.0)
    np.testing.assert_allclose(store.entry("b").grad, 0.0)


def test_backward_needs_scalar():
    store = _store(a=np.ones(3))
    with pytest.raises(nx.NonScalarLoss):
        nx.backward(store.var("a") * 2.0, store)


def test_linear_least_squares_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 5))
    y = rng.normal(size=(7, 3))
    store = _store(W=np.zeros((5, 3)))
    _check(store, lambda s: nx.mse(nx.constant(x) @ s.var("W"), y))


def test_elementwise_primitives():
    rng = np.random.default_rng(2)
    store = _store(a=rng.uniform(0.5, 2.0, size=(5, 7)),
                   b=rng.uniform(0.5, 2.0, size=(1, 7)))

    def forward(s):
        a, b = s.var("a"), s.var("b")
        mixed = (a * b - b / a + 1.0 / (a + b)) @ nx.constant(
            np.linspace(-1.0, 1.0, 7).reshape(7, 1))
        return nx.tsum(nx.sqrt(a)) + nx.mean(nx.square(mixed)) + \
            nx.tsum(a[1:3, ::2]) - nx.tsum(a.transpose()[[0, 2, 2]])

    _check(store, forward)


def test_reductions_and_reshaping():
    rng = np.random.default_rng(3)
    store = _store(a=rng.normal(size=(4, 3, 5)))
    weights = rng.normal(size=(4, 5, 3))

    def forward(s):
        a = s.var("a")
        joined = nx.concat([a, a * 2.0], axis=1)
        stacked = nx.stack([nx.tsum(joined, axis=1), nx.mean(a, axis=1)],
                           axis=-1)
        turned = a.transpose(0, 2, 1)
        flat = turned.reshape(4, 15)[:, :10]
        return nx.tsum(stacked.reshape(4, 10) * flat) + \
            nx.tsum(turned * weights)

    _check(store, forward)


def test_relu_and_softmax():
    rng = np.random.default_rng(4)
    values = rng.normal(size=(5, 7))
    values[np.abs(values) < 0.05] = 0.5
    store = _store(a=values)
    target = rng.normal(size=(5, 7))

    def forward(s):
        return nx.mse(nx.relu(s.var("a")) + nx.softmax(s.var("a")), target)

    _check(store, forward)


@pytest.mark.parametrize("mode", ["train", "infer"])
def test_batch_norm(mode):
    rng = np.random.default_rng(5)
    store = _store(x=rng.normal(2.0, 3.0, size=(5, 7)),
                   gamma=rng.uniform(0.5, 1.5, size=7),
                   beta=rng.normal(size=7))
    running_mean = rng.normal(size=7)
    running_var = rng.uniform(0.5, 2.0, size=7)
    target = rng.normal(size=(5, 7))

    def forward(s):
        out = nx.batch_norm(s.var("x"), s.var("gamma"), s.var("beta"),
                            running_mean, running_var, mode=mode,
                            update_stats=False)
        return nx.mse(out, target)

    _check(store, forward)


def test_batch_norm_running_statistics():
    x = np.arange(10.0).reshape(5, 2)
    running_mean = np.zeros(2)
    running_var = np.ones(2)
    out = nx.batch_norm(x, np.ones(2), np.zeros(2), running_mean, running_var)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(running_var, 0.9 + 0.1 * x.var(axis=0))


def test_interval_and_cylindrical():
    rng = np.random.default_rng(6)
    values = rng.uniform(-3.0, 3.0, size=(5, 7))
    values[np.abs(np.abs(values) - 1.0) < 0.05] = 0.0
    store = _store(d=values, q=rng.normal(size=(6, 3)))

    def forward(s):
        cylinder = nx.cylindrical(s.var("q"))
        return nx.tsum(nx.interval(s.var("d"), -1.0, 1.0)) + \
            nx.mse(cylinder, np.ones((6, 4)))

    _check(store, forward)


def test_interval_values():
    out = nx.interval(np.array([0.5, 1.5, -2.0]), -1.0, 1.0).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_cylindrical_on_axis():
    out = nx.cylindrical(np.array([[0.0, 0.0, 5.0]])).data
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.0, 5.0]])


def test_constant_loss_passes():
    store = _store(w=np.ones((3, 2)))
    report = _check(store, lambda s: nx.tsum(s.var("w")) * 0.0 + 1.0)
    assert report.max_relative_error == 0.0


def test_gradcheck_flags_wrong_gradient():
    store = _store(w=np.array([1.0, 2.0]))

    def forward(s):
        w = s.var("w")
        # Forward squares, backward pretends the identity.
        return nx.tsum(nx.Tensor(w.data ** 2, parents=(w,),
                                 backward_fn=lambda grad: (grad,),
                                 requires_grad=True))

    report = nx.gradcheck(nx.GradProgram(store, forward))
    assert not report.passed


def test_gradcheck_restores_values():
    rng = np.random.default_rng(7)
    store = _store(W=rng.normal(size=(4, 3)))
    before = store.digest()
    nx.gradcheck(nx.GradProgram(store, lambda s: nx.mse(
        s.var("W"), np.zeros((4, 3)))))
    assert store.digest() == before


def test_matmul_shape_mismatch():
    with pytest.raises(nx.ShapeMismatch):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_numpy_operand_on_the_left():
    store = _store(b=np.ones((3, 2)))
    out = np.ones((4, 3)) @ store.var("b")
    assert isinstance(out, nx.Tensor)
    nx.backward(nx.tsum(out), store)
    np.testing.assert_allclose(store.entry("b").grad, 4.0)


def test_minibatches():
    batches = nx.minibatches(9, 4)
    assert [len(batch) for batch in batches] == [4, 5]
    assert [len(batch) for batch in nx.minibatches(8, 4)] == [4, 4]
    shuffled = nx.minibatches(10, 3, nx.make_rng(0, "test"))
    assert sorted(np.concatenate(shuffled).tolist()) == list(range(10))


def test_make_rng_streams():
    first = nx.make_rng(7, "a").normal(size=4)
    np.testing.assert_array_equal(first, nx.make_rng(7, "a").normal(size=4))
    assert not np.array_equal(first, nx.make_rng(7, "b").normal(size=4))
    assert not np.array_equal(first, nx.make_rng(8, "a").normal(size=4))
