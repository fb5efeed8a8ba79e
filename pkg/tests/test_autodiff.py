import json

import numpy as np
import pytest
from conftest import max_relative_error, numerical_grad
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbdgm import autodiff as ad
from uwbdgm.autodiff import ParamStore, Tensor


def _check_op(build, *shapes, rng, positive=False, tol=1e-4):
    """Gradient of ``sum(build(*inputs) * R)`` against central differences."""
    arrays = [rng.uniform(0.2, 1.5, s) * rng.choice([-1, 1], s) if not positive else rng.uniform(0.2, 1.5, s)
              for s in shapes]
    probe = None

    def scalar():
        nonlocal probe
        out = build(*[Tensor(a) for a in arrays])
        if probe is None:
            probe = rng.normal(size=out.shape)
        return float((out.data * probe).sum())

    scalar()
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    loss = ad.tensor_sum(ad.mul(out, Tensor(probe)))
    ad.backward(loss)
    numeric = numerical_grad(scalar, arrays)
    for leaf, num in zip(leaves, numeric):
        assert leaf.grad.shape == leaf.shape
        assert max_relative_error(leaf.grad, num) < tol


class TestForward:
    def test_conv1d_output_length(self):
        out = ad.conv1d(Tensor(np.ones((1, 1, 8))), Tensor(np.ones((1, 1, 3))))
        assert out.shape == (1, 1, 6)

    @pytest.mark.parametrize("length,width,stride", [(8, 3, 1), (152, 5, 2), (74, 5, 2), (9, 9, 3), (10, 2, 4)])
    def test_conv1d_length_formula(self, length, width, stride):
        out = ad.conv1d(Tensor(np.zeros((2, 3, length))), Tensor(np.zeros((4, 3, width))), stride)
        assert out.shape == (2, 4, (length - width) // stride + 1)

    def test_conv1d_matches_direct_loop(self, rng):
        x = rng.normal(size=(2, 3, 11))
        k = rng.normal(size=(4, 3, 3))
        out = ad.conv1d(Tensor(x), Tensor(k), stride=2).data
        ref = np.zeros((2, 4, 5))
        for b in range(2):
            for o in range(4):
                for t in range(5):
                    ref[b, o, t] = np.sum(x[b, :, 2 * t : 2 * t + 3] * k[o])
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_conv2d_matches_direct_loop(self, rng):
        x = rng.normal(size=(1, 2, 5, 6))
        k = rng.normal(size=(3, 2, 2, 3))
        out = ad.conv2d(Tensor(x), Tensor(k)).data
        ref = np.zeros((1, 3, 4, 4))
        for o in range(3):
            for i in range(4):
                for j in range(4):
                    ref[0, o, i, j] = np.sum(x[0, :, i : i + 2, j : j + 3] * k[o])
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_relu(self):
        assert ad.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]

    def test_softmax_uniform(self):
        out = ad.softmax(Tensor(np.full((1, 5), 3.7))).data
        np.testing.assert_allclose(out, 0.2, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ad.ShapeError):
            ad.conv1d(Tensor(np.ones((1, 2, 8))), Tensor(np.ones((1, 3, 3))))
        with pytest.raises(ad.ShapeError):
            ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_nan_production_raises(self):
        with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError):
            ad.mul(Tensor([1e200]), Tensor([1e200]))


class TestGradients:
    def test_square(self):
        w = Tensor(3.0, requires_grad=True)
        ad.backward(ad.mul(w, w))
        assert w.grad == 6.0

    def test_mse_at_target_is_zero(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        target = x.detach()
        ad.backward(ad.mse(x, target))
        assert np.all(x.grad == 0.0)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.backward(Tensor(np.ones(3), requires_grad=True))

    def test_shared_subgraph_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = Tensor(-4.0, requires_grad=True)
        q = ad.mul(ad.add(x, y), ad.add(x, 1.0))
        ad.backward(q)
        assert x.grad == 1.0 and y.grad == 3.0

    @pytest.mark.parametrize(
        "name,build,shapes",
        [
            ("add_bias", lambda a, b: ad.add(a, b), [(4, 3), (3,)]),
            ("sub", lambda a, b: ad.sub(a, b), [(2, 3), (2, 3)]),
            ("mul", lambda a, b: ad.mul(a, b), [(2, 3), (2, 1)]),
            ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
            ("conv1d", lambda x, k: ad.conv1d(x, k), [(2, 3, 9), (4, 3, 3)]),
            ("conv1d_stride2", lambda x, k: ad.conv1d(x, k, 2), [(2, 2, 12), (3, 2, 5)]),
            ("conv2d", lambda x, k: ad.conv2d(x, k), [(2, 2, 4, 5), (3, 2, 2, 3)]),
            ("conv2d_stride2", lambda x, k: ad.conv2d(x, k, 2), [(1, 2, 6, 7), (2, 2, 3, 3)]),
            ("relu", lambda x: ad.relu(x), [(3, 5)]),
            ("tanh", lambda x: ad.tanh(x), [(3, 5)]),
            ("softmax", lambda x: ad.softmax(x), [(3, 4)]),
            ("log_softmax", lambda x: ad.log_softmax(x), [(3, 4)]),
            ("flatten", lambda x: ad.flatten(x), [(2, 3, 4)]),
            ("reshape", lambda x: ad.reshape(x, (6, 2)), [(3, 4)]),
            ("take_columns", lambda x: ad.take_columns(x, 1, 4), [(2, 5)]),
            ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)]),
            ("upsample1d", lambda x: ad.upsample1d(x, 2), [(2, 3, 4)]),
            ("sum", lambda x: ad.tensor_sum(x), [(3, 4)]),
            ("sse", lambda a, b: ad.sum_squared_error(a, b), [(3, 4), (3, 4)]),
            ("mse", lambda a, b: ad.mse(a, b), [(3, 4), (3, 4)]),
        ],
    )
    def test_finite_differences(self, name, build, shapes, rng):
        _check_op(build, *shapes, rng=rng)

    def test_backward_is_linear(self, rng):
        a_val, b_val = 0.7, -1.3
        x0 = rng.normal(size=(3, 4))

        def grad_of(fn):
            x = Tensor(x0, requires_grad=True)
            ad.backward(fn(x))
            return x.grad

        def f(x):
            return ad.tensor_sum(ad.tanh(x))

        def g(x):
            return ad.sum_squared_error(ad.softmax(x), Tensor(np.ones((3, 4))))

        combo = grad_of(lambda x: ad.add(ad.mul(f(x), a_val), ad.mul(g(x), b_val)))
        np.testing.assert_allclose(combo, a_val * grad_of(f) + b_val * grad_of(g), rtol=1e-12, atol=1e-14)

    def test_unreachable_params_get_zero(self):
        store = ParamStore()
        used = store.add("used", np.array([2.0]), "a")
        store.add("unused", np.array([1.0, 1.0]), "b")
        store.zero_grad()
        ad.backward(ad.tensor_sum(ad.mul(used, used)))
        store.fill_missing_grads()
        assert store["used"].grad.tolist() == [4.0]
        assert store["unused"].grad.tolist() == [0.0, 0.0]


class TestSGD:
    def test_single_step(self):
        store = ParamStore()
        p = store.add("p", np.array(1.0), "g")
        p.grad = np.array(2.0)
        ad.sgd_step(store, lr=0.1, momentum=0.0)
        assert p.data == pytest.approx(0.8, abs=1e-15)
        assert p.grad is None

    def test_zero_gradient_fixed_point(self):
        store = ParamStore()
        p = store.add("p", np.array([0.3, -1.2]), "g")
        p.grad = np.zeros(2)
        ad.sgd_step(store, lr=0.5, momentum=0.9)
        assert p.data.tolist() == [0.3, -1.2]

    def test_missing_gradient(self):
        store = ParamStore()
        store.add("p", np.array(1.0), "g")
        with pytest.raises(ad.MissingGradientError):
            ad.sgd_step(store, 0.1)

    def test_quadratic_bowl(self):
        store = ParamStore()
        p = store.add("p", np.array(1.0), "g")
        opt = ad.SGD(store, lr=0.1, momentum=0.0)
        for _ in range(100):
            ad.backward(ad.mul(p, p))
            opt.step()
        # closed form: p_100 = (1 - 2 * lr) ** 100
        assert abs(float(p.data)) < 1e-8
        assert float(p.data) == pytest.approx(0.8**100, rel=1e-9)

    def test_momentum_recursion(self):
        store = ParamStore()
        p = store.add("p", np.array(0.0), "g")
        vel = None
        for g in (1.0, 1.0, 1.0):
            p.grad = np.array(g)
            vel = ad.sgd_step(store, lr=1.0, momentum=0.5, velocity=vel)
        # v: 1, 1.5, 1.75
        assert float(p.data) == pytest.approx(-(1 + 1.5 + 1.75))


class TestParamStore:
    def test_duplicate_names(self):
        store = ParamStore()
        store.add("w", np.zeros(2), "encoder")
        with pytest.raises(KeyError):
            store.add("w", np.zeros(2), "decoder")

    def test_groups(self):
        store = ParamStore()
        store.add("a", np.zeros(1), "encoder")
        store.add("b", np.zeros(1), "decoder")
        store.add("c", np.zeros(1), "encoder")
        assert store.groups() == {"encoder": ["a", "c"], "decoder": ["b"]}

    @settings(max_examples=25, deadline=None)
    @given(shapes=st.lists(st.lists(st.integers(1, 4), min_size=1, max_size=3), min_size=1, max_size=4),
           seed=st.integers(0, 2**32 - 1))
    def test_checkpoint_round_trip(self, tmp_path_factory, shapes, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for i, s in enumerate(shapes):
            store.add(f"p{i}", rng.normal(size=tuple(s)), f"g{i % 2}")
        path = tmp_path_factory.mktemp("ckpt") / "params.npz"
        ad.save_checkpoint(path, store, {"note": "x"})
        meta, values = ad.read_checkpoint(path)
        assert meta["note"] == "x" and meta["version"] == ad.CHECKPOINT_VERSION
        for name, p in store.items():
            assert values[name].tobytes() == p.data.tobytes()

    def test_load_snapshot_validates_shapes(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 3)), "g")
        with pytest.raises(ad.CheckpointError):
            store.load_snapshot({"w": np.zeros((3, 2))})
        with pytest.raises(ad.CheckpointError):
            store.load_snapshot({"v": np.zeros((2, 3))})

    def test_rejects_other_version(self, tmp_path):
        store = ParamStore()
        store.add("w", np.zeros(2), "g")
        path = tmp_path / "c.npz"
        ad.save_checkpoint(path, store, {})
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(str(arrays["__meta__"]))
        meta["version"] = 999
        arrays["__meta__"] = np.array(json.dumps(meta))
        np.savez(path, **arrays)
        with pytest.raises(ad.CheckpointError):
            ad.read_checkpoint(path)
