import math

import numpy as np
import pytest

from coldmatch import tensor as T
from coldmatch.errors import DegenerateVectorError, NumericError, ShapeError


def finite_diff(fn, arrays, eps=1e-5):
    """Central differences of scalar fn(*arrays) w.r.t. every array element."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn(*arrays)
            flat[i] = orig - eps
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


class TestAffine:
    def test_identity_matrix(self):
        out = T.affine(np.eye(2), np.array([3.0, 4.0]), np.zeros(2))
        np.testing.assert_allclose(out.data, [3.0, 4.0])

    def test_zero_weight_passes_bias(self):
        out = T.affine(np.zeros((2, 2)), np.array([9.0, -9.0]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(out.data, [1.0, 2.0])

    def test_hand_multiply(self):
        out = T.affine(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0]), np.zeros(2))
        np.testing.assert_allclose(out.data, [3.0, 7.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.affine(np.eye(3), np.array([1.0, 2.0]))

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        xs = rng.normal(size=(5, 4))
        batched = T.affine(w, xs, b).data
        for i in range(5):
            np.testing.assert_allclose(batched[i], w @ xs[i] + b, rtol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])

    def test_single_element(self):
        np.testing.assert_allclose(T.softmax(np.array([7.3])).data, [1.0])

    def test_log_ratio(self):
        out = T.softmax(np.array([math.log(1.0), math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(ShapeError):
            T.softmax(np.array([]))

    def test_sum_and_shift_invariance_randomized(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            z = rng.normal(scale=5.0, size=rng.integers(1, 9))
            y = T.softmax(z).data
            assert abs(y.sum() - 1.0) < 1e-6
            shifted = T.softmax(z + rng.normal()).data
            np.testing.assert_allclose(y, shifted, atol=1e-6)

    def test_large_values_stable(self):
        y = T.softmax(np.array([1000.0, 1000.0])).data
        np.testing.assert_allclose(y, [0.5, 0.5])


class TestCosine:
    def test_identical(self):
        u = np.array([2.0, -1.0, 0.5])
        assert T.cosine(u, u).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        assert T.cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])).item() == pytest.approx(0.0)

    def test_45_degrees(self):
        got = T.cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])).item()
        assert got == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-4)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateVectorError):
            T.cosine(np.zeros(3), np.ones(3))

    def test_range_and_scale_invariance_randomized(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            u = rng.normal(size=4)
            v = rng.normal(size=4)
            c = T.cosine(u, v).item()
            assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12
            a, b = rng.uniform(0.1, 10.0, size=2)
            assert abs(T.cosine(a * u, b * v).item() - c) < 1e-6


def oracle_lstm_step(x, h_cat, c, w_x, w_h, b):
    """Gate-by-gate reference evaluation, independent of the tensor library."""
    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    h_size = b.size // 4
    pre = [sum(w_x[r][j] * x[j] for j in range(len(x)))
           + sum(w_h[r][j] * h_cat[j] for j in range(len(h_cat)))
           + b[r]
           for r in range(4 * h_size)]
    h_new = []
    c_new = []
    for k in range(h_size):
        gi = sig(pre[k])
        gf = sig(pre[h_size + k])
        cand = math.tanh(pre[2 * h_size + k])
        go = sig(pre[3 * h_size + k])
        ck = gf * c[k] + gi * cand
        c_new.append(ck)
        h_new.append(go * math.tanh(ck))
    return np.array(h_new), np.array(c_new)


class TestLstmCell:
    def _random_cell(self, rng, h_size=3, n_in=2, n_rec=5):
        return (rng.normal(size=n_in), rng.normal(size=n_rec), rng.normal(size=h_size),
                rng.normal(size=(4 * h_size, n_in)), rng.normal(size=(4 * h_size, n_rec)),
                rng.normal(size=4 * h_size))

    def test_all_zero_weights_give_zero_state(self):
        d = 3
        h, c = T.lstm_cell_step(np.ones(2 * d), np.ones(4 * d), np.zeros(2 * d),
                                np.zeros((8 * d, 2 * d)), np.zeros((8 * d, 4 * d)),
                                np.zeros(8 * d))
        np.testing.assert_allclose(c.data, 0.0)
        np.testing.assert_allclose(h.data, 0.0)

    def test_forget_saturation_preserves_cell(self):
        h_size = 2
        b = np.zeros(4 * h_size)
        b[h_size:2 * h_size] = 50.0    # forget gate -> 1
        b[:h_size] = -50.0             # input gate -> 0
        c0 = np.array([0.3, -0.7])
        _, c1 = T.lstm_cell_step(np.zeros(2), np.zeros(4), c0,
                                 np.zeros((4 * h_size, 2)), np.zeros((4 * h_size, 4)), b)
        np.testing.assert_allclose(c1.data, c0, atol=1e-12)

    def test_against_gate_by_gate_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x, h_cat, c, w_x, w_h, b = self._random_cell(rng)
            h_got, c_got = T.lstm_cell_step(x, h_cat, c, w_x, w_h, b)
            h_exp, c_exp = oracle_lstm_step(x, h_cat, c, w_x, w_h, b)
            np.testing.assert_allclose(h_got.data, h_exp, rtol=1e-10)
            np.testing.assert_allclose(c_got.data, c_exp, rtol=1e-10)

    def test_hidden_output_bounded_randomized(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            x, h_cat, c, w_x, w_h, b = self._random_cell(rng)
            h, _ = T.lstm_cell_step(x, h_cat, c, w_x, w_h, b)
            assert np.all(h.data > -1.0) and np.all(h.data < 1.0)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        w_x = rng.normal(size=(12, 2))
        w_h = rng.normal(size=(12, 5))
        b = rng.normal(size=12)
        xs = rng.normal(size=(4, 2))
        hs = rng.normal(size=(4, 5))
        cs = rng.normal(size=(4, 3))
        h_b, c_b = T.lstm_cell_step(xs, hs, cs, w_x, w_h, b)
        for i in range(4):
            h_i, c_i = T.lstm_cell_step(xs[i], hs[i], cs[i], w_x, w_h, b)
            np.testing.assert_allclose(h_b.data[i], h_i.data, rtol=1e-12)
            np.testing.assert_allclose(c_b.data[i], c_i.data, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            T.lstm_cell_step(np.ones(2), np.ones(4), np.ones(5),
                             np.zeros((12, 2)), np.zeros((12, 4)), np.zeros(12))


# Each case builds a scalar through one primitive and checks the tape
# gradient of every input element against central differences.
PRIMITIVE_CASES = {
    "add": (lambda a, b: T.add(a, b), 2, (4,), (4,)),
    "sub": (lambda a, b: T.sub(a, b), 2, (4,), (4,)),
    "neg": (lambda a: T.neg(a), 1, (4,)),
    "mul": (lambda a, b: T.mul(a, b), 2, (4,), (4,)),
    "div": (lambda a, b: T.div(a, T.add(T.mul(b, b), 0.5)), 2, (4,), (4,)),
    "sum_all": (lambda a: T.tsum(a), 1, (2, 3)),
    "sum_axis": (lambda a: T.tsum(a, axis=1), 1, (2, 3)),
    "mean_axis": (lambda a: T.tmean(a, axis=0), 1, (2, 3)),
    "matmul_mv": (lambda a, b: T.matmul(T.reshape(a, (2, 2)), b), 2, (4,), (2,)),
    "matmul_mm": (lambda a, b: T.matmul(T.reshape(a, (2, 2)), T.reshape(b, (2, 2))), 2, (4,), (4,)),
    "transpose": (lambda a: T.transpose(T.reshape(a, (2, 3))), 1, (6,)),
    "reshape": (lambda a: T.reshape(a, (3, 2)), 1, (6,)),
    "concat": (lambda a, b: T.concat([a, b]), 2, (3,), (2,)),
    "stack": (lambda a, b: T.stack([a, b]), 2, (3,), (3,)),
    "narrow": (lambda a: T.narrow(a, 0, 1, 2), 1, (5,)),
    "repeat_rows": (lambda a: T.repeat_rows(T.reshape(a, (2, 2)), 3), 1, (4,)),
    "tile_rows": (lambda a: T.tile_rows(T.reshape(a, (2, 2)), 3), 1, (4,)),
    "gather_rows": (lambda a: T.gather_rows(T.reshape(a, (3, 2)), [0, 2, 0]), 1, (6,)),
    "relu": (lambda a: T.relu(a), 1, (5,)),
    "sigmoid": (lambda a: T.sigmoid(a), 1, (5,)),
    "tanh": (lambda a: T.tanh(a), 1, (5,)),
    "exp": (lambda a: T.exp(a), 1, (5,)),
    "log": (lambda a: T.log(T.add(T.mul(a, a), 0.5)), 1, (5,)),
    "sqrt": (lambda a: T.sqrt(T.add(T.mul(a, a), 0.5)), 1, (5,)),
    "softmax": (lambda a: T.softmax(a), 1, (5,)),
    "softmax_rows": (lambda a: T.softmax(T.reshape(a, (2, 3)), axis=1), 1, (6,)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    spec = PRIMITIVE_CASES[name]
    fn, n_args, shapes = spec[0], spec[1], spec[2:]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(1000):
        arrays = [rng.normal(size=s) for s in shapes[:n_args]]
        weights = rng.normal(size=fn(*[T.Tensor(a) for a in arrays]).data.shape)

        def scalar(*arrs):
            return float((fn(*[T.Tensor(a) for a in arrs]).data * weights).sum())

        params = [T.parameter(a) for a in arrays]
        with T.GradTape() as tape:
            out = fn(*params)
            loss = T.tsum(T.mul(out, weights))
        tape_grads = tape.gradient(loss, params)
        fd_grads = finite_diff(scalar, arrays)
        for tg, fg in zip(tape_grads, fd_grads):
            denom = np.abs(tg).max() + np.abs(fg).max() + 1e-12
            worst = max(worst, float(np.abs(tg - fg).max() / denom))
    assert worst < 1e-6, f"{name}: max relative error {worst:.3e}"


class TestTapeMechanics:
    def test_gradient_of_unused_source_is_exact_zero(self):
        a = T.parameter(np.array([1.0, 2.0]))
        b = T.parameter(np.array([3.0, 4.0]))
        with T.GradTape() as tape:
            loss = T.tsum(T.mul(a, a))
        (gb,) = tape.gradient(loss, [b])
        assert np.all(gb == 0.0)

    def test_reused_tensor_accumulates(self):
        a = T.parameter(np.array([2.0]))
        with T.GradTape() as tape:
            loss = T.tsum(T.add(T.mul(a, a), T.mul(a, a)))
        (ga,) = tape.gradient(loss, [a])
        np.testing.assert_allclose(ga, [8.0])

    def test_nested_tape_rejected(self):
        with T.GradTape():
            with pytest.raises(NumericError):
                with T.GradTape():
                    pass

    def test_no_tape_records_nothing(self):
        a = T.parameter(np.ones(3))
        out = T.mul(a, a)
        assert out.track is False

    def test_non_scalar_target_rejected(self):
        a = T.parameter(np.ones(3))
        with T.GradTape() as tape:
            out = T.mul(a, a)
        with pytest.raises(ShapeError):
            tape.gradient(out, [a])

    def test_debug_mode_catches_nan(self):
        T.set_debug_checks(True)
        try:
            with np.errstate(invalid="ignore"), pytest.raises(NumericError):
                T.log(np.array([-1.0]))
        finally:
            T.set_debug_checks(False)

    def test_lstm_step_differentiable(self):
        rng = np.random.default_rng(6)
        h_size, n_in, n_rec = 2, 2, 5
        arrays = [rng.normal(size=(4 * h_size, n_in)), rng.normal(size=(4 * h_size, n_rec)),
                  rng.normal(size=4 * h_size)]
        x = rng.normal(size=n_in)
        h_cat = rng.normal(size=n_rec)
        c = rng.normal(size=h_size)
        weights = rng.normal(size=h_size)

        def scalar(w_x, w_h, b):
            h, _ = T.lstm_cell_step(x, h_cat, c, T.Tensor(w_x), T.Tensor(w_h), T.Tensor(b))
            return float((h.data * weights).sum())

        params = [T.parameter(a) for a in arrays]
        with T.GradTape() as tape:
            h, _ = T.lstm_cell_step(x, h_cat, c, *params)
            loss = T.tsum(T.mul(h, weights))
        tape_grads = tape.gradient(loss, params)
        fd = finite_diff(scalar, arrays)
        for tg, fg in zip(tape_grads, fd):
            np.testing.assert_allclose(tg, fg, atol=1e-7)
