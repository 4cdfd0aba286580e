import numpy as np
import pytest

from disfluent import nn
from disfluent.errors import (
    BatchTooSmall,
    EmptySequence,
    LabelOutOfRange,
    ShapeMismatch,
)
from disfluent.tensor import Tensor


def t64(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad,
                  dtype=np.float64)


def naive_conv2d(x, w, b, stride, padding):
    """Quadruple-loop cross-correlation oracle, float64."""
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    out = np.zeros((n, co, oh, ow))
    for ni in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * sh:i * sh + kh, j * sw:j * sw + kw]
                    out[ni, o, i, j] = (patch * w[o]).sum()
            if b is not None:
                out[ni, o] += b[o]
    return out


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = Tensor(rng.standard_normal((3, 5, 7)).astype(np.float32))
        w = Tensor(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1))
        b = Tensor(np.zeros(3, dtype=np.float32))
        out = nn.conv2d(x, w, b)
        assert np.allclose(out.data, x.data, atol=1e-6)

    def test_table_stem_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 257, 398)).astype(np.float32))
        w = Tensor((rng.standard_normal((64, 1, 7, 7)) * 0.05).astype(np.float32))
        b = Tensor(np.zeros(64, dtype=np.float32))
        out = nn.conv2d(x, w, b, stride=(1, 1), padding=(3, 3))
        assert out.shape == (64, 257, 398)

    def test_all_ones_summation(self):
        x = Tensor(np.ones((1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = nn.conv2d(x, w, None, stride=(1, 1), padding=(0, 0))
        assert out.data.reshape(-1)[0] == 9.0

    @pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)),
                                                ((1, 1), (1, 1)),
                                                ((2, 2), (1, 1)),
                                                ((1, 2), (1, 1)),
                                                ((2, 1), (3, 3)),
                                                ((2, 2), (0, 0))])
    def test_matches_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 9, 11))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.3
        b = rng.standard_normal(4) * 0.1
        if 3 > 9 + 2 * padding[0]:
            pytest.skip("kernel larger than padded input")
        got = nn.conv2d(t64(x), t64(w), t64(b), stride, padding).data
        ref = naive_conv2d(x, w, b, stride, padding)
        assert got.shape == ref.shape
        assert np.abs(got - ref).max() < 1e-5

    def test_cnhw_matches_nchw(self, rng):
        x = rng.standard_normal((2, 3, 8, 10)).astype(np.float32)
        w = (rng.standard_normal((5, 3, 3, 3)) * 0.2).astype(np.float32)
        a = nn.conv2d(Tensor(x), Tensor(w), None, (2, 2), (1, 1)).data
        b = nn.conv2d_cnhw(Tensor(np.ascontiguousarray(x.transpose(1, 0, 2, 3))),
                           Tensor(w), (2, 2), (1, 1)).data
        assert np.allclose(a, b.transpose(1, 0, 2, 3), atol=1e-6)

    def test_channel_mismatch_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 5)).astype(np.float32))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
        with pytest.raises(ShapeMismatch):
            nn.conv2d(x, w, None)

    def test_kernel_too_large_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32))
        w = Tensor(rng.standard_normal((1, 1, 7, 7)).astype(np.float32))
        with pytest.raises(ShapeMismatch):
            nn.conv2d(x, w, None, stride=(1, 1), padding=(0, 0))

    def test_gradients_match_fd(self, rng):
        x0 = rng.standard_normal((2, 2, 6, 7))
        w0 = rng.standard_normal((3, 2, 3, 3)) * 0.3
        b0 = rng.standard_normal(3) * 0.1
        x, w, b = t64(x0, True), t64(w0, True), t64(b0, True)
        loss = (nn.conv2d(x, w, b, (2, 2), (1, 1))
                * nn.conv2d(x, w, b, (2, 2), (1, 1))).sum()
        loss.backward()

        def f():
            y = nn.conv2d(t64(x.data), t64(w.data), t64(b.data), (2, 2), (1, 1))
            return float((y * y).sum().data)

        for t in (x, w, b):
            num = np.zeros_like(t.data)
            flat, nflat = t.data.ravel(), num.ravel()
            idx = rng.choice(flat.size, min(20, flat.size), replace=False)
            for i in idx:
                old = flat[i]
                flat[i] = old + 1e-6
                up = f()
                flat[i] = old - 1e-6
                dn = f()
                flat[i] = old
                nflat[i] = (up - dn) / 2e-6
            sel = num.ravel()[idx]
            ana = t.grad.ravel()[idx]
            assert np.abs(sel - ana).max() / max(np.abs(sel).max(), 1.0) < 1e-6


class TestBatchNorm:
    def _buffers(self, c):
        return (Tensor(np.ones(c, dtype=np.float32), requires_grad=True),
                Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
                np.zeros(c, dtype=np.float32), np.ones(c, dtype=np.float32))

    def test_constant_channel_maps_near_zero(self):
        gamma, beta, rm, rv = self._buffers(2)
        x = Tensor(np.full((4, 2, 3, 3), 5.0, dtype=np.float32))
        out = nn.batch_norm(x, gamma, beta, rm, rv, "train")
        assert np.abs(out.data).max() <= 1e-2

    def test_gamma_zero_gives_beta(self, rng):
        gamma = Tensor(np.zeros(3, dtype=np.float32))
        beta = Tensor(np.array([1.0, -2.0, 0.5], dtype=np.float32))
        rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        out = nn.batch_norm(x, gamma, beta, rm, rv, "train")
        assert np.allclose(out.data, beta.data.reshape(1, 3, 1, 1), atol=1e-6)

    def test_train_statistics(self, rng):
        gamma, beta, rm, rv = self._buffers(4)
        x = Tensor((rng.standard_normal((8, 4, 5, 6)) * 3 + 1).astype(np.float32))
        out = nn.batch_norm(x, gamma, beta, rm, rv, "train")
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-3

    def test_batch_too_small(self, rng):
        gamma, beta, rm, rv = self._buffers(2)
        x = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
        with pytest.raises(BatchTooSmall):
            nn.batch_norm(x, gamma, beta, rm, rv, "train")

    def test_running_stats_update_and_eval(self, rng):
        gamma, beta, rm, rv = self._buffers(2)
        x = (rng.standard_normal((16, 2, 4, 4)) * 2 + 3).astype(np.float32)
        nn.batch_norm(Tensor(x), gamma, beta, rm, rv, "train", momentum=0.0)
        # momentum 0 copies the batch statistics outright
        assert np.allclose(rm, x.mean(axis=(0, 2, 3)), atol=1e-4)
        assert np.allclose(rv, x.var(axis=(0, 2, 3)), atol=1e-3)
        out = nn.batch_norm(Tensor(x), gamma, beta, rm, rv, "eval")
        assert np.abs(out.data.mean(axis=(0, 2, 3))).max() < 1e-3


class TestLstmStep:
    def _zeros(self, u, d):
        return {"W": Tensor(np.zeros((4 * u, d), dtype=np.float32)),
                "R": Tensor(np.zeros((4 * u, u), dtype=np.float32)),
                "b": Tensor(np.zeros(4 * u, dtype=np.float32))}

    def test_zero_params_zero_state(self):
        u, d = 3, 2
        params = self._zeros(u, d)
        x = Tensor(np.ones(d, dtype=np.float32))
        h = Tensor(np.zeros(u, dtype=np.float32))
        c = Tensor(np.zeros(u, dtype=np.float32))
        h2, c2 = nn.lstm_step(x, (h, c), params)
        assert np.allclose(h2.data, 0) and np.allclose(c2.data, 0)

    def test_forget_gate_saturation(self):
        u, d = 1, 2
        params = self._zeros(u, d)
        params["b"].data[u:2 * u] = 1e6  # forget gate pinned open
        x = Tensor(np.ones(d, dtype=np.float32))
        h = Tensor(np.zeros(u, dtype=np.float32))
        c = Tensor(np.ones(u, dtype=np.float32))
        h2, c2 = nn.lstm_step(x, (h, c), params)
        assert np.allclose(c2.data, 1.0, atol=1e-6)
        assert np.allclose(h2.data, 0.5 * np.tanh(1.0), atol=1e-6)

    def test_matches_scalar_oracle(self, rng):
        u, d = 2, 3
        w = rng.standard_normal((4 * u, d)) * 0.5
        r = rng.standard_normal((4 * u, u)) * 0.5
        b = rng.standard_normal(4 * u) * 0.1
        x = rng.standard_normal(d)
        h0 = rng.standard_normal(u) * 0.3
        c0 = rng.standard_normal(u) * 0.3

        def sig(v):
            return 1 / (1 + np.exp(-v))

        # scalar-loop recurrence, gate order i,f,g,o
        z = [sum(w[row, k] * x[k] for k in range(d))
             + sum(r[row, k] * h0[k] for k in range(u)) + b[row]
             for row in range(4 * u)]
        h_ref, c_ref = [], []
        for k in range(u):
            i = sig(z[k])
            f = sig(z[u + k])
            g = np.tanh(z[2 * u + k])
            o = sig(z[3 * u + k])
            c_new = f * c0[k] + i * g
            c_ref.append(c_new)
            h_ref.append(o * np.tanh(c_new))

        params = {"W": t64(w), "R": t64(r), "b": t64(b)}
        h2, c2 = nn.lstm_step(t64(x), (t64(h0), t64(c0)), params)
        assert np.abs(h2.data - h_ref).max() < 1e-6
        assert np.abs(c2.data - c_ref).max() < 1e-6

    def test_shape_mismatch(self, rng):
        params = self._zeros(2, 3)
        x = Tensor(np.zeros(5, dtype=np.float32))
        h = Tensor(np.zeros(2, dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            nn.lstm_step(x, (h, h), params)


class TestBiLstm:
    def _params(self, rng, u, d):
        w, r, b = nn.lstm_init(rng, u, d)
        return {"W": Tensor(w, requires_grad=True),
                "R": Tensor(r, requires_grad=True),
                "b": Tensor(b, requires_grad=True)}

    def test_single_step_shape(self, rng):
        u, d = 4, 3
        seq = Tensor(rng.standard_normal((1, d)).astype(np.float32))
        out = nn.bilstm_layer(seq, self._params(rng, u, d),
                              self._params(rng, u, d))
        assert out.shape == (1, 2 * u)

    def test_palindrome_symmetry(self, rng):
        u, d, t_len = 3, 2, 5
        params = self._params(rng, u, d)
        mirror = {k: Tensor(v.data.copy()) for k, v in params.items()}
        seq_half = rng.standard_normal((3, d)).astype(np.float32)
        pal = np.concatenate([seq_half, seq_half[-2::-1]])
        out = nn.bilstm_layer(Tensor(pal), params, mirror).data
        t_total = pal.shape[0]
        for t in range(t_total):
            assert np.allclose(out[t, :u], out[t_total - 1 - t, u:], atol=1e-6)

    def test_reversed_sequence_oracle(self, rng):
        u, d, t_len, n = 2, 3, 4, 2
        fwd = self._params(rng, u, d)
        bwd = self._params(rng, u, d)
        seq = rng.standard_normal((n, t_len, d)).astype(np.float32)
        out = nn.bilstm_layer(Tensor(seq), fwd, bwd).data

        def run_uni(params, x_seq):
            h = Tensor(np.zeros((n, u), dtype=np.float32))
            c = Tensor(np.zeros((n, u), dtype=np.float32))
            outs = []
            for t in range(x_seq.shape[1]):
                h, c = nn.lstm_step(Tensor(x_seq[:, t]), (h, c), params)
                outs.append(h.data)
            return np.stack(outs, axis=1)

        ref_f = run_uni(fwd, seq)
        ref_b = run_uni(bwd, seq[:, ::-1])[:, ::-1]
        assert np.abs(out[:, :, :u] - ref_f).max() < 1e-6
        assert np.abs(out[:, :, u:] - ref_b).max() < 1e-6

    def test_empty_sequence_rejected(self, rng):
        u, d = 2, 3
        seq = Tensor(np.zeros((1, 0, d), dtype=np.float32))
        with pytest.raises(EmptySequence):
            nn.bilstm_layer(seq, self._params(rng, u, d),
                            self._params(rng, u, d))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_ln2(self):
        logits = Tensor(np.zeros((3, 2), dtype=np.float32))
        loss = nn.softmax_cross_entropy(logits, np.array([0, 1, 0]))
        assert abs(float(loss.data) - np.log(2)) < 1e-6

    def test_saturated_correct_prediction(self):
        logits = Tensor(np.array([[20.0, -20.0]], dtype=np.float32))
        loss = nn.softmax_cross_entropy(logits, np.array([0]))
        assert float(loss.data) < 1e-8

    def test_label_out_of_range(self):
        logits = Tensor(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(LabelOutOfRange):
            nn.softmax_cross_entropy(logits, np.array([0, 2]))

    def test_gradient_matches_fd(self, rng):
        logits = t64(rng.standard_normal((2, 2)), grad=True)
        labels = np.array([1, 0])
        loss = nn.softmax_cross_entropy(logits, labels)
        loss.backward()

        def f():
            return float(nn.softmax_cross_entropy(t64(logits.data), labels).data)

        num = np.zeros_like(logits.data)
        flat = logits.data.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-6
            up = f()
            flat[i] = old - 1e-6
            dn = f()
            flat[i] = old
            num.ravel()[i] = (up - dn) / 2e-6
        assert np.abs(num - logits.grad).max() / np.abs(num).max() < 1e-4

    def test_gradient_formula(self, rng):
        logits = t64(rng.standard_normal((4, 2)), grad=True)
        labels = np.array([0, 1, 1, 0])
        nn.softmax_cross_entropy(logits, labels).backward()
        probs = nn.softmax(logits.data)
        onehot = np.eye(2)[labels]
        assert np.allclose(logits.grad, (probs - onehot) / 4, atol=1e-12)
