import numpy as np
import pytest

from disfluent import kernels
from disfluent.kernels import numpy_backend

CASES = [
    (3, 7, 9, 3, 3, 1, 1, 1, 1),
    (2, 8, 8, 3, 3, 2, 2, 1, 1),
    (1, 5, 5, 1, 1, 2, 2, 0, 0),
    (4, 6, 10, 7, 7, 1, 1, 3, 3),
    (2, 9, 4, 3, 3, 1, 2, 1, 1),
    (5, 4, 4, 3, 3, 2, 2, 1, 1),
    (2, 10, 10, 5, 5, 3, 3, 2, 2),
]

compiled = pytest.mark.skipif(kernels.BACKEND != "cython",
                              reason="compiled extension not built")


class TestNumpyBackend:
    @pytest.mark.parametrize("case", CASES)
    def test_im2col_col2im_adjoint(self, rng, case):
        # <im2col(x), c> == <x, col2im(c)> for all x, c: the two kernels
        # must be exact adjoints for conv gradients to be consistent
        c, h, w, kh, kw, sh, sw, ph, pw = case
        x = rng.standard_normal((c, h, w))
        cols_shape = numpy_backend.im2col(x, kh, kw, sh, sw, ph, pw).shape
        cvec = rng.standard_normal(cols_shape)
        lhs = (numpy_backend.im2col(x, kh, kw, sh, sw, ph, pw) * cvec).sum()
        rhs = (x * numpy_backend.col2im(cvec, c, h, w, kh, kw, sh, sw, ph, pw)).sum()
        assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)

    def test_im2col_known_values(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
        cols = numpy_backend.im2col(x, 2, 2, 1, 1, 0, 0)
        # columns are patches at (0,0),(0,1),(1,0),(1,1)
        assert np.array_equal(cols[:, 0], [0, 1, 3, 4])
        assert np.array_equal(cols[:, 3], [4, 5, 7, 8])


@compiled
class TestCompiledBackend:
    @pytest.mark.parametrize("case", CASES)
    def test_im2col_matches_numpy(self, rng, case):
        from disfluent.kernels import _speedups
        c, h, w, kh, kw, sh, sw, ph, pw = case
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        a = _speedups.im2col(x, kh, kw, sh, sw, ph, pw)
        b = numpy_backend.im2col(x, kh, kw, sh, sw, ph, pw)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("case", CASES)
    def test_col2im_matches_numpy(self, rng, case):
        from disfluent.kernels import _speedups
        c, h, w, kh, kw, sh, sw, ph, pw = case
        shape = numpy_backend.im2col(
            np.zeros((c, h, w), np.float32), kh, kw, sh, sw, ph, pw).shape
        cols = rng.standard_normal(shape).astype(np.float32)
        a = _speedups.col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw)
        b = numpy_backend.col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw)
        assert np.allclose(a, b, atol=1e-5)

    @pytest.mark.parametrize("case", CASES)
    def test_batched_channel_major_matches_numpy(self, rng, case):
        from disfluent.kernels import _speedups
        c, h, w, kh, kw, sh, sw, ph, pw = case
        n = 3
        x = rng.standard_normal((c, n, h, w)).astype(np.float32)
        a = _speedups.im2col_cnhw(x, kh, kw, sh, sw, ph, pw)
        b = numpy_backend.im2col_cnhw(x, kh, kw, sh, sw, ph, pw)
        assert np.array_equal(a, b)
        cols = rng.standard_normal(a.shape).astype(np.float32)
        da = _speedups.col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw)
        db = numpy_backend.col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw)
        assert np.allclose(da, db, atol=1e-5)

    def test_float64_dispatches_to_numpy_fallback(self, rng):
        x = rng.standard_normal((2, 5, 5))
        out = kernels.im2col(x, 3, 3, 1, 1, 1, 1)
        assert out.dtype == np.float64
        ref = numpy_backend.im2col(x, 3, 3, 1, 1, 1, 1)
        assert np.array_equal(out, ref)


class TestBatchedConsistency:
    def test_cnhw_stacks_per_sample_columns(self, rng):
        c, n, h, w = 2, 3, 6, 7
        x = rng.standard_normal((c, n, h, w)).astype(np.float32)
        cols = kernels.im2col_cnhw(x, 3, 3, 2, 2, 1, 1)
        oh = kernels.conv_out_size(h, 3, 2, 1)
        ow = kernels.conv_out_size(w, 3, 2, 1)
        for i in range(n):
            single = kernels.im2col(np.ascontiguousarray(x[:, i]), 3, 3, 2, 2, 1, 1)
            got = cols[:, i * oh * ow:(i + 1) * oh * ow]
            assert np.array_equal(got, single)
