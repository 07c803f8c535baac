import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttcompress import (
    DenseMatrix,
    DenseTensor,
    IndexRangeError,
    ShapeError,
    frobenius_norm,
    long_index,
    multi_index,
    reshape,
    unfold,
)


class TestLongIndex:
    def test_all_ones_base_case(self):
        assert long_index([1, 1, 1], [2, 3, 4]) == 1

    def test_direct_evaluation(self):
        # 1 + 1*(2-1) + 2*(1-1) + 6*(3-1) = 14
        assert long_index([2, 1, 3], [2, 3, 4]) == 14

    def test_two_by_two(self):
        assert long_index([1, 2], [2, 2]) == 3

    def test_out_of_range(self):
        with pytest.raises(IndexRangeError):
            long_index([3, 1], [2, 2])
        with pytest.raises(IndexRangeError):
            long_index([0, 1], [2, 2])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            long_index([1, 1], [2, 2, 2])

    @settings(deadline=None)
    @given(
        st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4)
    )
    def test_bijective_over_index_box(self, dims):
        total = math.prod(dims)
        seen = set()
        for linear in range(1, total + 1):
            idx = multi_index(linear, dims)
            assert long_index(idx, dims) == linear
            seen.add(idx)
        assert len(seen) == total


class TestReshape:
    def test_metadata_only(self):
        t = DenseTensor((4,), [1.0, 2.0, 3.0, 4.0])
        r = reshape(t, (2, 2))
        assert r.dims == (2, 2)
        assert np.array_equal(r.values, t.values)

    def test_element_mapping(self):
        t = DenseTensor.from_numpy(np.arange(6.0).reshape(2, 3, order="F"))
        flat = reshape(t, (6,))
        # element (2, 3) sits at linear index 6
        assert flat.get((6,)) == t.get((2, 3))

    def test_size_mismatch(self):
        t = DenseTensor((2, 2), [1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ShapeError):
            reshape(t, (3, 2))

    def test_never_reorders_values(self):
        rng = np.random.default_rng(0)
        t = DenseTensor.from_numpy(rng.uniform(size=(3, 4, 5)))
        r = reshape(t, (5, 12))
        assert np.array_equal(r.values, t.values)


class TestUnfold:
    def test_shape_bookkeeping(self):
        t = DenseTensor.from_numpy(np.zeros((2, 2, 2)))
        m = unfold(t, 1)
        assert (m.rows, m.cols) == (2, 4)

    def test_entry_against_long_indices(self):
        rng = np.random.default_rng(1)
        t = DenseTensor.from_numpy(rng.uniform(size=(2, 3, 4)))
        m = unfold(t, 2)
        assert (m.rows, m.cols) == (6, 4)
        # row long index 5 <-> (1, 3); column 3 <-> i3 = 3
        assert m.get(5, 3) == t.get((1, 3, 3))
        # every entry agrees with the long-index inversion
        for row in range(1, 7):
            for col in range(1, 5):
                i1, i2 = multi_index(row, (2, 3))
                (i3,) = multi_index(col, (4,))
                assert m.get(row, col) == t.get((i1, i2, i3))

    def test_roundtrip(self):
        rng = np.random.default_rng(2)
        t = DenseTensor.from_numpy(rng.uniform(size=(2, 3, 4)))
        m = unfold(t, 1)
        back = DenseTensor(t.dims, m.values)
        assert np.array_equal(back.values, t.values)

    def test_values_shared(self):
        t = DenseTensor.from_numpy(np.arange(8.0).reshape(2, 2, 2, order="F"))
        m = unfold(t, 2)
        assert np.array_equal(m.values, t.values)

    def test_split_out_of_range(self):
        t = DenseTensor.from_numpy(np.zeros((2, 2)))
        with pytest.raises(IndexRangeError):
            unfold(t, 2)
        with pytest.raises(IndexRangeError):
            unfold(t, 0)


class TestFrobeniusNorm:
    def test_zero_tensor(self):
        assert frobenius_norm(DenseTensor((3,), np.zeros(3))) == 0.0

    def test_pythagorean(self):
        assert frobenius_norm(DenseTensor((2,), [3.0, 4.0])) == 5.0

    def test_against_brute_force(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(size=8)
        t = DenseTensor((2, 2, 2), vals)
        brute = math.sqrt(sum(v * v for v in vals))
        assert frobenius_norm(t) == pytest.approx(brute, rel=1e-12)

    def test_squared_identity(self):
        rng = np.random.default_rng(4)
        t = DenseTensor.from_numpy(rng.standard_normal((10, 10, 10)))
        assert frobenius_norm(t) ** 2 == pytest.approx(
            float(np.sum(t.values**2)), rel=1e-12
        )


class TestConstruction:
    def test_invariants(self):
        with pytest.raises(ShapeError):
            DenseTensor((2, 0), [])
        with pytest.raises(ShapeError):
            DenseTensor((2, 2), [1.0, 2.0])
        with pytest.raises(ShapeError):
            DenseMatrix(2, 2, [1.0])

    def test_values_read_only(self):
        t = DenseTensor((2,), [1.0, 2.0])
        with pytest.raises(ValueError):
            t.values[0] = 5.0

    def test_from_to_numpy_column_major(self):
        arr = np.arange(6.0).reshape(2, 3)
        t = DenseTensor.from_numpy(arr)
        assert t.dims == (2, 3)
        assert np.array_equal(t.to_numpy(), arr)
        # column-major flat order: first index fastest
        assert list(t.values) == [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]
