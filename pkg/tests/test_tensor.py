import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from snapstack.exceptions import ShapeError
from snapstack.tensor import Rng, Tensor, read_array, tensor_create, tensor_matmul, tensor_reduce, write_array


def T(values):
    return Tensor.from_array(np.array(values, dtype=float))


class TestCreate:
    def test_zeros(self):
        t = tensor_create([2, 2])
        assert t.shape == (2, 2)
        assert t.numpy().tolist() == [[0, 0], [0, 0]]

    def test_constant(self):
        assert tensor_create([3], ("constant", 1.5)).numpy().tolist() == [1.5, 1.5, 1.5]

    def test_uniform_same_seed_is_bitwise_identical(self):
        a = tensor_create([4], ("uniform", 0, 1), Rng(7))
        b = tensor_create([4], ("uniform", 0, 1), Rng(7))
        assert a.to_bytes() == b.to_bytes()
        assert np.all((a.numpy() >= 0) & (a.numpy() < 1))

    def test_normal_needs_rng(self):
        with pytest.raises(ValueError):
            tensor_create([2], ("normal", 0, 1))

    @pytest.mark.parametrize("fill", [("constant", float("nan")), ("uniform", 0, float("inf")), ("bogus", 1)])
    def test_bad_fill(self, fill):
        with pytest.raises(ValueError):
            tensor_create([2], fill, Rng(0))

    @pytest.mark.parametrize("shape", [[0, 2], [-1], [2, 0]])
    def test_rejects_non_positive_extent(self, shape):
        with pytest.raises((ShapeError, ValueError)):
            tensor_create(shape)


class TestIndexing:
    def test_get_set(self):
        t = tensor_create([2, 3])
        t.set((1, 2), 4.0)
        assert t[1, 2] == 4.0
        assert t.numpy()[1, 2] == 4.0

    @pytest.mark.parametrize("index", [(2, 0), (0, 3), (-1, 0), (0,), (0, 0, 0)])
    def test_out_of_bounds(self, index):
        with pytest.raises((ShapeError, IndexError)):
            tensor_create([2, 3])[index]

    def test_reshape_keeps_data(self):
        t = T([[1, 2, 3], [4, 5, 6]])
        assert t.reshape([3, 2]).numpy().tolist() == [[1, 2], [3, 4], [5, 6]]
        assert t.flatten().shape == (6,)
        with pytest.raises(ShapeError):
            t.reshape([4, 2])


class TestMatmul:
    def test_identity(self):
        b = T([[1, 2], [3, 4]])
        assert tensor_matmul(T(np.eye(2)), b) == b

    def test_hand_product(self):
        assert tensor_matmul(T([[1, 2], [3, 4]]), T([[5], [6]])).numpy().tolist() == [[17], [39]]

    def test_shape_contract(self):
        assert tensor_matmul(tensor_create([3, 4]), tensor_create([4, 5])).shape == (3, 5)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            tensor_matmul(tensor_create([3, 4]), tensor_create([3, 5]))


class TestReduce:
    def test_sum_all(self):
        out = tensor_reduce(tensor_create([2, 3], ("constant", 1)), None, "sum")
        assert out.shape == (1,) and out[0] == 6

    def test_max_axis0(self):
        assert tensor_reduce(T([[1, 5], [4, 2]]), [0], "max").numpy().tolist() == [4, 5]

    def test_mean_both_axes(self):
        assert tensor_reduce(T([[2, 4], [6, 8]]), [0, 1], "mean")[0] == 5

    @pytest.mark.parametrize("axes", [[0, 0], [2], [-1]])
    def test_bad_axes(self, axes):
        with pytest.raises(ShapeError):
            tensor_reduce(tensor_create([2, 3]), axes, "sum")

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            tensor_reduce(tensor_create([2]), None, "median")


class TestSerialization:
    def test_layout(self):
        payload = T([[1.0, 2.0]]).to_bytes()
        assert payload[0] == 2
        assert int.from_bytes(payload[1:9], "little") == 1
        assert int.from_bytes(payload[9:17], "little") == 2
        assert np.frombuffer(payload[17:], "<f8").tolist() == [1.0, 2.0]

    def test_truncated(self):
        with pytest.raises(EOFError):
            read_array(io.BytesIO(T([1.0, 2.0]).to_bytes()[:-3]))

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=4),
                      elements=st.floats(allow_nan=False, width=64)))
    def test_round_trip(self, arr):
        buf = io.BytesIO()
        write_array(buf, arr)
        buf.seek(0)
        back = read_array(buf)
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()


class TestRng:
    def test_spawn_is_keyed_and_stable(self):
        a = Rng(3).spawn(1, 2).uniform(size=5)
        b = Rng(3, (1, 2)).uniform(size=5)
        c = Rng(3).spawn(2, 1).uniform(size=5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            Rng(-1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**64 - 1))
    def test_determinism(self, seed):
        assert np.array_equal(Rng(seed).normal(size=3), Rng(seed).normal(size=3))
