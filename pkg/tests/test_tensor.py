import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xensemble.tensor import (
    ShapeError,
    Tensor,
    TensorFormatError,
    elementwise,
    matmul,
    read_tensors,
    reduce,
    tensor_bytes,
    write_tensors,
)


def test_construct_and_shape():
    t = Tensor([1, 2, 3, 4, 5, 6], shape=[2, 3])
    assert t.shape == [2, 3]
    assert t.rank == 2
    assert t.data == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


def test_data_length_must_match_shape():
    with pytest.raises(ShapeError, match="does not match"):
        Tensor([1, 2, 3], shape=[2, 2])


def test_zero_dimension_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_payload_is_immutable():
    t = Tensor([[1.0, 2.0]])
    with pytest.raises(ValueError):
        t.numpy()[0, 0] = 5.0
    src = np.array([1.0, 2.0])
    t2 = Tensor(src)
    src[0] = 9.0
    assert t2.data == [1.0, 2.0]


def test_elementwise_ops():
    a = Tensor([[1.0, -2.0], [3.0, 4.0]])
    b = Tensor([[2.0, 2.0], [-1.0, 8.0]])
    assert elementwise("add", a, b).data == [3.0, 0.0, 2.0, 12.0]
    assert elementwise("sub", a, b).data == [-1.0, -4.0, 4.0, -4.0]
    assert elementwise("mul", a, b).data == [2.0, -4.0, -3.0, 32.0]
    assert elementwise("div", a, b).data == [0.5, -1.0, -3.0, 0.5]
    assert elementwise("max", a, b).data == [2.0, 2.0, 3.0, 8.0]
    assert elementwise("min", a, 0.0).data == [0.0, -2.0, 0.0, 0.0]


def test_elementwise_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        elementwise("add", Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert "[2, 3]" in str(exc.value) and "[3, 2]" in str(exc.value)


def test_unknown_op():
    with pytest.raises(ValueError, match="unknown op"):
        elementwise("pow", Tensor([1.0]), 2.0)


def test_matmul():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    assert matmul(a, b).data == [17.0, 39.0]
    with pytest.raises(ShapeError, match="inner"):
        matmul(a, Tensor(np.ones((3, 1))))


def test_reduce():
    t = Tensor([[1.0, 5.0, 5.0], [2.0, 0.0, 1.0]])
    assert reduce("sum", t) == 14.0
    assert reduce("mean", t, axis=1).data == [11.0 / 3.0, 1.0]
    assert reduce("argmax", Tensor([3.0, 7.0, 7.0, 1.0])) == 1
    assert reduce("argmax", t, axis=1).tolist() == [1, 0]
    with pytest.raises(ShapeError):
        reduce("sum", t, axis=2)


def test_io_round_trip(tmp_path):
    ts = [Tensor([[1.5, -2.0], [0.1, 1e300]]), Tensor([7.0]), Tensor(np.arange(24.0).reshape(2, 3, 4))]
    p = tmp_path / "x.tensors"
    write_tensors(p, ts)
    back = read_tensors(p)
    assert back == ts


def test_file_layout():
    raw = tensor_bytes([Tensor([[1.0, 2.0]])])
    header, payload = raw.split(b"\n", 1)
    assert header == b"TENSOR v1 2 1 2"
    assert np.frombuffer(payload, dtype="<f8").tolist() == [1.0, 2.0]


def test_truncated_payload_reports_offset():
    raw = tensor_bytes([Tensor([1.0, 2.0, 3.0])])
    with pytest.raises(TensorFormatError, match="truncated.*byte 0"):
        read_tensors(raw[:-4])


def test_bad_headers():
    with pytest.raises(TensorFormatError, match="magic"):
        read_tensors(b"TENSOR v2 1 1\n" + bytes(8))
    with pytest.raises(TensorFormatError, match="inconsistent"):
        read_tensors(b"TENSOR v1 2 3\n" + bytes(24))
    with pytest.raises(TensorFormatError, match="unterminated"):
        read_tensors(b"TENSOR v1 1 3")


def test_second_block_error_offset():
    first = tensor_bytes([Tensor([1.0])])
    bad = first + b"TENSOR v1 1 2\n" + bytes(8)
    with pytest.raises(TensorFormatError, match=f"byte {len(first)}"):
        read_tensors(bad)


finite = st.floats(allow_nan=False, allow_infinity=True, width=64)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
@settings(max_examples=100, deadline=None)
def test_round_trip_property(a):
    t = Tensor(a)
    assert read_tensors(tensor_bytes([t]))[0] == t


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
@settings(max_examples=100, deadline=None)
def test_argmax_is_first_maximum(a):
    i = reduce("argmax", Tensor(a))
    assert a[i] == a.max()
    assert all(a[j] < a[i] for j in range(i))
