import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from r2quant.errors import FormatError, ParseError, SchemeMismatch, ShapeMismatch
from r2quant.tensor import (
    PER_CHANNEL,
    GroupScheme,
    as_matrix,
    load_matrix,
    matrix_from_bytes,
    matrix_to_bytes,
    partition,
    reassemble,
    save_matrix,
)

M24 = np.arange(8, dtype=float).reshape(2, 4)


class TestPartition:
    def test_group_size_two(self):
        groups = partition(M24, GroupScheme(2))
        np.testing.assert_array_equal(groups, [[0, 1], [2, 3], [4, 5], [6, 7]])

    def test_per_channel(self):
        groups = partition(M24, GroupScheme(PER_CHANNEL))
        np.testing.assert_array_equal(groups, M24)

    def test_non_divisor_rejected(self):
        with pytest.raises(SchemeMismatch):
            partition(M24, GroupScheme(3))

    def test_int_scheme_accepted(self):
        assert partition(M24, 4).shape == (2, 4)

    def test_bad_group_size(self):
        with pytest.raises(SchemeMismatch):
            GroupScheme(0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_matrix([[1.0, np.nan]])

    def test_rejects_1d(self):
        with pytest.raises(ShapeMismatch):
            as_matrix([1.0, 2.0])


class TestReassemble:
    def test_from_groups(self):
        groups = [[0, 1], [2, 3], [4, 5], [6, 7]]
        np.testing.assert_array_equal(reassemble(groups, 2, 4, GroupScheme(2)), M24)

    def test_wrong_group_count(self):
        with pytest.raises(ShapeMismatch):
            reassemble(np.zeros((3, 2)), 2, 4, GroupScheme(2))

    def test_scheme_not_dividing(self):
        with pytest.raises(ShapeMismatch):
            reassemble(np.zeros((4, 2)), 2, 4, GroupScheme(3))


@st.composite
def matrix_and_scheme(draw):
    rows = draw(st.integers(1, 6))
    g = draw(st.integers(1, 5))
    per_row = draw(st.integers(1, 4))
    m = draw(arrays(np.float64, (rows, g * per_row),
                    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)))
    scheme = GroupScheme(draw(st.sampled_from([g, PER_CHANNEL])))
    return m, scheme


@given(matrix_and_scheme())
def test_roundtrip_exact(ms):
    m, s = ms
    out = reassemble(partition(m, s), *m.shape, s)
    assert out.tobytes() == m.tobytes()


class TestMatrixFile:
    def test_binary_roundtrip_float32_values(self, tmp_path, rng):
        m = rng.standard_normal((3, 5)).astype(np.float32).astype(np.float64)
        save_matrix(tmp_path / "m.r2qm", m)
        np.testing.assert_array_equal(load_matrix(tmp_path / "m.r2qm"), m)

    def test_header_layout(self):
        buf = matrix_to_bytes(np.ones((2, 3)))
        assert buf[:4] == b"R2QM"
        assert int.from_bytes(buf[4:8], "little") == 1
        assert int.from_bytes(buf[8:12], "little") == 2
        assert int.from_bytes(buf[12:16], "little") == 3
        assert len(buf) == 16 + 4 * 6

    def test_bad_magic(self):
        buf = bytearray(matrix_to_bytes(np.ones((1, 1))))
        buf[0:4] = b"XXXX"
        with pytest.raises(FormatError):
            matrix_from_bytes(bytes(buf))

    def test_bad_version(self):
        buf = bytearray(matrix_to_bytes(np.ones((1, 1))))
        buf[4] = 9
        with pytest.raises(FormatError):
            matrix_from_bytes(bytes(buf))

    def test_truncated(self):
        with pytest.raises(FormatError):
            matrix_from_bytes(matrix_to_bytes(np.ones((2, 2)))[:-1])

    def test_text_loader(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("1 2.5 -3\n\n4e-1 0 7\n")
        np.testing.assert_array_equal(load_matrix(p), [[1, 2.5, -3], [0.4, 0, 7]])

    @pytest.mark.parametrize("text", ["1 2\n3\n", "1 x\n", "", "1 nan\n"])
    def test_text_loader_errors(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        with pytest.raises(ParseError):
            load_matrix(p)
