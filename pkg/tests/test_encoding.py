import numpy as np
import pytest

from tacoformer.encoding import apply_posenc, posenc_1d, posenc_2d
from tacoformer.tensor import Tensor


def test_2d_spot_values():
    enc = posenc_2d(128, 9, 9)
    t = enc.table.data
    assert t[0, 0, 0] == 0.0                      # sin(0)*cos(0)
    assert t[0, 1, 0] == 1.0                      # cos(0)*cos(0)
    assert abs(t[1, 0, 0] - np.sin(1.0) * np.cos(1.0)) <= 1e-9


def test_2d_parity_cases():
    enc = posenc_2d(16, 6, 8).table.data
    t, x, y = 3, 4, 5
    i, j = x // 2, y // 2
    xa = t / 10000.0 ** (2.0 * i / 8)
    ya = t / 10000.0 ** (2.0 * j / 6)
    assert np.isclose(enc[t, x, y], np.sin(xa) * np.sin(ya))   # x even, y odd
    assert np.isclose(enc[t, x + 1, y], np.cos(xa) * np.sin(ya))
    assert np.isclose(enc[t, x, y + 1], np.sin(xa) * np.cos(t / 10000.0 ** (2.0 * 3 / 6)))


def test_2d_bounded():
    enc = posenc_2d(128, 9, 9).table.data
    assert np.all(np.abs(enc) <= 1.0)


def test_2d_deterministic():
    a = posenc_2d(32, 9, 9).table.data
    b = posenc_2d(32, 9, 9).table.data
    assert np.array_equal(a, b)


def test_2d_t0_plane_pattern():
    # at t=0 the plane is 1 exactly where x is odd and y even, else 0
    enc = posenc_2d(4, 9, 9).table.data
    plane = enc[0]
    for x in range(9):
        for y in range(9):
            want = 1.0 if (x % 2 == 1 and y % 2 == 0) else 0.0
            assert plane[x, y] == want


def test_2d_cell_collision_structure():
    # The four parity cases make cell products commute: (0,0) carries
    # sin(t)*cos(t) while (1,1) carries cos(t)*sin(t), so those two cells
    # (and every swapped-index pair within a trig family) share one vector.
    # This pins the exact degeneracy of the formula as printed.
    enc = posenc_2d(128, 9, 9).table.data
    assert np.array_equal(enc[:, 0, 0], enc[:, 1, 1])
    assert np.array_equal(enc[:, 0, 3], enc[:, 2, 1])   # sin_0*sin_1 both
    vectors = enc.reshape(128, 81).T
    dup_pairs = sum(np.array_equal(vectors[i], vectors[j])
                    for i in range(81) for j in range(i + 1, 81))
    assert dup_pairs == 28
    # every duplicate is an index-swapped partner; same-parity distinct cells
    # with distinct index pairs never collide
    assert not np.array_equal(enc[:, 0, 2], enc[:, 0, 4])
    assert not np.array_equal(enc[:, 2, 0], enc[:, 4, 0])


def test_2d_rejects_zero_extent():
    with pytest.raises(ValueError):
        posenc_2d(0, 9, 9)
    with pytest.raises(ValueError):
        posenc_2d(8, 0, 9)


def test_1d_row0_alternates():
    enc = posenc_1d(4, 8).table.data
    assert np.array_equal(enc[0], [0, 1, 0, 1, 0, 1, 0, 1])


def test_1d_spot_values():
    enc = posenc_1d(4, 8).table.data
    assert abs(enc[1, 0] - np.sin(1.0)) <= 1e-12
    # highest-frequency-index pair has a near-zero argument at small t
    assert abs(enc[1, 7] - 1.0) <= 1e-3


def test_1d_rejects_odd_dim():
    with pytest.raises(ValueError):
        posenc_1d(4, 7)


def test_1d_bounded_deterministic():
    a = posenc_1d(64, 32).table.data
    assert np.all(np.abs(a) <= 1.0)
    assert np.array_equal(a, posenc_1d(64, 32).table.data)


def test_apply_zero_input_returns_table():
    enc = posenc_2d(8, 3, 3)
    out = apply_posenc(Tensor(np.zeros((8, 3, 3))), enc)
    assert np.array_equal(out.data, enc.table.data)


def test_apply_zero_table_is_identity():
    from tacoformer.encoding import PosEnc1D
    enc = PosEnc1D(8, 4, Tensor(np.zeros((8, 4))))
    x = np.arange(32.0).reshape(8, 4)
    out = apply_posenc(Tensor(x), enc)
    assert np.array_equal(out.data, x)


def test_apply_additivity_random():
    rng = np.random.default_rng(9)
    enc = posenc_2d(8, 3, 3)
    x = rng.standard_normal((8, 3, 3))
    out = apply_posenc(Tensor(x), enc)
    assert np.allclose(out.data - enc.table.data, x, atol=1e-15)


def test_apply_broadcasts_over_batch():
    enc = posenc_1d(8, 4)
    out = apply_posenc(Tensor(np.zeros((3, 8, 4))), enc)
    for b in range(3):
        assert np.array_equal(out.data[b], enc.table.data)


def test_apply_shape_mismatch():
    enc = posenc_1d(8, 4)
    with pytest.raises(ValueError):
        apply_posenc(Tensor(np.zeros((8, 5))), enc)
