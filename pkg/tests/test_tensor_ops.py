import numpy as np
import pytest

from radiocarto import (
    FactorSet,
    cp_reconstruct,
    fold,
    frob_norm,
    khatri_rao,
    load_tensor,
    mode1_product,
    save_tensor,
    unfold,
)


def spec_cube():
    t = np.zeros((2, 2, 2))
    t[:, :, 0] = [[1, 2], [3, 4]]
    t[:, :, 1] = [[5, 6], [7, 8]]
    return t


def brute_force_unfold(t, mode):
    """Triple-loop fiber extraction with the shared column ordering."""
    d = t.shape
    other = [m for m in range(3) if m != mode - 1]
    out = np.zeros((d[mode - 1], d[other[0]] * d[other[1]]))
    for j in range(d[other[0]]):
        for k in range(d[other[1]]):
            idx = [0, 0, 0]
            idx[other[0]] = j
            idx[other[1]] = k
            col = j + k * d[other[0]]
            for i in range(d[mode - 1]):
                idx[mode - 1] = i
                out[i, col] = t[tuple(idx)]
    return out


class TestUnfoldFold:
    def test_mode1_frontal_slices(self):
        expected = [[1, 2, 5, 6], [3, 4, 7, 8]]
        assert unfold(spec_cube(), 1).tolist() == expected

    def test_roundtrip_identity_all_modes(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            dims = tuple(rng.integers(1, 7, size=3))
            t = rng.standard_normal(dims)
            for mode in (1, 2, 3):
                assert np.array_equal(fold(unfold(t, mode), mode, dims), t)

    def test_unfold_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        t = rng.standard_normal((3, 4, 5))
        for mode in (1, 2, 3):
            assert np.array_equal(unfold(t, mode), brute_force_unfold(t, mode))

    def test_fold_inverse_of_spec_example(self):
        t = spec_cube()
        assert np.array_equal(fold(unfold(t, 1), 1, t.shape), t)

    def test_fold_zero_matrix(self):
        assert np.array_equal(fold(np.zeros((3, 8)), 1, (3, 2, 4)), np.zeros((3, 2, 4)))

    def test_fold_unfold_matrix_roundtrip(self):
        rng = np.random.default_rng(3)
        dims = (4, 3, 5)
        for mode, rows in ((1, 4), (2, 3), (3, 5)):
            m = rng.standard_normal((rows, np.prod(dims) // rows))
            assert np.array_equal(unfold(fold(m, mode, dims), mode), m)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            unfold(spec_cube(), 4)
        with pytest.raises(ValueError):
            fold(np.zeros((2, 4)), 0, (2, 2, 2))

    def test_fold_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fold(np.zeros((2, 5)), 1, (2, 2, 2))


class TestKhatriRao:
    def test_spec_example(self):
        out = khatri_rao([[1, 2], [3, 4]], [[5, 6], [7, 8]])
        assert out.tolist() == [[5, 12], [7, 16], [15, 24], [21, 32]]

    def test_zero_column_propagates(self):
        a = np.array([[1.0, 0.0], [2.0, 0.0]])
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        assert np.all(khatri_rao(a, b)[:, 1] == 0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 2))
        b = rng.standard_normal((4, 2))
        out = khatri_rao(a, b)
        for r in range(2):
            for i in range(3):
                for j in range(4):
                    assert out[i * 4 + j, r] == a[i, r] * b[j, r]

    def test_column_is_vec_of_outer_product(self):
        # column r must equal vec(b_r a_r^T) in the shared fiber ordering
        rng = np.random.default_rng(9)
        for _ in range(10):
            i, j, r = rng.integers(1, 5, size=3)
            a = rng.standard_normal((i, r))
            b = rng.standard_normal((j, r))
            out = khatri_rao(a, b)
            for col in range(r):
                vec = np.outer(b[:, col], a[:, col]).ravel(order="F")
                assert np.array_equal(out[:, col], vec)

    def test_column_mismatch_rejected(self):
        with pytest.raises(ValueError):
            khatri_rao(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMode1Product:
    def test_identity(self):
        t = spec_cube()
        assert np.array_equal(mode1_product(t, np.eye(2)), t)

    def test_rank1_multilinearity(self):
        rng = np.random.default_rng(13)
        a, b, c = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(2)
        u = rng.standard_normal((5, 4))
        t = np.einsum("i,j,k->ijk", a, b, c)
        expected = np.einsum("i,j,k->ijk", u @ a, b, c)
        assert np.allclose(mode1_product(t, u), expected, rtol=1e-12, atol=1e-14)

    def test_unfold_identity(self):
        rng = np.random.default_rng(17)
        t = rng.standard_normal((4, 3, 2))
        u = rng.standard_normal((5, 4))
        out = mode1_product(t, u)
        assert np.allclose(unfold(out, 1), u @ unfold(t, 1), rtol=0, atol=1e-13)

    def test_composition(self):
        rng = np.random.default_rng(19)
        t = rng.standard_normal((4, 3, 2))
        u1 = rng.standard_normal((6, 5))
        u2 = rng.standard_normal((5, 4))
        once = mode1_product(t, u1 @ u2)
        twice = mode1_product(mode1_product(t, u2), u1)
        assert np.allclose(once, twice, rtol=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mode1_product(spec_cube(), np.zeros((2, 3)))


class TestCpReconstruct:
    def test_single_outer_product(self):
        f = FactorSet(np.array([[1.0], [0.0]]), np.array([[1.0]]), np.array([[2.0]]))
        assert cp_reconstruct(f).tolist() == [[[2.0]], [[0.0]]]

    def test_zero_factors(self):
        f = FactorSet(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((5, 2)))
        assert np.all(cp_reconstruct(f) == 0)

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((5, 3))
        c = rng.standard_normal((6, 3))
        out = cp_reconstruct(FactorSet(a, b, c))
        brute = np.zeros((4, 5, 6))
        for r in range(3):
            for i in range(4):
                for j in range(5):
                    for k in range(6):
                        brute[i, j, k] += a[i, r] * b[j, r] * c[k, r]
        assert np.allclose(out, brute, rtol=1e-12)

    def test_unfoldings_match_khatri_rao_form(self):
        rng = np.random.default_rng(29)
        a = rng.standard_normal((3, 2))
        b = rng.standard_normal((4, 2))
        c = rng.standard_normal((5, 2))
        x = cp_reconstruct(FactorSet(a, b, c))
        assert np.allclose(unfold(x, 1), a @ khatri_rao(c, b).T, rtol=1e-12)
        assert np.allclose(unfold(x, 2), b @ khatri_rao(c, a).T, rtol=1e-12)
        assert np.allclose(unfold(x, 3), c @ khatri_rao(b, a).T, rtol=1e-12)

    def test_rank_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FactorSet(np.zeros((2, 2)), np.zeros((3, 1)), np.zeros((4, 2)))


class TestFrobNorm:
    def test_zero(self):
        assert frob_norm(np.zeros((2, 2, 2))) == 0.0

    def test_single_entry(self):
        t = np.zeros((1, 1, 1))
        t[0, 0, 0] = 3.0
        assert frob_norm(t) == 3.0

    def test_matches_elementwise(self):
        rng = np.random.default_rng(31)
        t = rng.standard_normal((3, 4, 5))
        assert np.isclose(frob_norm(t), np.sqrt((t * t).sum()), rtol=1e-14)


class TestSerialization:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(37)
        t = rng.standard_normal((3, 4, 5)) * 10.0 ** rng.integers(-8, 8, size=(3, 4, 5))
        path = tmp_path / "t.t3"
        save_tensor(path, t)
        assert np.array_equal(load_tensor(path), t)

    def test_header(self, tmp_path):
        path = tmp_path / "t.t3"
        save_tensor(path, np.zeros((2, 3, 4)))
        assert path.read_text().splitlines()[0] == "T3 2 3 4"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.t3"
        path.write_text("nope 1 2 3\n")
        with pytest.raises(ValueError):
            load_tensor(path)

    def test_wrong_count_rejected(self, tmp_path):
        path = tmp_path / "short.t3"
        path.write_text("T3 2 2 2\n1.0\n2.0\n")
        with pytest.raises(ValueError):
            load_tensor(path)
