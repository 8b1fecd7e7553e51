import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from lapvbc.exceptions import ModelError, NotPositiveDefiniteError
from lapvbc.gmrf import (SparseSymmetric, block_precision, difference_matrix, factorize,
                         marginal_variances, predictor_variances, selected_inverse_columns,
                         takahashi)


def random_spd(rng, n, density=0.2):
    b = sp.random(n, n, density=density, random_state=rng, format="csc")
    q = b @ b.T + sp.diags(rng.uniform(0.5, 2.0, n))
    return q.tocsc()


@given(n=st.integers(1, 40), seed=st.integers(0, 10_000))
def test_factor_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, n)
    h = factorize(q)
    dense = q.toarray()
    b = rng.normal(size=n)
    assert np.allclose(h.solve(b), np.linalg.solve(dense, b), rtol=1e-8, atol=1e-10)
    assert h.logdet == pytest.approx(np.linalg.slogdet(dense)[1], rel=1e-10, abs=1e-10)
    chol = h.cholesky_factor.toarray()
    qp = dense[np.ix_(h.perm, h.perm)]
    assert np.allclose(chol @ chol.T, qp, atol=1e-10)


@given(n=st.integers(1, 40), seed=st.integers(0, 10_000))
def test_takahashi_matches_solves_and_dense(n, seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, n, density=0.1)
    h = factorize(q)
    inv = np.linalg.inv(q.toarray())
    z = takahashi(h)
    assert np.allclose(z.diagonal(), np.diag(inv), rtol=1e-8, atol=1e-12)
    assert np.allclose(marginal_variances(h, method="solve"), np.diag(inv), rtol=1e-8)
    # every stored entry of the selected inverse is exact, in particular Q's pattern
    coo = sp.triu(q).tocoo()
    assert np.allclose(z.entries(coo.row, coo.col), inv[coo.row, coo.col], rtol=1e-7, atol=1e-10)


def test_takahashi_on_banded_rw2_posterior():
    n = 200
    q, _ = block_precision("rw2", n, 50.0)
    q = (q + sp.identity(n)).tocsc()
    h = factorize(q)
    ref = marginal_variances(h, method="solve")
    assert np.allclose(marginal_variances(h, method="takahashi"), ref, rtol=1e-9)


def test_predictor_variances_both_methods():
    rng = np.random.default_rng(4)
    a = sp.random(12, 30, density=0.15, random_state=5, format="csr")
    # the selected inverse covers A Q^{-1} A' only when A'A lies in Q's pattern
    q = (random_spd(rng, 30) + a.T @ a).tocsc()
    h = factorize(q)
    ref = np.diag(a.toarray() @ np.linalg.inv(q.toarray()) @ a.toarray().T)
    assert np.allclose(predictor_variances(h, a, method="solve"), ref, rtol=1e-8)
    assert np.allclose(predictor_variances(h, a, method="takahashi"), ref, rtol=1e-8)


def test_selected_columns():
    rng = np.random.default_rng(1)
    q = random_spd(rng, 15)
    cols = selected_inverse_columns(factorize(q), [3, 0, 14])
    assert np.allclose(cols, np.linalg.inv(q.toarray())[:, [3, 0, 14]])


def test_not_positive_definite_names_pivot():
    q = sp.csc_matrix(np.diag([1.0, 2.0, -1.0, 3.0]))
    with pytest.raises(NotPositiveDefiniteError) as info:
        factorize(q)
    assert info.value.pivot == 2


def test_solve_lt_gives_inverse_covariance():
    rng = np.random.default_rng(2)
    q = random_spd(rng, 8)
    h = factorize(q)
    w = h.solve_lt(np.identity(8))
    assert np.allclose(w @ w.T, np.linalg.inv(q.toarray()), atol=1e-10)


@pytest.mark.parametrize("kind,size,deficiency", [
    ("iid", 5, 0), ("rw1", 6, 1), ("rw2", 7, 2), ("cyclic_rw2", 9, 1), ("cyclic_rw2", 366, 1)])
def test_prior_block_null_space(kind, size, deficiency):
    q, r = block_precision(kind, size, 3.0)
    assert r == deficiency
    eig = np.linalg.eigvalsh(q.toarray())
    assert np.sum(eig < 1e-11 * eig.max()) == deficiency
    if deficiency:
        assert np.allclose(q @ np.ones(size), 0.0)
    if deficiency == 2:
        assert np.allclose(q @ np.arange(size, dtype=float), 0.0, atol=1e-9)


def test_rw2_matches_second_difference_form():
    x = np.random.default_rng(0).normal(size=10)
    q, _ = block_precision("rw2", 10, 2.0)
    assert x @ (q @ x) == pytest.approx(2.0 * np.sum(np.diff(x, 2) ** 2))
    qc, _ = block_precision("cyclic_rw2", 10, 2.0)
    wrapped = np.concatenate([x, x[:2]])
    assert x @ (qc @ x) == pytest.approx(2.0 * np.sum(np.diff(wrapped, 2) ** 2))


def test_block_validation():
    with pytest.raises(ModelError):
        block_precision("rw2", 2, 1.0)
    with pytest.raises(ModelError):
        block_precision("iid", 3, -1.0)
    with pytest.raises(ValueError):
        difference_matrix(5, 3)


def test_sparse_symmetric_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    q = random_spd(rng, 12)
    s = SparseSymmetric.from_matrix(q)
    assert np.allclose(s.toarray(), q.toarray())
    s.dump(tmp_path / "q.txt")
    back = SparseSymmetric.load(tmp_path / "q.txt")
    assert np.array_equal(back.toarray(), s.toarray())
    assert (tmp_path / "q.txt").read_text().startswith("% 12 12")


def test_sparse_symmetric_validation():
    with pytest.raises(ValueError):
        SparseSymmetric(3, [1], [0], [1.0])
    with pytest.raises(ValueError):
        SparseSymmetric(3, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseSymmetric.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
