"""Sparse symmetric precision matrices, intrinsic GMRF prior blocks and
Cholesky-based solves, log-determinants and selected inverses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu, spsolve_triangular

from .exceptions import ModelError, NotPositiveDefiniteError

# marginal variances switch from column solves to the Takahashi recursion above this size
SOLVE_THRESHOLD = 5000
_CHUNK = 256


@dataclass(frozen=True, eq=False)
class SparseSymmetric:
    """Symmetric sparse matrix stored by its upper triangle (row <= col).

    ``rank_deficiency`` records the known dimension of the null space of
    intrinsic (singular) blocks.
    """

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    rank_deficiency: int = 0
    _full: sp.csc_matrix = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if np.any(rows > cols):
            raise ValueError("entries must lie in the upper triangle (row <= col)")
        if rows.size and (rows.min() < 0 or cols.max() >= self.dim):
            raise ValueError("entry index out of range")
        if not np.all(np.isfinite(values)):
            raise ValueError("entries must be finite")
        keys = rows * self.dim + cols
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (row, col) entries")
        upper = sp.csc_matrix((values, (rows, cols)), shape=(self.dim, self.dim))
        full = (upper + sp.triu(upper, 1).T).tocsc()
        full.sort_indices()
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_full", full)

    @classmethod
    def from_matrix(cls, matrix, rank_deficiency=0, atol=1e-12):
        """Build from a full symmetric (dense or scipy sparse) matrix."""
        m = sp.csc_matrix(matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        asym = abs(m - m.T)
        scale = max(1.0, abs(m).max() if m.nnz else 0.0)
        if asym.nnz and asym.max() > atol * scale:
            raise ValueError("matrix is not symmetric")
        upper = sp.triu(m).tocoo()
        upper.sum_duplicates()
        return cls(m.shape[0], upper.row, upper.col, upper.data, rank_deficiency)

    @classmethod
    def zeros(cls, dim):
        empty = np.zeros(0)
        return cls(dim, empty, empty, empty)

    def tocsc(self) -> sp.csc_matrix:
        """Full (both triangles) CSC copy."""
        return self._full.copy()

    def toarray(self) -> np.ndarray:
        return self._full.toarray()

    @property
    def nnz(self) -> int:
        return self.values.size

    def __matmul__(self, other):
        return self._full @ other

    def diagonal(self) -> np.ndarray:
        return self._full.diagonal()

    def dump(self, path):
        """Write ``row col value`` lines with 1-based indices."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"% {self.dim} {self.dim} {self.nnz}\n")
            for r, c, v in zip(self.rows, self.cols, self.values):
                fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            dim = int(header[1])
            data = np.loadtxt(fh, ndmin=2)
        if data.size == 0:
            return cls.zeros(dim)
        return cls(dim, data[:, 0].astype(int) - 1, data[:, 1].astype(int) - 1, data[:, 2])


def difference_matrix(size, order, cyclic=False):
    """First or second difference operator as a sparse matrix."""
    if order not in (1, 2):
        raise ValueError("difference order must be 1 or 2")
    if size < order + 1:
        raise ModelError(f"block of size {size} is too small for order-{order} differences")
    stencil = [-1.0, 1.0] if order == 1 else [1.0, -2.0, 1.0]
    if cyclic:
        rows = np.repeat(np.arange(size), len(stencil))
        cols = (np.arange(size)[:, None] + np.arange(len(stencil))[None, :]) % size
        vals = np.tile(stencil, size)
        return sp.csr_matrix((vals, (rows, cols.ravel())), shape=(size, size))
    k = size - order
    return sp.diags(stencil, list(range(order + 1)), shape=(k, size), format="csr")


def block_precision(kind, size, precision):
    """Precision matrix and rank deficiency of one effect block.

    ``kind`` is one of ``fixed``, ``iid``, ``rw1``, ``rw2``, ``cyclic_rw2``.
    """
    if not np.isfinite(precision) or precision <= 0:
        raise ModelError(f"prior precision must be finite and > 0, got {precision}")
    if kind in ("fixed", "iid"):
        return sp.identity(size, format="csc") * precision, 0
    if kind == "rw1":
        d = difference_matrix(size, 1)
        return (precision * (d.T @ d)).tocsc(), 1
    if kind == "rw2":
        d = difference_matrix(size, 2)
        return (precision * (d.T @ d)).tocsc(), 2
    if kind == "cyclic_rw2":
        if size < 3:
            raise ModelError("cyclic RW2 needs at least 3 nodes")
        d = difference_matrix(size, 2, cyclic=True)
        # only constants survive cyclic second differences
        return (precision * (d.T @ d)).tocsc(), 1
    raise ModelError(f"unknown effect kind {kind!r}")


def assemble_prior_precision(model) -> SparseSymmetric:
    """Block-diagonal prior precision over the effect space of ``model``."""
    blocks, deficiency = [], 0
    for effect in model.effects:
        q, r = block_precision(effect.kind.value, effect.size, effect.prior_precision)
        blocks.append(q)
        deficiency += r
    full = sp.block_diag(blocks, format="csc")
    return SparseSymmetric.from_matrix(full, rank_deficiency=deficiency)


def fill_reducing_ordering(matrix) -> np.ndarray:
    """Reverse Cuthill-McKee ordering of the sparsity pattern."""
    m = sp.csr_matrix(matrix)
    pattern = sp.csr_matrix((np.ones(m.nnz), m.indices, m.indptr), shape=m.shape)
    return np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=np.int64)


def _null_direction_index(qp):
    """Largest entry of an approximate null vector of a singular matrix, by
    inverse iteration on a slightly shifted copy."""
    n = qp.shape[0]
    shift = 1e-10 * max(1.0, float(np.max(np.abs(qp.diagonal()))))
    try:
        lu = splu((qp + shift * sp.identity(n, format="csc")).tocsc())
    except RuntimeError:
        return None
    v = np.ones(n)
    for _ in range(3):
        v = lu.solve(v)
        v /= np.max(np.abs(v))
    return int(np.argmax(np.abs(v)))


class CholeskyHandle:
    """Factorisation ``P Q P' = L D L'`` of a symmetric positive definite matrix.

    Backed by SuperLU with diagonal pivoting only, applied after a
    fill-reducing symmetric permutation ``perm``.
    """

    def __init__(self, matrix, perm, pivot_tol=0.0):
        self.dim = matrix.shape[0]
        self.perm = perm
        self.iperm = np.empty_like(perm)
        self.iperm[perm] = np.arange(self.dim)
        self._matrix = matrix
        qp = matrix[perm][:, perm].tocsc()
        self._permuted = qp
        try:
            self._lu = splu(qp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            k = _null_direction_index(qp)
            where = "" if k is None else f" (null direction concentrated at index {perm[k]})"
            raise NotPositiveDefiniteError(f"factorisation failed: {exc}{where}",
                                           pivot=None if k is None else int(perm[k])) from None
        if not (np.array_equal(self._lu.perm_r, np.arange(self.dim))
                and np.array_equal(self._lu.perm_c, np.arange(self.dim))):
            raise NotPositiveDefiniteError("factorisation needed off-diagonal pivoting")
        d = self._lu.U.diagonal()
        # pivots relative to the original diagonal; 0 only rejects nonpositive pivots
        scale = np.abs(qp.diagonal())
        bad = np.flatnonzero(~(d > pivot_tol * scale))
        if bad.size:
            k = int(bad[0])
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (pivot {d[k]:.3g} at index {perm[k]})",
                pivot=int(perm[k]))
        self._d = d
        self._chol = None

    @property
    def logdet(self) -> float:
        return float(np.sum(np.log(self._d)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(np.ascontiguousarray(b[self.perm]))
        return x[self.iperm]

    @property
    def cholesky_factor(self) -> sp.csc_matrix:
        """Lower Cholesky factor of the permuted matrix."""
        if self._chol is None:
            self._chol = (self._lu.L @ sp.diags(np.sqrt(self._d))).tocsc()
        return self._chol

    def solve_lt(self, z):
        """Return ``x = P' L^{-T} z``, so that ``x ~ N(0, Q^{-1})`` for standard normal ``z``."""
        z = np.asarray(z, dtype=float)
        lt = self.cholesky_factor.T.tocsr()
        x = spsolve_triangular(lt, z, lower=False)
        return x[self.iperm]

    def matvec(self, x):
        return self._matrix @ x


def _as_csc(q):
    if isinstance(q, SparseSymmetric):
        return q.tocsc()
    return sp.csc_matrix(q)


def factorize(q, ordering=None, pivot_tol=0.0) -> CholeskyHandle:
    """Factorise a symmetric positive definite matrix.

    ``ordering`` may be supplied to reuse a permutation computed once for a
    fixed sparsity pattern. Pivots not exceeding ``pivot_tol`` times the
    matching diagonal entry are rejected.
    """
    m = _as_csc(q)
    perm = fill_reducing_ordering(m) if ordering is None else np.asarray(ordering, dtype=np.int64)
    return CholeskyHandle(m, perm, pivot_tol)


def _check_indices(indices, dim):
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"index out of range for dimension {dim}")
    return idx


def selected_inverse_columns(handle: CholeskyHandle, columns) -> np.ndarray:
    """Columns ``columns`` of ``Q^{-1}`` as a dense ``dim x len(columns)`` array."""
    idx = _check_indices(columns, handle.dim)
    e = np.zeros((handle.dim, idx.size))
    e[idx, np.arange(idx.size)] = 1.0
    return handle.solve(e)


def _symbolic_structure(lower_csc, n):
    """Row structure (below the diagonal) of each Cholesky column."""
    children = [[] for _ in range(n)]
    struct = [None] * n
    for j in range(n):
        s = set(lower_csc.indices[lower_csc.indptr[j]:lower_csc.indptr[j + 1]].tolist())
        for c in children[j]:
            s.update(struct[c].tolist())
        s.discard(j)
        arr = np.array(sorted(s), dtype=np.int64)
        struct[j] = arr
        if arr.size:
            children[arr[0]].append(j)
    return struct


class SelectedInverse:
    """Entries of ``Q^{-1}`` on the sparsity pattern of the Cholesky factor."""

    def __init__(self, handle: CholeskyHandle, diag, pairs, values):
        self.handle = handle
        self._diag = diag  # original ordering
        n = handle.dim
        rows = np.concatenate([pairs[0], pairs[1], np.arange(n)])
        cols = np.concatenate([pairs[1], pairs[0], np.arange(n)])
        vals = np.concatenate([values, values, diag])
        keys = rows * n + cols
        order = np.argsort(keys)
        self._keys = keys[order]
        self._vals = vals[order]

    def diagonal(self):
        return self._diag.copy()

    def entries(self, rows, cols):
        n = self.handle.dim
        keys = np.asarray(rows, dtype=np.int64) * n + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, self._keys.size - 1)
        if not np.all(self._keys[pos] == keys):
            raise KeyError("requested entry lies outside the factor's sparsity pattern")
        return self._vals[pos]


def takahashi(handle: CholeskyHandle) -> SelectedInverse:
    """Selected inverse by the Takahashi recursion over the Cholesky pattern."""
    n = handle.dim
    lower = sp.tril(handle._permuted, -1).tocsc()
    struct = _symbolic_structure(lower, n)
    chol = handle.cholesky_factor
    lcol, ldiag = [], np.empty(n)
    for j in range(n):
        rows = chol.indices[chol.indptr[j]:chol.indptr[j + 1]]
        vals = chol.data[chol.indptr[j]:chol.indptr[j + 1]]
        ldiag[j] = vals[rows == j][0]
        col = np.zeros(struct[j].size)
        below = rows > j
        if np.any(below):
            pos = np.searchsorted(struct[j], rows[below])
            col[pos] = vals[below]
        lcol.append(col)

    zdiag = np.empty(n)
    zcol = [None] * n
    for i in range(n - 1, -1, -1):
        s = struct[i]
        li = ldiag[i]
        if s.size == 0:
            zdiag[i] = 1.0 / li ** 2
            zcol[i] = np.zeros(0)
            continue
        k = s.size
        zs = np.empty((k, k))
        zs[np.arange(k), np.arange(k)] = zdiag[s]
        for a in range(k):
            sa = s[a]
            if a + 1 < k:
                pos = np.searchsorted(struct[sa], s[a + 1:])
                vals = zcol[sa][pos]
                zs[a + 1:, a] = vals
                zs[a, a + 1:] = vals
        zi = -(zs @ lcol[i]) / li
        zcol[i] = zi
        zdiag[i] = 1.0 / li ** 2 - np.dot(lcol[i], zi) / li

    perm = handle.perm
    rows = np.concatenate([np.full(struct[j].size, j, dtype=np.int64) for j in range(n)]) \
        if n else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(struct) if n else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(zcol) if n else np.zeros(0)
    diag = np.empty(n)
    diag[perm] = zdiag
    return SelectedInverse(handle, diag, (perm[rows], perm[cols]), vals)


def marginal_variances(handle: CholeskyHandle, indices=None, method="auto") -> np.ndarray:
    """Diagonal entries ``(Q^{-1})_{ii}`` for ``indices`` (all by default).

    ``method`` is ``"solve"`` (column solves), ``"takahashi"``, or ``"auto"``
    which picks column solves up to ``SOLVE_THRESHOLD`` unknowns.
    """
    idx = np.arange(handle.dim) if indices is None else _check_indices(indices, handle.dim)
    if method == "auto":
        method = "solve" if handle.dim <= SOLVE_THRESHOLD else "takahashi"
    if method == "takahashi":
        return takahashi(handle).diagonal()[idx]
    if method != "solve":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty(idx.size)
    for start in range(0, idx.size, _CHUNK):
        chunk = idx[start:start + _CHUNK]
        cols = selected_inverse_columns(handle, chunk)
        out[start:start + _CHUNK] = cols[chunk, np.arange(chunk.size)]
    return out


def predictor_variances(handle: CholeskyHandle, a, method="auto") -> np.ndarray:
    """Diagonal of ``A Q^{-1} A'`` for a sparse design ``a``."""
    a = sp.csr_matrix(a)
    nobs = a.shape[0]
    if method == "auto":
        method = "solve" if handle.dim <= SOLVE_THRESHOLD else "takahashi"
    if method == "solve":
        out = np.zeros(nobs)
        a_csc = a.tocsc()
        for start in range(0, handle.dim, _CHUNK):
            chunk = np.arange(start, min(start + _CHUNK, handle.dim))
            cols = selected_inverse_columns(handle, chunk)
            out += np.asarray((a @ cols) * a_csc[:, chunk].toarray()).sum(axis=1)
        return out
    if method != "takahashi":
        raise ValueError(f"unknown method {method!r}")
    z = takahashi(handle)
    coo = a.tocoo()
    # all within-row pairs (j, k) of A
    order = np.argsort(coo.row, kind="stable")
    r, c, v = coo.row[order], coo.col[order], coo.data[order]
    starts = np.searchsorted(r, np.arange(nobs))
    ends = np.searchsorted(r, np.arange(nobs), side="right")
    pr, pj, pk, pv = [], [], [], []
    for i in range(nobs):
        cj, vj = c[starts[i]:ends[i]], v[starts[i]:ends[i]]
        jj, kk = np.meshgrid(np.arange(cj.size), np.arange(cj.size), indexing="ij")
        pr.append(np.full(jj.size, i))
        pj.append(cj[jj.ravel()])
        pk.append(cj[kk.ravel()])
        pv.append(vj[jj.ravel()] * vj[kk.ravel()])
    pr, pj, pk, pv = (np.concatenate(x) for x in (pr, pj, pk, pv))
    try:
        cross = z.entries(pj, pk)
    except KeyError:
        raise ValueError("A'A is not contained in the precision pattern; use method='solve'") from None
    return np.bincount(pr, weights=pv * cross, minlength=nobs)
