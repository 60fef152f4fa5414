"""Sparse/dense linear algebra used by the FEM and reduced-order stages.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects in canonical
form (sorted column indices, no duplicates). The SPD factorization is a
symmetric-mode SuperLU factorization without pivoting, which makes the LU
pivots the LDL^T pivots; any non-positive pivot flags an indefinite matrix.
The preconditioned conjugate gradient solver is written here so that the
iteration count, tolerance and preconditioner are fully under our control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "IterOptions",
    "IterResult",
    "SymmetricFactor",
    "NotPositiveDefiniteError",
    "ConvergenceError",
    "csr_from_triplets",
    "spmv",
    "factorize_spd",
    "solve_factored",
    "iterative_solve",
    "relative_residual",
]


class NotPositiveDefiniteError(ValueError):
    """Raised when a factorization meets a non-positive pivot."""

    def __init__(self, pivot_index: int, pivot_value: float):
        self.pivot_index = int(pivot_index)
        self.pivot_value = float(pivot_value)
        super().__init__(
            f"matrix is not positive definite: pivot {self.pivot_value:.6g} "
            f"at index {self.pivot_index}"
        )


class ConvergenceError(RuntimeError):
    """Iterative solver stopped without meeting its tolerance.

    The best iterate seen so far is kept on ``x`` so callers can inspect or
    fall back.
    """

    def __init__(self, message: str, x: np.ndarray, iterations: int, residual: float):
        super().__init__(message)
        self.x = x
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class IterOptions:
    tol: float = 1e-10
    max_iter: int = 10_000
    preconditioner: str = "diagonal"  # none | diagonal | block-diagonal
    method: str = "cg"  # cg | gmres
    block_size: int = 3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "diagonal", "block-diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.method not in ("cg", "gmres"):
            raise ValueError(f"unknown iterative method {self.method!r}")


@dataclass
class IterResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)


def csr_from_triplets(rows, cols, values, shape) -> sp.csr_matrix:
    """Build a canonical CSR matrix, summing duplicate (row, col) entries."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    n_rows, n_cols = (int(s) for s in shape)
    if not (rows.size == cols.size == values.size):
        raise ValueError("triplet arrays must have equal length")
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows:
            raise IndexError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise IndexError("column index out of range")
    A = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector {x.shape[0]}")
    return A @ x


def relative_residual(A, x, b) -> float:
    """||A x - b|| / ||b|| (plain ||A x|| when b vanishes)."""
    r = spmv(A, x) - b
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def _check_symmetric(A, rtol=1e-12):
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    D = (A - A.T).tocsr()
    D.eliminate_zeros()
    if D.nnz == 0:
        return
    scale = abs(A).max() if A.nnz else 0.0
    if abs(D).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")


class SymmetricFactor:
    """Reusable factorization of an SPD sparse matrix."""

    def __init__(self, lu, n: int):
        self._lu = lu
        self.n = n

    @property
    def pivots(self) -> np.ndarray:
        return self._lu.U.diagonal()

    def solve(self, rhs) -> np.ndarray:
        return solve_factored(self, rhs)


def factorize_spd(A, ordering: str = "MMD_AT_PLUS_A") -> SymmetricFactor:
    """Factorize a symmetric positive-definite matrix once for many solves.

    Raises NotPositiveDefiniteError naming the (original) index of the first
    non-positive pivot.
    """
    A = sp.csc_matrix(A, dtype=np.float64)
    _check_symmetric(A)
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    try:
        lu = spla.splu(
            A,
            permc_spec=ordering,
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # exactly singular
        raise NotPositiveDefiniteError(-1, 0.0) from exc
    piv = lu.U.diagonal()
    bad = np.flatnonzero(~(piv > 0))
    if bad.size:
        k = int(bad[0])
        raise NotPositiveDefiniteError(int(lu.perm_c[k]), piv[k])
    return SymmetricFactor(lu, n)


def solve_factored(factor: SymmetricFactor, rhs) -> np.ndarray:
    """Solve with a stored factor; ``rhs`` may be a vector or an (n, k) block."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.n:
        raise ValueError(f"dimension mismatch: factor is {factor.n}, rhs {rhs.shape[0]}")
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return factor._lu.solve(np.asfortranarray(rhs) if rhs.ndim == 2 else rhs)


def _preconditioner(A, kind: str, block: int):
    if kind == "none":
        return lambda r: r
    if kind == "diagonal":
        d = A.diagonal().copy()
        d[d == 0] = 1.0
        inv = 1.0 / d
        return lambda r: inv * r
    n = A.shape[0]
    if n % block:
        raise ValueError(f"block-diagonal preconditioner needs size divisible by {block}")
    nb = n // block
    blocks = np.zeros((nb, block, block))
    A = A.tocoo()
    same = (A.row // block) == (A.col // block)
    r, c, v = A.row[same], A.col[same], A.data[same]
    np.add.at(blocks, (r // block, r % block, c % block), v)
    for k in np.flatnonzero(np.all(blocks == 0, axis=(1, 2))):
        blocks[k] = np.eye(block)
    inv = np.linalg.inv(blocks)
    return lambda rr: np.einsum("bij,bj->bi", inv, rr.reshape(nb, block)).ravel()


def _pcg(A, b, x0, opts: IterOptions) -> IterResult:
    M = _preconditioner(A, opts.preconditioner, opts.block_size)
    nb = np.linalg.norm(b)
    x = np.array(x0, dtype=np.float64, copy=True)
    if nb == 0:
        return IterResult(np.zeros_like(b), 0, 0.0)
    r = b - A @ x
    res = np.linalg.norm(r) / nb
    history = [res]
    if res <= opts.tol:
        return IterResult(x, 0, res, history)
    z = M(r)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), res
    for it in range(1, opts.max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not np.isfinite(pAp) or pAp <= 0:
            if not np.isfinite(pAp):
                raise FloatingPointError(f"NaN breakdown in conjugate gradient at iteration {it}")
            raise NotPositiveDefiniteError(-1, pAp)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / nb
        history.append(res)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= opts.tol:
            # recurrence drift check against the true residual
            true_res = np.linalg.norm(b - A @ x) / nb
            if true_res <= opts.tol:
                return IterResult(x, it, true_res, history)
            r = b - A @ x
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"conjugate gradient did not converge in {opts.max_iter} iterations "
        f"(residual {best_res:.3e})",
        best_x,
        opts.max_iter,
        best_res,
    )


def _gmres(A, b, x0, opts: IterOptions) -> IterResult:
    M = _preconditioner(A, opts.preconditioner, opts.block_size)
    Mop = spla.LinearOperator(A.shape, matvec=M, dtype=np.float64)
    nb = np.linalg.norm(b)
    if nb == 0:
        return IterResult(np.zeros_like(b), 0, 0.0)
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(200, A.shape[0])
    x, info = spla.gmres(
        A, b, x0=x0, rtol=opts.tol, atol=0.0, restart=restart,
        maxiter=max(1, opts.max_iter // restart + 1), M=Mop,
        callback=cb, callback_type="pr_norm",
    )
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("NaN breakdown in GMRES")
    res = np.linalg.norm(b - A @ x) / nb
    if res > opts.tol:
        raise ConvergenceError(
            f"GMRES did not converge (residual {res:.3e})", x, count[0], res
        )
    return IterResult(x, count[0], res)


def iterative_solve(A, b, opts: IterOptions | None = None, x0=None) -> IterResult:
    """Preconditioned Krylov solve of ``A x = b``.

    Conjugate gradients for symmetric systems (the default), GMRES when
    ``opts.method == "gmres"``. Raises ConvergenceError carrying the best
    iterate when the tolerance is not reached.
    """
    opts = opts or IterOptions()
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.shape[0]:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    A = sp.csr_matrix(A)
    x0 = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64)
    if opts.method == "gmres":
        return _gmres(A, b, x0, opts)
    return _pcg(A, b, x0, opts)
