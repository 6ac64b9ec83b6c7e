"""Early-terminated conjugate gradient for symmetric positive-definite systems.

``solve_cg`` works on anything supporting ``M @ v`` (dense arrays, scipy
sparse matrices, linear operators). ``solve_sliced_columns`` is the batch
kernel behind the offline index build: for each truncation list it slices the
Laplacian in place and solves against the first unit vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


class SolverError(ArithmeticError):
    """CG met a non-finite value or a non-positive curvature ``p'Mp``."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 20
    residual_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.residual_tol >= 0:
            raise ValueError(f"residual_tol must be non-negative, got {self.residual_tol}")


# offline solves can afford to converge; the online baseline stays at 20 steps
OFFLINE_CG = CgConfig(max_iters=200, residual_tol=1e-6)
ONLINE_CG = CgConfig(max_iters=20, residual_tol=1e-6)


@dataclass(frozen=True)
class CgStats:
    iterations: int
    residual: float  # final ||b - Mx|| / ||b|| as tracked by the recurrence


def solve_cg(m, b, cfg: CgConfig = ONLINE_CG, return_stats: bool = False):
    """Solve ``M x = b`` from ``x = 0``.

    Stops once the relative residual ``||r|| / ||b||`` drops to
    ``cfg.residual_tol`` or after ``cfg.max_iters`` steps.
    """
    b = np.asarray(b, dtype=np.float64)
    if m.shape[0] != m.shape[1] or m.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: matrix {m.shape}, rhs {b.shape}")
    x = np.zeros_like(b)
    r = b.copy()
    rs = float(r @ r)
    bnorm = np.sqrt(rs)
    if not np.isfinite(bnorm):
        raise SolverError("right-hand side is not finite")
    stop = cfg.residual_tol * bnorm
    it = 0
    if bnorm > 0 and np.sqrt(rs) > stop:
        p = r.copy()
        while it < cfg.max_iters:
            it += 1
            ap = np.asarray(m @ p, dtype=np.float64).ravel()
            pap = float(p @ ap)
            if not (np.isfinite(pap) and pap > 0):
                raise SolverError(f"non-positive or non-finite curvature {pap} at iteration {it}")
            step = rs / pap
            x += step * p
            r -= step * ap
            rs_new = float(r @ r)
            if not np.isfinite(rs_new):
                raise SolverError(f"non-finite residual at iteration {it}")
            if np.sqrt(rs_new) <= stop:
                rs = rs_new
                break
            p *= rs_new / rs
            p += r
            rs = rs_new
    if return_stats:
        return x, CgStats(it, float(np.sqrt(rs) / bnorm) if bnorm > 0 else 0.0)
    return x


@numba.njit(cache=True, nogil=True)
def _sliced_cg(indptr, indices, data, lists, max_iters, tol, out, iters, resid, pos, lptr, lidx, lval):
    """Returns -1 on success, else the offending row of ``lists``."""
    n_cols, size = lists.shape
    x = np.empty(size)
    r = np.empty(size)
    p = np.empty(size)
    ap = np.empty(size)
    for c in range(n_cols):
        ids = lists[c]
        for a in range(size):
            pos[ids[a]] = a
        nnz = 0
        lptr[0] = 0
        for a in range(size):
            g = ids[a]
            for q in range(indptr[g], indptr[g + 1]):
                loc = pos[indices[q]]
                if loc >= 0:
                    lidx[nnz] = loc
                    lval[nnz] = data[q]
                    nnz += 1
            lptr[a + 1] = nnz
        for a in range(size):
            pos[ids[a]] = -1
            x[a] = 0.0
            r[a] = 0.0
        r[0] = 1.0
        for a in range(size):
            p[a] = r[a]
        rs = 1.0
        it = 0
        failed = False
        if rs > tol * tol:
            while it < max_iters:
                it += 1
                pap = 0.0
                for a in range(size):
                    acc = 0.0
                    for q in range(lptr[a], lptr[a + 1]):
                        acc += lval[q] * p[lidx[q]]
                    ap[a] = acc
                    pap += p[a] * acc
                if not (pap > 0.0 and pap < np.inf):
                    failed = True
                    break
                step = rs / pap
                rs_new = 0.0
                for a in range(size):
                    x[a] += step * p[a]
                    r[a] -= step * ap[a]
                    rs_new += r[a] * r[a]
                if not rs_new < np.inf:
                    failed = True
                    break
                if np.sqrt(rs_new) <= tol:
                    rs = rs_new
                    break
                beta = rs_new / rs
                for a in range(size):
                    p[a] = r[a] + beta * p[a]
                rs = rs_new
        if failed:
            return c
        for a in range(size):
            out[c, a] = x[a]
        iters[c] = it
        resid[c] = np.sqrt(rs)
    return -1


def solve_sliced_columns(lap, lists: np.ndarray, cfg: CgConfig, out: np.ndarray, iters: np.ndarray, resid: np.ndarray) -> None:
    """Fill ``out[c]`` with the CG solution of ``lap[lists[c]][:, lists[c]] x = e_0``.

    ``lap`` is a canonical CSR matrix. Raises ``SolverError`` naming the
    first failing row of ``lists``.
    """
    n = lap.shape[0]
    size = lists.shape[1]
    max_row = int(np.diff(lap.indptr).max()) if n else 0
    pos = np.full(n, -1, dtype=np.int32)
    lptr = np.empty(size + 1, dtype=np.int64)
    lidx = np.empty(size * max_row, dtype=np.int32)
    lval = np.empty(size * max_row, dtype=np.float64)
    bad = _sliced_cg(
        lap.indptr.astype(np.int64, copy=False),
        lap.indices.astype(np.int32, copy=False),
        lap.data.astype(np.float64, copy=False),
        np.ascontiguousarray(lists, dtype=np.int32),
        cfg.max_iters,
        cfg.residual_tol,
        out,
        iters,
        resid,
        pos,
        lptr,
        lidx,
        lval,
    )
    if bad >= 0:
        raise SolverError(f"CG broke down on truncation list {bad}", column=int(bad))
