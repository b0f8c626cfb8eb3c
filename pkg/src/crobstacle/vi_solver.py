"""Box-constrained SPD linear complementarity problems and SPD solves.

The LCP ``min 1/2 x^T H x - q^T x  s.t.  x <= u`` has KKT conditions
``r = Hx - q <= 0``, ``x <= u``, ``r (x - u) = 0``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConditioningError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass
class LcpProblem:
    H: sp.csr_matrix
    q: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.H = sp.csr_matrix(self.H, dtype=float)
        self.H.sort_indices()
        self.q = np.asarray(self.q, dtype=float).copy()
        self.upper = np.asarray(self.upper, dtype=float).copy()
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.q.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("LCP dimensions disagree")
        if n:
            diag = self.H.diagonal()
            scale = np.abs(self.H.data).max()
            if np.any(diag <= 1e-14 * scale):
                raise ConditioningError(
                    f"degenerate diagonal entry {diag.min():.3e} (row {int(np.argmin(diag))})")

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def residual(self, x) -> np.ndarray:
        return self.H @ x - self.q

    def energy(self, x) -> float:
        return float(0.5 * x @ (self.H @ x) - self.q @ x)


@dataclass
class LcpSolution:
    x: np.ndarray
    iterations: int
    residual_complementarity: float
    residual_sign: float
    converged: bool
    residual_complementarity_scaled: float = 0.0
    decreases: list = field(default_factory=list, repr=False)
    polished: bool = False


def kkt_residuals(p: LcpProblem, x) -> tuple[float, float, float]:
    """(complementarity, scaled complementarity, sign) residuals of ``x``.

    Infinite bounds contribute ``|r|`` (they can only be inactive).
    """
    r = p.residual(x)
    finite = np.isfinite(p.upper)
    gap = np.where(finite, p.upper - x, 1.0)
    prod = np.abs(r * gap)
    scale = np.where(finite, 1.0 + np.abs(np.where(finite, p.upper, 0.0)), 1.0)
    comp = float(prod.max()) if len(x) else 0.0
    comp_scaled = float((prod / scale).max()) if len(x) else 0.0
    sign = float(np.maximum(r, 0.0).max()) if len(x) else 0.0
    return comp, comp_scaled, sign


@numba.njit(cache=True)
def _psor_sweep(indptr, indices, data, diag, q, upper, x, omega):
    """One projected SOR sweep in place; returns the exact energy decrease."""
    decrease = 0.0
    n = x.shape[0]
    for i in range(n):
        s = q[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        # s = q_i - (Hx)_i = -gradient_i
        xi = x[i] + omega * s / diag[i]
        if xi > upper[i]:
            xi = upper[i]
        d = xi - x[i]
        if d != 0.0:
            decrease += d * s - 0.5 * diag[i] * d * d
            x[i] = xi
    return decrease


def solve_psor(p: LcpProblem, x0=None, omega: float = 1.5, tol: float = 1e-10,
               max_iter: int = 10000, kkt_tol: float | None = None,
               polish: bool = False, full_solver=None) -> LcpSolution:
    """Projected SOR.

    Sweeps until the energy decrease of a sweep falls below ``tol**2`` and the
    scaled KKT residuals are below ``kkt_tol`` (default ``tol``).  With
    ``polish`` the active set of the final iterate is frozen and the reduced
    equality system is solved directly; the polished point is kept only if it
    satisfies the KKT conditions at least as well.
    """
    if not 0.0 < omega < 2.0:
        raise ValueError("relaxation parameter must lie in (0, 2)")
    if kkt_tol is None:
        kkt_tol = tol
    n = p.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    np.minimum(x, p.upper, out=x)
    H = p.H
    diag = H.diagonal().copy()
    decreases = []
    converged = False
    it = 0
    comp = comp_s = sign = np.inf
    while it < max_iter:
        dec = _psor_sweep(H.indptr, H.indices, H.data, diag, p.q, p.upper, x, omega)
        it += 1
        decreases.append(dec)
        if dec < tol * tol:
            comp, comp_s, sign = kkt_residuals(p, x)
            if comp_s <= kkt_tol and sign <= kkt_tol:
                converged = True
                break
    if not decreases:
        comp, comp_s, sign = kkt_residuals(p, x)
        converged = comp_s <= kkt_tol and sign <= kkt_tol
    sol = LcpSolution(x, it, comp, sign, converged, comp_s, decreases)
    if polish and n:
        _polish(p, sol, kkt_tol, full_solver)
    return sol


def _polish(p: LcpProblem, sol: LcpSolution, kkt_tol: float, full_solver=None) -> None:
    x = sol.x
    r = p.residual(x)
    scale = 1.0 + np.abs(np.where(np.isfinite(p.upper), p.upper, 0.0))
    active = (x >= p.upper - 1e-9 * scale) & (r < 0.0)
    free = ~active
    y = np.where(active, p.upper, x)
    if free.any():
        if not active.any() and full_solver is not None:
            y = full_solver(p.q)
        else:
            Hff = p.H[free][:, free].tocsc()
            rhs = p.q[free] - p.H[free][:, active] @ p.upper[active]
            y[free] = spla.splu(Hff).solve(rhs)
    if np.any(y[free] > p.upper[free]):
        # the frozen active set was wrong; keep the PSOR iterate
        return
    y = np.minimum(y, p.upper)
    comp, comp_s, sign = kkt_residuals(p, y)
    if max(comp_s, sign) <= max(sol.residual_complementarity_scaled, sol.residual_sign, kkt_tol):
        sol.x = y
        sol.residual_complementarity = comp
        sol.residual_complementarity_scaled = comp_s
        sol.residual_sign = sign
        sol.converged = comp_s <= kkt_tol and sign <= kkt_tol
        sol.polished = True


def solve_active_set_oracle(p: LcpProblem, tol: float = 1e-9) -> np.ndarray:
    """Enumerate all active sets of a small LCP and return the KKT point."""
    n = p.size
    if n > 15:
        raise ValueError(f"active-set enumeration limited to 15 unknowns, got {n}")
    H = p.H.toarray()
    q, u = p.q, p.upper
    scale = tol * (1.0 + np.abs(q).max(initial=0.0) + np.abs(H).max(initial=0.0)
                   * np.abs(np.where(np.isfinite(u), u, 0.0)).max(initial=0.0))
    finite = np.isfinite(u)
    for k in range(n + 1):
        for act in itertools.combinations(np.flatnonzero(finite), k):
            active = np.zeros(n, dtype=bool)
            active[list(act)] = True
            free = ~active
            x = np.where(active, u, 0.0)
            if free.any():
                rhs = q[free] - H[np.ix_(free, active)] @ u[active]
                x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
            r = H @ x - q
            if np.all(r[active] <= scale) and np.all(x[free] <= u[free] + scale):
                return x
    raise OracleError("no KKT-feasible active set found; check that H is SPD")


class SpdSolver:
    """Sparse LU factorisation of an SPD matrix, reused across right-hand sides."""

    def __init__(self, H, tol: float = 1e-10):
        self.H = sp.csr_matrix(H, dtype=float)
        self.tol = tol
        self._lu = spla.splu(self.H.tocsc()) if self.H.shape[0] else None

    def __call__(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros(0)
        x = self._lu.solve(rhs)
        norm = np.linalg.norm(rhs)
        res = np.linalg.norm(self.H @ x - rhs)
        if res > self.tol * max(norm, np.finfo(float).tiny):
            if norm == 0.0:
                return np.zeros_like(rhs)
            raise RuntimeError(f"SPD solve relative residual {res / norm:.3e} exceeds {self.tol:.1e}")
        return x


def solve_spd(H, rhs, tol: float = 1e-10) -> np.ndarray:
    return SpdSolver(H, tol)(rhs)
