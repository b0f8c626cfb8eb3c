"""Numerical estimators for the gradient-discretisation properties.

* coercivity: discrete Poincare constant ``max |Pi v| / |grad_D v|``
* consistency: best approximation of a target field, with or without the obstacle
* limit-conformity: defect of the discrete Stokes formula
* dual norm of reconstructed fields, and the energy quantities of a trajectory

All suprema over the ``|grad_D .|`` unit sphere are evaluated in closed form
through solves with the identity-tensor stiffness matrix.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .assembly import assemble_mass, assemble_stiffness, identity_stiffness, mass_diagonal
from .discretisation import GradientDiscretisation, build_cr, interpolate_initial
from .quadrature import TRI7_BARY, TRI7_WEIGHTS, triangle_points
from .vi_solver import LcpProblem, SpdSolver, solve_psor


class CertificateViolation(AssertionError):
    """A supplied candidate beats a computed min/sup."""


def _k1_solver(gd) -> SpdSolver:
    s = gd._cache.get("K1_solver")
    if s is None:
        s = gd._cache.setdefault("K1_solver", SpdSolver(identity_stiffness(gd), tol=1e-9))
    return s


def _mass(gd) -> np.ndarray:
    m = gd._cache.get("mass")
    if m is None:
        m = gd._cache.setdefault("mass", mass_diagonal(gd))
    return m


class CoercivityEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def rayleigh_quotient(gd: GradientDiscretisation, v) -> float:
    """``|Pi_D v|_L2 / |grad_D v|_L2``."""
    v = np.asarray(v, dtype=float)
    num = v @ (_mass(gd) * v)
    den = v @ (identity_stiffness(gd) @ v)
    return float(np.sqrt(num / den))


def estimate_coercivity(gd: GradientDiscretisation, tol: float = 1e-8, max_iter: int = 2000,
                        candidates=()) -> CoercivityEstimate:
    """Power iteration on ``K1^{-1} M``; returns ``sqrt(lambda_max)``."""
    m = _mass(gd)
    K = identity_stiffness(gd)
    solve = _k1_solver(gd)
    v = np.ones(gd.n_dofs)
    lam_old = 0.0
    lam = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = solve(m * v)
        v = w / np.sqrt(w @ (m * w))
        lam = float((v @ (m * v)) / (v @ (K @ v)))
        if abs(lam - lam_old) <= tol * lam:
            converged = True
            break
        lam_old = lam
    value = float(np.sqrt(lam))
    for c in candidates:
        rq = rayleigh_quotient(gd, c)
        if rq > value * (1.0 + 1e-8):
            raise CertificateViolation(f"candidate Rayleigh quotient {rq} exceeds C_D = {value}")
    return CoercivityEstimate(value, converged, it)


def _target_terms(gd, w, grad_w):
    """Quadrature data of the target: values and gradients at 7 points per cell."""
    pts = triangle_points(gd.mesh)
    x, y = pts[..., 0], pts[..., 1]
    wv = np.broadcast_to(w(x, y), x.shape)
    gx, gy = grad_w(x, y)
    gw = np.stack([np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)], axis=-1)
    return wv, gw


def consistency_functional(gd: GradientDiscretisation, w, grad_w, phi, boundary=None) -> float:
    """``sqrt(|Pi phi - w|^2 + |grad_D phi - grad w|^2)`` by 7-point quadrature.

    ``boundary`` gives values on boundary edges (default zero).
    """
    full = gd.full(phi)
    if boundary is not None:
        bnd = gd.mesh.boundary
        full[bnd] = boundary
    wv, gw = _target_terms(gd, w, grad_w)
    local = full[gd.mesh.cell_edges]
    vals = local @ (1.0 - 2.0 * TRI7_BARY).T
    grads = np.einsum("ci,cid->cd", local, gd.basis_gradients)
    err = (vals - wv) ** 2 + np.sum((grads[:, None, :] - gw) ** 2, axis=-1)
    return float(np.sqrt(np.sum(gd.mesh.areas * (err @ TRI7_WEIGHTS))))


def estimate_consistency(gd: GradientDiscretisation, w, grad_w, constrained: bool = False,
                         omega: float = 1.5, tol: float = 1e-12, candidates=()) -> float:
    """Best approximation error of ``w`` by discrete fields.

    Minimises the squared functional ``|Pi phi - w|^2 + |grad_D phi - grad w|^2``
    over interior DOFs (within the obstacle set if ``constrained``) and returns
    its square root.  The sum of the two norms lies between this value and
    ``sqrt(2)`` times it.  Boundary edges take the values ``w(x_sigma)``, which
    vanish for targets in H^1_0.
    """
    mesh = gd.mesh
    bnd_edges = np.flatnonzero(mesh.boundary)
    mid = mesh.edge_midpoints[bnd_edges]
    g = np.array(np.broadcast_to(w(mid[:, 0], mid[:, 1]), (len(bnd_edges),)), dtype=float)

    wv, gw = _target_terms(gd, w, grad_w)
    if not (np.all(np.isfinite(wv)) and np.all(np.isfinite(gw))):
        raise ValueError("target field is not finite at quadrature points")
    basis = 1.0 - 2.0 * TRI7_BARY                        # (Q, 3)
    wa = mesh.areas[:, None] * TRI7_WEIGHTS[None, :]     # (C, Q)
    loc_val = np.einsum("cq,cq,qi->ci", wa, wv, basis)
    loc_grad = np.einsum("cq,cqd,cid->ci", wa, gw, gd.basis_gradients)
    rhs_full = np.bincount(mesh.cell_edges.ravel(), weights=(loc_val + loc_grad).ravel(),
                           minlength=mesh.n_edges)

    key = "H_full"
    H_full = gd._cache.get(key)
    if H_full is None:
        H_full = gd._cache.setdefault(key, (assemble_mass(gd, full=True)
                                            + assemble_stiffness(gd, full=True)).tocsr())
    dofs, bnd = gd.dof_edges, bnd_edges
    H = H_full[dofs][:, dofs]
    rhs = rhs_full[dofs] - H_full[dofs][:, bnd] @ g

    if not constrained:
        phi = SpdSolver(H, tol=1e-9)(rhs) if gd.n_dofs else np.zeros(0)
    else:
        x0 = interpolate_initial(gd, w, clamp_to_obstacle=True)
        lcp = LcpProblem(H, rhs, gd.obstacle_dofs)
        sol = solve_psor(lcp, x0=x0, omega=omega, tol=tol, max_iter=100000,
                         kkt_tol=1e-10, polish=True)
        phi = sol.x
    value = consistency_functional(gd, w, grad_w, phi, boundary=g)
    for c in candidates:
        c = np.asarray(c, dtype=float)
        if constrained and np.any(c > gd.obstacle_dofs):
            raise ValueError("candidate is not in the discrete constraint set")
        cv = consistency_functional(gd, w, grad_w, c, boundary=g)
        if value > cv * (1.0 + 1e-8) + 1e-14:
            raise CertificateViolation(f"candidate value {cv} is below the computed minimum {value}")
    return value


def limit_conformity_functional(gd: GradientDiscretisation, psi, div_psi) -> np.ndarray:
    """``b_s = int (grad e^s . psi + e^s div psi)`` per DOF, 7-point quadrature."""
    mesh = gd.mesh
    pts = triangle_points(mesh)
    x, y = pts[..., 0], pts[..., 1]
    px, py = psi(x, y)
    pv = np.stack([np.broadcast_to(px, x.shape), np.broadcast_to(py, x.shape)], axis=-1)
    dv = np.broadcast_to(div_psi(x, y), x.shape)
    wa = mesh.areas[:, None] * TRI7_WEIGHTS[None, :]
    basis = 1.0 - 2.0 * TRI7_BARY
    loc = (np.einsum("cq,cqd,cid->ci", wa, pv, gd.basis_gradients)
           + np.einsum("cq,cq,qi->ci", wa, dv, basis))
    idx = gd.cell_dofs
    keep = idx >= 0
    return np.bincount(idx[keep], weights=loc[keep], minlength=gd.n_dofs)


def estimate_limit_conformity(gd: GradientDiscretisation, psi, div_psi, candidates=()) -> float:
    """``sup_phi |b . phi| / |grad_D phi| = sqrt(b^T K1^{-1} b)``."""
    b = limit_conformity_functional(gd, psi, div_psi)
    if not np.any(b):
        value = 0.0
    else:
        z = _k1_solver(gd)(b)
        value = float(np.sqrt(max(b @ z, 0.0)))
    K = identity_stiffness(gd)
    for c in candidates:
        c = np.asarray(c, dtype=float)
        ratio = abs(b @ c) / np.sqrt(c @ (K @ c))
        if ratio > value * (1.0 + 1e-8) + 1e-14:
            raise CertificateViolation(f"candidate ratio {ratio} exceeds W_D = {value}")
    return value


def dual_norm(gd: GradientDiscretisation, u, candidates=()) -> float:
    """``sup { int Pi u Pi psi : |grad_D psi| = 1 } = sqrt(b^T K1^{-1} b)``, ``b = M u``."""
    u = np.asarray(u, dtype=float)
    b = _mass(gd) * u
    if not np.any(b):
        value = 0.0
    else:
        value = float(np.sqrt(max(b @ _k1_solver(gd)(b), 0.0)))
    K = identity_stiffness(gd)
    for c in candidates:
        c = np.asarray(c, dtype=float)
        pairing = abs(b @ c) / np.sqrt(c @ (K @ c))
        if pairing > value * (1.0 + 1e-8) + 1e-14:
            raise CertificateViolation(f"candidate pairing {pairing} exceeds the dual norm {value}")
    return value


@dataclass
class EnergyReport:
    dA_L2L2: float
    gradA_LinfL2: float
    PiB_LinfL2: float
    gradB_L2L2: float
    dual_dB_integral: float
    max_residual_sign: float = 0.0
    max_residual_complementarity: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def energy_report(gd: GradientDiscretisation, trajectory, spec=None) -> EnergyReport:
    """Energy-estimate norms of a trajectory.

    Time integrals are step-weighted sums over levels 1..N; the L-infinity in
    time norms take the max over all levels 0..N.
    """
    m = _mass(gd)
    K = identity_stiffness(gd)
    A = np.asarray(trajectory.a_levels)
    B = np.asarray(trajectory.b_levels)
    dt = gd.time_grid.steps
    if len(A) != len(dt) + 1:
        raise ValueError("trajectory length does not match the time grid")
    dA = np.diff(A, axis=0) / dt[:, None]
    dB = np.diff(B, axis=0) / dt[:, None]
    dA_norm = np.sqrt(np.sum(dt * np.einsum("ni,i,ni->n", dA, m, dA)))
    gradA = np.sqrt(max(np.einsum("ni,ni->n", A, (K @ A.T).T).max(), 0.0))
    PiB = np.sqrt(np.einsum("ni,i,ni->n", B, m, B).max())
    gB = np.einsum("ni,ni->n", B[1:], (K @ B[1:].T).T)
    gradB = np.sqrt(max(np.sum(dt * gB), 0.0))
    dual = float(np.sum(dt * np.array([dual_norm(gd, d) ** 2 for d in dB])))
    reports = getattr(trajectory, "reports", [])
    sign = max((r.residual_sign for r in reports), default=0.0)
    comp = max((r.residual_complementarity for r in reports), default=0.0)
    return EnergyReport(float(dA_norm), float(gradA), float(PiB), float(gradB), dual, sign, comp)


@dataclass
class DiagnosticsReport:
    coercivity_CD: float | None = None
    consistency: dict = field(default_factory=dict)
    limit_conformity: dict = field(default_factory=dict)
    dual_norm_integral: float = 0.0
    energy_norms: dict = field(default_factory=dict)
    complementarity: dict = field(default_factory=dict)

    def rows(self, level) -> list[tuple[str, object, float]]:
        out = [] if self.coercivity_CD is None else [("coercivity_CD", level, self.coercivity_CD)]
        out += [(f"consistency:{k}", level, v) for k, v in self.consistency.items()]
        out += [(f"limit_conformity:{k}", level, v) for k, v in self.limit_conformity.items()]
        if self.energy_norms:
            out.append(("dual_norm_integral", level, self.dual_norm_integral))
            out += [(f"energy:{k}", level, v) for k, v in self.energy_norms.items()]
        out += [(f"complementarity:{k}", level, v) for k, v in self.complementarity.items()]
        return out

    def check(self) -> None:
        for name, _, value in self.rows(0):
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"diagnostic {name} = {value} is not a finite nonnegative number")


def write_report_csv(path, rows) -> None:
    """CSV with one metric per row: ``name, level, value``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "level", "value"])
        for name, level, value in rows:
            wr.writerow([name, level, f"{value:.12e}"])


def from_energy(report: EnergyReport) -> DiagnosticsReport:
    d = DiagnosticsReport()
    d.dual_norm_integral = report.dual_dB_integral
    d.energy_norms = {k: getattr(report, k) for k in
                      ("dA_L2L2", "gradA_LinfL2", "PiB_LinfL2", "gradB_L2L2")}
    d.complementarity = {"max_residual_sign": report.max_residual_sign,
                         "max_residual_complementarity": report.max_residual_complementarity}
    return d


def _sine(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _grad_sine(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


def _bump(x, y):
    return 16.0 * x * (1.0 - x) * y * (1.0 - y)


def _grad_bump(x, y):
    return 16.0 * (1.0 - 2.0 * x) * y * (1.0 - y), 16.0 * x * (1.0 - x) * (1.0 - 2.0 * y)


@dataclass(frozen=True)
class ConsistencyCase:
    name: str
    w: object
    grad_w: object
    constrained: bool = False
    obstacle: object = None
    kind: str = "smooth"        # "smooth": decay expected; "affine": exact


CONSISTENCY_BATTERY = (
    ConsistencyCase("affine", lambda x, y: 1.0 + 2.0 * x - 3.0 * y,
                    lambda x, y: (np.full(np.shape(x), 2.0), np.full(np.shape(x), -3.0)),
                    kind="affine"),
    ConsistencyCase("sine", _sine, _grad_sine),
    ConsistencyCase("bump", _bump, _grad_bump),
    ConsistencyCase("affine|chi=affine", lambda x, y: x + y,
                    lambda x, y: (np.ones(np.shape(x)), np.ones(np.shape(x))),
                    constrained=True, obstacle=lambda x, y: x + y, kind="affine"),
    ConsistencyCase("sine|chi=sine", _sine, _grad_sine, constrained=True, obstacle=_sine),
    ConsistencyCase("bump|chi=1", _bump, _grad_bump, constrained=True,
                    obstacle=lambda x, y: np.ones(np.shape(x))),
)


@dataclass(frozen=True)
class HdivCase:
    name: str
    psi: object
    div: object
    decays: bool = True


HDIV_BATTERY = (
    HdivCase("constant", lambda x, y: (np.ones(np.shape(x)), 2.0 * np.ones(np.shape(x))),
             lambda x, y: np.zeros(np.shape(x)), decays=False),
    HdivCase("grad_sine", _grad_sine, lambda x, y: -2.0 * np.pi ** 2 * _sine(x, y)),
    HdivCase("rotational", lambda x, y: (np.sin(np.pi * y), x ** 2),
             lambda x, y: np.zeros(np.shape(x))),
    HdivCase("polynomial", lambda x, y: (x ** 2, x * y), lambda x, y: 3.0 * x),
)


def property_report(mesh, time_grid) -> DiagnosticsReport:
    """Coercivity plus the consistency and limit-conformity batteries on one mesh."""
    gd = build_cr(mesh, time_grid)
    rep = DiagnosticsReport()
    rep.coercivity_CD = estimate_coercivity(gd).value
    for case in CONSISTENCY_BATTERY:
        g = build_cr(mesh, time_grid, case.obstacle) if case.constrained else gd
        rep.consistency[case.name] = estimate_consistency(g, case.w, case.grad_w,
                                                          constrained=case.constrained)
    for case in HDIV_BATTERY:
        rep.limit_conformity[case.name] = estimate_limit_conformity(gd, case.psi, case.div)
    rep.check()
    return rep
