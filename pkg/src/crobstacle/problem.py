"""Continuous problem data: diffusion tensors, reactions, obstacle, initial data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
ReactionFunc = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TensorField:
    """Symmetric 2x2 tensor field with eigenvalues declared in ``[d1, d2]``.

    ``func(x, y)`` takes arrays of shape (P,) and returns shape (P, 2, 2).
    """
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d1: float
    d2: float
    name: str = "tensor"

    def __post_init__(self):
        if not (0.0 < self.d1 <= self.d2):
            raise ValueError(f"need 0 < d1 <= d2, got d1={self.d1}, d2={self.d2}")

    def __call__(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.broadcast_to(self.func(x, y), (len(x), 2, 2))

    def check(self, points, rtol: float = 1e-12) -> None:
        """Verify symmetry and eigenvalue bounds at ``points`` (P, 2)."""
        D = self(points[:, 0], points[:, 1])
        if not np.allclose(D, np.swapaxes(D, 1, 2), rtol=0, atol=rtol * self.d2):
            raise ValueError(f"{self.name}: tensor is not symmetric")
        eig = np.linalg.eigvalsh(D)
        lo, hi = eig.min(), eig.max()
        slack = rtol * self.d2
        if lo < self.d1 - slack or hi > self.d2 + slack:
            raise ValueError(
                f"{self.name}: eigenvalues in [{lo:.6g}, {hi:.6g}] violate "
                f"declared bounds [{self.d1:.6g}, {self.d2:.6g}]")


def isotropic(c: float = 1.0) -> TensorField:
    mat = c * np.eye(2)
    return TensorField(lambda x, y: np.broadcast_to(mat, (len(x), 2, 2)), c, c, f"isotropic:{c:g}")


def identity() -> TensorField:
    return isotropic(1.0)


def diagonal(dx: float, dy: float) -> TensorField:
    mat = np.diag([dx, dy])
    return TensorField(lambda x, y: np.broadcast_to(mat, (len(x), 2, 2)),
                       min(dx, dy), max(dx, dy), f"diagonal:{dx:g},{dy:g}")


def smooth_isotropic(c: float = 1.0) -> TensorField:
    """``c (1 + 0.5 sin(pi x) sin(pi y)) I``: eigenvalues in [c, 1.5c]."""
    def func(x, y):
        s = c * (1.0 + 0.5 * np.sin(np.pi * x) * np.sin(np.pi * y))
        return s[:, None, None] * np.eye(2)
    return TensorField(func, c, 1.5 * c, f"smooth:{c:g}")


TENSOR_PRESETS = {
    "isotropic": (isotropic, 1),
    "diagonal": (diagonal, 2),
    "smooth": (smooth_isotropic, 1),
}


@dataclass(frozen=True)
class Reaction:
    """Vectorised reaction ``f(a, b)`` with a declared global Lipschitz constant."""
    func: ReactionFunc
    lipschitz: float
    name: str = "reaction"

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        return np.broadcast_to(self.func(a, np.asarray(b, dtype=float)), a.shape).astype(float)


def zero_reactions() -> tuple[Reaction, Reaction]:
    z = Reaction(lambda a, b: np.zeros_like(a), 0.0, "zero")
    return z, z


def linear_reactions(alpha, beta, gamma, delta) -> tuple[Reaction, Reaction]:
    """F = alpha*b - beta*a,  G = gamma*a - delta*b."""
    F = Reaction(lambda a, b: alpha * b - beta * a, float(np.hypot(alpha, beta)),
                 f"linear-F:{alpha:g},{beta:g}")
    G = Reaction(lambda a, b: gamma * a - delta * b, float(np.hypot(gamma, delta)),
                 f"linear-G:{gamma:g},{delta:g}")
    return F, G


def clamped_monod_reactions(mu_a, mu_b, k, decay_a, decay_b, cap) -> tuple[Reaction, Reaction]:
    """Monod growth of A on substrate B, with arguments clamped to ``[0, cap]``.

    F = mu_a * c(a) * c(b) / (k + c(b)) - decay_a * a
    G = -mu_b * c(a) * c(b) / (k + c(b)) - decay_b * b

    Partial-derivative bounds of the Monod term: ``cap/(k+cap)`` in a and
    ``cap/k`` in b; the declared constants are the Euclidean norms of the
    resulting gradient bounds.
    """
    if k <= 0 or cap <= 0:
        raise ValueError("clamped-monod needs k > 0 and cap > 0")

    def monod(a, b):
        ca = np.clip(a, 0.0, cap)
        cb = np.clip(b, 0.0, cap)
        return ca * cb / (k + cb)

    da = cap / (k + cap)
    db = cap / k
    F = Reaction(lambda a, b: mu_a * monod(a, b) - decay_a * a,
                 float(np.hypot(abs(mu_a) * da + abs(decay_a), abs(mu_a) * db)),
                 "clamped-monod-F")
    G = Reaction(lambda a, b: -mu_b * monod(a, b) - decay_b * b,
                 float(np.hypot(abs(mu_b) * da, abs(mu_b) * db + abs(decay_b))),
                 "clamped-monod-G")
    return F, G


REACTION_PRESETS = {
    "zero": (zero_reactions, 0),
    "linear": (linear_reactions, 4),
    "clamped-monod": (clamped_monod_reactions, 6),
}


def const_field(c: float = 0.0) -> ScalarField:
    return lambda x, y: np.full(np.shape(x), float(c))


def bump_field(amp: float = 1.0) -> ScalarField:
    """``amp * 16 x(1-x) y(1-y)``, peak ``amp`` at the centre."""
    return lambda x, y: amp * 16.0 * x * (1.0 - x) * y * (1.0 - y)


def sine_field(amp: float = 1.0) -> ScalarField:
    return lambda x, y: amp * np.sin(np.pi * x) * np.sin(np.pi * y)


def dome_field(top: float = 1.0, slope: float = 1.0) -> ScalarField:
    """``top - slope*((x-1/2)^2 + (y-1/2)^2)``; non-negative on the unit square when top >= slope/2."""
    return lambda x, y: top - slope * ((x - 0.5) ** 2 + (y - 0.5) ** 2)


FIELD_PRESETS = {
    "zero": (lambda: const_field(0.0), 0),
    "const": (const_field, 1),
    "bump": (bump_field, 1),
    "sine": (sine_field, 1),
    "dome": (dome_field, 2),
}


def parse_preset(text: str, table: dict, what: str):
    """Build a preset from ``name`` or ``name:p1,p2,...``."""
    name, _, params = text.strip().partition(":")
    name = name.strip()
    if name not in table:
        raise ValueError(f"unknown {what} preset {name!r}; choose from {sorted(table)}")
    factory, arity = table[name]
    values = [float(p) for p in params.split(",") if p.strip()] if params else []
    if len(values) != arity:
        raise ValueError(f"{what} preset {name!r} takes {arity} parameter(s), got {len(values)}")
    return factory(*values)


@dataclass
class ProblemSpec:
    T: float
    diff_a: TensorField
    diff_b: TensorField
    reaction_f: Reaction
    reaction_g: Reaction
    obstacle: ScalarField | None
    a_ini: ScalarField
    b_ini: ScalarField
    lipschitz_box: float = 10.0
    names: dict = field(default_factory=dict)

    @property
    def M(self) -> float:
        return max(self.reaction_f.lipschitz, self.reaction_g.lipschitz)

    @property
    def C0(self) -> float:
        return float(max(self.reaction_f(0.0, 0.0), self.reaction_g(0.0, 0.0)))

    def max_time_step(self) -> float:
        """Upper bound on admissible steps from the energy-estimate restriction dt < 1/(2M)."""
        return np.inf if self.M == 0 else 1.0 / (2.0 * self.M)

    def validate(self, mesh=None, seed: int = 0, samples: int = 1000) -> None:
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        rng = np.random.default_rng(seed)
        box = self.lipschitz_box
        for r in (self.reaction_f, self.reaction_g):
            p = rng.uniform(-box, box, size=(samples, 2))
            q = rng.uniform(-box, box, size=(samples, 2))
            dist = np.linalg.norm(p - q, axis=1)
            diff = np.abs(r(p[:, 0], p[:, 1]) - r(q[:, 0], q[:, 1]))
            est = float(np.max(diff / dist))
            if est > 1.01 * r.lipschitz + 1e-14:
                raise ValueError(
                    f"{r.name}: sampled Lipschitz estimate {est:.6g} exceeds declared {r.lipschitz:.6g}")
        if mesh is not None and self.obstacle is not None:
            mid = mesh.edge_midpoints
            gap = self.a_ini(mid[:, 0], mid[:, 1]) - self.obstacle(mid[:, 0], mid[:, 1])
            if np.any(gap > 1e-12):
                raise ValueError(
                    f"initial A exceeds the obstacle at an edge midpoint (by {gap.max():.3e})")
