"""INI run configuration.

Every key is listed in ``SCHEMA``; unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass
from pathlib import Path

from .problem import (FIELD_PRESETS, REACTION_PRESETS, TENSOR_PRESETS, ProblemSpec,
                      parse_preset)
from .stepper import StepOptions


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (attribute, parser)
SCHEMA = {
    "mesh": {"n": ("n", int), "levels": ("levels", int)},
    "time": {"T": ("T", float), "steps": ("steps", int), "dt": ("dt", float)},
    "problem": {
        "diff_a": ("diff_a", str), "diff_b": ("diff_b", str),
        "reactions": ("reactions", str), "obstacle": ("obstacle", str),
        "a_ini": ("a_ini", str), "b_ini": ("b_ini", str),
        "lipschitz_box": ("lipschitz_box", float),
    },
    "solver": {
        "picard_tol": ("picard_tol", float), "picard_max": ("picard_max", int),
        "omega": ("omega", float), "psor_tol": ("psor_tol", float),
        "psor_max_iter": ("psor_max_iter", int), "kkt_tol": ("kkt_tol", float),
        "damping": ("damping", float), "polish": ("polish", _bool),
        "check_tol": ("check_tol", float),
    },
    "output": {"snapshot_every": ("snapshot_every", int), "vtk": ("vtk", _bool)},
    "run": {"seed": ("seed", int)},
}


@dataclass
class RunConfig:
    n: int = 8
    levels: int = 3
    T: float = 0.5
    steps: int = 16
    dt: float | None = None
    diff_a: str = "isotropic:1"
    diff_b: str = "isotropic:1"
    reactions: str = "zero"
    obstacle: str = "const:1e6"
    a_ini: str = "zero"
    b_ini: str = "zero"
    lipschitz_box: float = 10.0
    picard_tol: float = 1e-10
    picard_max: int = 50
    omega: float = 1.5
    psor_tol: float = 1e-10
    psor_max_iter: int = 20000
    kkt_tol: float = 1e-9
    damping: float = 1.0
    polish: bool = True
    check_tol: float = 1e-8
    snapshot_every: int = 1
    vtk: bool = True
    seed: int = 0
    source: str = "<defaults>"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        return cls.from_string(text, source=str(path))

    @classmethod
    def from_string(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                           interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        lines = _key_lines(text)
        cfg = cls(source=source)
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lines.get((section, None), '?')}: "
                                  f"unknown section [{section}]")
            for key, raw in parser.items(section):
                where = f"{source}:{lines.get((section, key), '?')}"
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{where}: unknown key {key!r} in [{section}]; "
                                      f"allowed: {', '.join(SCHEMA[section])}")
                attr, conv = SCHEMA[section][key]
                try:
                    setattr(cfg, attr, conv(raw))
                except ValueError as exc:
                    raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        try:
            cfg.validate()
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        return cfg

    def base_steps(self) -> int:
        if self.dt is not None:
            steps = round(self.T / self.dt)
            if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * self.T:
                raise ConfigError(f"dt = {self.dt} does not divide T = {self.T}")
            return steps
        return self.steps

    def problem(self) -> ProblemSpec:
        try:
            F, G = parse_preset(self.reactions, REACTION_PRESETS, "reactions")
            return ProblemSpec(
                T=self.T,
                diff_a=parse_preset(self.diff_a, TENSOR_PRESETS, "tensor"),
                diff_b=parse_preset(self.diff_b, TENSOR_PRESETS, "tensor"),
                reaction_f=F, reaction_g=G,
                obstacle=parse_preset(self.obstacle, FIELD_PRESETS, "field"),
                a_ini=parse_preset(self.a_ini, FIELD_PRESETS, "field"),
                b_ini=parse_preset(self.b_ini, FIELD_PRESETS, "field"),
                lipschitz_box=self.lipschitz_box,
                names={k: getattr(self, k) for k in
                       ("diff_a", "diff_b", "reactions", "obstacle", "a_ini", "b_ini")},
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def step_options(self) -> StepOptions:
        try:
            return StepOptions(picard_tol=self.picard_tol, picard_max=self.picard_max,
                               omega=self.omega, psor_tol=self.psor_tol,
                               psor_max_iter=self.psor_max_iter, kkt_tol=self.kkt_tol,
                               damping=self.damping, polish=self.polish)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("mesh n must be >= 1")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        for name in ("picard_tol", "psor_tol", "kkt_tol", "check_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tolerance {name} must be > 0")
        if not 0 < self.omega < 2:
            raise ConfigError("omega must lie in (0, 2)")
        steps = self.base_steps()
        spec = self.problem()
        self.step_options()
        dt = self.T / steps
        if spec.M > 0 and dt >= 1.0 / (2.0 * spec.M):
            raise ConfigError(
                f"time step {dt:.6g} violates the energy-estimate restriction "
                f"dt < 1/(2M) = {1.0 / (2.0 * spec.M):.6g} for reaction Lipschitz constant "
                f"M = {spec.M:.6g}; increase [time] steps")

    def resolved(self) -> dict:
        d = asdict(self)
        d["steps"] = self.base_steps()
        return d


def _key_lines(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    out = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), i)
            continue
        m = re.match(r"^([^=:;#\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip()), i)
    return out
