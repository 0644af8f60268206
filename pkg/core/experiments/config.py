# MixFlow - Ergodic variational flows for desk-scale inference
# Copyright (C) 2025 MixFlow contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Experiment configuration files
TOML (dotted keys or tables) or JSON with the same nesting, loaded into
frozen dataclasses and validated before any computation
"""
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import DEFAULT_MOMENTUM, DEFAULT_REPLICATES, DEFAULT_XI, MEANFIELD_BATCH, \
    MEANFIELD_STEP_SIZE, MEANFIELD_STEPS, logger
from core.errors import ConfigError
from core.flow.hamiltonian import REFRESH_FUNCTIONS
from core.flow.momentum import MomentumKind
from core.targets.dataset import Standardize
from core.targets.regression import REGRESSION_TARGETS
from core.targets.synthetic import SYNTHETIC_TARGETS

MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class TargetSpec:
    name: str = 'banana'
    dim: Optional[int] = None
    dataset: Optional[str] = None
    response: str = 'y'
    standardize: str = 'features'
    hyper: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ReferenceSpec:
    kind: str = 'fixed'
    mean: Any = 0.0
    scale: Any = 1.0
    fit_steps: int = MEANFIELD_STEPS
    fit_step_size: float = MEANFIELD_STEP_SIZE
    fit_batch: int = MEANFIELD_BATCH
    use_pseudotime: bool = True
    theta1: Any = None
    theta2: Any = None


@dataclass(frozen=True)
class FlowSpec:
    kind: str = 'hamiltonian'
    epsilon: Optional[float] = None
    epsilon_grid: List[float] = field(default_factory=list)
    leapfrogs: int = 10
    xi: Optional[float] = None
    n_steps: Optional[int] = None
    n_grid: List[int] = field(default_factory=list)
    momentum: str = DEFAULT_MOMENTUM
    burn_in: List[int] = field(default_factory=list)
    refresh: str = 'default'


@dataclass(frozen=True)
class DiagnosticsSpec:
    ksd: bool = False
    ksd_samples: int = 1000
    n_samples: int = 1000
    stability_grid: List[int] = field(default_factory=lambda: [0, 10, 50, 100])
    stability_draws: int = 100
    ess: bool = True
    compare_budget: Optional[int] = None
    compare_trials: int = 200


@dataclass(frozen=True)
class ReplicationSpec:
    seed: Optional[int] = None
    replicates: int = DEFAULT_REPLICATES


@dataclass(frozen=True)
class OutputSpec:
    dir: str = 'results'


@dataclass(frozen=True)
class DensitySpec:
    points: Optional[str] = None


SECTIONS = {
    'target': TargetSpec,
    'reference': ReferenceSpec,
    'flow': FlowSpec,
    'diagnostics': DiagnosticsSpec,
    'replication': ReplicationSpec,
    'output': OutputSpec,
    'density': DensitySpec,
}

# sections written by the tools themselves and ignored on load
IGNORED_SECTIONS = ('meta',)


@dataclass(frozen=True)
class ExperimentConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    replication: ReplicationSpec = field(default_factory=ReplicationSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    density: DensitySpec = field(default_factory=DensitySpec)

    @property
    def seed(self) -> int:
        return self.replication.seed

    @property
    def xi(self) -> float:
        if self.flow.xi is not None:
            return self.flow.xi
        return DEFAULT_XI if self.reference.use_pseudotime else 0.0

    @property
    def epsilon_grid(self) -> List[float]:
        return list(self.flow.epsilon_grid) or ([self.flow.epsilon] if self.flow.epsilon is not None else [])

    @property
    def n_grid(self) -> List[int]:
        return list(self.flow.n_grid) or ([self.flow.n_steps] if self.flow.n_steps is not None else [])

    def with_seed(self, seed: Optional[int]) -> 'ExperimentConfig':
        """Apply a seed override; the result must carry a seed"""
        cfg = self if seed is None else replace(self, replication=replace(self.replication, seed=seed))
        return validate(cfg, require_seed=True)

    def with_output(self, out_dir: Optional[str]) -> 'ExperimentConfig':
        if out_dir is None:
            return self
        return replace(self, output=OutputSpec(str(out_dir)))

    def to_dict(self) -> Dict[str, Any]:
        """Nested plain dict; fields left at None are dropped so the dict loads back unchanged"""
        result = {}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            result[name] = {k: v for k, v in section.items() if v is not None}
        return result

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(raw, dict):
            raise ConfigError("Configuration must be a table of sections")
        sections = {}
        for name, values in raw.items():
            if name in IGNORED_SECTIONS:
                continue
            spec_cls = SECTIONS.get(name)
            if spec_cls is None:
                raise ConfigError(f"Unknown configuration section: {name}")
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{name}' must be a table")
            known = {f.name for f in fields(spec_cls)}
            unknown = sorted(set(values) - known)
            if unknown:
                raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
            sections[name] = spec_cls(**values)
        return validate(cls(**sections), require_seed=False)


# ==========
# VALIDATION
# ==========

def _check(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)) and math.isfinite(value)


def _real_vector(value, name: str):
    values = value if isinstance(value, list) else [value]
    _check(len(values) > 0 and all(_is_real(v) for v in values), f"{name} must be a finite number or list")


def _real_matrix(value, name: str):
    """A number, a list, or a list of equal-length rows"""
    if isinstance(value, list) and value and all(isinstance(row, list) for row in value):
        _check(all(len(row) == len(value) for row in value), f"{name} must be a square matrix")
        for row in value:
            _real_vector(row, name)
    else:
        _real_vector(value, name)


def validate(cfg: ExperimentConfig, require_seed: bool = True) -> ExperimentConfig:
    """
    Check every field of a configuration

    A file may leave replication.seed out when the seed comes from the
    command line; with_seed checks it again with require_seed set.

    Raises:
        ConfigError: On the first invalid field
    """
    t, r, f, d, rep = cfg.target, cfg.reference, cfg.flow, cfg.diagnostics, cfg.replication

    _check(t.name in SYNTHETIC_TARGETS or t.name in REGRESSION_TARGETS, f"Unknown target name: {t.name}")
    _check(t.dim is None or (_is_int(t.dim) and t.dim >= 1), "target.dim must be a positive integer")
    if t.name in REGRESSION_TARGETS:
        _check(isinstance(t.dataset, str) and t.dataset != '', f"target.dataset is required for {t.name}")
    _check(t.standardize in {s.value for s in Standardize}, f"Unknown target.standardize: {t.standardize}")
    _check(isinstance(t.hyper, dict), "target.hyper must be a table")

    _check(r.kind in ('fixed', 'meanfield'), f"reference.kind must be fixed or meanfield, got {r.kind}")
    _real_vector(r.mean, 'reference.mean')
    _real_vector(r.scale, 'reference.scale')
    scales = r.scale if isinstance(r.scale, list) else [r.scale]
    _check(all(s > 0 for s in scales), "reference.scale must be positive")
    _check(_is_int(r.fit_steps) and r.fit_steps >= 0, "reference.fit_steps must be a non-negative integer")
    _check(_is_real(r.fit_step_size) and r.fit_step_size > 0, "reference.fit_step_size must be positive")
    _check(_is_int(r.fit_batch) and r.fit_batch >= 1, "reference.fit_batch must be a positive integer")
    _check(isinstance(r.use_pseudotime, bool), "reference.use_pseudotime must be true or false")
    if r.theta1 is not None:
        _real_matrix(r.theta1, 'reference.theta1')
    if r.theta2 is not None:
        _real_vector(r.theta2, 'reference.theta2')
    _check(r.kind == 'fixed' or (r.theta1 is None and r.theta2 is None),
           "reference.theta1 and reference.theta2 apply to fixed references only")

    _check(f.kind in ('hamiltonian', 'identity'), f"flow.kind must be hamiltonian or identity, got {f.kind}")
    _check(f.epsilon is None or (_is_real(f.epsilon) and f.epsilon > 0), "flow.epsilon must be positive")
    _check(isinstance(f.epsilon_grid, list) and all(_is_real(e) and e > 0 for e in f.epsilon_grid),
           "flow.epsilon_grid must list positive step sizes")
    _check(_is_int(f.leapfrogs) and f.leapfrogs >= 1, "flow.leapfrogs must be a positive integer")
    _check(f.xi is None or _is_real(f.xi), "flow.xi must be a finite number")
    _check(f.n_steps is None or (_is_int(f.n_steps) and f.n_steps >= 1), "flow.n_steps must be >= 1")
    _check(isinstance(f.n_grid, list) and all(_is_int(n) and n >= 1 for n in f.n_grid),
           "flow.n_grid must list flow lengths >= 1")
    _check(isinstance(f.burn_in, list) and all(_is_int(m) and m >= 0 for m in f.burn_in),
           "flow.burn_in must list non-negative integers")
    if f.burn_in and f.n_steps is not None:
        _check(max(f.burn_in) < f.n_steps, "every flow.burn_in value must be below flow.n_steps")
    _check(f.momentum in {k.value for k in MomentumKind}, f"Unknown flow.momentum: {f.momentum}")
    _check(f.refresh in REFRESH_FUNCTIONS, f"Unknown flow.refresh: {f.refresh}")
    if not r.use_pseudotime:
        _check(cfg.xi == 0, "flow.xi must be 0 when reference.use_pseudotime is false")

    _check(isinstance(d.ksd, bool) and isinstance(d.ess, bool), "diagnostics.ksd and diagnostics.ess are booleans")
    _check(_is_int(d.ksd_samples) and (d.ksd_samples >= 1 or not d.ksd),
           "diagnostics.ksd_samples must be >= 1 when KSD is requested")
    _check(_is_int(d.n_samples) and d.n_samples >= 1, "diagnostics.n_samples must be >= 1")
    _check(isinstance(d.stability_grid, list) and len(d.stability_grid) > 0
           and all(_is_int(k) and k >= 0 for k in d.stability_grid)
           and d.stability_grid == sorted(d.stability_grid),
           "diagnostics.stability_grid must be a non-empty ascending list of K >= 0")
    _check(_is_int(d.stability_draws) and d.stability_draws >= 1, "diagnostics.stability_draws must be >= 1")
    _check(d.compare_budget is None or (_is_int(d.compare_budget) and d.compare_budget >= 1),
           "diagnostics.compare_budget must be a positive integer")
    _check(_is_int(d.compare_trials) and d.compare_trials >= 2, "diagnostics.compare_trials must be >= 2")

    _check(rep.seed is not None or not require_seed, "replication.seed is required")
    _check(rep.seed is None or (_is_int(rep.seed) and 0 <= rep.seed <= MAX_SEED),
           "replication.seed must be an unsigned 64-bit integer")
    _check(_is_int(rep.replicates) and rep.replicates >= 1, "replication.replicates must be >= 1")
    _check(isinstance(cfg.output.dir, str) and cfg.output.dir != '', "output.dir must be a path")
    _check(cfg.density.points is None or isinstance(cfg.density.points, str), "density.points must be a path")
    return cfg


def require_sweep(cfg: ExperimentConfig):
    _check(len(cfg.epsilon_grid) > 0, "sweep needs flow.epsilon_grid (or flow.epsilon)")
    _check(len(cfg.n_grid) > 0, "sweep needs flow.n_grid (or flow.n_steps)")


def require_fixed_flow(cfg: ExperimentConfig):
    if cfg.flow.kind == 'hamiltonian':
        _check(cfg.flow.epsilon is not None, "flow.epsilon is required for this command")
    _check(cfg.flow.n_steps is not None, "flow.n_steps is required for this command")


def load_config(path) -> ExperimentConfig:
    """
    Read a TOML or JSON configuration file

    JSON is detected by the .json suffix; anything else is read as TOML.

    Raises:
        ConfigError: Unparseable file or invalid contents
        OSError: File cannot be read
    """
    path = Path(path)
    with open(path, 'rb') as fh:
        content = fh.read()
    try:
        if path.suffix.lower() == '.json':
            raw = json.loads(content.decode('utf-8'))
        else:
            raw = tomllib.loads(content.decode('utf-8'))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot parse configuration {path}: {e}")
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration {path}: {e}")
    logger.debug(f"Loaded configuration {path}")
    return cfg


def describe_keys() -> str:
    """One line per section listing its keys and defaults, for --help"""
    lines = []
    for name, spec_cls in SECTIONS.items():
        defaults = spec_cls()
        keys = ', '.join(f"{f.name}={getattr(defaults, f.name)!r}" for f in fields(spec_cls))
        lines.append(f"[{name}] {keys}")
    return '\n'.join(lines)
