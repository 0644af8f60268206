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
Experiment commands for MixFlow
Builds targets, references and flows from an ExperimentConfig and writes
plot-ready result files
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config import KSD_BETA, KSD_C, VERSION, WORKERS, logger
from core.diagnostics.ess import ess_per_coordinate
from core.diagnostics.ksd import ksd_imq
from core.diagnostics.stability import stability_profile
from core.diagnostics.variance import compare_estimators
from core.errors import ConfigError, DataFormatError, DegenerateInputError, NumericalDivergenceError
from core.experiments.config import ExperimentConfig, require_fixed_flow, require_sweep
from core.file_utils import OutputSession
from core.flow.hamiltonian import REFRESH_FUNCTIONS, HamFlowParams, HamiltonianFlow
from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState
from core.flow.transform import FlowTransform, IdentityTransform
from core.mixflow import MixFlow, elbo_vs_burnin, estimate_elbo_replicated, log_density, replicate_streams, sample
from core.targets.augmented import augment_target
from core.targets.base import TargetModel
from core.targets.dataset import load_dataset
from core.targets.meanfield import fit_meanfield
from core.targets.reference import AugmentedReference
from core.targets.regression import REGRESSION_TARGETS, regression_target
from core.targets.synthetic import synthetic_target

# stream ids for the single-purpose generators default_rng([seed, id])
STREAMS = {
    'fit': 1001,
    'samples': 1002,
    'ksd': 1003,
    'stability': 1004,
    'burnin': 1005,
    'ess': 1006,
    'compare': 1007,
}


def stream(cfg: ExperimentConfig, purpose: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, STREAMS[purpose]])


# ========
# BUILDERS
# ========

@dataclass
class Experiment:
    """Everything built from a configuration before any flow is run"""
    config: ExperimentConfig
    target: TargetModel
    momentum: MomentumModel
    reference: AugmentedReference
    fit_trace: Optional[np.ndarray] = None

    @property
    def augmented(self):
        return augment_target(self.target, self.momentum)

    def transform(self, epsilon: Optional[float]) -> FlowTransform:
        f = self.config.flow
        if f.kind == 'identity':
            return IdentityTransform(self.target.dim)
        params = HamFlowParams(epsilon, f.leapfrogs, self.config.xi, REFRESH_FUNCTIONS[f.refresh])
        return HamiltonianFlow(params, self.target, self.momentum)

    def flow(self, epsilon: Optional[float], n_steps: int, burn_in: int = 0) -> MixFlow:
        return MixFlow(self.reference, self.transform(epsilon), n_steps, burn_in)


def build_target(cfg: ExperimentConfig) -> TargetModel:
    t = cfg.target
    if t.name in REGRESSION_TARGETS:
        data = load_dataset(t.dataset, t.response, t.standardize)
        return regression_target(t.name, data, **t.hyper)
    params = dict(t.hyper)
    if t.dim is not None:
        params['dim'] = t.dim
    return synthetic_target(t.name, **params)


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Target, momentum model and reference (fitted when reference.kind is meanfield)"""
    target = build_target(cfg)
    momentum = MomentumModel(cfg.flow.momentum, target.dim)
    r = cfg.reference
    if r.kind == 'meanfield':
        fit = fit_meanfield(target, r.fit_steps, r.fit_step_size, r.fit_batch, stream(cfg, 'fit'),
                            momentum=momentum, use_pseudotime=r.use_pseudotime)
        return Experiment(cfg, target, momentum, fit.reference, fit.elbo_trace)

    mean = np.broadcast_to(np.asarray(r.mean, dtype=float), (target.dim,))
    scale = np.broadcast_to(np.asarray(r.scale, dtype=float), (target.dim,))
    reference = AugmentedReference(mean, scale, momentum, theta1=r.theta1, theta2=r.theta2,
                                   use_pseudotime=r.use_pseudotime)
    return Experiment(cfg, target, momentum, reference)


def _shape_error(cfg: ExperimentConfig, e: ValueError) -> ConfigError:
    return ConfigError(f"Configuration does not fit target '{cfg.target.name}': {e}")


def _prepare(cfg: ExperimentConfig) -> Experiment:
    try:
        return build_experiment(cfg)
    except (DataFormatError, ConfigError):
        raise
    except ValueError as e:
        raise _shape_error(cfg, e)


def _state_columns(dim: int) -> List[str]:
    return ([f'x_{i + 1}' for i in range(dim)] + [f'rho_{i + 1}' for i in range(dim)] + ['u'])


def _state_rows(state: AugmentedState) -> List[list]:
    return state.to_array().tolist()


def _meta(cfg: ExperimentConfig, command: str, exp: Experiment) -> Dict:
    payload = cfg.to_dict()
    payload['meta'] = {
        'command': command,
        'seed': cfg.seed,
        'version': VERSION,
        'target_dim': exp.target.dim,
        'reference': exp.reference.to_dict(),
    }
    return payload


# ========
# COMMANDS
# ========

def cmd_sweep(cfg: ExperimentConfig) -> List[str]:
    """
    Replicated ELBO estimates over the (epsilon, N) grid

    A cell whose estimate diverges is kept with NaN values and status "diverged".
    Writes elbo_sweep.csv, elbo_summary.csv and best.json.
    """
    require_sweep(cfg)
    exp = _prepare(cfg)
    R = cfg.replication.replicates
    cells = [(eps, n) for eps in cfg.epsilon_grid for n in cfg.n_grid]
    logger.info(f"Sweep over {len(cells)} cells x {R} replicates on target {cfg.target.name}")

    def run_cell(index: int):
        eps, n = cells[index]
        try:
            est = estimate_elbo_replicated(exp.flow(eps, n), exp.augmented, cfg.seed, R, stream=(index,),
                                           workers=1)
            return est.values, est.mean, est.stderr, 'ok'
        except NumericalDivergenceError as e:
            logger.warning(f"Sweep cell epsilon={eps}, N={n} diverged: {e}")
            return np.full(R, np.nan), math.nan, math.nan, 'diverged'

    if WORKERS > 1:
        with ThreadPoolExecutor(max_workers=WORKERS) as pool:
            results = list(pool.map(run_cell, range(len(cells))))
    else:
        results = [run_cell(i) for i in range(len(cells))]

    raw_rows, summary_rows = [], []
    for (eps, n), (values, mean, stderr, status) in zip(cells, results):
        raw_rows.extend([float(eps), n, r, float(v)] for r, v in enumerate(values))
        summary_rows.append([float(eps), n, mean, stderr, status])

    ok = [row for row in summary_rows if row[4] == 'ok']
    best = max(ok, key=lambda row: row[2]) if ok else None
    best_payload = {'status': 'ok' if best else 'all_diverged', 'seed': cfg.seed, 'replicates': R}
    if best:
        best_payload.update({'epsilon': best[0], 'n_steps': best[1], 'elbo_mean': best[2], 'elbo_stderr': best[3]})

    with OutputSession(cfg.output.dir) as out:
        out.write_csv('sweep', ['epsilon', 'n_steps', 'replicate', 'elbo'], raw_rows)
        out.write_csv('sweep_summary', ['epsilon', 'n_steps', 'mean', 'stderr', 'status'], summary_rows)
        out.write_json('best', best_payload)
        return list(out.written)


def _elbo_vs_n(exp: Experiment) -> List[list]:
    cfg = exp.config
    rows = []
    for index, n in enumerate(exp.config.n_grid):
        try:
            est = estimate_elbo_replicated(exp.flow(cfg.flow.epsilon, n), exp.augmented, cfg.seed,
                                           cfg.replication.replicates, stream=(index,))
            rows.append([n, est.mean, est.stderr, 'ok'])
        except NumericalDivergenceError as e:
            logger.warning(f"ELBO at N={n} diverged: {e}")
            rows.append([n, math.nan, math.nan, 'diverged'])
    return rows


def _elbo_vs_burnin(exp: Experiment, flow: MixFlow) -> List[list]:
    cfg = exp.config
    values = cfg.flow.burn_in
    R = cfg.replication.replicates
    per_rep = np.empty((R, len(values)))
    for r, rng in enumerate(replicate_streams(cfg.seed, R, STREAMS['burnin'])):
        per_rep[r] = [v for _, v in elbo_vs_burnin(flow, exp.augmented, rng, values)]
    stderr = per_rep.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(len(values), np.nan)
    return [[m, float(per_rep[:, j].mean()), float(stderr[j])] for j, m in enumerate(values)]


def _ksd_payload(exp: Experiment, flow: MixFlow) -> Dict:
    n = exp.config.diagnostics.ksd_samples
    draws = sample(flow, stream(exp.config, 'ksd'), size=n)
    value = ksd_imq(draws.x, exp.target.grad_log_density, KSD_C, KSD_BETA)
    logger.info(f"KSD over {n} draws: {value:.6g}")
    return {'ksd': value, 'n_samples': n, 'c': KSD_C, 'beta': KSD_BETA, 'statistic': 'V'}


def _stability_rows(exp: Experiment, flow: MixFlow) -> List[list]:
    d = exp.config.diagnostics
    profile = stability_profile(flow, d.stability_grid, d.stability_draws, stream(exp.config, 'stability'))
    return [list(row.values()) for row in profile.to_rows()]


STABILITY_COLUMNS = ['k', 'forward_q25', 'forward_q50', 'forward_q75', 'backward_q25', 'backward_q50', 'backward_q75']


def cmd_run(cfg: ExperimentConfig) -> List[str]:
    """
    Full pipeline at a fixed (epsilon, L, N)

    Writes samples.csv, elbo_vs_n.csv, elbo_vs_burnin.csv (when burn-in values
    are listed), ksd.json (when enabled), stability.csv and run_meta.json.
    """
    require_fixed_flow(cfg)
    exp = _prepare(cfg)
    flow = exp.flow(cfg.flow.epsilon, cfg.flow.n_steps)
    logger.info(f"Run on target {cfg.target.name} (d={exp.target.dim}), N={flow.n_steps}, seed={cfg.seed}")

    with OutputSession(cfg.output.dir) as out:
        draws = sample(flow, stream(cfg, 'samples'), size=cfg.diagnostics.n_samples)
        out.write_csv('samples', _state_columns(exp.target.dim), _state_rows(draws))
        out.write_csv('elbo_vs_n', ['n_steps', 'mean', 'stderr', 'status'], _elbo_vs_n(exp))
        if cfg.flow.burn_in:
            out.write_csv('elbo_vs_burnin', ['burn_in', 'mean', 'stderr'], _elbo_vs_burnin(exp, flow))
        if cfg.diagnostics.ksd:
            out.write_json('ksd', _ksd_payload(exp, flow))
        out.write_csv('stability', STABILITY_COLUMNS, _stability_rows(exp, flow))
        out.write_json('meta', _meta(cfg, 'run', exp))
        return list(out.written)


def cmd_sample(cfg: ExperimentConfig) -> List[str]:
    """diagnostics.n_samples i.i.d. draws from the MixFlow into samples.csv"""
    require_fixed_flow(cfg)
    exp = _prepare(cfg)
    flow = exp.flow(cfg.flow.epsilon, cfg.flow.n_steps)
    with OutputSession(cfg.output.dir) as out:
        draws = sample(flow, stream(cfg, 'samples'), size=cfg.diagnostics.n_samples)
        out.write_csv('samples', _state_columns(exp.target.dim), _state_rows(draws))
        return list(out.written)


def _read_points(path: str, dim: int) -> AugmentedState:
    columns = _state_columns(dim)
    frame = pd.read_csv(path, float_precision='round_trip')
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataFormatError(f"Density points file {path} lacks column(s): {', '.join(missing)}", column=missing[0])
    values = frame[columns].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise DataFormatError(f"Invalid value in row {row + 1}, column '{columns[col]}' of {path}",
                              row=int(row) + 1, column=columns[col])
    return AugmentedState.from_array(values, dim)


def cmd_density(cfg: ExperimentConfig) -> List[str]:
    """log q and log p at density.points (or at fresh MixFlow draws) into density.csv"""
    require_fixed_flow(cfg)
    exp = _prepare(cfg)
    flow = exp.flow(cfg.flow.epsilon, cfg.flow.n_steps)
    if cfg.density.points:
        points = _read_points(cfg.density.points, exp.target.dim)
    else:
        points = sample(flow, stream(cfg, 'samples'), size=cfg.diagnostics.n_samples)
    log_q = log_density(flow, points)
    log_p = exp.augmented.log_density(points)
    rows = [row + [lq, lp] for row, lq, lp in zip(_state_rows(points), log_q.tolist(), log_p.tolist())]
    with OutputSession(cfg.output.dir) as out:
        out.write_csv('density', _state_columns(exp.target.dim) + ['log_q', 'log_p'], rows)
        return list(out.written)


def l1_norm(state: AugmentedState) -> np.ndarray:
    return np.sum(np.abs(state.x), axis=-1)


def cmd_diagnose(cfg: ExperimentConfig) -> List[str]:
    """
    KSD, ESS of the x-coordinates along one trajectory, estimator comparison
    and the stability profile; writes diagnostics.json and stability.csv
    """
    require_fixed_flow(cfg)
    exp = _prepare(cfg)
    flow = exp.flow(cfg.flow.epsilon, cfg.flow.n_steps)
    d = cfg.diagnostics
    report: Dict = {'seed': cfg.seed, 'n_steps': flow.n_steps, 'epsilon': cfg.flow.epsilon}

    with OutputSession(cfg.output.dir) as out:
        if d.ksd:
            report['ksd'] = _ksd_payload(exp, flow)
        if d.ess:
            state = exp.reference.sample(stream(cfg, 'ess'))
            path = [state.x]
            for _ in range(d.n_samples - 1):
                state, _ = flow.transform.forward(state)
                path.append(state.x)
            try:
                per_coordinate = ess_per_coordinate(np.array(path))
            except DegenerateInputError as e:
                logger.warning(f"ESS not available: {e}")
                per_coordinate = None
            report['ess'] = {'length': d.n_samples, 'per_coordinate': per_coordinate}
        if d.compare_budget is not None:
            comparison = compare_estimators(flow, l1_norm, d.compare_budget, d.compare_trials,
                                            stream(cfg, 'compare'))
            report['compare'] = dict(comparison.to_dict(), statistic='l1_norm')
        out.write_json('diagnostics', report)
        out.write_csv('stability', STABILITY_COLUMNS, _stability_rows(exp, flow))
        return list(out.written)


COMMANDS = {
    'sweep': cmd_sweep,
    'run': cmd_run,
    'sample': cmd_sample,
    'density': cmd_density,
    'diagnose': cmd_diagnose,
}
