import json
import os

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner
from numpy.testing import assert_allclose

from cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, cli
from core.experiments.config import ExperimentConfig, load_config
from core.file_utils import OutputSession, format_value
from core.flow.hamiltonian import HamFlowParams, HamiltonianFlow
from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState
from core.mixflow import MixFlow, log_density
from core.targets.reference import standard_reference
from core.targets.synthetic import synthetic_target

GAUSS_RUN = """
target.name = "gauss1d"
flow.epsilon = 0.2
flow.leapfrogs = 5
flow.n_steps = 10
flow.n_grid = [1, 5, 10]
flow.burn_in = [0, 3]
diagnostics.n_samples = 40
diagnostics.stability_grid = [0, 5]
diagnostics.stability_draws = 10
replication.seed = 123
replication.replicates = 3
"""


@pytest.fixture
def write_config(tmp_path):
    def _write(text, name='experiment.toml'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return str(path)
    return _write


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


# =====
# SWEEP
# =====

def test_sweep_writes_one_row_per_replicate(write_config, tmp_path):
    config = write_config("""
target.name = "gauss1d"
flow.epsilon_grid = [0.05, 0.1, 0.2]
flow.n_grid = [1, 2, 5, 10]
flow.leapfrogs = 3
replication.seed = 1
replication.replicates = 5
""")
    out = tmp_path / 'sweep'
    result = invoke('sweep', '--config', config, '--out', out)
    assert result.exit_code == 0, result.output
    raw = pd.read_csv(out / 'elbo_sweep.csv')
    assert list(raw.columns) == ['epsilon', 'n_steps', 'replicate', 'elbo']
    assert len(raw) == 60
    summary = pd.read_csv(out / 'elbo_summary.csv')
    assert len(summary) == 12
    best = json.loads((out / 'best.json').read_text())
    assert best['status'] == 'ok'
    assert best['elbo_mean'] == pytest.approx(summary['mean'].max(), rel=1e-12)


def test_identity_sweep_has_zero_elbo(write_config, tmp_path):
    config = write_config("""
target.name = "normal"
target.dim = 1
flow.kind = "identity"
flow.epsilon_grid = [0.1]
flow.n_grid = [1, 4]
replication.seed = 9
replication.replicates = 4
""")
    out = tmp_path / 'identity'
    assert invoke('sweep', '--config', config, '--out', out).exit_code == 0
    raw = pd.read_csv(out / 'elbo_sweep.csv')
    assert np.all(np.abs(raw['elbo']) < 1e-6)


def test_sweep_needs_a_grid(write_config, tmp_path):
    config = write_config('target.name = "gauss1d"\nreplication.seed = 1\n')
    assert invoke('sweep', '--config', config, '--out', tmp_path / 'x').exit_code == EXIT_CONFIG


# ===
# RUN
# ===

def test_run_writes_every_output(write_config, tmp_path):
    out = tmp_path / 'run'
    result = invoke('run', '--config', write_config(GAUSS_RUN), '--out', out)
    assert result.exit_code == 0, result.output
    names = sorted(os.listdir(out))
    assert names == ['elbo_vs_burnin.csv', 'elbo_vs_n.csv', 'run_meta.json', 'samples.csv', 'stability.csv']
    samples = pd.read_csv(out / 'samples.csv')
    assert list(samples.columns) == ['x_1', 'rho_1', 'u']
    assert len(samples) == 40
    assert list(pd.read_csv(out / 'elbo_vs_n.csv')['n_steps']) == [1, 5, 10]
    assert list(pd.read_csv(out / 'elbo_vs_burnin.csv')['burn_in']) == [0, 3]
    meta = json.loads((out / 'run_meta.json').read_text())
    assert meta['meta']['seed'] == 123
    assert meta['meta']['command'] == 'run'


def test_run_is_deterministic(write_config, tmp_path):
    config = write_config(GAUSS_RUN)
    for name in ('a', 'b'):
        assert invoke('run', '--config', config, '--out', tmp_path / name).exit_code == 0
    for name in ('samples.csv', 'elbo_vs_n.csv', 'elbo_vs_burnin.csv', 'stability.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_seed_option_overrides_config(write_config, tmp_path):
    config = write_config(GAUSS_RUN)
    assert invoke('sample', '--config', config, '--out', tmp_path / 'a').exit_code == 0
    assert invoke('sample', '--config', config, '--out', tmp_path / 'b', '--seed', 124).exit_code == 0
    assert (tmp_path / 'a' / 'samples.csv').read_bytes() != (tmp_path / 'b' / 'samples.csv').read_bytes()


def test_run_meta_reproduces_the_run(write_config, tmp_path):
    first = tmp_path / 'first'
    assert invoke('run', '--config', write_config(GAUSS_RUN), '--out', first).exit_code == 0
    second = tmp_path / 'second'
    assert invoke('run', '--config', first / 'run_meta.json', '--out', second).exit_code == 0
    assert (first / 'samples.csv').read_bytes() == (second / 'samples.csv').read_bytes()


def test_config_round_trips_through_dict(write_config):
    cfg = load_config(write_config(GAUSS_RUN))
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_ksd_output(write_config, tmp_path):
    out = tmp_path / 'ksd'
    config = write_config(GAUSS_RUN + "diagnostics.ksd = true\ndiagnostics.ksd_samples = 30\n")
    assert invoke('run', '--config', config, '--out', out).exit_code == 0
    payload = json.loads((out / 'ksd.json').read_text())
    assert payload['n_samples'] == 30 and payload['ksd'] > 0


# ====================
# VALIDATION AND ERRORS
# ====================

def test_ksd_with_zero_samples_is_rejected(write_config, tmp_path):
    out = tmp_path / 'never'
    config = write_config(GAUSS_RUN + "diagnostics.ksd = true\ndiagnostics.ksd_samples = 0\n")
    assert invoke('run', '--config', config, '--out', out).exit_code == EXIT_CONFIG
    assert not out.exists()


def test_missing_seed(write_config, tmp_path):
    config = write_config(GAUSS_RUN.replace("replication.seed = 123\n", ""))
    assert invoke('sample', '--config', config, '--out', tmp_path / 'x').exit_code == EXIT_CONFIG
    assert invoke('sample', '--config', config, '--out', tmp_path / 'x', '--seed', 5).exit_code == 0


@pytest.mark.parametrize('extra', [
    'flow.stepsize = 0.1\n',
    '[plots]\nwidth = 3\n',
    'flow.momentum = "uniform"\n',
    'flow.burn_in = [0, 10]\n',
    'flow.xi = 0.5\nreference.use_pseudotime = false\n',
    'reference.theta1 = [[1.0, 0.0]]\n',
    'reference.theta1 = 0.0\n',
    'reference.kind = "meanfield"\nreference.theta2 = 1.0\n',
])
def test_invalid_configurations(write_config, tmp_path, extra):
    config = write_config(GAUSS_RUN.replace('flow.burn_in = [0, 3]\n', '') + extra)
    assert invoke('run', '--config', config, '--out', tmp_path / 'x').exit_code == EXIT_CONFIG


def test_affine_reference_from_config(write_config, tmp_path):
    out = tmp_path / 'affine'
    config = write_config("""
target.name = "banana"
reference.theta1 = [[2.0, 0.0], [1.0, 0.5]]
reference.theta2 = [1.0, -10.0]
flow.epsilon = 0.1
flow.n_steps = 1
diagnostics.n_samples = 4000
replication.seed = 8
""")
    assert invoke('sample', '--config', config, '--out', out).exit_code == 0
    samples = pd.read_csv(out / 'samples.csv')[['x_1', 'x_2']].to_numpy()
    assert_allclose(samples.mean(axis=0), [1.0, -10.0], atol=0.15)
    assert_allclose(np.cov(samples, rowvar=False), [[4.0, 2.0], [2.0, 1.25]], atol=0.3)


def test_unparseable_config(write_config, tmp_path):
    assert invoke('run', '--config', write_config('flow.epsilon = = 1\n'), '--out', tmp_path / 'x').exit_code \
        == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert invoke('run', '--config', tmp_path / 'absent.toml', '--out', tmp_path / 'x').exit_code == EXIT_IO


def test_regression_without_dataset(write_config, tmp_path):
    config = write_config('target.name = "logistic"\nflow.epsilon = 0.1\nflow.n_steps = 2\nreplication.seed = 1\n')
    assert invoke('sample', '--config', config, '--out', tmp_path / 'x').exit_code == EXIT_CONFIG


def test_bad_dataset_cell(write_config, tmp_path):
    data = tmp_path / 'data.csv'
    data.write_text("a,y\n1,0\nx,1\n", encoding='utf-8')
    config = write_config(f'target.name = "logistic"\ntarget.dataset = "{data.as_posix()}"\n'
                          'flow.epsilon = 0.1\nflow.n_steps = 2\nreplication.seed = 1\n')
    result = invoke('sample', '--config', config, '--out', tmp_path / 'x')
    assert result.exit_code == EXIT_CONFIG


def test_divergence_exit_code_removes_outputs(write_config, tmp_path):
    out = tmp_path / 'diverged'
    config = write_config("""
target.name = "banana"
flow.epsilon = 1e10
flow.n_steps = 5
flow.momentum = "gaussian"
diagnostics.n_samples = 50
replication.seed = 2
""")
    assert invoke('sample', '--config', config, '--out', out).exit_code == EXIT_DIVERGENCE
    assert not out.exists()


def test_diverged_reference_fit_exit_code(write_config, tmp_path):
    out = tmp_path / 'unfitted'
    config = write_config(GAUSS_RUN + 'reference.kind = "meanfield"\nreference.fit_steps = 5\n'
                                      'reference.fit_step_size = 1e300\n')
    assert invoke('sample', '--config', config, '--out', out).exit_code == EXIT_DIVERGENCE
    assert not out.exists()


def test_output_session_cleans_up(tmp_path):
    out = tmp_path / 'partial'
    with pytest.raises(RuntimeError):
        with OutputSession(out) as session:
            session.write_csv('samples', ['a'], [[1.0]])
            assert (out / 'samples.csv').exists()
            raise RuntimeError("interrupted")
    assert not out.exists()


def test_output_session_keeps_existing_directory(tmp_path):
    (tmp_path / 'keep.txt').write_text('x')
    with pytest.raises(RuntimeError):
        with OutputSession(tmp_path) as session:
            session.write_json('best', {'a': 1})
            raise RuntimeError("interrupted")
    assert sorted(os.listdir(tmp_path)) == ['keep.txt']


def test_format_value():
    assert format_value(0.1) == '0.1'
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(np.int64(7)) == '7'
    assert format_value(True) == 'true'
    assert format_value('ok') == 'ok'


# ================
# OTHER COMMANDS
# ================

def test_density_at_given_points(write_config, tmp_path):
    points = tmp_path / 'points.csv'
    points.write_text("x_1,x_2,rho_1,rho_2,u\n0.5,-9.0,0.1,-0.2,0.3\n-1.0,-8.5,1.0,0.0,0.9\n", encoding='utf-8')
    config = write_config(f"""
target.name = "banana"
flow.epsilon = 0.1
flow.leapfrogs = 4
flow.n_steps = 6
density.points = "{points.as_posix()}"
replication.seed = 3
""")
    out = tmp_path / 'density'
    assert invoke('density', '--config', config, '--out', out).exit_code == 0
    frame = pd.read_csv(out / 'density.csv', float_precision='round_trip')
    assert list(frame.columns) == ['x_1', 'x_2', 'rho_1', 'rho_2', 'u', 'log_q', 'log_p']

    target = synthetic_target('banana')
    model = MomentumModel('laplace', 2)
    flow = MixFlow(standard_reference(2), HamiltonianFlow(HamFlowParams(0.1, 4), target, model), 6)
    state = AugmentedState(frame[['x_1', 'x_2']].to_numpy(), frame[['rho_1', 'rho_2']].to_numpy(),
                           frame['u'].to_numpy())
    assert_allclose(frame['log_q'], log_density(flow, state), rtol=1e-12)


def test_density_rejects_incomplete_points(write_config, tmp_path):
    points = tmp_path / 'points.csv'
    points.write_text("x_1,rho_1,u\n0.5,0.1,\n", encoding='utf-8')
    config = write_config(GAUSS_RUN + f'density.points = "{points.as_posix()}"\n')
    assert invoke('density', '--config', config, '--out', tmp_path / 'x').exit_code == EXIT_CONFIG


def test_diagnose(write_config, tmp_path):
    out = tmp_path / 'diag'
    config = write_config(GAUSS_RUN + "diagnostics.ksd = true\ndiagnostics.ksd_samples = 30\n"
                                      "diagnostics.compare_budget = 40\ndiagnostics.compare_trials = 4\n")
    result = invoke('diagnose', '--config', config, '--out', out)
    assert result.exit_code == 0, result.output
    report = json.loads((out / 'diagnostics.json').read_text())
    assert set(report) >= {'ksd', 'ess', 'compare', 'seed'}
    assert len(report['ess']['per_coordinate']) == 1
    assert report['compare']['trials'] == 4
    assert len(pd.read_csv(out / 'stability.csv')) == 2


def test_help_lists_configuration_keys():
    result = invoke('run', '--help')
    assert result.exit_code == 0
    assert 'flow' in result.output and 'epsilon' in result.output


@pytest.mark.slow
def test_meanfield_reference_run(write_config, tmp_path):
    config = write_config(GAUSS_RUN + 'reference.kind = "meanfield"\nreference.fit_steps = 2000\n')
    out = tmp_path / 'mf'
    assert invoke('run', '--config', config, '--out', out).exit_code == 0
    meta = json.loads((out / 'run_meta.json').read_text())
    assert abs(meta['meta']['reference']['mean'][0] - 2.0) < 0.5


@pytest.mark.parametrize('name', ['banana.toml', 'banana_sweep.toml', 'logistic.toml', 'gmm1d_no_pseudotime.toml'])
def test_shipped_configurations_load(name):
    cfg = load_config(os.path.join(os.path.dirname(__file__), '..', 'configs', name))
    assert cfg.seed is not None
    assert cfg.xi == 0.0 or cfg.reference.use_pseudotime
