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
The MixFlow variational family q_{M,N} = 1/(N-M) sum_{n=M}^{N-1} T^n q0
Sampling, exact log-density, density triples, ELBO estimators and
trajectory-averaged expectations over any FlowTransform
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from config import CANCELLATION_TOLERANCE, DEFAULT_REPLICATES, WORKERS, logger
from core.errors import InvalidArgumentError, NumericalDivergenceError
from core.flow.state import AugmentedState
from core.flow.transform import FlowTransform
from core.targets.augmented import augment_target
from core.targets.reference import AugmentedReference


@dataclass(frozen=True)
class MixFlow:
    """Reference q0, map T, flow length N and burn-in M (0 <= M < N)"""
    reference: AugmentedReference
    transform: FlowTransform
    n_steps: int
    burn_in: int = 0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError(f"Flow length N must be >= 1, got {self.n_steps}")
        if int(self.burn_in) != self.burn_in or not 0 <= self.burn_in < self.n_steps:
            raise InvalidArgumentError(f"Burn-in M must satisfy 0 <= M < N = {self.n_steps}, got {self.burn_in}")
        if self.reference.dim != self.transform.dim:
            raise InvalidArgumentError(
                f"Reference dimension {self.reference.dim} does not match flow dimension {self.transform.dim}")
        params = getattr(self.transform, 'params', None)
        if not self.reference.use_pseudotime and params is not None and params.xi != 0:
            raise InvalidArgumentError("A reference without pseudotime requires a zero pseudotime shift")
        object.__setattr__(self, 'n_steps', int(self.n_steps))
        object.__setattr__(self, 'burn_in', int(self.burn_in))

    @property
    def dim(self) -> int:
        return self.reference.dim

    @property
    def n_components(self) -> int:
        return self.n_steps - self.burn_in

    def with_steps(self, n_steps: int, burn_in: Optional[int] = None) -> 'MixFlow':
        return MixFlow(self.reference, self.transform, n_steps, self.burn_in if burn_in is None else burn_in)


@dataclass(frozen=True)
class DensityTriple:
    """T^{-N+1}(x), log q(x) and log prod_{j=1}^{N-1} J(T^{-j} x)"""
    preimage: AugmentedState
    log_density: np.ndarray
    log_jacobian_product: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)

    @property
    def jacobian_product(self) -> np.ndarray:
        return np.exp(self.log_jacobian_product)


@dataclass(frozen=True)
class ElboEstimate:
    mean: float
    stderr: float
    values: np.ndarray


def _augmented_log_target(flow: MixFlow, target) -> Callable[[AugmentedState], np.ndarray]:
    """Accept either an augmented target or a base target on R^d"""
    if target.dim == 2 * flow.dim:
        return target.log_density
    if target.dim == flow.dim:
        return augment_target(target, flow.reference.momentum).log_density
    raise InvalidArgumentError(f"Target dimension {target.dim} does not fit a flow of dimension {flow.dim}")


def _inverse_step(flow: MixFlow, state: AugmentedState, n: int, operation: str):
    try:
        return flow.transform.inverse(state)
    except NumericalDivergenceError as e:
        raise NumericalDivergenceError(f"{operation} diverged: {e}", step=n, operation=operation) from e


def _forward_step(flow: MixFlow, state: AugmentedState, n: int, operation: str):
    try:
        return flow.transform.forward(state)
    except NumericalDivergenceError as e:
        raise NumericalDivergenceError(f"{operation} diverged: {e}", step=n, operation=operation) from e


# ========
# SAMPLING
# ========

def sample_with_index(flow: MixFlow, rng: np.random.Generator,
                      size: Optional[int] = None) -> Tuple[AugmentedState, np.ndarray]:
    """
    Draw from q_{M,N} and report the mixture index used

    K ~ Uniform{M, ..., N-1} is drawn before X0 ~ q0. With size=n the draws are
    advanced together, each only while its own K is not yet reached.

    Returns:
        tuple: (T^K(X0), K)
    """
    if size is None:
        k = int(rng.integers(flow.burn_in, flow.n_steps))
        state = flow.reference.sample(rng)
        for n in range(k):
            state, _ = _forward_step(flow, state, n + 1, 'sample')
        return state, np.asarray(k)

    ks = rng.integers(flow.burn_in, flow.n_steps, size=size)
    return push_forward(flow, flow.reference.sample(rng, (size,)), ks), ks


def push_forward(flow: MixFlow, state: AugmentedState, ks: np.ndarray) -> AugmentedState:
    """T^{k_i} applied to row i of a batched state"""
    ks = np.asarray(ks, dtype=int)
    x, rho, u = state.x.copy(), state.rho.copy(), state.u.copy()
    for n in range(int(ks.max(initial=0))):
        active = np.nonzero(ks > n)[0]
        moved, _ = _forward_step(flow, AugmentedState(x[active], rho[active], u[active]), n + 1, 'sample')
        x[active], rho[active], u[active] = moved.x, moved.rho, moved.u
    return AugmentedState(x, rho, u)


def sample(flow: MixFlow, rng: np.random.Generator, size: Optional[int] = None) -> AugmentedState:
    """One draw from q_{M,N} (or `size` i.i.d. draws stacked on a leading axis)"""
    return sample_with_index(flow, rng, size)[0]


# =======
# DENSITY
# =======

def log_density(flow: MixFlow, state: AugmentedState) -> np.ndarray:
    """
    log q_{M,N}(state) by one backward sweep of N-1 inverse maps

    Args:
        flow: MixFlow
        state: Single or batched AugmentedState

    Returns:
        np.ndarray: Log-density with the batch shape of `state`

    Raises:
        NumericalDivergenceError: If an inverse map diverges; `step` is the sweep index
    """
    ref = flow.reference
    terms = [ref.log_density(state)] if flow.burn_in == 0 else []
    current = state
    log_jac = np.zeros(state.batch_shape)
    for n in range(1, flow.n_steps):
        current, lj = _inverse_step(flow, current, n, 'log_density')
        log_jac = log_jac + lj
        if n >= flow.burn_in:
            terms.append(ref.log_density(current) - log_jac)
    return logsumexp(np.stack(terms), axis=0) - math.log(flow.n_components)


def density_triple(flow: MixFlow, state: AugmentedState) -> DensityTriple:
    """Streaming variant of log_density that keeps only the running sums"""
    ref = flow.reference
    acc = ref.log_density(state) if flow.burn_in == 0 else np.full(state.batch_shape, -np.inf)
    current = state
    log_jac = np.zeros(state.batch_shape)
    with np.errstate(divide='ignore', invalid='ignore'):
        for n in range(1, flow.n_steps):
            current, lj = _inverse_step(flow, current, n, 'density_triple')
            log_jac = log_jac + lj
            if n >= flow.burn_in:
                acc = np.logaddexp(acc, ref.log_density(current) - log_jac)
    return DensityTriple(current, acc - math.log(flow.n_components), log_jac)


# ============
# TRAJECTORIES
# ============

@dataclass
class _Trajectory:
    """
    Scalar summaries along x_{-(N-1)}, ..., x_{N-1} for one reference draw.

    Position p in log_q0 holds x_{p-(N-1)}; log_jac[p] is log J at that state
    (so the last state has none); log_p holds x_0, ..., x_{N-1}.
    """
    log_q0: np.ndarray
    log_jac: np.ndarray
    log_p: np.ndarray

    @property
    def prefix(self) -> np.ndarray:
        # C[p] = sum of log J over positions < p
        return np.concatenate([[0.0], np.cumsum(self.log_jac)])


def _trace(flow: MixFlow, log_target, x0: AugmentedState, operation: str) -> _Trajectory:
    N = flow.n_steps
    ref = flow.reference
    back_q0, back_jac = [], []
    current = x0
    for n in range(1, N):
        current, lj = _inverse_step(flow, current, n, operation)
        back_q0.append(float(ref.log_density(current)))
        back_jac.append(float(lj))

    fwd_q0, fwd_jac, log_p = [float(ref.log_density(x0))], [], [float(log_target(x0))]
    current = x0
    for n in range(1, N):
        current, lj = _forward_step(flow, current, n, operation)
        fwd_jac.append(float(lj))
        fwd_q0.append(float(ref.log_density(current)))
        log_p.append(float(log_target(current)))

    log_q0 = np.array(back_q0[::-1] + fwd_q0)
    log_jac = np.array(back_jac[::-1] + fwd_jac)
    log_p = np.array(log_p)
    if not (np.all(np.isfinite(log_q0)) and np.all(np.isfinite(log_p))):
        raise NumericalDivergenceError(f"Non-finite log-density along the trajectory in {operation}",
                                       operation=operation)
    return _Trajectory(log_q0, log_jac, log_p)


def _direct_log_sum(traj: _Trajectory, prefix: np.ndarray, p: int, n_terms: int) -> float:
    """log sum_{j=0}^{n_terms-1} q0(x_{p-j}) / prod_{i=1}^{j} J(x_{p-i}), positions as in _Trajectory"""
    idx = np.arange(p - n_terms + 1, p + 1)
    return float(logsumexp(traj.log_q0[idx] - (prefix[p] - prefix[idx])))


def sliding_logsumexp(values: np.ndarray, width: int) -> np.ndarray:
    """
    log-sum-exp over every window values[s:s+width], s = 0..len-width

    Block prefix/suffix scans give O(len) work for any width.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if not 1 <= width <= n:
        raise InvalidArgumentError(f"Window width {width} outside [1, {n}]")
    n_blocks = -(-n // width)
    padded = np.full(n_blocks * width, -np.inf)
    padded[:n] = values
    blocks = padded.reshape(n_blocks, width)
    with np.errstate(invalid='ignore'):
        prefix = np.logaddexp.accumulate(blocks, axis=1).reshape(-1)
        suffix = np.logaddexp.accumulate(blocks[:, ::-1], axis=1)[:, ::-1].reshape(-1)
        starts = np.arange(n - width + 1)
        ends = starts + width - 1
        aligned = starts % width == 0
        return np.where(aligned, prefix[ends], np.logaddexp(suffix[starts], prefix[ends]))


def _windowed_log_q(traj: _Trajectory, N: int, M: int) -> np.ndarray:
    """log q_{M,N}(x_k) for k = M..N-1 from one stored trajectory"""
    prefix = traj.prefix
    a = traj.log_q0 + prefix
    # window for x_k covers x_{k-N+1} .. x_{k-M}, i.e. positions k .. k+N-M-1
    windows = sliding_logsumexp(a, N - M)
    k = np.arange(M, N)
    return windows[k] - prefix[k + N - 1] - math.log(N - M)


def _elbo_from_trajectory(traj: _Trajectory, N: int, M: int) -> float:
    log_q = _windowed_log_q(traj, N, M)
    return float(np.mean(traj.log_p[M:] - log_q))


# ====
# ELBO
# ====

def estimate_elbo(flow: MixFlow, target, rng: np.random.Generator) -> float:
    """
    Unbiased trajectory-averaged ELBO estimate in O(N) time

    One reference draw X0; log q is evaluated directly once at X0 and then
    updated incrementally along the trajectory. Where the removal of the
    oldest mixture term would cancel more than 1 - CANCELLATION_TOLERANCE of
    the running sum, that sum is re-evaluated from the stored trajectory.

    Args:
        flow: MixFlow (with burn-in the windowed estimator is used)
        target: Augmented target, or a base target on R^d
        rng: Random generator (consumes one reference draw)

    Returns:
        float: (1/N) sum_n [log p(T^n X0) - log q(T^n X0)]
    """
    log_target = _augmented_log_target(flow, target)
    N, M = flow.n_steps, flow.burn_in
    x0 = flow.reference.sample(rng)
    traj = _trace(flow, log_target, x0, 'estimate_elbo')
    if M > 0:
        return _elbo_from_trajectory(traj, N, M)

    prefix = traj.prefix
    lq0, lj = traj.log_q0, traj.log_jac
    log_n = math.log(N)
    p = N - 1  # position of x_0
    log_sum = _direct_log_sum(traj, prefix, p, N)
    # running sum of log J over x_{n-N+1} .. x_{n-1}
    running = float(np.sum(lj[:p]))
    total = traj.log_p[0] - (log_sum - log_n)
    fallbacks = 0
    for n in range(N - 1):
        p = n + N - 1
        removed = lq0[p - N + 1] - running
        frac = math.exp(removed - log_sum)
        if 1.0 - frac > CANCELLATION_TOLERANCE:
            kept = log_sum + math.log1p(-frac)
            log_sum = float(np.logaddexp(lq0[p + 1], kept - lj[p]))
        else:
            fallbacks += 1
            log_sum = _direct_log_sum(traj, prefix, p + 1, N)
        running += lj[p] - lj[p - N + 1]
        total += traj.log_p[n + 1] - (log_sum - log_n)
    if fallbacks:
        logger.debug(f"estimate_elbo: {fallbacks} direct re-evaluations over N={N}")
    return float(total / N)


def estimate_elbo_const_mem(flow: MixFlow, target, rng: np.random.Generator) -> float:
    """
    Same estimator as estimate_elbo with O(1) auxiliary memory

    A second pointer trails the trajectory N-1 steps behind and supplies the
    mixture term that leaves the window. Burn-in is not supported.
    """
    if flow.burn_in != 0:
        raise InvalidArgumentError("The constant-memory ELBO estimator requires burn-in M = 0")
    log_target = _augmented_log_target(flow, target)
    ref = flow.reference
    N = flow.n_steps
    log_n = math.log(N)

    x = ref.sample(rng)
    triple = density_triple(flow, x)
    trailing = triple.preimage
    log_sum = float(triple.log_density) + log_n
    running = float(triple.log_jacobian_product)
    total = 0.0
    fallbacks = 0
    for n in range(N):
        total += float(log_target(x)) - (log_sum - log_n)
        if n == N - 1:
            break
        x_next, lj = _forward_step(flow, x, n + 1, 'estimate_elbo_const_mem')
        lj = float(lj)
        removed = float(ref.log_density(trailing)) - running
        frac = math.exp(removed - log_sum)
        if 1.0 - frac > CANCELLATION_TOLERANCE:
            kept = log_sum + math.log1p(-frac)
            log_sum = float(np.logaddexp(float(ref.log_density(x_next)), kept - lj))
        else:
            fallbacks += 1
            log_sum = float(density_triple(flow, x_next).log_density) + log_n
        trailing, lj_trailing = _forward_step(flow, trailing, n + 1, 'estimate_elbo_const_mem')
        running += lj - float(lj_trailing)
        x = x_next
    if not np.isfinite(total):
        raise NumericalDivergenceError("Non-finite ELBO estimate", operation='estimate_elbo_const_mem')
    if fallbacks:
        logger.debug(f"estimate_elbo_const_mem: {fallbacks} direct re-evaluations over N={N}")
    return total / N


def elbo_vs_burnin(flow: MixFlow, target, rng: np.random.Generator,
                   burnin_values: Sequence[int]) -> List[Tuple[int, float]]:
    """
    ELBO estimates of q_{M,N} for every requested M from one shared trajectory

    Returns:
        list: (M, estimate) pairs in the order requested
    """
    values = [int(m) for m in burnin_values]
    for m in values:
        if not 0 <= m < flow.n_steps:
            raise InvalidArgumentError(f"Burn-in {m} outside [0, {flow.n_steps})")
    log_target = _augmented_log_target(flow, target)
    x0 = flow.reference.sample(rng)
    traj = _trace(flow, log_target, x0, 'elbo_vs_burnin')
    return [(m, _elbo_from_trajectory(traj, flow.n_steps, m)) for m in values]


def trajectory_averages(flow: MixFlow, f: Callable[[AugmentedState], np.ndarray],
                        state: AugmentedState) -> np.ndarray:
    """(1/(N-M)) sum_{n=M}^{N-1} f(T^n x) for every x in a (possibly batched) state"""
    total = np.zeros(state.batch_shape)
    for n in range(flow.n_steps):
        if n >= flow.burn_in:
            total = total + f(state)
        if n < flow.n_steps - 1:
            state, _ = _forward_step(flow, state, n + 1, 'trajectory_average')
    return total / flow.n_components


def trajectory_average(flow: MixFlow, f: Callable[[AugmentedState], float], rng: np.random.Generator) -> float:
    """(1/(N-M)) sum_{n=M}^{N-1} f(T^n X0) for one reference draw X0"""
    return float(trajectory_averages(flow, f, flow.reference.sample(rng)))


def replicate_streams(seed: int, replicates: int, *stream) -> List[np.random.Generator]:
    """Independent generators keyed by (seed, *stream, replicate index)"""
    return [np.random.default_rng([int(seed), *[int(s) for s in stream], r]) for r in range(replicates)]


def estimate_elbo_replicated(flow: MixFlow, target, seed: int, replicates: int = DEFAULT_REPLICATES,
                             stream: Tuple[int, ...] = (), workers: int = WORKERS,
                             const_mem: bool = False) -> ElboEstimate:
    """
    Average of independent trajectory ELBO estimates

    Replicate r uses default_rng([seed, *stream, r]); results keep replicate order
    whatever the worker count.
    """
    if replicates < 1:
        raise InvalidArgumentError(f"Replicate count must be >= 1, got {replicates}")
    estimator = estimate_elbo_const_mem if const_mem else estimate_elbo
    rngs = replicate_streams(seed, replicates, *stream)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(lambda g: estimator(flow, target, g), rngs)))
    else:
        values = np.array([estimator(flow, target, g) for g in rngs])
    stderr = float(values.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else float('nan')
    return ElboEstimate(float(values.mean()), stderr, values)
