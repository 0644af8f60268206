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
Uncorrected Hamiltonian MixFlow map
Leapfrog dynamics, pseudotime shift and deterministic momentum refreshment,
each with an exact inverse, composed into a FlowTransform
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Tuple

import numpy as np

from config import CDF_CLAMP, DEFAULT_XI, logger
from core.errors import InvalidArgumentError, NumericalDivergenceError
from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState
from core.flow.transform import FlowTransform

RefreshFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Direction(Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


def default_refresh(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """z(x, u) = 0.5 sin(2x + u) + 0.5"""
    return 0.5 * np.sin(2.0 * x + u) + 0.5


def zero_refresh(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u)))


REFRESH_FUNCTIONS = {
    'default': default_refresh,
    'none': zero_refresh,
}


@dataclass(frozen=True)
class HamFlowParams:
    """Tuning parameters of T_{lambda, epsilon}"""
    epsilon: float
    n_leapfrog: int
    xi: float = DEFAULT_XI
    refresh_fn: RefreshFn = field(default=default_refresh)

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidArgumentError(f"Leapfrog step size must be positive, got {self.epsilon}")
        if int(self.n_leapfrog) != self.n_leapfrog or self.n_leapfrog < 1:
            raise InvalidArgumentError(f"Number of leapfrog steps must be >= 1, got {self.n_leapfrog}")
        if not np.isfinite(self.xi):
            raise InvalidArgumentError("Pseudotime shift must be finite")


def _mod1(v: np.ndarray) -> np.ndarray:
    """v - floor(v), with a rounded result of exactly 1.0 mapped back to 0.0"""
    r = v - np.floor(v)
    return np.where(r >= 1.0, 0.0, r)


def _check(values: np.ndarray, operation: str, step: int) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalDivergenceError(f"Non-finite value during {operation}", step=step, operation=operation)


# ==============
# FLOW COMPONENTS
# ==============

def leapfrog(x, rho, target, momentum: MomentumModel, epsilon: float, n_steps: int,
             direction: Direction = Direction.FORWARD) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run n_steps leapfrog updates, or exactly undo them

    Args:
        x: Positions, shape (..., d)
        rho: Momenta, shape (..., d)
        target: Object with grad_log_density(x)
        momentum: Momentum model supplying grad log m
        epsilon: Step size (> 0)
        n_steps: Number of leapfrog steps (>= 1)
        direction: FORWARD applies the map, INVERSE its algebraic inverse

    Returns:
        tuple: (x', rho')

    Raises:
        NumericalDivergenceError: If a sub-update produces NaN/Inf; carries the step index
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"Leapfrog step size must be positive, got {epsilon}")
    if n_steps < 1:
        raise InvalidArgumentError(f"Number of leapfrog steps must be >= 1, got {n_steps}")

    x = np.array(x, dtype=float)
    rho = np.array(rho, dtype=float)
    half = 0.5 * epsilon

    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        if direction is Direction.FORWARD:
            for k in range(1, n_steps + 1):
                rho = rho + half * target.grad_log_density(x)
                _check(rho, 'leapfrog', k)
                x = x - epsilon * momentum.grad_logpdf(rho)
                _check(x, 'leapfrog', k)
                rho = rho + half * target.grad_log_density(x)
                _check(rho, 'leapfrog', k)
        else:
            # same three updates, reversed order, negated step
            for k in range(1, n_steps + 1):
                rho = rho - half * target.grad_log_density(x)
                _check(rho, 'inverse leapfrog', k)
                x = x + epsilon * momentum.grad_logpdf(rho)
                _check(x, 'inverse leapfrog', k)
                rho = rho - half * target.grad_log_density(x)
                _check(rho, 'inverse leapfrog', k)
    return x, rho


def pseudotime_shift(u, xi: float, direction: Direction = Direction.FORWARD) -> np.ndarray:
    """u + xi mod 1 (forward) or u - xi mod 1 (inverse)"""
    u = np.asarray(u, dtype=float)
    shift = xi if direction is Direction.FORWARD else -xi
    return _mod1(u + shift)


def refresh_momentum(rho, x, u, model: MomentumModel, refresh_fn: RefreshFn,
                     direction: Direction = Direction.FORWARD) -> np.ndarray:
    """
    rho''_i = R^{-1}(R(rho'_i) + z(x_i, u) mod 1), or the inverse shift

    u has the batch shape of x without the coordinate axis.
    """
    rho = np.asarray(rho, dtype=float)
    x = np.asarray(x, dtype=float)
    if rho.shape != x.shape:
        raise InvalidArgumentError(f"Momentum shape {rho.shape} and position shape {x.shape} differ")
    z = refresh_fn(x, np.asarray(u, dtype=float)[..., None])
    p = model.cdf(rho)
    shifted = _mod1(p + z) if direction is Direction.FORWARD else _mod1(p - z)
    shifted = np.clip(shifted, CDF_CLAMP, 1.0 - CDF_CLAMP)
    return model.quantile(shifted)


def refresh_log_jacobian(rho_before, rho_after, model: MomentumModel) -> np.ndarray:
    """log m(rho') - log m(rho''), the only non-zero log-Jacobian term of the map"""
    return model.logpdf(rho_before) - model.logpdf(rho_after)


# ================
# HAMILTONIAN FLOW
# ================

def flow_forward(state: AugmentedState, params: HamFlowParams, target,
                 momentum: MomentumModel) -> Tuple[AugmentedState, np.ndarray]:
    """Leapfrog, then pseudotime shift, then refreshment; returns (state', log J(state))"""
    state.check_finite('flow forward')
    x1, rho1 = leapfrog(state.x, state.rho, target, momentum, params.epsilon, params.n_leapfrog)
    u1 = pseudotime_shift(state.u, params.xi)
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        rho2 = refresh_momentum(rho1, x1, u1, momentum, params.refresh_fn)
        log_jacobian = refresh_log_jacobian(rho1, rho2, momentum)
    result = AugmentedState(x1, rho2, u1).check_finite('flow forward refreshment')
    if not np.all(np.isfinite(log_jacobian)):
        raise NumericalDivergenceError("Non-finite log-Jacobian in flow forward", operation='flow forward')
    return result, log_jacobian


def flow_inverse(state: AugmentedState, params: HamFlowParams, target,
                 momentum: MomentumModel) -> Tuple[AugmentedState, np.ndarray]:
    """Undo refreshment, shift and leapfrog; returns (T^{-1}(state), log J(T^{-1}(state)))"""
    state.check_finite('flow inverse')
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        rho1 = refresh_momentum(state.rho, state.x, state.u, momentum, params.refresh_fn, Direction.INVERSE)
        log_jacobian = refresh_log_jacobian(rho1, state.rho, momentum)
    u0 = pseudotime_shift(state.u, params.xi, Direction.INVERSE)
    x0, rho0 = leapfrog(state.x, rho1, target, momentum, params.epsilon, params.n_leapfrog, Direction.INVERSE)
    result = AugmentedState(x0, rho0, u0).check_finite('flow inverse')
    if not np.all(np.isfinite(log_jacobian)):
        raise NumericalDivergenceError("Non-finite log-Jacobian in flow inverse", operation='flow inverse')
    return result, log_jacobian


class HamiltonianFlow(FlowTransform):
    """T_{lambda, epsilon} for a fixed target and momentum model"""

    def __init__(self, params: HamFlowParams, target, momentum: MomentumModel):
        if momentum.dim != target.dim:
            raise InvalidArgumentError(
                f"Momentum dimension {momentum.dim} does not match target dimension {target.dim}")
        self.params = params
        self.target = target
        self.momentum = momentum
        logger.debug(f"Hamiltonian flow: eps={params.epsilon}, L={params.n_leapfrog}, "
                     f"xi={params.xi}, momentum={momentum.kind.value}, d={target.dim}")

    @property
    def dim(self) -> int:
        return self.target.dim

    def forward(self, state):
        return flow_forward(state, self.params, self.target, self.momentum)

    def inverse(self, state):
        return flow_inverse(state, self.params, self.target, self.momentum)
