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
Numerical stability of composing the flow with its inverse
"""
from dataclasses import asdict, dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from config import logger
from core.errors import InvalidArgumentError, NumericalDivergenceError
from core.flow.state import AugmentedState

QUANTILES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class StabilityRecord:
    """Error quantiles at one K; forward is T^{-K} T^K, backward is T^K T^{-K}"""
    k: int
    forward_q25: float
    forward_q50: float
    forward_q75: float
    backward_q25: float
    backward_q50: float
    backward_q75: float


@dataclass(frozen=True)
class StabilityProfile:
    records: List[StabilityRecord]
    n_draws: int

    def to_rows(self) -> List[dict]:
        return [asdict(r) for r in self.records]

    def record(self, k: int) -> StabilityRecord:
        for r in self.records:
            if r.k == k:
                return r
        raise KeyError(k)


def _advance(step: Callable, state: AugmentedState, alive: np.ndarray, k: int) -> Tuple[AugmentedState, np.ndarray]:
    """
    Apply `step` k times to the rows still alive

    A batch that diverges is retried row by row; rows that diverge on their
    own are marked dead and left untouched from then on.
    """
    x, rho, u = state.x.copy(), state.rho.copy(), state.u.copy()
    alive = alive.copy()
    for _ in range(k):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        try:
            moved, _ = step(AugmentedState(x[idx], rho[idx], u[idx]))
            x[idx], rho[idx], u[idx] = moved.x, moved.rho, moved.u
        except NumericalDivergenceError:
            for i in idx:
                try:
                    moved, _ = step(AugmentedState(x[i], rho[i], u[i]))
                    x[i], rho[i], u[i] = moved.x, moved.rho, moved.u
                except NumericalDivergenceError:
                    alive[i] = False
    return AugmentedState(x, rho, u), alive


def _quantiles(errors: np.ndarray) -> List[float]:
    # no interpolation, so +inf entries never produce NaN
    return [float(q) for q in np.quantile(errors, QUANTILES, method='inverted_cdf')]


def stability_profile(flow, ks: Sequence[int], n_draws: int, rng: np.random.Generator) -> StabilityProfile:
    """
    Round-trip errors |T^{-K} T^K s - s| and |T^K T^{-K} s - s| over reference draws

    Args:
        flow: MixFlow whose transform and reference are used
        ks: Non-empty ascending list of K >= 0
        n_draws: Number of reference draws
        rng: Random generator

    Returns:
        StabilityProfile: One record per K; divergent samples count as +inf
    """
    ks = [int(k) for k in ks]
    if not ks or any(k < 0 for k in ks) or any(b < a for a, b in zip(ks, ks[1:])):
        raise InvalidArgumentError(f"Stability grid must be non-empty, non-negative and ascending: {ks}")
    if n_draws < 1:
        raise InvalidArgumentError(f"Stability needs at least one draw, got {n_draws}")

    transform = flow.transform
    start = flow.reference.sample(rng, (n_draws,))
    fwd, fwd_alive = start, np.ones(n_draws, dtype=bool)
    bwd, bwd_alive = start, np.ones(n_draws, dtype=bool)
    reached = 0
    records = []
    for k in ks:
        fwd, fwd_alive = _advance(transform.forward, fwd, fwd_alive, k - reached)
        bwd, bwd_alive = _advance(transform.inverse, bwd, bwd_alive, k - reached)
        reached = k
        fwd_back, fb_alive = _advance(transform.inverse, fwd, fwd_alive, k)
        bwd_back, bb_alive = _advance(transform.forward, bwd, bwd_alive, k)
        with np.errstate(invalid='ignore', over='ignore'):
            forward_err = np.where(fb_alive, fwd_back.distance(start), np.inf)
            backward_err = np.where(bb_alive, bwd_back.distance(start), np.inf)
        diverged = int(np.sum(~fb_alive) + np.sum(~bb_alive))
        if diverged:
            logger.warning(f"Stability K={k}: {diverged} round trips diverged and count as +inf")
        records.append(StabilityRecord(k, *_quantiles(forward_err), *_quantiles(backward_err)))
        logger.debug(f"Stability K={k}: median forward {records[-1].forward_q50:.3e}, "
                     f"backward {records[-1].backward_q50:.3e}")
    return StabilityProfile(records, n_draws)
