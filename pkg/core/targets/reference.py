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
Reference distributions q0(x, rho, u) on the augmented space
"""
import math
from typing import Optional, Tuple

import numpy as np

from config import DEFAULT_MOMENTUM
from core.errors import InvalidArgumentError
from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
MAX_CONDITION = 1e12


class AugmentedReference:
    """
    q0(x, rho, u) = N(y; mean, diag(scale)^2) / |det theta1| * m(rho) * U(u; [0, 1))

    where x = M_theta(y) = theta1 @ y + theta2. theta1 may be given as a scalar,
    a vector (a diagonal map) or a full d x d matrix; it is stored as a matrix.
    With use_pseudotime=False the pseudotime is pinned at u = 0 and the density
    is taken over (x, rho) only.
    """

    def __init__(self, mean, scale, momentum: Optional[MomentumModel] = None,
                 theta1=None, theta2=None, use_pseudotime: bool = True):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if mean.ndim != 1:
            raise InvalidArgumentError("Reference mean must be a vector")
        d = mean.shape[0]
        try:
            scale = np.broadcast_to(np.asarray(scale, dtype=float), mean.shape).copy()
            theta1 = _as_matrix(theta1, d)
            theta2 = np.zeros(d) if theta2 is None else np.broadcast_to(np.asarray(theta2, dtype=float), (d,)).copy()
        except InvalidArgumentError:
            raise
        except ValueError as e:
            raise InvalidArgumentError(f"Reference parameters do not fit dimension {d}: {e}") from e
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise InvalidArgumentError("Reference mean must be finite and scales positive")
        if not (np.all(np.isfinite(theta1)) and np.all(np.isfinite(theta2))):
            raise InvalidArgumentError("Affine reference map must be finite")
        sign, log_det = np.linalg.slogdet(theta1)
        if sign == 0 or not np.isfinite(log_det) or np.linalg.cond(theta1) > MAX_CONDITION:
            raise InvalidArgumentError("Affine reference map must be invertible")

        if momentum is None:
            momentum = MomentumModel(DEFAULT_MOMENTUM, d)
        elif momentum.dim != d:
            momentum = momentum.with_dim(d)

        self.mean = mean
        self.scale = scale
        self.theta1 = theta1
        self.theta2 = theta2
        self.momentum = momentum
        self.use_pseudotime = bool(use_pseudotime)
        self.log_abs_det = float(log_det)
        self._theta1_inv = np.linalg.inv(theta1)
        # x-marginal after the affine map
        self.loc = theta1 @ mean + theta2
        self.x_cov = (theta1 * scale ** 2) @ theta1.T

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, shape: Tuple[int, ...] = ()) -> AugmentedState:
        """Draw x, then rho, then u (in that order on the stream)"""
        shape = tuple(shape)
        y = self.mean + self.scale * rng.standard_normal(shape + (self.dim,))
        x = y @ self.theta1.T + self.theta2
        rho = self.momentum.sample(rng, shape)
        u = rng.random(shape) if self.use_pseudotime else np.zeros(shape)
        return AugmentedState(x, rho, u)

    def _standardize(self, x) -> np.ndarray:
        y = (np.asarray(x, dtype=float) - self.theta2) @ self._theta1_inv.T
        return (y - self.mean) / self.scale

    def log_density_x(self, x) -> np.ndarray:
        z = self._standardize(x)
        return (np.sum(-HALF_LOG_2PI - np.log(self.scale) - 0.5 * z ** 2, axis=-1)
                - self.log_abs_det)

    def grad_log_density_x(self, x) -> np.ndarray:
        return -(self._standardize(x) / self.scale) @ self._theta1_inv

    def log_density(self, state: AugmentedState) -> np.ndarray:
        """log q0(x) + log m(rho); -inf where u lies outside the support"""
        value = self.log_density_x(state.x) + self.momentum.logpdf(state.rho)
        if self.use_pseudotime:
            inside = (state.u >= 0.0) & (state.u < 1.0)
        else:
            inside = state.u == 0.0
        return np.where(inside, value, -np.inf)

    def to_dict(self) -> dict:
        return {
            'mean': [float(v) for v in self.mean],
            'scale': [float(v) for v in self.scale],
            'theta1': [[float(v) for v in row] for row in self.theta1],
            'theta2': [float(v) for v in self.theta2],
            'momentum': self.momentum.kind.value,
            'use_pseudotime': self.use_pseudotime,
        }

    def __repr__(self):
        return (f"AugmentedReference(dim={self.dim}, momentum={self.momentum.kind.value}, "
                f"use_pseudotime={self.use_pseudotime})")


def _as_matrix(theta1, d: int) -> np.ndarray:
    if theta1 is None:
        return np.eye(d)
    theta1 = np.asarray(theta1, dtype=float)
    if theta1.ndim <= 1:
        return np.diag(np.broadcast_to(theta1, (d,)))
    if theta1.shape != (d, d):
        raise InvalidArgumentError(f"theta1 must be a scalar, a length-{d} vector or a {d}x{d} matrix, "
                                   f"got shape {theta1.shape}")
    return theta1.copy()


def standard_reference(dim: int, momentum=DEFAULT_MOMENTUM, use_pseudotime: bool = True) -> AugmentedReference:
    """N(0, I) x-marginal with a standard momentum of the given kind"""
    if dim < 1:
        raise InvalidArgumentError(f"Reference dimension must be >= 1, got {dim}")
    return AugmentedReference(np.zeros(dim), np.ones(dim), MomentumModel(momentum, dim),
                              use_pseudotime=use_pseudotime)
