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
Momentum densities for the Hamiltonian flow
Product densities m(rho) = prod r(rho_i) with their CDF, quantile and gradient
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy.special import ndtr, ndtri

from config import CDF_CLAMP
from core.errors import InvalidArgumentError

LOG_HALF = math.log(0.5)
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class MomentumKind(Enum):
    """Standard univariate densities available for r"""
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value: Union[str, 'MomentumKind']) -> 'MomentumKind':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(f"Unknown momentum kind: {value}")


@dataclass(frozen=True)
class MomentumModel:
    """Per-coordinate standard Laplace or Gaussian momentum on R^d"""
    kind: MomentumKind = MomentumKind.LAPLACE
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'kind', MomentumKind.parse(self.kind))
        if self.dim < 1:
            raise InvalidArgumentError(f"Momentum dimension must be >= 1, got {self.dim}")

    # ---- univariate pieces, elementwise ----

    def cdf(self, v) -> np.ndarray:
        """R(v), clamped to [CDF_CLAMP, 1 - CDF_CLAMP]"""
        v = np.asarray(v, dtype=float)
        if np.any(np.isnan(v)):
            raise InvalidArgumentError("Momentum CDF evaluated at NaN")
        if self.kind is MomentumKind.LAPLACE:
            tail = 0.5 * np.exp(-np.abs(v))
            p = np.where(v < 0, tail, 1.0 - tail)
        else:
            p = ndtr(v)
        return np.clip(p, CDF_CLAMP, 1.0 - CDF_CLAMP)

    def quantile(self, p) -> np.ndarray:
        """R^{-1}(p) for p in the open unit interval"""
        p = np.asarray(p, dtype=float)
        if np.any(~((p > 0.0) & (p < 1.0))):
            raise InvalidArgumentError("Momentum quantile requires 0 < p < 1")
        if self.kind is MomentumKind.LAPLACE:
            # smaller tail mass keeps full relative precision on both sides
            magnitude = -np.log(2.0 * np.minimum(p, 1.0 - p))
            return np.where(p < 0.5, -magnitude, magnitude)
        return ndtri(p)

    # ---- product density ----

    def logpdf(self, rho) -> np.ndarray:
        """log m(rho), summed over the last axis"""
        rho = np.asarray(rho, dtype=float)
        if self.kind is MomentumKind.LAPLACE:
            return np.sum(LOG_HALF - np.abs(rho), axis=-1)
        return np.sum(-HALF_LOG_2PI - 0.5 * rho ** 2, axis=-1)

    def grad_logpdf(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind is MomentumKind.LAPLACE:
            # sign(0) = 0 on the kink
            return -np.sign(rho)
        return -rho

    def logpdf_grad(self, rho) -> Tuple[np.ndarray, np.ndarray]:
        rho = np.asarray(rho, dtype=float)
        if not np.all(np.isfinite(rho)):
            raise InvalidArgumentError("Momentum density evaluated at a non-finite point")
        return self.logpdf(rho), self.grad_logpdf(rho)

    def sample(self, rng: np.random.Generator, shape: Tuple[int, ...] = ()) -> np.ndarray:
        size = tuple(shape) + (self.dim,)
        if self.kind is MomentumKind.LAPLACE:
            return rng.laplace(0.0, 1.0, size=size)
        return rng.standard_normal(size)

    def with_dim(self, dim: int) -> 'MomentumModel':
        return MomentumModel(self.kind, dim)
