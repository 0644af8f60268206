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
Augmented state (position, momentum, pseudotime) for Hamiltonian MixFlows
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.errors import InvalidArgumentError, NumericalDivergenceError


@dataclass(frozen=True)
class AugmentedState:
    """
    A point (x, rho, u), or a batch of them.

    x and rho have shape (..., d); u has shape (...). A single state has
    x.shape == (d,) and a 0-d u.
    """
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if x.ndim == 0 or x.shape[-1] < 1:
            raise InvalidArgumentError("Position must be a vector of length d >= 1")
        if x.shape != rho.shape:
            raise InvalidArgumentError(f"Position shape {x.shape} and momentum shape {rho.shape} differ")
        if u.shape != x.shape[:-1]:
            raise InvalidArgumentError(f"Pseudotime shape {u.shape} does not match batch shape {x.shape[:-1]}")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'rho', rho)
        object.__setattr__(self, 'u', u)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.x.shape[:-1]

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("A single state has no length")
        return self.batch_shape[0]

    def __getitem__(self, index) -> 'AugmentedState':
        return AugmentedState(self.x[index], self.rho[index], self.u[index])

    def merge(self, mask: np.ndarray, other: 'AugmentedState') -> 'AugmentedState':
        """Take `other` where mask is True, self elsewhere"""
        mask = np.asarray(mask, dtype=bool)
        return AugmentedState(
            np.where(mask[..., None], other.x, self.x),
            np.where(mask[..., None], other.rho, self.rho),
            np.where(mask, other.u, self.u),
        )

    def to_array(self) -> np.ndarray:
        """Flatten to (..., 2d + 1) as [x, rho, u]"""
        return np.concatenate([self.x, self.rho, self.u[..., None]], axis=-1)

    @classmethod
    def from_array(cls, values: np.ndarray, dim: int) -> 'AugmentedState':
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != 2 * dim + 1:
            raise InvalidArgumentError(f"Expected {2 * dim + 1} columns, got {values.shape[-1]}")
        return cls(values[..., :dim], values[..., dim:2 * dim], values[..., 2 * dim])

    @classmethod
    def stack(cls, states) -> 'AugmentedState':
        states = list(states)
        return cls(
            np.stack([s.x for s in states]),
            np.stack([s.rho for s in states]),
            np.stack([s.u for s in states]),
        )

    def distance(self, other: 'AugmentedState') -> np.ndarray:
        """Euclidean distance with the pseudotime difference taken on the unit circle"""
        du = np.abs(self.u - other.u)
        du = np.minimum(du, 1.0 - du)
        sq = np.sum((self.x - other.x) ** 2, axis=-1) + np.sum((self.rho - other.rho) ** 2, axis=-1) + du ** 2
        return np.sqrt(sq)

    def is_finite(self) -> np.ndarray:
        return (
            np.all(np.isfinite(self.x), axis=-1)
            & np.all(np.isfinite(self.rho), axis=-1)
            & np.isfinite(self.u)
        )

    def check_finite(self, operation: str, step: Optional[int] = None) -> 'AugmentedState':
        if not np.all(self.is_finite()):
            raise NumericalDivergenceError(f"Non-finite state in {operation}", step=step, operation=operation)
        return self
