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
Target model interface
"""
from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from core.errors import InvalidArgumentError


class TargetModel(ABC):
    """
    Unnormalised log-density log p(x) on R^d and its gradient.

    Both methods accept x of shape (..., d) and return (...) and (..., d).
    """
    name: str = 'target'
    normalization_known: bool = False

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidArgumentError(f"Target dimension must be >= 1, got {dim}")
        self.dim = dim

    @abstractmethod
    def log_density(self, x) -> np.ndarray:
        pass

    @abstractmethod
    def grad_log_density(self, x) -> np.ndarray:
        pass

    def log_density_and_grad(self, x) -> Tuple[np.ndarray, np.ndarray]:
        return self.log_density(x), self.grad_log_density(x)

    def _as_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise InvalidArgumentError(f"{self.name} expects points of dimension {self.dim}, got shape {x.shape}")
        return x

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"
