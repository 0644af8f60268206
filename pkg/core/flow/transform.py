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
Bijections on the augmented space used as MixFlow maps
"""
from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from core.flow.state import AugmentedState


class FlowTransform(ABC):
    """
    A bijection T on augmented space.

    forward(s) returns (T(s), log J(s)); inverse(s) returns (T^{-1}(s), log J(T^{-1}(s))),
    i.e. the log-Jacobian forward() would report at the preimage.
    """

    @property
    @abstractmethod
    def dim(self) -> int:
        """Dimension d of the position block"""

    @abstractmethod
    def forward(self, state: AugmentedState) -> Tuple[AugmentedState, np.ndarray]:
        pass

    @abstractmethod
    def inverse(self, state: AugmentedState) -> Tuple[AugmentedState, np.ndarray]:
        pass

    def iterate(self, state: AugmentedState, k: int) -> AugmentedState:
        """T^k(state) for k >= 0, or T^{|k|} of the inverse for k < 0"""
        step = self.forward if k >= 0 else self.inverse
        for _ in range(abs(k)):
            state, _ = step(state)
        return state


class IdentityTransform(FlowTransform):
    """T = id; every mixture component equals the reference"""

    def __init__(self, dim: int):
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def forward(self, state):
        return state, np.zeros(state.batch_shape)

    def inverse(self, state):
        return state, np.zeros(state.batch_shape)
