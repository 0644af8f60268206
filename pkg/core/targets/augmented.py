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
Augmented target pi_bar(x, rho, u) = pi(x) m(rho) 1[0 <= u < 1]
"""
import numpy as np

from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState
from core.targets.base import TargetModel


class AugmentedTarget(TargetModel):
    """
    Target over the stacked (x, rho) coordinates of dimension 2d.

    log_density also accepts an AugmentedState, in which case a pseudotime
    outside [0, 1) gives -inf.
    """

    def __init__(self, base: TargetModel, momentum: MomentumModel):
        super().__init__(2 * base.dim)
        self.base = base
        self.momentum = momentum if momentum.dim == base.dim else momentum.with_dim(base.dim)
        self.name = f'augmented_{base.name}'
        self.normalization_known = base.normalization_known

    def _split(self, z):
        if isinstance(z, AugmentedState):
            return z.x, z.rho, z.u
        z = self._as_points(z)
        d = self.base.dim
        return z[..., :d], z[..., d:], None

    def log_density(self, z) -> np.ndarray:
        x, rho, u = self._split(z)
        value = self.base.log_density(x) + self.momentum.logpdf(rho)
        if u is None:
            return value
        return np.where((u >= 0.0) & (u < 1.0), value, -np.inf)

    def grad_log_density(self, z) -> np.ndarray:
        x, rho, _ = self._split(z)
        return np.concatenate([self.base.grad_log_density(x), self.momentum.grad_logpdf(rho)], axis=-1)


def augment_target(base: TargetModel, momentum: MomentumModel) -> AugmentedTarget:
    return AugmentedTarget(base, momentum)
