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
Synthetic target distributions with normalised log-densities and analytic gradients
1-D normal / Gaussian mixture / Cauchy, banana, Neal's funnel, cross and warped Gaussian
"""
import math

import numpy as np
from scipy.special import logsumexp, softmax

from core.errors import InvalidArgumentError
from core.targets.base import TargetModel

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class NormalTarget(TargetModel):
    """Diagonal Gaussian N(mean, diag(scale^2))"""
    normalization_known = True

    def __init__(self, mean, scale, name: str = 'normal'):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), mean.shape).copy()
        if np.any(scale <= 0):
            raise InvalidArgumentError("Normal target scales must be positive")
        super().__init__(mean.shape[0])
        self.name = name
        self.mean = mean
        self.scale = scale

    def log_density(self, x):
        z = (self._as_points(x) - self.mean) / self.scale
        return np.sum(-HALF_LOG_2PI - np.log(self.scale) - 0.5 * z ** 2, axis=-1)

    def grad_log_density(self, x):
        return -(self._as_points(x) - self.mean) / self.scale ** 2


class GaussianMixtureTarget(TargetModel):
    """Finite mixture of diagonal Gaussians, evaluated with log-sum-exp"""
    normalization_known = True

    def __init__(self, weights, means, scales, name: str = 'mixture'):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        scales = np.broadcast_to(np.asarray(scales, dtype=float), means.shape).copy()
        if means.ndim != 2 or weights.shape != (means.shape[0],):
            raise InvalidArgumentError("Mixture means must be (K, d) with K weights")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("Mixture weights must be positive and sum to one")
        super().__init__(means.shape[1])
        self.name = name
        self.log_weights = np.log(weights)
        self.means = means
        self.scales = scales

    def _component_terms(self, x):
        # (..., K)
        z = (x[..., None, :] - self.means) / self.scales
        return self.log_weights + np.sum(-HALF_LOG_2PI - np.log(self.scales) - 0.5 * z ** 2, axis=-1)

    def log_density(self, x):
        return logsumexp(self._component_terms(self._as_points(x)), axis=-1)

    def grad_log_density(self, x):
        x = self._as_points(x)
        resp = softmax(self._component_terms(x), axis=-1)
        inner = -(x[..., None, :] - self.means) / self.scales ** 2
        return np.sum(resp[..., None] * inner, axis=-2)


class CauchyTarget(TargetModel):
    """Independent Cauchy(loc, scale) coordinates"""
    normalization_known = True

    def __init__(self, loc=0.0, scale=1.0, dim: int = 1, name: str = 'cauchy'):
        super().__init__(dim)
        self.name = name
        self.loc = float(loc)
        self.scale = float(scale)

    def log_density(self, x):
        z = (self._as_points(x) - self.loc) / self.scale
        return np.sum(-math.log(math.pi * self.scale) - np.log1p(z ** 2), axis=-1)

    def grad_log_density(self, x):
        z = (self._as_points(x) - self.loc) / self.scale
        return -2.0 * z / (self.scale * (1.0 + z ** 2))


class BananaTarget(TargetModel):
    """
    x = (y1, y2 + b y1^2 - var1 b), y ~ N(0, diag(var1, var2)); unit-Jacobian warp
    """
    name = 'banana'
    normalization_known = True

    def __init__(self, b: float = 0.1, var1: float = 100.0, var2: float = 1.0):
        super().__init__(2)
        self.b = float(b)
        self.var1 = float(var1)
        self.var2 = float(var2)

    def unwarp(self, x):
        x = self._as_points(x)
        y1 = x[..., 0]
        y2 = x[..., 1] - self.b * x[..., 0] ** 2 + self.var1 * self.b
        return y1, y2

    def log_density(self, x):
        y1, y2 = self.unwarp(x)
        return (-2 * HALF_LOG_2PI - 0.5 * math.log(self.var1 * self.var2)
                - 0.5 * y1 ** 2 / self.var1 - 0.5 * y2 ** 2 / self.var2)

    def grad_log_density(self, x):
        x = self._as_points(x)
        y1, y2 = self.unwarp(x)
        g2 = -y2 / self.var2
        g1 = -y1 / self.var1 - 2.0 * self.b * x[..., 0] * g2
        return np.stack([g1, g2], axis=-1)


class FunnelTarget(TargetModel):
    """
    Neal's funnel: x1 ~ N(0, sigma2), x_i | x1 ~ N(0, exp(x1 / 2)) for i >= 2

    exp(x1 / 2) is the conditional variance.
    """
    name = 'funnel'
    normalization_known = True

    def __init__(self, dim: int = 2, sigma2: float = 36.0):
        if dim < 2:
            raise InvalidArgumentError(f"Funnel needs dimension >= 2, got {dim}")
        super().__init__(dim)
        self.sigma2 = float(sigma2)

    def log_density(self, x):
        x = self._as_points(x)
        x1, rest = x[..., 0], x[..., 1:]
        log_var = 0.5 * x1
        head = -HALF_LOG_2PI - 0.5 * math.log(self.sigma2) - 0.5 * x1 ** 2 / self.sigma2
        tail = np.sum(-HALF_LOG_2PI - 0.5 * log_var[..., None] - 0.5 * rest ** 2 * np.exp(-log_var)[..., None], axis=-1)
        return head + tail

    def grad_log_density(self, x):
        x = self._as_points(x)
        x1, rest = x[..., 0], x[..., 1:]
        precision = np.exp(-0.5 * x1)[..., None]
        g1 = -x1 / self.sigma2 + np.sum(-0.25 + 0.25 * rest ** 2 * precision, axis=-1)
        return np.concatenate([g1[..., None], -rest * precision], axis=-1)


class WarpedGaussianTarget(TargetModel):
    """
    Gaussian N(0, diag(1, s^2)) warped by rotating each point by -|y|/2.

    Evaluated through the radius-preserving inverse y = Rot(|x|/2) x (unit Jacobian).
    """
    name = 'warped_gaussian'
    normalization_known = True

    def __init__(self, minor_scale: float = 0.12):
        super().__init__(2)
        self.variances = np.array([1.0, float(minor_scale) ** 2])

    def unwarp(self, x):
        x = self._as_points(x)
        theta = 0.5 * np.linalg.norm(x, axis=-1)
        c, s = np.cos(theta), np.sin(theta)
        y1 = c * x[..., 0] - s * x[..., 1]
        y2 = s * x[..., 0] + c * x[..., 1]
        return np.stack([y1, y2], axis=-1), theta

    def log_density(self, x):
        y, _ = self.unwarp(x)
        return np.sum(-HALF_LOG_2PI - 0.5 * np.log(self.variances) - 0.5 * y ** 2 / self.variances, axis=-1)

    def grad_log_density(self, x):
        x = self._as_points(x)
        y, theta = self.unwarp(x)
        g = -y / self.variances
        c, s = np.cos(theta), np.sin(theta)
        # Rot(theta)^T g
        base = np.stack([c * g[..., 0] + s * g[..., 1], -s * g[..., 0] + c * g[..., 1]], axis=-1)
        # derivative through theta = |x| / 2
        r = 2.0 * theta
        twist = -y[..., 1] * g[..., 0] + y[..., 0] * g[..., 1]
        safe_r = np.where(r > 0, r, 1.0)
        radial = np.where(r[..., None] > 0, x / (2.0 * safe_r[..., None]), 0.0)
        return base + radial * twist[..., None]


def _cross():
    means = [[0.0, 2.0], [-2.0, 0.0], [2.0, 0.0], [0.0, -2.0]]
    scales = [[0.15, 1.0], [1.0, 0.15], [1.0, 0.15], [0.15, 1.0]]
    return GaussianMixtureTarget(np.full(4, 0.25), means, scales, name='cross')


def _gmm1d():
    return GaussianMixtureTarget([0.5, 0.3, 0.2], [[-3.0], [0.0], [3.0]], [[1.5], [0.8], [0.8]], name='gmm1d')


SYNTHETIC_TARGETS = {
    'normal': lambda mean=0.0, scale=1.0, dim=None: NormalTarget(
        np.full(dim, mean) if dim is not None and np.ndim(mean) == 0 else mean, scale),
    'gauss1d': lambda: NormalTarget([2.0], [2.0], name='gauss1d'),
    'gmm1d': _gmm1d,
    'cauchy1d': lambda: CauchyTarget(0.0, 1.0, name='cauchy1d'),
    'banana': BananaTarget,
    'funnel': FunnelTarget,
    'cross': _cross,
    'warped_gaussian': WarpedGaussianTarget,
}


def synthetic_target(name: str, **params) -> TargetModel:
    """
    Build a shipped synthetic target by name

    Args:
        name: One of SYNTHETIC_TARGETS
        **params: Family parameters (e.g. b for banana, dim and sigma2 for funnel)

    Returns:
        TargetModel: Normalised target (normalization_known = True)
    """
    factory = SYNTHETIC_TARGETS.get(name)
    if factory is None:
        raise InvalidArgumentError(f"Unknown synthetic target: {name}")
    try:
        return factory(**params)
    except TypeError as e:
        raise InvalidArgumentError(f"Invalid parameters for {name}: {e}")
