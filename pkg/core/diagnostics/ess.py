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
Batch-means effective sample size
"""
import math
from typing import List

import numpy as np

from config import logger
from core.errors import DegenerateInputError, InvalidArgumentError

MIN_SERIES_LENGTH = 10


def ess_batch_means(series) -> float:
    """
    ESS = n * var(series) / sigma^2_bm with batch size floor(sqrt(n))

    Only the floor(n / b) full batches enter the long-run variance; the
    result is clipped below at 1 but not above at n.

    Raises:
        InvalidArgumentError: Fewer than 10 values or non-finite values
        DegenerateInputError: Constant series
    """
    y = np.asarray(series, dtype=float).reshape(-1)
    n = y.shape[0]
    if n < MIN_SERIES_LENGTH:
        raise InvalidArgumentError(f"ESS needs at least {MIN_SERIES_LENGTH} values, got {n}")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("ESS series contains non-finite values")
    if np.ptp(y) == 0:
        raise DegenerateInputError("ESS of a constant series is undefined")

    b = math.isqrt(n)
    a = n // b
    batch_means = y[:a * b].reshape(a, b).mean(axis=1)
    long_run = b * np.sum((batch_means - batch_means.mean()) ** 2) / (a - 1)
    if long_run == 0:
        logger.warning(f"Batch means are identical over {a} batches; ESS is unbounded")
        return math.inf
    return max(1.0, float(n * y.var(ddof=1) / long_run))


def ess_per_coordinate(samples) -> List[float]:
    """ess_batch_means of every column of an (n, d) series"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    return [ess_batch_means(samples[:, j]) for j in range(samples.shape[1])]
