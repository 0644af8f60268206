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
Exception hierarchy for MixFlow
"""
from typing import Any, Optional


class MixFlowError(Exception):
    """Base class for every error raised by this package"""


class InvalidArgumentError(MixFlowError, ValueError):
    """A precondition on an argument was violated"""


class ConfigError(MixFlowError, ValueError):
    """An experiment configuration is malformed or inconsistent"""


class DegenerateInputError(MixFlowError, ValueError):
    """Input has no information to estimate from (e.g. a constant series)"""


class DataFormatError(MixFlowError, ValueError):
    """A dataset file could not be parsed into a numeric table"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalDivergenceError(MixFlowError, ArithmeticError):
    """A flow or density computation produced a non-finite value"""

    def __init__(self, message: str, step: Optional[int] = None, operation: str = ''):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.operation = operation


class OptimizationError(MixFlowError, RuntimeError):
    """Stochastic optimisation left the finite region"""

    def __init__(self, message: str, last_iterate: Any = None, iteration: Optional[int] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iteration = iteration
