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
CSV dataset ingestion and standardization for the regression targets
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import logger
from core.errors import DataFormatError, InvalidArgumentError


class Standardize(Enum):
    FEATURES = "features"
    FEATURES_AND_RESPONSE = "features_and_response"
    NONE = "none"

    @classmethod
    def parse(cls, value: Union[str, 'Standardize']) -> 'Standardize':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(f"Unknown standardization mode: {value}")


@dataclass(frozen=True)
class Dataset:
    """
    Regression inputs: features (J, p) and responses (J,)

    The column statistics describe the raw file columns; with no
    standardization they are left empty.
    """
    features: np.ndarray
    responses: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    response_name: str = 'y'
    standardize: Standardize = Standardize.NONE
    feature_means: Optional[np.ndarray] = None
    feature_scales: Optional[np.ndarray] = None
    response_mean: Optional[float] = None
    response_scale: Optional[float] = None

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        responses = np.asarray(self.responses, dtype=float).reshape(-1)
        if features.shape[0] != responses.shape[0]:
            raise InvalidArgumentError(
                f"{features.shape[0]} feature rows but {responses.shape[0]} responses")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'responses', responses)
        if not self.feature_names:
            object.__setattr__(self, 'feature_names', [f'x{i + 1}' for i in range(features.shape[1])])

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def provenance(self) -> dict:
        """Column statistics as plain JSON-ready values"""
        def as_list(a):
            return None if a is None else [float(v) for v in a]

        return {
            'standardize': self.standardize.value,
            'feature_names': list(self.feature_names),
            'response_name': self.response_name,
            'feature_means': as_list(self.feature_means),
            'feature_scales': as_list(self.feature_scales),
            'response_mean': self.response_mean,
            'response_scale': self.response_scale,
            'sd_convention': 'population',
        }


def standardize_columns(values: np.ndarray, names: List[str]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Center each column and divide by its population standard deviation

    Args:
        values: Matrix (J, k)
        names: Column names used in error messages

    Returns:
        tuple: (standardized matrix, column means, column scales)

    Raises:
        DataFormatError: If a column is constant
    """
    values = np.asarray(values, dtype=float)
    for j, name in enumerate(names):
        if np.ptp(values[:, j]) == 0:
            raise DataFormatError(f"Column '{name}' is constant and cannot be standardized", column=name)
    means = values.mean(axis=0)
    scales = values.std(axis=0, ddof=0)
    return (values - means) / scales, means, scales


def _parse_column(raw: pd.Series, name: str) -> np.ndarray:
    parsed = np.empty(len(raw))
    for i, cell in enumerate(raw):
        # row numbers are 1-based data rows (the header is not counted)
        text = cell.strip() if isinstance(cell, str) else ''
        if not text:
            raise DataFormatError(f"Missing value in row {i + 1}, column '{name}'", row=i + 1, column=name)
        try:
            value = float(text)
        except ValueError:
            raise DataFormatError(f"Non-numeric value {cell!r} in row {i + 1}, column '{name}'",
                                  row=i + 1, column=name)
        if not np.isfinite(value):
            raise DataFormatError(f"Non-finite value {cell!r} in row {i + 1}, column '{name}'",
                                  row=i + 1, column=name)
        parsed[i] = value
    return parsed


def load_dataset(path, response_column: str, standardize='features') -> Dataset:
    """
    Load a comma-separated numeric table with a header row

    Args:
        path: CSV file path (UTF-8)
        response_column: Header name of the response column
        standardize: 'features', 'features_and_response' or 'none'

    Returns:
        Dataset: Features are every column except the response, in file order

    Raises:
        DataFormatError: Missing values, non-numeric cells, unknown response
            column or a constant column under standardization
    """
    mode = Standardize.parse(standardize)
    try:
        # cells are kept as text so every value is parsed by float() exactly once
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"Dataset {path} is empty")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"Dataset {path} is not a valid CSV table: {e}")

    if frame.shape[0] == 0:
        raise DataFormatError(f"Dataset {path} has a header but no rows")
    columns = [str(c) for c in frame.columns]
    if response_column not in columns:
        raise DataFormatError(f"Response column '{response_column}' not found in {path}", column=response_column)
    feature_names = [c for c in columns if c != response_column]
    if not feature_names:
        raise DataFormatError(f"Dataset {path} has no feature columns")

    parsed = {name: _parse_column(frame[name], name) for name in columns}
    features = np.column_stack([parsed[name] for name in feature_names])
    responses = parsed[response_column]

    feature_means = feature_scales = None
    response_mean = response_scale = None
    if mode is not Standardize.NONE:
        features, feature_means, feature_scales = standardize_columns(features, feature_names)
    if mode is Standardize.FEATURES_AND_RESPONSE:
        standardized, means, scales = standardize_columns(responses[:, None], [response_column])
        responses = standardized[:, 0]
        response_mean, response_scale = float(means[0]), float(scales[0])

    logger.info(f"Loaded dataset {path}: {features.shape[0]} rows, {features.shape[1]} features, "
                f"standardize={mode.value}")
    return Dataset(features, responses, feature_names, response_column, mode,
                   feature_means, feature_scales, response_mean, response_scale)
