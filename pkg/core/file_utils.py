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
File system utilities for MixFlow
Handles output path validation, result file writing and cleanup of partial outputs
"""
import json
import math
import os
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from config import OUTPUT_FILES, logger


def validate_path(filepath, root):
    """Validate that a path is within the output directory `root`"""
    abs_root = os.path.abspath(root)
    abs_path = os.path.abspath(os.path.join(abs_root, filepath))
    if os.path.commonpath([abs_root, abs_path]) != abs_root:
        raise ValueError(f"Invalid path outside {abs_root}: {filepath}")
    return abs_path


def format_value(value) -> str:
    """Shortest round-trip text for floats; plain text for integers and strings"""
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def jsonable(value: Any) -> Any:
    """Convert numpy values to JSON types; non-finite floats become null"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class OutputSession:
    """
    Writes result files into one output directory

    Every file written is remembered; leaving the context with an exception
    removes them again (and the directory, if this session created it).
    """

    def __init__(self, out_dir):
        self.root = os.path.abspath(out_dir)
        self.written: List[str] = []
        self._created_root = False

    def __enter__(self):
        if not os.path.isdir(self.root):
            os.makedirs(self.root)
            self._created_root = True
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.cleanup()
        return False

    def path(self, key: str) -> str:
        return validate_path(OUTPUT_FILES[key], self.root)

    def write_csv(self, key: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
        """Write rows under a header; every cell goes through format_value"""
        path = self.path(key)
        frame = pd.DataFrame([[format_value(v) for v in row] for row in rows], columns=list(columns), dtype=object)
        self._track(path)
        frame.to_csv(path, index=False, lineterminator='\n')
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, key: str, payload: Dict[str, Any]) -> str:
        path = self.path(key)
        self._track(path)
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(jsonable(payload), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write('\n')
        logger.info(f"Wrote {path}")
        return path

    def _track(self, path: str):
        if path not in self.written:
            self.written.append(path)

    def cleanup(self):
        for path in self.written:
            try:
                os.remove(path)
                logger.info(f"Removed partial output {path}")
            except FileNotFoundError:
                pass
            except OSError as e:
                logger.warning(f"Could not remove partial output {path}: {e}")
        self.written = []
        if self._created_root:
            try:
                os.rmdir(self.root)
            except OSError:
                pass
