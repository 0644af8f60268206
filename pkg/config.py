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
Configuration and constants for MixFlow
"""
import math
import os

VERSION = '1.0.0'

# Numerical configuration
# CDF outputs are kept inside [CDF_CLAMP, 1 - CDF_CLAMP] before any quantile call
CDF_CLAMP = float(os.environ.get('MIXFLOW_CDF_CLAMP', '1e-15'))

# Fraction of z that must survive the z - q_bar subtraction in the incremental
# ELBO recursions; below it the density is re-evaluated directly
CANCELLATION_TOLERANCE = float(os.environ.get('MIXFLOW_CANCELLATION_TOLERANCE', '1e-4'))

# Hamiltonian flow defaults
DEFAULT_XI = math.pi / 16
DEFAULT_MOMENTUM = os.environ.get('MIXFLOW_MOMENTUM', 'laplace').lower()

# Replication defaults
DEFAULT_REPLICATES = int(os.environ.get('MIXFLOW_REPLICATES', '32'))
WORKERS = int(os.environ.get('MIXFLOW_WORKERS', '1'))

# Kernel Stein discrepancy (IMQ kernel) defaults
KSD_C = 1.0
KSD_BETA = -0.5
KSD_BLOCK_SIZE = 256

# Mean-field reference fitting defaults
MEANFIELD_STEPS = 2000
MEANFIELD_STEP_SIZE = 0.005
MEANFIELD_BATCH = 10

# Output file names written by the experiment commands
OUTPUT_FILES = {
    'sweep': 'elbo_sweep.csv',
    'sweep_summary': 'elbo_summary.csv',
    'best': 'best.json',
    'samples': 'samples.csv',
    'elbo_vs_n': 'elbo_vs_n.csv',
    'elbo_vs_burnin': 'elbo_vs_burnin.csv',
    'ksd': 'ksd.json',
    'stability': 'stability.csv',
    'meta': 'run_meta.json',
    'density': 'density.csv',
    'diagnostics': 'diagnostics.json',
}

# Logging configuration
import logging
LOG_LEVEL = os.environ.get('MIXFLOW_LOG_LEVEL', 'INFO').upper()
logging.basicConfig(level=getattr(logging, LOG_LEVEL, logging.INFO))
logger = logging.getLogger('mixflow')

logger.debug(f"MixFlow {VERSION}: CDF clamp {CDF_CLAMP}, workers {WORKERS}, default momentum {DEFAULT_MOMENTUM}")
