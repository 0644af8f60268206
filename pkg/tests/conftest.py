"""
Shared fixtures for the MixFlow test suite
"""
import numpy as np
import pytest

from core.flow.hamiltonian import HamFlowParams, HamiltonianFlow
from core.flow.momentum import MomentumModel
from core.flow.transform import IdentityTransform
from core.mixflow import MixFlow
from core.targets.reference import standard_reference
from core.targets.synthetic import NormalTarget, synthetic_target


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def banana():
    return synthetic_target('banana')


@pytest.fixture
def std_normal():
    return NormalTarget([0.0], [1.0])


def make_flow(target, epsilon=0.05, n_leapfrog=10, n_steps=10, burn_in=0, momentum='laplace', **params):
    """MixFlow with a standard reference and a Hamiltonian map on `target`"""
    model = MomentumModel(momentum, target.dim)
    reference = standard_reference(target.dim, momentum, use_pseudotime=params.pop('use_pseudotime', True))
    transform = HamiltonianFlow(HamFlowParams(epsilon, n_leapfrog, **params), target, model)
    return MixFlow(reference, transform, n_steps, burn_in)


def make_identity_flow(dim, n_steps=5, burn_in=0, momentum='laplace'):
    return MixFlow(standard_reference(dim, momentum), IdentityTransform(dim), n_steps, burn_in)


@pytest.fixture
def banana_flow(banana):
    return make_flow(banana, epsilon=0.2, n_leapfrog=5, n_steps=20)
