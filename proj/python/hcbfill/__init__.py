"""Gap infilling over bidirectional conditional models."""

from ._hcbfill import *  # noqa: F401,F403
from ._hcbfill import REMOTE_URL_ENV, Error


def exact_model(alphabet_size, length, seed=1, concentration=1.0, mask_mass=1e-4):
    """ExactMarginalModel over a Dirichlet-drawn joint."""
    joint = JointTable.random(alphabet_size, length, seed, concentration)  # noqa: F405
    return ExactMarginalModel(joint, mask_mass)  # noqa: F405


__version__ = "0.1.0"
