"""Weight-update forensics for locate-then-edit model editing.

Closed-form ROME, MEMIT and AlphaEdit updates, an attack that reads the edited
subjects and prompts back out of the update, the subspace camouflage defense,
and numeric checks of the underlying linear algebra, all on a seeded
synthetic world.
"""

from .editors import (
    Covariance,
    EditBatch,
    Method,
    Projector,
    WeightUpdate,
    covariance_from_keys,
    nullspace_projector,
)
from .kster import AttackConfig, AttackReport, RecallTable
from .worldsim import SyntheticWorld, WorldConfig, new_world

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackReport",
    "Covariance",
    "EditBatch",
    "Method",
    "Projector",
    "RecallTable",
    "SyntheticWorld",
    "WeightUpdate",
    "WorldConfig",
    "covariance_from_keys",
    "new_world",
    "nullspace_projector",
]
