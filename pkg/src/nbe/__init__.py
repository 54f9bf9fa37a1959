"""Neural Bayes estimators for replicated data.

Submodules: :mod:`numerics`, :mod:`models`, :mod:`network`,
:mod:`training`, :mod:`likelihood`, :mod:`assess` and :mod:`cli`.
"""

from ._backend import BACKEND
from ._errors import (
    CheckpointError,
    CholeskyError,
    DomainError,
    NBEError,
    SimulationError,
    SingularMatrixError,
    TrainingDivergence,
)

__version__ = "0.1.0"
