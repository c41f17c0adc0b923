"""Virtual element solver for the transient Boussinesq system in
stream-function/temperature form on polygonal meshes."""

from .mesh import (PolygonalMesh, generate_family, load_mesh, save_mesh,
                   validate)
from .problems import (accuracy_problem, cavity_problem, decay_problem,
                       small_viscosity_problem)
from .solver import BoussinesqSolver, SolutionState, TimeStepperConfig

__version__ = "0.1.0"

__all__ = [
    "PolygonalMesh", "generate_family", "load_mesh", "save_mesh", "validate",
    "accuracy_problem", "cavity_problem", "decay_problem",
    "small_viscosity_problem",
    "BoussinesqSolver", "SolutionState", "TimeStepperConfig",
    "__version__",
]
