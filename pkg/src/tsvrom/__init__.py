"""Model order reduction for thermal stress in arrays of through-silicon vias.

A unit block (one via, its liner and the surrounding silicon) is solved once
per interpolation node on a fine hexahedral mesh; the resulting reduced
stiffness and load act as a single abstract element in an array-level
solve. A fine-mesh reference solver and a linear-superposition estimator are
included for comparison.
"""

from .baseline import (
    DofCapExceeded,
    ReferenceSolution,
    SuperpositionModel,
    normalized_mae,
    reference_solve,
    superposition_field,
    superposition_single_solve,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .global_stage import ArrayLayout, GlobalBC, SubmodelBoundaryField, run_global_stage
from .linalg import IterOptions, iterative_solve
from .materials import DEFAULT_MATERIALS, Material, MaterialTable
from .mesh import TensorGrid, UnitBlockGeometry, build_unit_block_mesh, default_grading
from .rom import NodeLayout, ReducedOrderModel, build_rom, load_rom, num_element_dofs, save_rom
from .stressgrid import StressGrid

__version__ = "0.1.0"
