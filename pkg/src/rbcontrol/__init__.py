"""Stabilized reduced-basis solvers for parametrized control problems."""

__version__ = "0.1.0"

from .parameters import (  # noqa: F401
    BasisKind,
    Formulation,
    ParameterBox,
    ParameterVector,
    Problem,
    parameter_box,
)
from .grid_fem import (  # noqa: F401
    BoundarySpec,
    FemOperators,
    Mesh,
    MeshSpec,
    assemble_operators,
    assemble_target_rhs,
    build_mesh,
)
from .full_model import (  # noqa: F401
    FullKKT,
    FullOrderModel,
    NormMatrices,
    Snapshot,
    assemble_kkt,
    inf_sup_full,
    load_snapshot,
    make_norm_matrices,
    save_snapshot,
    solve_full,
)
from .reduced_basis import (  # noqa: F401
    ReducedBasis,
    ReducedSystem,
    error_indicator,
    load_basis,
    orthonormal_extend,
    project,
    reduced_inf_sup,
    save_basis,
    solve_reduced,
)
from .stabilization import (  # noqa: F401
    StabilizationUpdate,
    aggregation_update,
    apply_update,
    build_exact_supremizer_basis,
    make_update,
    naive_update,
    supremizer_update,
)
from .greedy import (  # noqa: F401
    GreedyConfig,
    GreedyTrace,
    VerificationReport,
    greedy_train,
    sample_training_set,
    verify,
)
from .bench import (  # noqa: F401
    CellSpec,
    ExperimentGrid,
    ReportRow,
    emit_reports,
    read_table,
    run_cell,
    run_grid,
    write_table,
)
