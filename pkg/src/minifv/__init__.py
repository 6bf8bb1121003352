"""minifv: a mini finite-volume cavity solver with cutoff-guarded lane
dispatch, pooled allocation and a unified-vs-discrete memory cost model."""

from .bench import (RunConfig, compare_reports, load_config, parse_config,
                    read_report, run_benchmark)
from .dispatch import (ExecPolicy, Lane, TraceEvent, run_kernel, run_serial,
                       select_lane, to_chrome_trace, write_chrome_trace)
from .errors import (AssemblyError, MiniFvError, SingularPreconditionerError,
                     SolverBreakdownError)
from .field import (Field, FieldSizeError, axpy, copy_field,
                    elementwise_ternary, field_scope, reduce_dot,
                    reduce_max_abs, reduce_sum, reduce_sum_abs)
from .ldu import (LduMatrix, SolverPerf, amul, diag_precondition, dilu_apply,
                  dilu_factor, norm_factor, pbicgstab_solve)
from .memory import (BufferHandle, MigrationProfile, PoolAllocator,
                     ResidencyLedger, profile_summary)
from .mesh import (Addressing, Mesh, Patch, build_structured_mesh,
                   chain_addressing, face_cells)
from .simple import (IterationReport, SimpleControls, SimpleState,
                     assemble_momentum, assemble_pressure, continuity_error,
                     gauss_gradient, initialize_state, momentum_correct,
                     momentum_predict, pressure_correct, run_simple,
                     simple_outer_iteration)

__version__ = "0.1.0"
