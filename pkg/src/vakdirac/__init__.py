"""Numerics for vakonomic and nonholonomic mechanics via Dirac structures.

The package implements, in plain coordinates: the permutation maps
between the iterated tangent/cotangent bundles, the multiplier-extended
(vakonomic) Lagrangian with its energy and Dirac differential, residual
evaluators for the Dirac structures the dynamics lives on, implicit DAE
integration of the vakonomic equations next to the Lagrange-d'Alembert
equations, and a finite-difference pullback test exhibiting which of the
two dynamical submanifolds is Lagrangian.

Hot numerical loops run on a compiled extension when it is available and
fall back to a pure-Python mirror otherwise; `kernel_backend` tells
which one is active.
"""

from ._kernels import BACKEND as kernel_backend
from .bundles import (
    BarCovector,
    ExtendedCovector,
    TStarTPoint,
    TStarTStarPoint,
    TTStarPoint,
    VakCotangentPoint,
    gamma,
    kappa,
    kappa_inv,
    omega_flat,
    omega_flat_inv,
    omega_tt,
    presymp_bar_flat,
    presymp_hat_flat,
    tilde_gamma,
)
from .catalog import builtin, builtin_names
from .dirac import (
    DiracResidual,
    LinearDiracData,
    bar_dirac_residual,
    check_self_orthogonal,
    hat_dirac_residual,
    induced_dirac_residual,
    linear_dirac_basis,
)
from .dynamics import (
    InitialData,
    SolverConfig,
    Trajectory,
    energy_series,
    integrate_nonholonomic,
    integrate_vakonomic,
    nonholonomic_rhs,
    solve_algebraic,
    theorem_equivalence_report,
    vak_rhs,
)
from .expressions import Expression, parse
from .submanifolds import (
    SubmanifoldChart,
    embed,
    obstruction_coefficient,
    pullback_form,
    pullback_matrix,
    random_chart,
    tangent_basis,
)
from .systems import (
    ScalarField,
    SystemSpec,
    VakState,
    dE,
    d_vak_lagrangian,
    dirac_differential,
    eval_with_grad,
    load_system_file,
    parse_system_text,
    vak_energy,
    vak_lagrangian,
)

__version__ = "0.1.0"
