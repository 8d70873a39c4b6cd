"""Polynomial approximation of discounted moments of Markov processes."""

from .basis import (
    BasisKind,
    BasisLayout,
    CoefficientVector,
    TaylorCoefficients,
    enumerate_basis,
    evaluate,
    reduce_degree,
    taylor_overflow,
)
from .errors import NumericalError
from .expmv import ExpmvResult, TimeGrid, expmv_grid, phragmen_series, resolvent_norm, sensitivity
from .generator import (
    BKModel,
    CIRModel,
    CreditModel,
    MatrixGenerator,
    ProjectionKind,
    ProjectionSpec,
    build_ay_univariate,
    build_bk,
    build_cir,
    build_credit,
    build_generator,
    perturb_generator,
)
from .models import (
    MigrationMatrix,
    bk_moment_map,
    bk_moment_map_inverse,
    cir_bond_price,
    cir_bond_yield,
    credit_analytic_1d,
    credit_analytic_2d_commuting,
    noncommutativity,
)
from .montecarlo import McEstimate, SimConfig, mc_bk_yield, mc_cir_bond, mc_migration, mc_migration_grid
from .pricing import bond_price_sensitivity, bond_prices, bond_yields, migration_matrices

__version__ = "0.1.0"
