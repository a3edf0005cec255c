"""Poisson-space Malliavin calculus on finite cell grids."""
__version__ = "0.1.0"

from .errors import NumericalGuardError, ToolkitError, ValidationError  # noqa: E402
from .space import (  # noqa: E402
    DEFAULT_TOL,
    DiscreteSpace,
    Kernel,
    Tolerance,
    inner_product,
    integrate,
    lp_norm,
    slice_kernel,
)
from .algebra import (  # noqa: E402
    contraction_norm,
    g_hat_operator,
    g_operator,
    lemma53_constant,
    product_expand,
    star_contract,
    symmetrize,
)
from .chaos import (  # noqa: E402
    ChaosExpansion,
    DerivativeField,
    derivative,
    divergence,
    malliavin_inner,
    ou_generator,
    pseudo_inverse,
)
from .bounds import (  # noqa: E402
    CovMatrix,
    assemble_d2,
    assemble_d3,
    clt_conditions,
    first_chaos_bounds,
    pair_term_bound,
    single_double_bound,
    third_moment_term,
)
from .simulate import (  # noqa: E402
    DEFAULT_SEED,
    diag_free_projection,
    empirical_cov,
    empirical_discrepancy,
    eval_chaos,
    eval_multiple_integral,
    make_test_family,
    sample_counts,
)
