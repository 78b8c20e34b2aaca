"""Causal testing of software from observational run data."""

__version__ = "0.1.0"

from .dataset import Dataset, load_csv, positivity_check, read_csv, stratify, write_csv
from .estimation import (
    EffectEstimate,
    Intercept,
    Interaction,
    Linear,
    Power,
    design_matrix,
    iv_estimate,
    ols_fit,
    unit_ate,
)
from .graph import CausalDag, adjustment_set, d_separated, load_dag, parse_dag, serialize_dag, validate_instrument
from .scm import ScmSpec, builtin_spec, drop_unobserved, generate
from .testing import (
    CausalTestCase,
    IVConfig,
    OLSConfig,
    Oracle,
    OracleKind,
    TestOutcome,
    Verdict,
    compare_across_groups,
    evaluate,
    run_suite,
)
