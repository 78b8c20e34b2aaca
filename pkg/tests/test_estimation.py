import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causaltest.dataset import DataError, Dataset
from causaltest.estimation import (
    EffectEstimate,
    EstimationError,
    InsufficientDataError,
    Intercept,
    Interaction,
    Linear,
    Power,
    RankDeficientError,
    RegressionFit,
    WeakInstrumentError,
    design_matrix,
    iv_estimate,
    ols_fit,
    parse_term,
    t_quantile,
    unit_ate,
)
from causaltest.scm import Normal, StructuralEquation, builtin_spec, drop_unobserved, generate
from oracles import normal_equation_solve

# t(0.975, dof) by mpmath quadrature of the density plus root finding (oracles.py)
T_975 = {
    1: 12.706204736174694,
    2: 4.302652729749462,
    5: 2.5705818356363146,
    10: 2.2281388519862744,
    30: 2.0422724563012378,
    100: 1.9839715185235518,
    1000: 1.962339080826408,
}
# slope of Y on X in the builtin fig1 model with unit-normal noises, from the
# closed form b + d*Cov(X,U)/Var(X) (Monte-Carlo agrees to 5e-5)
FIG1_UNIT_NOISE_NAIVE = 3.235294117647059


def fit_terms(d, outcome, terms, **kw):
    design = design_matrix(d, outcome, terms, **kw)
    return ols_fit(design.matrix, design.response, design.columns)


# --- terms -----------------------------------------------------------------

@pytest.mark.parametrize(
    "text, term",
    [("1", Intercept()), ("x", Linear("x")), ("a*b", Interaction("a", "b")), ("x^2", Power("x", 2))],
)
def test_parse_term(text, term):
    assert parse_term(text) == term
    assert str(term) == text


@pytest.mark.parametrize("text", ["a*a", "x^1", "x^y", "", "a*", "a*b*c"])
def test_parse_term_rejects(text):
    with pytest.raises(ValueError):
        parse_term(text)


# --- design matrices -------------------------------------------------------

def test_design_intercept_and_linear():
    d = Dataset.from_dict({"x": [1.0, 2.0, 3.0], "y": [0.0, 0.0, 1.0]})
    design = design_matrix(d, "y", [Intercept(), Linear("x")])
    assert design.matrix.shape == (3, 2)
    assert list(design.matrix[:, 0]) == [1.0, 1.0, 1.0]
    assert design.columns == ["Intercept", "x"]


def test_design_interaction_column():
    d = Dataset.from_dict({"CS": [0.5, 1.0], "OL": [0.2, 0.0], "DS": [0.4, 1.0]})
    design = design_matrix(d, "DS", [Intercept(), Linear("CS"), Interaction("CS", "OL")])
    assert design.columns == ["Intercept", "CS", "CS:OL"]
    assert list(design.matrix[:, 2]) == [0.1, 0.0]


def test_design_categorical_reference():
    d = Dataset.from_dict({"Ego": ["BMW", "Lincoln", "BMW"], "y": [1.0, 2.0, 3.0]})
    design = design_matrix(d, "y", [Intercept(), Linear("Ego")])
    assert design.columns == ["Intercept", "Ego[Lincoln]"]
    assert list(design.matrix[:, 1]) == [0.0, 1.0, 0.0]
    design = design_matrix(d, "y", [Linear("Ego")], reference_levels={"Ego": "Lincoln"})
    assert design.columns == ["Ego[BMW]"]


def test_design_categorical_by_numeric_interaction():
    d = Dataset.from_dict({"g": ["a", "b", "c"], "x": [1.0, 2.0, 3.0], "y": [0.0, 0.0, 0.0]})
    design = design_matrix(d, "y", [Interaction("g", "x")])
    assert design.columns == ["g[b]:x", "g[c]:x"]
    assert design.matrix.tolist() == [[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]]


def test_design_power():
    d = Dataset.from_dict({"x": [2.0, 3.0], "y": [0.0, 0.0]})
    assert design_matrix(d, "y", [Power("x", 3)]).matrix[:, 0].tolist() == [8.0, 27.0]


def test_design_errors():
    d = Dataset.from_dict({"x": [1.0, np.nan], "y": [0.0, 1.0], "c": ["a", "b"]})
    with pytest.raises(DataError):
        design_matrix(d, "y", [Linear("y")])
    with pytest.raises(KeyError):
        design_matrix(d, "y", [Linear("nope")])
    with pytest.raises(DataError):
        design_matrix(d, "y", [Linear("x")])
    with pytest.raises(DataError):
        design_matrix(d, "c", [Intercept()])


# --- OLS -------------------------------------------------------------------

def test_ols_exact_line():
    x = np.array([0.0, 1.0, 2.0, 5.0])
    X = np.column_stack([np.ones(4), x])
    fit = ols_fit(X, 2 * x + 3, ["Intercept", "x"])
    assert fit.coefficients["x"] == pytest.approx(2.0, abs=1e-12)
    assert fit.coefficients["Intercept"] == pytest.approx(3.0, abs=1e-12)
    assert fit.standard_errors == {"Intercept": 0.0, "x": 0.0}
    assert fit.residual_variance == 0.0
    assert fit.degrees_of_freedom == 2


def test_ols_constant_response_collapses():
    X = np.column_stack([np.ones(3), [1.0, 2.0, 4.0]])
    fit = ols_fit(X, np.full(3, 5.0))
    assert fit.residual_variance == 0.0


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(20)
    for _ in range(100):
        n, k = int(rng.integers(8, 40)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, k))
        y = X @ rng.normal(size=k) + rng.normal(size=n)
        fit = ols_fit(X, y)
        beta, se = normal_equation_solve(X, y)
        np.testing.assert_allclose([fit.coefficients[c] for c in fit.columns], beta, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose([fit.standard_errors[c] for c in fit.columns], se, rtol=1e-9)


def test_ols_random_20x3():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    fit = ols_fit(X, y)
    beta, _ = normal_equation_solve(X, y)
    np.testing.assert_allclose(list(fit.coefficients.values()), beta, rtol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 60), st.integers(1, 4))
def test_residuals_orthogonal(seed, n, k):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k))])
    y = rng.normal(size=n) * rng.uniform(0.1, 100)
    fit = ols_fit(X, y)
    resid = y - X @ np.array([fit.coefficients[c] for c in fit.columns])
    for j in range(X.shape[1]):
        assert abs(X[:, j] @ resid) <= 1e-8 * np.linalg.norm(X[:, j]) * max(np.linalg.norm(y), 1.0)


def test_ols_insufficient_data():
    with pytest.raises(InsufficientDataError):
        ols_fit(np.ones((1, 1)), np.ones(1))
    with pytest.raises(InsufficientDataError):
        ols_fit(np.ones((2, 2)), np.ones(2))


def test_ols_rank_deficient_names_columns():
    x = np.arange(6.0)
    X = np.column_stack([np.ones(6), x, 2 * x + 1])
    with pytest.raises(RankDeficientError) as info:
        ols_fit(X, x, ["Intercept", "x", "z"])
    assert info.value.columns == ["z"]


def test_interaction_term_leaves_treatment_unchanged():
    rng = np.random.default_rng(5)
    d = Dataset.from_dict({"x": rng.uniform(size=50), "z": rng.uniform(size=50)})
    y = 1.5 * d.numeric("x") - 2.0 * d.numeric("z") + 0.25
    d = d.with_column("y", Dataset.from_dict({"y": y})["y"])
    base = fit_terms(d, "y", [Intercept(), Linear("x"), Linear("z")])
    more = fit_terms(d, "y", [Intercept(), Linear("x"), Linear("z"), Interaction("x", "z")])
    assert more.coefficients["x"] == pytest.approx(base.coefficients["x"], abs=1e-6)
    assert more.coefficients["x:z"] == pytest.approx(0.0, abs=1e-6)


# --- t quantiles and unit ATE ---------------------------------------------

@pytest.mark.parametrize("dof, expected", sorted(T_975.items()))
def test_t_quantile_reference(dof, expected):
    assert t_quantile(0.975, dof) == pytest.approx(expected, abs=1e-6)


def _fit_stub(coef, se, dof):
    return RegressionFit(("x",), {"x": coef}, {"x": se}, se, dof, dof + 1)


def test_unit_ate_interval():
    e = unit_ate(_fit_stub(1.0, 0.1, 30), Linear("x"))
    assert e.ci_low == pytest.approx(1 - 0.1 * T_975[30], abs=1e-9)
    assert e.ci_high == pytest.approx(1 + 0.1 * T_975[30], abs=1e-9)
    assert round(e.ci_low, 4) == 0.7958 and round(e.ci_high, 4) == 1.2042
    assert e.dof == 30 and e.method == "OLS"


def test_unit_ate_degenerate():
    e = unit_ate(_fit_stub(0.7, 0.0, 10), Linear("x"))
    assert (e.point, e.ci_low, e.ci_high) == (0.7, 0.7, 0.7)


def test_unit_ate_absent_term():
    with pytest.raises(EstimationError):
        unit_ate(_fit_stub(1.0, 0.1, 5), Linear("w"))


def test_unit_ate_null_effect_straddles_zero():
    rng = np.random.default_rng(8)
    d = Dataset.from_dict({"x": rng.normal(size=400), "y": rng.normal(size=400)})
    e = unit_ate(fit_terms(d, "y", [Intercept(), Linear("x")]), Linear("x"))
    assert e.ci_low < 0 < e.ci_high


def test_ci_width_shrinks_with_n():
    widths = []
    for n in (50, 500, 5000):
        rng = np.random.default_rng(1000 + n)
        x = rng.uniform(size=n)
        d = Dataset.from_dict({"x": x, "y": 2 * x + rng.normal(size=n)})
        widths.append(unit_ate(fit_terms(d, "y", [Intercept(), Linear("x")]), Linear("x")).width)
    assert widths[0] >= widths[1] >= widths[2]


def test_effect_estimate_invariant_and_roundtrip():
    with pytest.raises(EstimationError):
        EffectEstimate(1.0, 1.5, 2.0, "OLS", 3, 0.1)
    e = EffectEstimate(1.0, 0.5, 1.5, "IV", 10, 0.25, components={"first_stage": 2.0})
    assert EffectEstimate.from_dict(e.to_dict()) == e
    assert str(e) == "1 [0.5, 1.5]"


# --- instrumental variables ------------------------------------------------

def _fig1_data(n, seed, noise_sd=None, **params):
    spec = builtin_spec("fig1", n=n, seed=seed, **params)
    if noise_sd is not None:
        spec = spec.replace(equations={
            k: StructuralEquation(coefficients=eq.coefficients, noise=Normal(0.0, noise_sd) if noise_sd else None)
            for k, eq in spec.equations.items()
        })
    return drop_unobserved(generate(spec), spec.dag)


def test_iv_noiseless_ratio():
    e = iv_estimate(_fig1_data(200, 1, noise_sd=0.0, c=0.0, d=0.0), "Z", "X", "Y")
    assert e.components["total_effect"] == pytest.approx(6.0, abs=1e-9)
    assert e.components["first_stage"] == pytest.approx(2.0, abs=1e-9)
    assert e.point == pytest.approx(3.0, abs=1e-9)


def test_iv_unit_noise_fig1_seed42():
    d = _fig1_data(10_000, 42, noise_sd=1.0)
    e = iv_estimate(d, "Z", "X", "Y")
    assert e.contains(3.0)
    assert e.method == "IV"
    naive = unit_ate(fit_terms(d, "Y", [Intercept(), Linear("X")]), Linear("X"))
    assert not naive.contains(3.0)
    assert naive.point == pytest.approx(FIG1_UNIT_NOISE_NAIVE, abs=3 * naive.standard_error)


def test_iv_null_effect():
    e = iv_estimate(_fig1_data(5000, 9, b=0.0), "Z", "X", "Y")
    assert e.contains(0.0)


def test_iv_delta_method_formula():
    e = iv_estimate(_fig1_data(3000, 4), "Z", "X", "Y")
    c = e.components
    ratio = c["total_effect"] / c["first_stage"]
    se = abs(ratio) * np.hypot(c["total_effect_se"] / c["total_effect"], c["first_stage_se"] / c["first_stage"])
    assert e.point == pytest.approx(ratio, rel=1e-12)
    assert e.standard_error == pytest.approx(se, rel=1e-9)
    assert e.ci_high - e.point == pytest.approx(1.959964 * se, rel=1e-6)


def test_iv_weak_instrument():
    with pytest.raises(WeakInstrumentError):
        iv_estimate(_fig1_data(500, 2, a=0.0), "Z", "X", "Y")


def test_iv_unknown_column():
    with pytest.raises(KeyError):
        iv_estimate(_fig1_data(50, 2), "Q", "X", "Y")


@pytest.mark.parametrize("seed", range(6))
def test_iv_agrees_with_ols_without_confounding(seed):
    d = _fig1_data(4000, seed, d=0.0)
    iv = iv_estimate(d, "Z", "X", "Y")
    ols = unit_ate(fit_terms(d, "Y", [Intercept(), Linear("X")]), Linear("X"))
    assert iv.ci_low <= ols.ci_high and ols.ci_low <= iv.ci_high
