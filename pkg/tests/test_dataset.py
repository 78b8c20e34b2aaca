import collections
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from causaltest.dataset import (
    CATEGORICAL,
    NUMERIC,
    DataError,
    Dataset,
    UnknownColumnError,
    concat,
    load_csv,
    positivity_check,
    schema_of,
    stratify,
    write_csv,
)
from causaltest.scm import builtin_spec, fixture_dag, generate


def test_load_minimal():
    d = load_csv("x,y\n1,2\n3,4\n")
    assert d.names == ["x", "y"]
    assert d.row_count == 2
    assert schema_of(d) == {"x": NUMERIC, "y": NUMERIC}
    assert list(d.numeric("y")) == [2.0, 4.0]


def test_categorical_levels_sorted():
    d = load_csv("infraction\nred_light\nnone\nnone\n")
    assert d["infraction"].kind == CATEGORICAL
    assert d["infraction"].levels == ["none", "red_light"]


def test_empty_cells_are_missing():
    d = load_csv("x,c\n1,a\n,\n2.5e1,b\n")
    assert math.isnan(d.numeric("x")[1])
    assert list(d["c"].values) == ["a", None, "b"]
    assert d.numeric("x")[2] == 25.0


def test_quoted_cells():
    d = load_csv('name,v\n"a, b",1\n"say ""hi""",2\n')
    assert list(d["name"].values) == ["a, b", 'say "hi"']


def test_schema_override():
    d = load_csv("code,v\n1,2\n2,3\n", {"code": CATEGORICAL})
    assert d["code"].levels == ["1", "2"]


@pytest.mark.parametrize(
    "text, schema, fragment",
    [
        ("x,y\n1,2\n3\n", None, "row 3"),
        ("x,x\n1,2\n", None, "duplicate"),
        ("x\n1\n", {"z": NUMERIC}, "missing column"),
        ("x\n1\n", {"x": "text"}, "unknown kind"),
        ("x\n1\nabc\n", {"x": NUMERIC}, "non-numeric"),
        ("", None, "header"),
    ],
)
def test_load_errors(text, schema, fragment):
    with pytest.raises(DataError, match=fragment):
        load_csv(text, schema)


def test_locale_style_numbers_are_not_numeric():
    d = load_csv('x\n"1,5"\n')
    assert d["x"].kind == CATEGORICAL


def test_unknown_column():
    d = load_csv("x\n1\n")
    with pytest.raises(UnknownColumnError):
        d["nope"]


def test_columns_are_read_only():
    d = load_csv("x\n1\n")
    with pytest.raises(ValueError):
        d.numeric("x")[0] = 5


def test_re1_export_uses_fig3_names():
    spec = builtin_spec("re1", n=50, seed=7)
    d = load_csv(write_csv(generate(spec)), {"Infraction": CATEGORICAL})
    assert set(d.names) <= fixture_dag("fig3.dot").nodes
    assert schema_of(d) == {
        "CompletionScore": NUMERIC,
        "DrivingScore": NUMERIC,
        "Infraction": CATEGORICAL,
        "OutsideLane": NUMERIC,
    }
    assert d.row_count == 50


# --- round trip ------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
levels = st.sampled_from(["a", "b", "c, d", 'q"uote', "é"])


@st.composite
def tables(draw):
    rows = draw(st.integers(1, 12))
    n_num = draw(st.integers(0, 3))
    n_cat = draw(st.integers(0 if n_num else 1, 2))
    data = {}
    for j in range(n_num):
        data[f"x{j}"] = draw(st.lists(st.one_of(finite, st.just(math.nan)), min_size=rows, max_size=rows))
    for j in range(n_cat):
        data[f"c{j}"] = draw(st.lists(st.one_of(levels, st.none()), min_size=rows, max_size=rows))
    kinds = {k: (NUMERIC if k.startswith("x") else CATEGORICAL) for k in data}
    return Dataset.from_dict(data, kinds)


@settings(max_examples=150, deadline=None)
@given(tables())
def test_write_load_roundtrip(d):
    back = load_csv(write_csv(d), schema_of(d))
    assert back == d


# --- stratify --------------------------------------------------------------

def test_stratify_sizes():
    d = Dataset.from_dict({"inf": ["none", "none", "red_light", "none", "red_light"], "v": [1, 2, 3, 4, 5]})
    parts = stratify(d, "inf")
    assert {k: p.row_count for k, p in parts.items()} == {"none": 3, "red_light": 2}
    assert list(parts["red_light"].numeric("v")) == [3.0, 5.0]


def test_stratify_errors():
    d = Dataset.from_dict({"v": [1.0, 2.0]})
    with pytest.raises(DataError):
        stratify(d, "v")
    with pytest.raises(UnknownColumnError):
        stratify(d, "w")


def _rows(d):
    return collections.Counter(
        tuple("nan" if isinstance(v, float) and math.isnan(v) else v for v in row)
        for row in zip(*(d[n].values.tolist() for n in d.names))
    )


@settings(max_examples=150, deadline=None)
@given(tables())
def test_stratify_partition_identity(d):
    cats = [n for n in d.names if n.startswith("c")]
    assume(cats)
    by = cats[0]
    parts = stratify(d, by)
    keep = d.take(np.flatnonzero(~d[by].missing))
    assert sum(p.row_count for p in parts.values()) == keep.row_count
    for level, p in parts.items():
        assert set(p[by].values) <= {level}
    if parts and any(p.row_count for p in parts.values()):
        assert _rows(concat(list(parts.values()))) == _rows(keep)


# --- positivity ------------------------------------------------------------

def test_positivity_missing_level():
    d = Dataset.from_dict({"inf": ["none", "red_light", "none", "collisions_vehicle"]})
    r = positivity_check(d, "inf", ["none", "collisions_pedestrian"])
    assert r.missing_levels == ["collisions_pedestrian"]
    assert r.per_level_counts["collisions_pedestrian"] == 0
    assert not r.ok


def test_positivity_all_present():
    d = Dataset.from_dict({"inf": ["none", "red_light"]})
    assert positivity_check(d, "inf", ["none", "red_light"]).missing_levels == []


def test_positivity_single_row_level():
    d = Dataset.from_dict({"inf": ["none", "none", "collisions_layout"]})
    assert positivity_check(d, "inf", ["collisions_layout"]).per_level_counts["collisions_layout"] == 1


def test_positivity_numeric_intervals():
    d = Dataset.from_dict({"x": [0.0, 0.5, 1.0, 1.5, 2.0, math.nan]})
    r = positivity_check(d, "x", [0, 1, 2, 3])
    assert r.per_level_counts == {(0.0, 1.0): 2, (1.0, 2.0): 2, (2.0, 3.0): 1}
    assert r.missing_entries == 1
    assert r.ok


def test_positivity_unknown_column():
    with pytest.raises(UnknownColumnError):
        positivity_check(Dataset.from_dict({"x": [1.0]}), "y", [])


@settings(max_examples=150, deadline=None)
@given(tables())
def test_positivity_matches_tally(d):
    for name in d.names:
        col = d[name]
        if col.kind != CATEGORICAL:
            continue
        tally = collections.Counter(v for v in col.values if v is not None)
        r = positivity_check(d, name, ["a", "zzz"])
        assert {k: v for k, v in r.per_level_counts.items() if v} == dict(tally)
        assert sum(r.per_level_counts.values()) == d.row_count - r.missing_entries
        assert "zzz" in r.missing_levels
