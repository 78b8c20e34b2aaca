"""Seeded structural causal models that stand in for the system under test.

Random numbers come from numpy's Philox-4x64-10 counter-based generator.
Each node draws from its own stream, keyed by
``SeedSequence([seed, crc32(node_name)])``, so a dataset is a function of
(spec, seed) alone and does not depend on the order equations were declared in.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .dataset import CATEGORICAL, NUMERIC, Column, Dataset
from .graph import CausalDag, parse_dag, serialize_dag

SEED_MASK = (1 << 64) - 1


class ScmError(ValueError):
    pass


# --- distributions -------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)

    def to_dict(self):
        return {"uniform": [self.low, self.high]}


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd < 0:
            raise ScmError("standard deviation must be nonnegative")

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, n)

    def to_dict(self):
        return {"normal": [self.mean, self.sd]}


@dataclass(frozen=True)
class Categorical:
    """Levels with sampling weights; levels keep their declared order for sampling."""

    weights: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple((str(k), float(w)) for k, w in dict(self.weights).items()))
        if not self.weights or any(w < 0 for _, w in self.weights) or sum(w for _, w in self.weights) <= 0:
            raise ScmError("categorical weights must be nonnegative with a positive total")

    @property
    def levels(self) -> list[str]:
        return [k for k, _ in self.weights]

    def sample(self, rng, n):
        w = np.array([w for _, w in self.weights])
        cdf = np.cumsum(w / w.sum())
        idx = np.searchsorted(cdf, rng.random(n), side="right")
        idx = np.minimum(idx, len(w) - 1)
        levels = np.array(self.levels, dtype=object)
        return levels[idx]

    def to_dict(self):
        return {"categorical": dict(self.weights)}


def distribution_from_dict(data: Mapping):
    if data is None:
        return None
    if "uniform" in data:
        return Uniform(*map(float, data["uniform"]))
    if "normal" in data:
        return Normal(*map(float, data["normal"]))
    if "gaussian" in data:
        return Normal(0.0, float(data["gaussian"]))
    if "categorical" in data:
        return Categorical(tuple(data["categorical"].items()))
    raise ScmError(f"unknown distribution {dict(data)!r}")


# --- equations -----------------------------------------------------------

IDENTITY, COMPLEMENT, MAP = "identity", "complement", "map"


@dataclass(frozen=True)
class Factor:
    """One multiplicand: a parent's value, ``1 - value``, or a per-level constant."""

    variable: str
    transform: str = IDENTITY
    values: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.transform not in (IDENTITY, COMPLEMENT, MAP):
            raise ScmError(f"unknown factor transform {self.transform!r}")
        object.__setattr__(self, "values", tuple((str(k), float(v)) for k, v in dict(self.values).items()))
        if self.transform == MAP and not self.values:
            raise ScmError(f"map factor on {self.variable} needs level values")

    def to_dict(self):
        if self.transform == IDENTITY:
            return self.variable
        if self.transform == COMPLEMENT:
            return {"complement": self.variable}
        return {"map": self.variable, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, str):
            return cls(data)
        if "complement" in data:
            return cls(data["complement"], COMPLEMENT)
        return cls(data["map"], MAP, tuple(data["values"].items()))


@dataclass(frozen=True)
class Product:
    coefficient: float
    factors: tuple[Factor, ...]

    def to_dict(self):
        return {"coefficient": self.coefficient, "factors": [f.to_dict() for f in self.factors]}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data.get("coefficient", 1.0)), tuple(Factor.from_dict(f) for f in data["factors"]))


@dataclass(frozen=True)
class StructuralEquation:
    """value = intercept + linear terms + per-level effects + products + noise."""

    intercept: float = 0.0
    coefficients: Mapping[str, float] = field(default_factory=dict)
    level_effects: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    products: tuple[Product, ...] = ()
    noise: Normal | Uniform | None = None

    @property
    def referenced(self) -> set[str]:
        refs = set(self.coefficients) | set(self.level_effects)
        for p in self.products:
            refs |= {f.variable for f in p.factors}
        return refs

    def evaluate(self, columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.full(n, float(self.intercept))
        for parent, coef in self.coefficients.items():
            out += coef * columns[parent]
        for parent, effects in self.level_effects.items():
            out += _lookup(columns[parent], effects, parent)
        for product in self.products:
            term = np.full(n, float(product.coefficient))
            for f in product.factors:
                if f.transform == IDENTITY:
                    term *= columns[f.variable]
                elif f.transform == COMPLEMENT:
                    term *= 1.0 - columns[f.variable]
                else:
                    term *= _lookup(columns[f.variable], dict(f.values), f.variable)
            out += term
        return out

    def to_dict(self) -> dict:
        out: dict = {}
        if self.intercept:
            out["intercept"] = self.intercept
        if self.coefficients:
            out["coefficients"] = dict(self.coefficients)
        if self.level_effects:
            out["level_effects"] = {k: dict(v) for k, v in self.level_effects.items()}
        if self.products:
            out["products"] = [p.to_dict() for p in self.products]
        if self.noise is not None:
            out["noise"] = self.noise.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "StructuralEquation":
        return cls(
            intercept=float(data.get("intercept", 0.0)),
            coefficients={k: float(v) for k, v in (data.get("coefficients") or {}).items()},
            level_effects={
                k: {str(lv): float(x) for lv, x in v.items()}
                for k, v in (data.get("level_effects") or {}).items()
            },
            products=tuple(Product.from_dict(p) for p in data.get("products") or ()),
            noise=distribution_from_dict(data.get("noise")),
        )


def _lookup(levels: np.ndarray, table: Mapping[str, float], name: str) -> np.ndarray:
    try:
        return np.array([table[v] for v in levels], dtype=float)
    except KeyError as exc:
        raise ScmError(f"no value for level {exc.args[0]!r} of {name}") from None


# --- specs ---------------------------------------------------------------

@dataclass(frozen=True)
class ScmSpec:
    dag: CausalDag
    roots: Mapping[str, Uniform | Normal | Categorical]
    equations: Mapping[str, StructuralEquation]
    seed: int = 0
    n: int = 1000
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        validate_spec(self)

    def kind(self, node: str) -> str:
        return CATEGORICAL if isinstance(self.roots.get(node), Categorical) else NUMERIC

    def replace(self, **changes) -> "ScmSpec":
        fields = dict(
            dag=self.dag, roots=self.roots, equations=self.equations,
            seed=self.seed, n=self.n, metadata=self.metadata,
        )
        fields.update(changes)
        return ScmSpec(**fields)

    def to_dict(self) -> dict:
        return {
            "dag": serialize_dag(self.dag),
            "n": self.n,
            "seed": self.seed,
            "roots": {k: self.roots[k].to_dict() for k in sorted(self.roots)},
            "equations": {k: self.equations[k].to_dict() for k in sorted(self.equations)},
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping, dag: CausalDag | None = None) -> "ScmSpec":
        if dag is None:
            dag = parse_dag(data["dag"])
        return cls(
            dag=dag,
            roots={k: distribution_from_dict(v) for k, v in (data.get("roots") or {}).items()},
            equations={k: StructuralEquation.from_dict(v) for k, v in (data.get("equations") or {}).items()},
            seed=int(data.get("seed", 0)),
            n=int(data.get("n", 1000)),
            metadata=dict(data.get("metadata") or {}),
        )


def validate_spec(spec: ScmSpec) -> None:
    g = spec.dag
    if spec.n < 0:
        raise ScmError("row count must be nonnegative")
    for node in sorted(g.nodes):
        parents = g.parents(node)
        if not parents:
            if node not in spec.roots:
                raise ScmError(f"root node {node} has no sampling distribution")
            if node in spec.equations:
                raise ScmError(f"root node {node} cannot have an equation")
            continue
        if node in spec.roots:
            raise ScmError(f"non-root node {node} cannot have a root distribution")
        eq = spec.equations.get(node)
        if eq is None:
            raise ScmError(f"node {node} has parents but no equation")
        stray = eq.referenced - parents
        if stray:
            raise ScmError(f"equation for {node} references non-parents {sorted(stray)}")
        for parent in eq.coefficients:
            if spec.kind(parent) == CATEGORICAL:
                raise ScmError(f"{node}: categorical {parent} needs level_effects, not a coefficient")
        for parent in eq.level_effects:
            if spec.kind(parent) != CATEGORICAL:
                raise ScmError(f"{node}: level_effects need a categorical parent, {parent} is numeric")
        for p in eq.products:
            for f in p.factors:
                if (f.transform == MAP) != (spec.kind(f.variable) == CATEGORICAL):
                    raise ScmError(f"{node}: factor on {f.variable} must map levels iff categorical")
    extra = (set(spec.roots) | set(spec.equations)) - g.nodes
    if extra:
        raise ScmError(f"spec defines nodes absent from the DAG: {sorted(extra)}")


def node_rng(seed: int, node: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & SEED_MASK, zlib.crc32(node.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(ss))


def generate(spec: ScmSpec) -> Dataset:
    """Sample roots, then evaluate equations in topological order, adding noise."""
    n = spec.n
    values: dict[str, np.ndarray] = {}
    cols: dict[str, Column] = {}
    for node in spec.dag.topological_order():
        rng = node_rng(spec.seed, node)
        if node in spec.roots:
            x = spec.roots[node].sample(rng, n)
        else:
            eq = spec.equations[node]
            x = eq.evaluate(values, n)
            if eq.noise is not None:
                x = x + eq.noise.sample(rng, n)
        values[node] = x
        cols[node] = Column(spec.kind(node), x)
    return Dataset(cols)


def drop_unobserved(d: Dataset, g: CausalDag) -> Dataset:
    return d.drop(n for n in g.unobserved if n in d)


def noiseless_range(spec: ScmSpec, node: str) -> tuple[float, float]:
    """Interval of a node's value with every noise term set to zero."""
    ranges: dict[str, tuple[float, float]] = {}
    for name in spec.dag.topological_order():
        if name in spec.roots:
            dist = spec.roots[name]
            if isinstance(dist, Uniform):
                ranges[name] = (dist.low, dist.high)
            elif isinstance(dist, Normal):
                ranges[name] = (-math.inf, math.inf) if dist.sd else (dist.mean, dist.mean)
            continue
        eq = spec.equations[name]
        lo = hi = eq.intercept
        for parent, coef in eq.coefficients.items():
            a, b = _scale(ranges[parent], coef)
            lo, hi = lo + a, hi + b
        for effects in eq.level_effects.values():
            lo, hi = lo + min(effects.values()), hi + max(effects.values())
        for p in eq.products:
            iv = (p.coefficient, p.coefficient)
            for f in p.factors:
                if f.transform == IDENTITY:
                    fr = ranges[f.variable]
                elif f.transform == COMPLEMENT:
                    a, b = ranges[f.variable]
                    fr = (1 - b, 1 - a)
                else:
                    vals = [v for _, v in f.values]
                    fr = (min(vals), max(vals))
                iv = _mul(iv, fr)
            lo, hi = lo + iv[0], hi + iv[1]
        ranges[name] = (lo, hi)
        if name == node:
            break
    return ranges[node]


def _scale(r, c):
    a, b = r[0] * c, r[1] * c
    return (min(a, b), max(a, b))


def _mul(r, s):
    prods = [x * y for x in r for y in s]
    return (min(prods), max(prods))


# --- built-in specs --------------------------------------------------------

PENALTIES = {
    "none": 1.00,
    "red_light": 0.70,
    "collisions_layout": 0.65,
    "collisions_vehicle": 0.60,
    "collisions_pedestrian": 0.50,
}
INFRACTION_WEIGHTS = {
    "none": 0.5,
    "red_light": 0.2,
    "collisions_layout": 0.1,
    "collisions_vehicle": 0.15,
    "collisions_pedestrian": 0.05,
}
# runs stop at the first infraction, so infractions cut completion short
COMPLETION_OFFSET = {
    "none": 0.4,
    "red_light": 0.2,
    "collisions_layout": 0.1,
    "collisions_vehicle": 0.1,
    "collisions_pedestrian": 0.0,
}
CARLA_VERSIONS = ("0.9.10.1", "0.9.11")

BUILTINS = ("fig1", "re1", "re2", "re3")


def fixture_path(name: str):
    return resources.files("causaltest") / "fixtures" / name


def fixture_dag(name: str) -> CausalDag:
    return parse_dag(fixture_path(name).read_text(encoding="utf-8"))


def _with_noise(spec: ScmSpec, fraction: float, nodes: Sequence[str]) -> ScmSpec:
    equations = dict(spec.equations)
    for node in nodes:
        lo, hi = noiseless_range(spec, node)
        sigma = fraction * (hi - lo)
        eq = equations[node]
        equations[node] = StructuralEquation(
            eq.intercept, eq.coefficients, eq.level_effects, eq.products,
            Normal(0.0, sigma) if sigma > 0 else None,
        )
    return spec.replace(equations=equations)


def _fig1(n, seed, a=2.0, b=3.0, c=1.0, d=4.0, noise=0.1):
    dag = fixture_dag("fig1.dot")
    spec = ScmSpec(
        dag=dag,
        roots={"Z": Uniform(0.0, 1.0), "U": Uniform(0.0, 1.0)},
        equations={
            "X": StructuralEquation(coefficients={"Z": a, "U": c}),
            "Y": StructuralEquation(coefficients={"X": b, "U": d}),
        },
        seed=seed, n=n,
        metadata={"a": a, "b": b, "c": c, "d": d, "noise": noise, "effect": b},
    )
    return _with_noise(spec, noise, ["X", "Y"])


def _re1(n, seed, outside_lane_max=0.3):
    dag = CausalDag.from_edges(
        [
            ("Infraction", "CompletionScore"),
            ("Infraction", "DrivingScore"),
            ("OutsideLane", "DrivingScore"),
            ("CompletionScore", "DrivingScore"),
        ],
        modifiers=[("OutsideLane", ("CompletionScore", "DrivingScore"))],
        name="re1",
    )
    driving = Product(1.0, (
        Factor("Infraction", MAP, tuple(PENALTIES.items())),
        Factor("CompletionScore"),
        Factor("OutsideLane", COMPLEMENT),
    ))
    return ScmSpec(
        dag=dag,
        roots={
            "Infraction": Categorical(tuple(INFRACTION_WEIGHTS.items())),
            "OutsideLane": Uniform(0.0, outside_lane_max),
        },
        equations={
            "CompletionScore": StructuralEquation(
                level_effects={"Infraction": dict(COMPLETION_OFFSET)},
                noise=Uniform(0.0, 0.6),
            ),
            "DrivingScore": StructuralEquation(products=(driving,)),
        },
        seed=seed, n=n,
        metadata={"penalties": dict(PENALTIES), "outside_lane_max": outside_lane_max},
    )


def _re2(n, seed, beta=0.0, baseline=0.9, noise=0.1):
    dag = CausalDag.from_edges([("EgoVehicle", "Infraction")], name="re2")
    # noise is a fraction of the penalty scale, 1.00 - 0.50
    return ScmSpec(
        dag=dag,
        roots={"EgoVehicle": Categorical((("BMW", 0.5), ("Lincoln", 0.5)))},
        equations={
            "Infraction": StructuralEquation(
                intercept=baseline,
                level_effects={"EgoVehicle": {"BMW": beta, "Lincoln": 0.0}},
                noise=Normal(0.0, noise * 0.5),
            ),
        },
        seed=seed, n=n,
        metadata={"beta": beta, "treated_level": "BMW", "reference_level": "Lincoln"},
    )


def _re3(n, seed, gamma_old=4.5, gamma_new=6.8, noise=0.1):
    dag = CausalDag.from_edges(
        [
            ("CARLAversion", "SimulationTime"),
            ("CARLAversion", "SystemTime"),
            ("NPCvehicles", "SimulationTime"),
            ("NPCvehicles", "SystemTime"),
            ("Pedestrians", "SimulationTime"),
            ("Pedestrians", "SystemTime"),
            ("RouteLength", "SimulationTime"),
            ("SimulationTime", "SystemTime"),
        ],
        unobserved=["NPCvehicles", "Pedestrians"],
        name="re3",
    )
    old, new = CARLA_VERSIONS
    spec = ScmSpec(
        dag=dag,
        roots={
            "CARLAversion": Categorical(((old, 0.5), (new, 0.5))),
            "NPCvehicles": Uniform(80.0, 200.0),
            "Pedestrians": Uniform(80.0, 200.0),
            "RouteLength": Uniform(100.0, 1000.0),
        },
        equations={
            "SimulationTime": StructuralEquation(
                coefficients={"RouteLength": 0.1, "NPCvehicles": 0.15, "Pedestrians": 0.15},
                level_effects={"CARLAversion": {old: 0.0, new: 2.0}},
            ),
            "SystemTime": StructuralEquation(
                coefficients={"NPCvehicles": 0.3, "Pedestrians": 0.3},
                level_effects={"CARLAversion": {old: 0.0, new: 5.0}},
                products=(Product(1.0, (
                    Factor("CARLAversion", MAP, ((old, gamma_old), (new, gamma_new))),
                    Factor("SimulationTime"),
                )),),
            ),
        },
        seed=seed, n=n,
        metadata={"gamma": {old: gamma_old, new: gamma_new}},
    )
    return _with_noise(spec, noise, ["SimulationTime", "SystemTime"])


def builtin_spec(name: str, n: int = 1000, seed: int = 0, **params) -> ScmSpec:
    """Built-in models: ``fig1``, ``re1``, ``re2`` and ``re3``.

    ``params`` override planted values, e.g. ``beta`` for ``re2`` or
    ``gamma_old``/``gamma_new`` for ``re3``; the planted values are recorded
    in ``spec.metadata``.
    """
    makers = {"fig1": _fig1, "re1": _re1, "re2": _re2, "re3": _re3}
    key = name.lower()
    if key not in makers:
        raise ScmError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    try:
        return makers[key](n, seed, **params)
    except TypeError as exc:
        raise ScmError(f"bad parameters for {name}: {exc}") from None
