"""Causal DAGs: parsing, d-separation, backdoor adjustment and instrument checks."""

from __future__ import annotations

import itertools
import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

Edge = tuple[str, str]


class DagError(ValueError):
    """Base class for invalid graphs and invalid graph queries."""


class DagSyntaxError(DagError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class CycleError(DagError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("graph contains a cycle: " + " -> ".join(cycle))


class UnknownNodeError(DagError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"unknown node {node!r}")


class InstrumentWarning(UserWarning):
    """The instrument reaches the treatment by more than the direct edge."""


@dataclass(frozen=True)
class CausalDag:
    """An immutable causal DAG with latent-variable flags and effect modifiers.

    ``modifiers`` holds ``(modifier, (source, target))`` pairs: the modifier
    node changes the strength of the ``source -> target`` edge.
    """

    nodes: frozenset[str]
    edges: frozenset[Edge]
    unobserved: frozenset[str] = frozenset()
    modifiers: frozenset[tuple[str, Edge]] = frozenset()
    name: str = "G"

    def __post_init__(self):
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        object.__setattr__(self, "unobserved", frozenset(self.unobserved))
        object.__setattr__(
            self, "modifiers", frozenset((m, tuple(e)) for m, e in self.modifiers)
        )
        for node in self.nodes:
            if not isinstance(node, str) or not node:
                raise DagError(f"node identifiers must be nonempty strings, got {node!r}")
        for u, v in self.edges:
            for endpoint in (u, v):
                if endpoint not in self.nodes:
                    raise UnknownNodeError(endpoint)
            if u == v:
                raise CycleError([u, u])
        for node in self.unobserved:
            if node not in self.nodes:
                raise UnknownNodeError(node)
        for modifier, edge in self.modifiers:
            if modifier not in self.nodes:
                raise UnknownNodeError(modifier)
            if edge not in self.edges:
                raise DagError(f"modifier {modifier} references missing edge {edge[0]}->{edge[1]}")
            if modifier in edge:
                raise DagError(f"modifier {modifier} must differ from both endpoints of its edge")
        cycle = _find_cycle(self.nodes, self.edges)
        if cycle:
            raise CycleError(cycle)

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], unobserved=(), modifiers=(), nodes=(), name="G"):
        edges = frozenset(tuple(e) for e in edges)
        all_nodes = set(nodes) | {n for e in edges for n in e}
        return cls(frozenset(all_nodes), edges, frozenset(unobserved), frozenset(modifiers), name)

    @cached_property
    def _parents(self) -> dict[str, frozenset[str]]:
        parents: dict[str, set[str]] = {n: set() for n in self.nodes}
        for u, v in self.edges:
            parents[v].add(u)
        return {n: frozenset(p) for n, p in parents.items()}

    @cached_property
    def _children(self) -> dict[str, frozenset[str]]:
        children: dict[str, set[str]] = {n: set() for n in self.nodes}
        for u, v in self.edges:
            children[u].add(v)
        return {n: frozenset(c) for n, c in children.items()}

    def _check(self, *nodes: str) -> None:
        for node in nodes:
            if node not in self.nodes:
                raise UnknownNodeError(node)

    def parents(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._parents[node]

    def children(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._children[node]

    def ancestors(self, node: str) -> frozenset[str]:
        """Strict ancestors of ``node``."""
        self._check(node)
        return _reach(node, self._parents)

    def descendants(self, node: str) -> frozenset[str]:
        """Strict descendants of ``node``."""
        self._check(node)
        return _reach(node, self._children)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm with lexicographic tie-breaking, so the order is stable."""
        indegree = {n: len(self._parents[n]) for n in self.nodes}
        ready = sorted(n for n, k in indegree.items() if k == 0)
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for child in sorted(self._children[node]):
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
            ready.sort()
        return order

    def is_observed(self, node: str) -> bool:
        return node not in self.unobserved

    def without_edges_from(self, node: str) -> "CausalDag":
        edges = frozenset(e for e in self.edges if e[0] != node)
        modifiers = frozenset(m for m in self.modifiers if m[1] in edges)
        return CausalDag(self.nodes, edges, self.unobserved, modifiers, self.name)


def _reach(start: str, step: dict[str, frozenset[str]]) -> frozenset[str]:
    seen: set[str] = set()
    stack = [start]
    while stack:
        for nxt in step[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return frozenset(seen)


def _find_cycle(nodes: Iterable[str], edges: Iterable[Edge]) -> list[str] | None:
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in sorted(edges):
        children[u].append(v)
    state: dict[str, int] = {}
    for root in sorted(children):
        if root in state:
            continue
        stack = [(root, iter(children[root]))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state.get(child) == 1:
                return path[path.index(child):] + [child]
            elif child not in state:
                state[child] = 1
                path.append(child)
                stack.append((child, iter(children[child])))
    return None


# --- DOT subset ------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<line_comment>//[^\n]*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<arrow>->)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<id>[A-Za-z_][A-Za-z0-9_.]*|-?(?:\d+\.?\d*|\.\d+))
  | (?P<punct>[{}\[\];=,])
    """,
    re.VERBOSE | re.DOTALL,
)

_PLAIN_ID = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_KEYWORDS = {"digraph", "graph", "node", "edge", "strict", "subgraph"}


class _Token(NamedTuple):
    kind: str
    value: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DagSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        if kind == "string":
            tokens.append(_Token("id", _unquote(value), line, pos - line_start + 1))
        elif kind in ("id", "arrow", "punct"):
            tokens.append(_Token(kind if kind != "punct" else value, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, offset=0) -> _Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, kind: str, what: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != kind:
            found = tok.value or "end of input"
            raise DagSyntaxError(f"expected {what or kind!r}, found {found!r}", tok.line, tok.column)
        return tok

    def fail(self, message: str, tok: _Token):
        raise DagSyntaxError(message, tok.line, tok.column)

    def parse(self) -> CausalDag:
        head = self.expect("id", "digraph")
        if head.value != "digraph":
            self.fail(f"expected 'digraph', found {head.value!r}", head)
        name = "G"
        if self.peek().kind == "id":
            name = self.next().value
        self.expect("{")
        nodes: set[str] = set()
        edges: dict[Edge, _Token] = {}
        unobserved: set[str] = set()
        modifier_spec: tuple[str, _Token] | None = None
        while self.peek().kind != "}":
            tok = self.expect("id", "statement")
            if tok.value in _KEYWORDS and tok.value != "graph":
                self.fail(f"unsupported statement {tok.value!r}", tok)
            if tok.value == "graph" and self.peek().kind == "[":
                for key, value, vtok in self.attributes():
                    if key != "modifiers":
                        self.fail(f"unknown graph attribute {key!r}", vtok)
                    modifier_spec = (value, vtok)
            elif self.peek().kind == "=":
                self.next()
                vtok = self.expect("id", "attribute value")
                if tok.value != "modifiers":
                    self.fail(f"unknown graph attribute {tok.value!r}", tok)
                modifier_spec = (vtok.value, vtok)
            elif self.peek().kind == "arrow":
                self.next()
                target = self.expect("id", "node identifier")
                if self.peek().kind == "arrow":
                    self.fail("edge chains are not supported; write one edge per statement", self.peek())
                if self.peek().kind == "[":
                    attrs = self.attributes()
                    if attrs:
                        self.fail(f"unknown edge attribute {attrs[0][0]!r}", attrs[0][2])
                edge = (tok.value, target.value)
                if edge in edges:
                    self.fail(f"duplicate edge {edge[0]} -> {edge[1]}", tok)
                if edge[0] == edge[1]:
                    raise CycleError([edge[0], edge[0]])
                edges[edge] = tok
                nodes.update(edge)
            else:
                nodes.add(tok.value)
                if self.peek().kind == "[":
                    for key, value, vtok in self.attributes():
                        if key != "unobserved":
                            self.fail(f"unknown node attribute {key!r}", vtok)
                        flag = value.lower()
                        if flag not in ("true", "false"):
                            self.fail(f"unobserved must be true or false, found {value!r}", vtok)
                        if flag == "true":
                            unobserved.add(tok.value)
                        else:
                            unobserved.discard(tok.value)
            if self.peek().kind == ";":
                self.next()
        self.expect("}")
        self.expect("eof", "end of input")
        modifiers = set()
        if modifier_spec is not None:
            modifiers = _parse_modifiers(*modifier_spec)
        for modifier, edge in modifiers:
            if edge not in edges:
                raise DagError(f"modifier {modifier} references missing edge {edge[0]}->{edge[1]}")
        return CausalDag(frozenset(nodes), frozenset(edges), frozenset(unobserved), frozenset(modifiers), name)

    def attributes(self) -> list[tuple[str, str, _Token]]:
        self.expect("[")
        attrs = []
        while self.peek().kind != "]":
            key = self.expect("id", "attribute name")
            self.expect("=")
            value = self.expect("id", "attribute value")
            attrs.append((key.value, value.value, key))
            if self.peek().kind in (",", ";"):
                self.next()
        self.expect("]")
        return attrs


def _parse_modifiers(spec: str, tok: _Token) -> set[tuple[str, Edge]]:
    out = set()
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        m = re.fullmatch(r"\s*([^:\s]+)\s*:\s*([^\s-]+)\s*->\s*(\S+)\s*", item)
        if m is None:
            raise DagSyntaxError(f"malformed modifier {item!r}; expected M:A->B", tok.line, tok.column)
        out.add((m.group(1), (m.group(2), m.group(3))))
    return out


def parse_dag(text: str) -> CausalDag:
    """Parse the DOT subset: edges, ``[unobserved=true]`` node flags and a ``modifiers`` graph attribute."""
    return _Parser(text).parse()


def load_dag(path) -> CausalDag:
    with open(path, encoding="utf-8") as fh:
        return parse_dag(fh.read())


def _quote(node: str) -> str:
    if _PLAIN_ID.match(node) and node not in _KEYWORDS:
        return node
    return '"' + node.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_dag(g: CausalDag) -> str:
    lines = [f"digraph {_quote(g.name)} {{"]
    touched = {n for e in g.edges for n in e}
    for node in sorted(g.nodes):
        if node in g.unobserved:
            lines.append(f"    {_quote(node)} [unobserved=true];")
        elif node not in touched:
            lines.append(f"    {_quote(node)};")
    for u, v in sorted(g.edges):
        lines.append(f"    {_quote(u)} -> {_quote(v)};")
    if g.modifiers:
        spec = ";".join(f"{m}:{u}->{v}" for m, (u, v) in sorted(g.modifiers))
        lines.append(f'    modifiers="{spec}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- queries ---------------------------------------------------------------

def d_separated(g: CausalDag, a: str, b: str, conditioning: Iterable[str] = ()) -> bool:
    """True iff ``a`` and ``b`` are d-separated given ``conditioning``.

    Reachability search over (node, direction) states; a collider passes the
    search only when it is an ancestor of (or in) the conditioning set.
    """
    z = frozenset(conditioning)
    g._check(a, b, *z)
    if a == b:
        raise DagError("d-separation needs two distinct nodes")
    if a in z or b in z:
        raise DagError("query nodes may not be in the conditioning set")
    ancestors_of_z = set(z)
    for node in z:
        ancestors_of_z |= g.ancestors(node)

    # "up": arrived from a child; "down": arrived from a parent
    queue = deque([(a, "up")])
    visited = set()
    while queue:
        state = queue.popleft()
        if state in visited:
            continue
        visited.add(state)
        node, direction = state
        if node not in z and node == b:
            return False
        if direction == "up" and node not in z:
            queue.extend((p, "up") for p in g._parents[node])
            queue.extend((c, "down") for c in g._children[node])
        elif direction == "down":
            if node not in z:
                queue.extend((c, "down") for c in g._children[node])
            if node in ancestors_of_z:
                queue.extend((p, "up") for p in g._parents[node])
    return True


@dataclass(frozen=True)
class AdjustmentResult:
    treatment: str
    outcome: str
    adjustment_set: frozenset[str]
    required_interactions: frozenset[tuple[str, str]]
    feasible: bool
    unobserved_members: frozenset[str] = field(default=frozenset())


def is_backdoor_set(g: CausalDag, treatment: str, outcome: str, candidate: Iterable[str]) -> bool:
    """Check the backdoor criterion for ``candidate`` directly."""
    s = frozenset(candidate)
    if treatment in s or outcome in s:
        return False
    if s & g.descendants(treatment):
        return False
    return d_separated(g.without_edges_from(treatment), treatment, outcome, s)


def adjustment_set(g: CausalDag, treatment: str, outcome: str) -> AdjustmentResult:
    """Smallest backdoor adjustment set, preferring sets of observed nodes.

    Searches observed candidates first, then all candidates, by increasing
    size; ``itertools.combinations`` over sorted candidates makes the first
    hit the lexicographically smallest set of that size.
    """
    g._check(treatment, outcome)
    if treatment == outcome:
        raise DagError("treatment and outcome must differ")
    if outcome in g.parents(treatment):
        # the edge outcome -> treatment is a backdoor path nothing can block
        raise DagError(f"{outcome} is a direct cause of {treatment}; no backdoor adjustment set exists")
    # minimal separators lie within the ancestors of treatment and outcome
    candidates = sorted(
        (g.ancestors(treatment) | g.ancestors(outcome))
        - g.descendants(treatment)
        - {treatment, outcome}
    )
    backdoor = g.without_edges_from(treatment)
    interactions = frozenset(
        (m, treatment) for m, edge in g.modifiers if edge == (treatment, outcome)
    )

    def search(pool):
        for k in range(len(pool) + 1):
            for combo in itertools.combinations(pool, k):
                if d_separated(backdoor, treatment, outcome, combo):
                    return frozenset(combo)
        return None

    observed = [n for n in candidates if g.is_observed(n)]
    found = search(observed)
    if found is None:
        found = search(candidates)
    if found is None:  # pragma: no cover - parents of the treatment qualify once outcome is not one
        raise DagError(f"no backdoor adjustment set exists for {treatment} -> {outcome}")
    hidden = frozenset(n for n in found if not g.is_observed(n))
    return AdjustmentResult(treatment, outcome, found, interactions, not hidden, hidden)


class ConditionVerdict(NamedTuple):
    condition: int
    description: str
    passed: bool
    detail: str


def validate_instrument(g: CausalDag, instrument: str, treatment: str, outcome: str) -> list[ConditionVerdict]:
    """Check the three graphical instrument conditions.

    1. no edge between the instrument and any latent common cause of treatment and outcome;
    2. the instrument has an edge into the treatment;
    3. every directed path from the instrument to the outcome goes through the treatment.
    """
    g._check(instrument, treatment, outcome)
    if len({instrument, treatment, outcome}) != 3:
        raise DagError("instrument, treatment and outcome must be distinct")

    latent = sorted(g.unobserved & g.ancestors(treatment) & g.ancestors(outcome))
    touching = [u for u in latent if (u, instrument) in g.edges or (instrument, u) in g.edges]
    c1 = ConditionVerdict(
        1,
        "instrument independent of latent confounders",
        not touching,
        f"edge between {instrument} and {', '.join(touching)}" if touching
        else f"no edge to latent confounders {latent or '(none)'}",
    )

    direct = (instrument, treatment) in g.edges
    detail = f"{instrument} -> {treatment}" + ("" if direct else " missing")
    if direct:
        indirect = _has_path_avoiding(g, instrument, treatment, banned_edge=(instrument, treatment))
        if indirect:
            detail += f"; {instrument} also reaches {treatment} through other paths"
            warnings.warn(
                f"{instrument} reaches {treatment} by paths other than the direct edge",
                InstrumentWarning,
                stacklevel=2,
            )
    c2 = ConditionVerdict(2, "instrument causes treatment", direct, detail)

    if (instrument, outcome) in g.edges:
        c3 = ConditionVerdict(3, "exclusion restriction", False, f"direct edge {instrument} -> {outcome}")
    else:
        leak = _has_path_avoiding(g, instrument, outcome, banned_node=treatment)
        c3 = ConditionVerdict(
            3,
            "exclusion restriction",
            not leak,
            f"{instrument} reaches {outcome} without passing through {treatment}" if leak
            else f"every path {instrument} ~> {outcome} passes through {treatment}",
        )
    return [c1, c2, c3]


def _has_path_avoiding(g: CausalDag, source: str, target: str, banned_node=None, banned_edge=None) -> bool:
    stack = [source]
    seen = {source}
    while stack:
        node = stack.pop()
        for child in g._children[node]:
            if (node, child) == banned_edge or child == banned_node or child in seen:
                continue
            if child == target:
                return True
            seen.add(child)
            stack.append(child)
    return False
