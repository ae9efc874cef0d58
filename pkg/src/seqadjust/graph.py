"""m-graphs: causal DAGs with exposure, outcome and selection roles.

Nodes carry a role (``exposure``, ``outcome``, ``selection``, ``covariate`` or
``latent``) and an optional chronology tier. All operations are pure: surgery
returns new graphs and never mutates its input.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

ROLES = ("exposure", "outcome", "selection", "covariate", "latent")
_SINGLE_ROLES = ("exposure", "outcome", "selection")


class GraphError(ValueError):
    """Invalid graph or node reference."""


class GraphParseError(GraphError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Node:
    name: str
    role: str = "covariate"
    tier: int | None = None


@dataclass(frozen=True)
class AdmissiblePair:
    """Outer confounder set ``W`` and inner separator set ``Z``."""

    W: frozenset = field(default_factory=frozenset)
    Z: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "W", frozenset(self.W))
        object.__setattr__(self, "Z", frozenset(self.Z))
        if self.W & self.Z:
            raise GraphError(f"W and Z overlap on {sorted(self.W & self.Z)}")

    @property
    def size(self):
        return len(self.W) + len(self.Z)

    def sort_key(self):
        return (self.size, tuple(sorted(self.W)), tuple(sorted(self.Z)))

    def __str__(self):
        return "({%s};{%s})" % (",".join(sorted(self.W)), ",".join(sorted(self.Z)))

    @classmethod
    def parse(cls, text):
        """Parse ``"W1,W2|Z1"`` (either side may be empty)."""
        if "|" not in text:
            raise GraphError(f"pair {text!r} must look like 'W1,W2|Z1'")
        w, z = text.split("|", 1)
        split = lambda s: [t.strip() for t in s.split(",") if t.strip()]
        return cls(split(w), split(z))


@dataclass(frozen=True)
class Certificate:
    """Outcome of an s-admissibility check.

    ``conditions`` holds one boolean per criterion, ``failed`` the first
    violated criterion (1-3) or ``None``, and ``open_path`` a d-connecting
    trail when the failure was a d-separation failure.
    """

    conditions: tuple
    failed: int | None = None
    open_path: tuple | None = None
    detail: str = ""

    @property
    def admissible(self):
        return self.failed is None


@dataclass(frozen=True)
class MGraph:
    nodes: tuple
    edges: frozenset

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            dup = sorted({x for x in names if names.count(x) > 1})
            raise GraphError(f"duplicate node(s): {dup}")
        for n in self.nodes:
            if n.role not in ROLES:
                raise GraphError(f"unknown role {n.role!r} for node {n.name}")
        known = set(names)
        for u, v in self.edges:
            if u not in known or v not in known:
                raise GraphError(f"edge {u} -> {v} references an undeclared node")
        for role in _SINGLE_ROLES:
            holders = [n.name for n in self.nodes if n.role == role]
            if len(holders) != 1:
                raise GraphError(f"expected exactly one {role} node, found {holders}")
        cycle = _find_cycle(names, self.edges)
        if cycle:
            raise GraphError("cycle detected: " + " -> ".join(cycle))

    @classmethod
    def from_edges(cls, edges, *, exposure="A", outcome="Y", selection="R",
                   latent=(), tiers: Mapping[str, int] | None = None, extra_nodes=()):
        """Build a graph from an edge list; unnamed nodes become covariates."""
        tiers = tiers or {}
        order = []
        for u, v in edges:
            for x in (u, v):
                if x not in order:
                    order.append(x)
        for x in (*extra_nodes, exposure, outcome, selection):
            if x not in order:
                order.append(x)
        roles = {exposure: "exposure", outcome: "outcome", selection: "selection"}
        roles.update({x: "latent" for x in latent})
        nodes = [Node(x, roles.get(x, "covariate"), tiers.get(x)) for x in order]
        return cls(nodes, frozenset(edges))

    @cached_property
    def names(self):
        return frozenset(n.name for n in self.nodes)

    @cached_property
    def _by_name(self):
        return {n.name: n for n in self.nodes}

    @cached_property
    def _parents(self):
        par = {n: set() for n in self.names}
        for u, v in self.edges:
            par[v].add(u)
        return {k: frozenset(v) for k, v in par.items()}

    @cached_property
    def _children(self):
        ch = {n: set() for n in self.names}
        for u, v in self.edges:
            ch[u].add(v)
        return {k: frozenset(v) for k, v in ch.items()}

    def _role_node(self, role):
        return next(n.name for n in self.nodes if n.role == role)

    @property
    def exposure(self):
        return self._role_node("exposure")

    @property
    def outcome(self):
        return self._role_node("outcome")

    @property
    def selection(self):
        return self._role_node("selection")

    @property
    def latents(self):
        return frozenset(n.name for n in self.nodes if n.role == "latent")

    @property
    def covariates(self):
        return frozenset(n.name for n in self.nodes if n.role == "covariate")

    def node(self, name):
        try:
            return self._by_name[name]
        except KeyError:
            raise GraphError(f"unknown node {name!r}") from None

    def parents(self, name):
        self.node(name)
        return self._parents[name]

    def children(self, name):
        self.node(name)
        return self._children[name]

    def topological_order(self):
        return _topo_sort([n.name for n in self.nodes], self.edges)

    def with_edges(self, edges):
        return MGraph(self.nodes, frozenset(edges))

    def to_text(self):
        lines = []
        for n in self.nodes:
            line = f"node {n.name} role={n.role}"
            if n.tier is not None:
                line += f" tier={n.tier}"
            lines.append(line)
        lines += [f"{u} -> {v}" for u, v in sorted(self.edges)]
        return "\n".join(lines) + "\n"


def _topo_sort(names, edges):
    indeg = {n: 0 for n in names}
    children = {n: [] for n in names}
    for u, v in edges:
        indeg[v] += 1
        children[u].append(v)
    queue = deque(sorted(n for n in names if indeg[n] == 0))
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in sorted(children[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return order if len(order) == len(names) else None


def _find_cycle(names, edges):
    if _topo_sort(names, edges) is not None:
        return None
    children = {n: [] for n in names}
    for u, v in edges:
        children[u].append(v)
    color = dict.fromkeys(names, 0)
    stack = []

    def visit(u):
        color[u] = 1
        stack.append(u)
        for v in children[u]:
            if color[v] == 1:
                return stack[stack.index(v):] + [v]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for n in names:
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return ["?"]


def parse_graph(text: str) -> MGraph:
    """Parse the line-oriented graph format.

    Statements are ``node <name> [role=...] [tier=0|1]`` and ``<u> -> <v>``;
    ``#`` starts a comment. Edge endpoints must be declared with ``node``.
    """
    nodes: dict[str, Node] = {}
    node_line: dict[str, int] = {}
    edges: list[tuple[str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            parts = [p.strip() for p in line.split("->")]
            if len(parts) != 2 or not all(p and p.isidentifier() for p in parts):
                raise GraphParseError(f"malformed edge statement {raw.strip()!r}", lineno)
            edges.append((parts[0], parts[1], lineno))
            continue
        tokens = line.split()
        if tokens[0] != "node" or len(tokens) < 2:
            raise GraphParseError(f"unrecognised statement {raw.strip()!r}", lineno)
        name = tokens[1]
        if not name.isidentifier():
            raise GraphParseError(f"invalid node name {name!r}", lineno)
        if name in nodes:
            raise GraphParseError(
                f"duplicate node {name!r} (first declared on line {node_line[name]})", lineno)
        role, tier = "covariate", None
        for tok in tokens[2:]:
            key, _, value = tok.partition("=")
            if key == "role":
                role = value if value in ROLES else "covariate"
            elif key == "tier":
                if value not in ("0", "1"):
                    raise GraphParseError(f"tier must be 0 or 1, got {value!r}", lineno)
                tier = int(value)
            else:
                raise GraphParseError(f"unknown attribute {tok!r}", lineno)
        nodes[name] = Node(name, role, tier)
        node_line[name] = lineno

    for role in _SINGLE_ROLES:
        holders = [n for n in nodes.values() if n.role == role]
        if len(holders) != 1:
            where = node_line[holders[1].name] if len(holders) > 1 else None
            what = "duplicate" if holders else "missing"
            raise GraphParseError(f"{what} {role} declaration", where)

    seen = set()
    for u, v, lineno in edges:
        for x in (u, v):
            if x not in nodes:
                raise GraphParseError(f"edge references undeclared node {x!r}", lineno)
        if u == v:
            raise GraphParseError(f"cycle detected: self-loop on {u}", lineno)
        seen.add((u, v))
        if _topo_sort(list(nodes), seen) is None:
            cycle = _find_cycle(list(nodes), seen)
            raise GraphParseError("cycle detected: " + " -> ".join(cycle), lineno)
    return MGraph(tuple(nodes.values()), frozenset(seen))


def _check_nodes(G, S):
    S = frozenset([S] if isinstance(S, str) else S)
    unknown = S - G.names
    if unknown:
        raise GraphError(f"unknown node(s): {sorted(unknown)}")
    return S


def _reach(G, S, step):
    seen = set(S)
    queue = deque(S)
    while queue:
        u = queue.popleft()
        for v in step(u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def genealogy(S, G: MGraph, kind: str) -> frozenset:
    """Genealogic set of ``S`` in ``G``.

    ``an``/``de`` are strict ancestors/descendants of the set (a member of S
    is included only if it is reachable from another member), ``An``/``De``
    are inclusive, and ``nd`` is the complement of ``De``.
    """
    S = _check_nodes(G, S)
    if kind in ("an", "An"):
        step = G._parents.__getitem__
    elif kind in ("de", "De", "nd"):
        step = G._children.__getitem__
    else:
        raise GraphError(f"unknown genealogy kind {kind!r}")
    if kind in ("An", "De"):
        return frozenset(_reach(G, S, step))
    if kind == "nd":
        return G.names - _reach(G, S, step)
    strict = set()
    queue = deque(v for u in S for v in step(u))
    while queue:
        u = queue.popleft()
        if u not in strict:
            strict.add(u)
            queue.extend(step(u))
    return frozenset(strict)


def mutilate(G: MGraph, out_of, into) -> MGraph:
    """Remove every edge leaving ``out_of`` and entering ``into``."""
    out_of = _check_nodes(G, out_of)
    into = _check_nodes(G, into)
    return G.with_edges(e for e in G.edges if not (e[0] in out_of and e[1] in into))


def overline(G: MGraph, S) -> MGraph:
    """Graph with all edges into ``S`` removed."""
    return mutilate(G, G.names, S)


def underline(G: MGraph, S) -> MGraph:
    """Graph with all edges out of ``S`` removed."""
    return mutilate(G, S, G.names)


def proper_causal_nodes(A, Y, G: MGraph) -> frozenset:
    A = _check_nodes(G, A)
    Y = _check_nodes(G, Y)
    return genealogy(A, overline(G, A), "de") & genealogy(Y, underline(G, A), "An")


def forbidden_nodes(A, Y, G: MGraph) -> frozenset:
    A = _check_nodes(G, A)
    cn = proper_causal_nodes(A, Y, G)
    return genealogy(cn, G, "De") | A


def proper_backdoor_graph(A, Y, G: MGraph) -> MGraph:
    return mutilate(G, A, proper_causal_nodes(A, Y, G))


def _active_trail(X, Y, S, G):
    """Bayes-ball reachability from X given S.

    Returns a d-connecting trail (tuple of nodes) to some node of Y, or None.
    States are (node, came_from_child) pairs; predecessor links rebuild the
    trail.
    """
    anc_S = genealogy(S, G, "An") if S else frozenset()
    start = [(x, True) for x in sorted(X)]
    prev = {s: None for s in start}
    queue = deque(start)
    while queue:
        state = queue.popleft()
        node, up = state
        if node in Y:
            trail = []
            while state is not None:
                trail.append(state[0])
                state = prev[state]
            return tuple(reversed(trail))
        nxt = []
        if up:
            # arrived from a child (or start): pass through unless observed
            if node not in S:
                nxt += [(p, True) for p in G._parents[node]]
                nxt += [(c, False) for c in G._children[node]]
        else:
            # arrived from a parent
            if node not in S:
                nxt += [(c, False) for c in G._children[node]]
            if node in anc_S:
                nxt += [(p, True) for p in G._parents[node]]
        for s in sorted(nxt):
            if s not in prev:
                prev[s] = state
                queue.append(s)
    return None


def d_separated(X, Y, S, G: MGraph) -> bool:
    X, Y, S = (_check_nodes(G, s) for s in (X, Y, S))
    if X & Y or X & S or Y & S:
        raise GraphError("X, Y and S must be pairwise disjoint")
    if not X or not Y:
        return True
    return _active_trail(X, Y, S, G) is None


def _pair_role_check(pair, G):
    bad = (pair.W | pair.Z) - G.covariates
    unknown = (pair.W | pair.Z) - G.names
    if unknown:
        raise GraphError(f"unknown node(s) in pair: {sorted(unknown)}")
    if bad:
        raise GraphError(f"pair may only contain observed covariates, got {sorted(bad)}")


def is_s_admissible(pair: AdmissiblePair, G: MGraph) -> Certificate:
    """Check the three sequential adjustment conditions for ``pair``.

    The returned certificate is truthy-testable through ``.admissible``.
    """
    _pair_role_check(pair, G)
    A, Y, R = G.exposure, G.outcome, G.selection
    fb = forbidden_nodes(A, Y, G)
    c1 = not (pair.W & fb)
    bd = proper_backdoor_graph(A, Y, G)
    trail2 = _active_trail({Y}, {A}, pair.W, bd)
    c2 = trail2 is None
    trail3 = _active_trail({Y}, {R}, pair.W | pair.Z | {A}, G)
    c3 = trail3 is None
    conds = (c1, c2, c3)
    if not c1:
        return Certificate(conds, 1, None,
                           f"W contains forbidden node(s) {sorted(pair.W & fb)}")
    if not c2:
        return Certificate(conds, 2, trail2,
                           f"{Y} and {A} are d-connected given W in the proper backdoor graph")
    if not c3:
        return Certificate(conds, 3, trail3,
                           f"{Y} and {R} are d-connected given W, {A}, Z")
    return Certificate(conds)


def _tier_ok(pair, G):
    return (all(G.node(w).tier == 0 for w in pair.W)
            and all(G.node(z).tier == 1 for z in pair.Z))


def enumerate_minimal_pairs(G: MGraph, candidates: Iterable[str] | None = None,
                            chronological: bool = False,
                            minimal_only: bool = True) -> list[AdmissiblePair]:
    """All minimal s-admissible pairs, ordered by size then lexicographically.

    A pair is minimal when dropping any single member of ``W`` or ``Z`` breaks
    admissibility. With ``chronological=True`` only pairs with ``W`` in tier 0
    and ``Z`` in tier 1 are considered; ``minimal_only=False`` lists every
    admissible pair.
    """
    cands = sorted(G.covariates if candidates is None else _check_nodes(G, candidates))
    bad = set(cands) - G.covariates
    if bad:
        raise GraphError(f"candidates must be observed covariates, got {sorted(bad)}")
    A, Y, R = G.exposure, G.outcome, G.selection
    fb = forbidden_nodes(A, Y, G)
    bd = proper_backdoor_graph(A, Y, G)

    cache = {}

    def admissible(W, Z):
        key = (W, Z)
        if key not in cache:
            cache[key] = (not (W & fb)
                          and d_separated({Y}, {A}, W, bd)
                          and d_separated({Y}, {R}, W | Z | {A}, G))
        return cache[key]

    found = []
    for labels in itertools.product((0, 1, 2), repeat=len(cands)):
        W = frozenset(c for c, l in zip(cands, labels) if l == 1)
        if W & fb:
            continue
        Z = frozenset(c for c, l in zip(cands, labels) if l == 2)
        pair = AdmissiblePair(W, Z)
        if chronological and not _tier_ok(pair, G):
            continue
        if not admissible(W, Z):
            continue
        if minimal_only and (any(admissible(W - {w}, Z) for w in W)
                             or any(admissible(W, Z - {z}) for z in Z)):
            continue
        found.append(pair)
    return sorted(found, key=AdmissiblePair.sort_key)


def default_pair_markovian(G: MGraph) -> AdmissiblePair:
    """The parents-of-outcome pair that is admissible in Markovian graphs."""
    if G.latents:
        raise GraphError("default pair requires a graph without latent nodes")
    A, Y, R = G.exposure, G.outcome, G.selection
    if R in genealogy({Y}, G, "de"):
        raise GraphError("self-selection: the selection node descends from the outcome")
    pa = G.parents(Y)
    if R in pa:
        raise GraphError("the selection node is a parent of the outcome")
    fb = forbidden_nodes(A, Y, G)
    return AdmissiblePair(pa - fb, (pa & fb) - {A})
