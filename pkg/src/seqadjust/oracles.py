"""Exact finite-support references.

A :class:`DiscreteSCM` is a causal model over variables with a few numeric
states each. From it we compute, by exhaustive summation and without any
estimation, the interventional ATE, the observed-data distribution
(:class:`ExactDistribution`), the sequential adjustment functional, its
influence function, and the estimating-equation residual under perturbed
nuisances. Brute-force path enumeration gives reference d-separation and
pair enumeration for the graph module.

All pmf-weighted sums use ``math.fsum``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit, logit, ndtr

from .graph import AdmissiblePair, MGraph, Node

MAX_STATES = 6
MAX_CONFIGURATIONS = 10**6
ROW_TOL = 1e-12
FIXTURE_DIR = Path(__file__).parent / "data" / "scm"


class OracleError(ValueError):
    """Malformed model or a positivity hole in an exact computation."""


@dataclass(frozen=True, eq=False)
class Variable:
    """Discrete variable with its conditional pmf.

    ``cpt`` has shape ``(*parent_sizes, len(states))``; the first parent
    varies slowest when the table is written as a list of rows.
    """

    name: str
    states: tuple
    parents: tuple = ()
    cpt: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(float(s) for s in self.states))
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "cpt", np.asarray(self.cpt, dtype=float))

    @property
    def k(self):
        return len(self.states)


@dataclass(frozen=True, eq=False)
class DiscreteSCM:
    """Causal model over discrete variables listed in topological order."""

    variables: tuple
    exposure: str = "A"
    outcome: str = "Y"
    selection: str = "R"
    latent: frozenset = frozenset()
    tiers: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "latent", frozenset(self.latent))
        seen = set()
        for v in self.variables:
            if v.name in seen:
                raise OracleError(f"duplicate variable {v.name!r}")
            missing = [p for p in v.parents if p not in seen]
            if missing:
                raise OracleError(f"{v.name}: parents {missing} must precede it")
            seen.add(v.name)
            if not 1 <= v.k <= MAX_STATES:
                raise OracleError(f"{v.name}: between 1 and {MAX_STATES} states allowed")
            shape = tuple(self[p].k for p in v.parents) + (v.k,)
            if v.cpt.shape != shape:
                raise OracleError(f"{v.name}: cpt shape {v.cpt.shape}, expected {shape}")
            if np.any(v.cpt < 0) or np.max(np.abs(v.cpt.sum(-1) - 1)) > ROW_TOL:
                raise OracleError(f"{v.name}: every pmf row must be nonnegative and sum to 1")
        for role in (self.exposure, self.selection):
            if role not in seen or self[role].states != (0.0, 1.0):
                raise OracleError(f"{role!r} must be a binary variable with states (0, 1)")
        if self.outcome not in seen:
            raise OracleError(f"outcome {self.outcome!r} missing")
        if self.latent & {self.exposure, self.outcome, self.selection}:
            raise OracleError("role variables cannot be latent")
        if math.prod(v.k for v in self.variables) > MAX_CONFIGURATIONS:
            raise OracleError("too many joint configurations for exact enumeration")

    def __getitem__(self, name) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def names(self):
        return [v.name for v in self.variables]

    @property
    def observed(self):
        return [v.name for v in self.variables if v.name not in self.latent]

    def graph(self) -> MGraph:
        roles = {self.exposure: "exposure", self.outcome: "outcome",
                 self.selection: "selection"}
        nodes = [Node(v.name, "latent" if v.name in self.latent else roles.get(v.name, "covariate"),
                      self.tiers.get(v.name)) for v in self.variables]
        edges = {(p, v.name) for v in self.variables for p in v.parents}
        return MGraph(nodes, edges)

    def is_positive(self):
        return all(np.all(v.cpt > 0) for v in self.variables)

    def joint(self, do=None):
        """Full joint pmf as an array with one axis per variable.

        ``do`` maps variable names to state values and replaces their
        mechanisms by point masses (truncated factorization).
        """
        do = do or {}
        names = self.names
        shape = tuple(v.k for v in self.variables)
        out = np.ones(shape)
        for i, v in enumerate(self.variables):
            if v.name in do:
                if do[v.name] not in v.states:
                    raise OracleError(f"{do[v.name]} is not a state of {v.name}")
                factor = np.array([float(s == do[v.name]) for s in v.states])
                axes = [i]
            else:
                axes = [names.index(p) for p in v.parents] + [i]
                factor = v.cpt
            order = np.argsort(axes)
            factor = np.transpose(factor, order)
            full = [1] * len(shape)
            for ax in axes:
                full[ax] = shape[ax]
            out = out * factor.reshape(full)
        return out

    def to_dict(self):
        return {
            "roles": {"exposure": self.exposure, "outcome": self.outcome,
                      "selection": self.selection},
            "latent": sorted(self.latent),
            "tiers": dict(sorted(self.tiers.items())),
            "variables": [{"name": v.name, "states": list(v.states), "parents": list(v.parents),
                           "cpt": v.cpt.reshape(-1, v.k).tolist()} for v in self.variables],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            roles = d.get("roles", {})
            sizes = {}
            variables = []
            for spec in d["variables"]:
                states = spec["states"]
                parents = spec.get("parents", [])
                shape = tuple(sizes[p] for p in parents) + (len(states),)
                cpt = np.asarray(spec["cpt"], dtype=float).reshape(shape)
                variables.append(Variable(spec["name"], states, parents, cpt))
                sizes[spec["name"]] = len(states)
        except (KeyError, ValueError, TypeError) as exc:
            raise OracleError(f"malformed model description: {exc}") from exc
        return cls(variables, roles.get("exposure", "A"), roles.get("outcome", "Y"),
                   roles.get("selection", "R"), frozenset(d.get("latent", ())),
                   {k: int(v) for k, v in d.get("tiers", {}).items()})

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dumps(self):
        """JSON text with one line per variable."""
        d = self.to_dict()
        head = ",\n".join(f" {json.dumps(k)}: {json.dumps(d[k])}"
                           for k in ("roles", "latent", "tiers"))
        body = ",\n".join("  " + json.dumps(v) for v in d["variables"])
        return "{\n" + head + ',\n "variables": [\n' + body + "\n ]\n}"


def load_fixture(name) -> DiscreteSCM:
    """Load a shipped model (``setup2`` ... ``setup1``, ``mar``, ``toy``)."""
    return DiscreteSCM.load(FIXTURE_DIR / f"{name}.json")


def random_cpts(rng, sizes, floor=0.05, concentration=1.0):
    """Strictly positive pmf rows: ``floor`` mass per state plus a Dirichlet draw."""
    *parents, k = sizes
    rows = rng.dirichlet(np.full(k, concentration), size=max(1, math.prod(parents)))
    return (floor + (1 - k * floor) * rows).reshape(sizes)


def scm_from_graph(G: MGraph, rng, states=None, floor=0.05, concentration=1.0) -> DiscreteSCM:
    """Attach random positive mechanisms to ``G``.

    ``states`` maps names to state values; unlisted covariates get (0, 1)
    and the outcome gets three spread-out values.
    """
    states = dict(states or {})
    variables = []
    order = G.topological_order()
    for name in order:
        role = G.node(name).role
        if name not in states:
            if role == "outcome":
                states[name] = tuple(np.round(np.sort(rng.normal(0, 2, 3)), 3))
            else:
                states[name] = (0.0, 1.0)
        parents = tuple(sorted(G.parents(name), key=order.index))
        sizes = tuple(len(states[p]) for p in parents) + (len(states[name]),)
        variables.append(Variable(name, states[name], parents,
                                  random_cpts(rng, sizes, floor, concentration)))
    tiers = {n.name: n.tier for n in G.nodes if n.tier is not None}
    return DiscreteSCM(variables, G.exposure, G.outcome, G.selection, G.latents, tiers)


def random_scm(seed, max_covariates=3, latent_prob=0.5, edge_prob=0.5) -> DiscreteSCM:
    """Random positive model with an A -> Y edge and a childless selection node."""
    rng = np.random.default_rng(seed)
    n_cov = int(rng.integers(1, max_covariates + 1))
    covs = [f"C{i + 1}" for i in range(n_cov)]
    lat = ["U1"] if rng.random() < latent_prob else []
    order = list(rng.permutation(covs + lat + ["A", "Y"]))
    if order.index("A") > order.index("Y"):
        i, j = order.index("A"), order.index("Y")
        order[i], order[j] = "Y", "A"
    order.append("R")
    edges = {("A", "Y")}
    for i, u in enumerate(order):
        for v in order[i + 1:]:
            if (u, v) != ("A", "Y") and rng.random() < edge_prob:
                edges.add((u, v))
    nodes = [Node(x, {"A": "exposure", "Y": "outcome", "R": "selection"}.get(
        x, "latent" if x in lat else "covariate")) for x in order]
    G = MGraph(nodes, edges)
    states = {c: tuple(float(s) for s in range(int(rng.integers(2, 4)))) for c in covs}
    return scm_from_graph(G, rng, states)


def exact_ate(scm: DiscreteSCM) -> float:
    """Interventional contrast E[Y | do(A=1)] - E[Y | do(A=0)]."""
    ax = scm.names.index(scm.outcome)
    y = np.asarray(scm[scm.outcome].states)
    means = []
    for a in (1.0, 0.0):
        p = scm.joint({scm.exposure: a})
        py = p.sum(axis=tuple(i for i in range(p.ndim) if i != ax))
        means.append(math.fsum(py * y))
    return means[0] - means[1]


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Observed-data pmf as weighted rows; ``Y`` is NaN where ``R == 0``."""

    columns: Mapping[str, np.ndarray]
    prob: np.ndarray
    exposure: str = "A"
    outcome: str = "Y"
    selection: str = "R"

    def __post_init__(self):
        object.__setattr__(self, "prob", np.asarray(self.prob, dtype=float))
        if abs(math.fsum(self.prob) - 1) > ROW_TOL or np.any(self.prob < 0):
            raise OracleError("observed pmf must be nonnegative and sum to 1")

    @property
    def n(self):
        return len(self.prob)

    def row(self, i):
        return {k: float(v[i]) for k, v in self.columns.items()}

    def contaminate(self, i, eps) -> "ExactDistribution":
        """Point-mass submodel ``(1 - eps) P + eps * delta_{O_i}``."""
        p = (1 - eps) * self.prob
        p[i] += eps
        if np.any(p < 0):
            raise OracleError("contamination leaves negative mass")
        return ExactDistribution(self.columns, p, self.exposure, self.outcome, self.selection)

    def to_dataset(self):
        from .estimators import Dataset

        return Dataset(dict(self.columns), self.exposure, self.outcome, self.selection,
                       weights=self.prob)


def observed_distribution(scm: DiscreteSCM) -> ExactDistribution:
    """Marginalise latents and mask ``Y`` on rows with ``R == 0``."""
    names = scm.names
    obs = scm.observed
    p = scm.joint().sum(axis=tuple(names.index(u) for u in scm.latent))
    ir = obs.index(scm.selection)
    cols = {c: [] for c in obs}
    probs = []
    for r in (0, 1):
        block = np.take(p, r, axis=ir)
        others = [c for c in obs if c != scm.selection]
        if r == 0:
            block = block.sum(axis=others.index(scm.outcome))
            others = [c for c in others if c != scm.outcome]
        for idx in itertools.product(*(range(scm[c].k) for c in others)):
            pr = float(block[idx])
            if pr <= 0:
                continue
            probs.append(pr)
            for c, j in zip(others, idx):
                cols[c].append(scm[c].states[j])
            cols[scm.selection].append(float(r))
            if r == 0:
                cols[scm.outcome].append(np.nan)
    return ExactDistribution({c: np.asarray(v, dtype=float) for c, v in cols.items()},
                             np.asarray(probs), scm.exposure, scm.outcome, scm.selection)


def _keys(cols, names):
    n = len(next(iter(cols.values())))
    if not names:
        return [()] * n
    return list(zip(*(np.asarray(cols[c], dtype=float).tolist() for c in names)))


def _fsum_by(keys, values):
    acc = {}
    for k, v in zip(keys, values):
        acc.setdefault(k, []).append(v)
    return {k: math.fsum(v) for k, v in acc.items()}


class Lookup:
    """Finite table used as a regression surface on column dicts."""

    def __init__(self, names, table):
        self.names = list(names)
        self.table = dict(table)

    def __call__(self, cols):
        try:
            return np.array([self.table[k] for k in _keys(cols, self.names)], dtype=float)
        except KeyError as exc:
            raise OracleError(f"no mass at configuration {exc.args[0]} of {self.names}") from exc


class ArmLookup:
    """``Q2(W, a)`` table keyed by W values plus the arm."""

    def __init__(self, names, table):
        self.names = list(names)
        self.table = dict(table)

    def __call__(self, cols, a):
        try:
            return np.array([self.table[k + (float(a),)] for k in _keys(cols, self.names)])
        except KeyError as exc:
            raise OracleError(f"no mass at configuration {exc.args[0]}") from exc


@dataclass
class Parts:
    """Marginal and conditional tables of one pair under one distribution."""

    W: list
    Z: list
    pW: dict
    pWA: dict
    pWAZ: dict
    q1: dict
    pi_a: dict
    pi_r: dict


def pair_parts(P: ExactDistribution, pair: AdmissiblePair) -> Parts:
    W, Z = sorted(pair.W), sorted(pair.Z)
    cols, p = P.columns, P.prob
    R = cols[P.selection]
    y = np.where(R == 1, np.nan_to_num(cols[P.outcome]), 0.0)
    kW = _keys(cols, W)
    kWA = _keys(cols, W + [P.exposure])
    kWAZ = _keys(cols, W + [P.exposure] + Z)
    pW = _fsum_by(kW, p)
    pWA = _fsum_by(kWA, p)
    pWAZ = _fsum_by(kWAZ, p)
    sel = _fsum_by(kWAZ, p * R)
    num = _fsum_by(kWAZ, p * R * y)
    if any(v <= 0 for v in sel.values()):
        raise OracleError("positivity: a (W, A, Z) cell has no selected mass")
    q1 = {k: num[k] / sel[k] for k in pWAZ}
    pi_r = {k: sel[k] / pWAZ[k] for k in pWAZ}
    pi_a = {}
    for w in pW:
        if (w + (1.0,)) not in pWA or (w + (0.0,)) not in pWA:
            raise OracleError(f"positivity: W={w} lacks an exposure arm")
        pi_a[w] = pWA[w + (1.0,)] / pW[w]
    return Parts(W, Z, pW, pWA, pWAZ, q1, pi_a, pi_r)


def _q2_from_q1(parts, q1):
    nw = len(parts.W)
    terms = {}
    for k, pk in parts.pWAZ.items():
        terms.setdefault(k[: nw + 1], []).append(pk / parts.pWA[k[: nw + 1]] * q1[k])
    return {k: math.fsum(v) for k, v in terms.items()}


def _psi_from_q2(parts, q2):
    return math.fsum(pw * (q2[w + (1.0,)] - q2[w + (0.0,)]) for w, pw in parts.pW.items())


def _table(fn, names, keys):
    cols = {c: np.array([k[i] for k in keys], dtype=float) for i, c in enumerate(names)}
    if not names:
        cols = {"_": np.zeros(len(keys))}
    return dict(zip(keys, fn(cols)))


def psi_from_q1(P, pair, q1: Callable) -> float:
    """Sequential functional with a given ``Q1`` and the true P_W, P_{Z|W,A}."""
    parts = pair_parts(P, pair)
    names = parts.W + [P.exposure] + parts.Z
    return _psi_from_q2(parts, _q2_from_q1(parts, _table(q1, names, list(parts.pWAZ))))


def psi_from_q2(P, pair, q2: Callable) -> float:
    """Outer functional ``E_W [Q2(W,1) - Q2(W,0)]`` with a given ``Q2``."""
    parts = pair_parts(P, pair)
    keys = list(parts.pW)
    names = parts.W
    cols = {c: np.array([k[i] for k in keys], dtype=float) for i, c in enumerate(names)}
    if not names:
        cols = {"_": np.zeros(len(keys))}
    table = {}
    for a in (0.0, 1.0):
        table.update({k + (a,): v for k, v in zip(keys, q2(cols, a))})
    return _psi_from_q2(parts, table)


def exact_s_formula(P: ExactDistribution, pair: AdmissiblePair) -> float:
    """``E_W sum_a (+/-) E_{Z|W,A=a} E[Y | W, A=a, Z, R=1]`` by exact summation."""
    parts = pair_parts(P, pair)
    return _psi_from_q2(parts, _q2_from_q1(parts, parts.q1))


def true_components(P, pair) -> dict:
    """The four nuisance surfaces of ``pair`` under ``P`` as lookups."""
    parts = pair_parts(P, pair)
    full = parts.W + [P.exposure] + parts.Z
    return {"Q1": Lookup(full, parts.q1),
            "Q2": ArmLookup(parts.W, _q2_from_q1(parts, parts.q1)),
            "piA": Lookup(parts.W, parts.pi_a),
            "piR": Lookup(full, parts.pi_r)}


def oracle_nuisance(P, pair, trunc=1e-6):
    """True surfaces packaged for the estimators."""
    from .estimators import NuisanceSet

    c = true_components(P, pair)
    return NuisanceSet(P.exposure, c["piA"], c["piR"], c["Q1"], c["Q2"], trunc)


def _eif(cols, comps, exposure, outcome, selection, psi):
    A, R = cols[exposure], cols[selection]
    y = np.where(R == 1, np.nan_to_num(cols[outcome]), 0.0)
    pa, pr = comps["piA"](cols), comps["piR"](cols)
    h2 = (A - pa) / (pa * (1 - pa))
    h1 = h2 / pr
    q1 = comps["Q1"](cols)
    q2_1, q2_0 = comps["Q2"](cols, 1), comps["Q2"](cols, 0)
    q2 = np.where(A == 1, q2_1, q2_0)
    return h1 * R * (y - q1) + h2 * (q1 - q2) + q2_1 - q2_0 - psi


def exact_eif_table(P, pair, components=None, psi=None) -> np.ndarray:
    """Influence function value at every support row of ``P``."""
    comps = true_components(P, pair)
    comps.update(components or {})
    psi = exact_s_formula(P, pair) if psi is None else psi
    return _eif(P.columns, comps, P.exposure, P.outcome, P.selection, psi)


def exact_eif(P, pair, config: Mapping[str, float]) -> float:
    """Influence function of the sequential functional at one observation."""
    cols = {k: np.array([float(v)]) for k, v in config.items()}
    if P.outcome not in cols:
        cols[P.outcome] = np.array([np.nan])
    comps = true_components(P, pair)
    return float(_eif(cols, comps, P.exposure, P.outcome, P.selection,
                      exact_s_formula(P, pair))[0])


def expectation(P, values) -> float:
    return math.fsum(P.prob * np.asarray(values, dtype=float))


def gateaux_derivative(P, pair, i, eps=1e-6, scheme="central") -> float:
    """Finite-difference derivative along the point mass at support row ``i``.

    ``"forward"`` differences ``P_eps`` against ``P`` (error linear in eps);
    ``"central"`` differences ``P_eps`` against ``P_-eps``, which stays a
    pmf while ``eps`` is below the mass of row ``i`` (error quadratic).
    """
    if scheme == "forward":
        return (exact_s_formula(P.contaminate(i, eps), pair) - exact_s_formula(P, pair)) / eps
    if scheme != "central":
        raise OracleError(f"unknown scheme {scheme!r}")
    if eps >= P.prob[i]:
        raise OracleError("central difference needs eps below the row's mass")
    return (exact_s_formula(P.contaminate(i, eps), pair)
            - exact_s_formula(P.contaminate(i, -eps), pair)) / (2 * eps)


def robustness_residual(P, pair, putative: Mapping[str, Callable], psi_true) -> float:
    """``E_P`` of the estimating function with some nuisances replaced.

    ``putative`` may hold any of ``"Q1"``, ``"Q2"`` (callable ``(cols, a)``),
    ``"piA"``, ``"piR"``; missing ones are the true surfaces.
    """
    unknown = set(putative) - {"Q1", "Q2", "piA", "piR"}
    if unknown:
        raise OracleError(f"unknown nuisance name(s) {sorted(unknown)}")
    return expectation(P, exact_eif_table(P, pair, dict(putative), psi_true))


def perturbed_components(P, pair, which, rng, scale=0.5, clip=0.02) -> dict:
    """Random wrong surfaces: logit shifts for propensities, additive for Q's."""
    parts = pair_parts(P, pair)
    full = parts.W + [P.exposure] + parts.Z
    out = {}
    shift = lambda keys: {k: float(rng.normal(0, scale)) for k in keys}
    if "piA" in which:
        s = shift(parts.pi_a)
        out["piA"] = Lookup(parts.W, {k: float(np.clip(expit(logit(v) + s[k]), clip, 1 - clip))
                                      for k, v in parts.pi_a.items()})
    if "piR" in which:
        s = shift(parts.pi_r)
        out["piR"] = Lookup(full, {k: float(np.clip(expit(logit(v) + s[k]), clip, 1.0))
                                   for k, v in parts.pi_r.items()})
    if "Q1" in which:
        s = shift(parts.q1)
        out["Q1"] = Lookup(full, {k: v + s[k] for k, v in parts.q1.items()})
    if "Q2" in which:
        q2 = _q2_from_q1(parts, parts.q1)
        s = shift(q2)
        out["Q2"] = ArmLookup(parts.W, {k: v + s[k] for k, v in q2.items()})
    return out


def linearity_residual(P, pair, Q_a: Callable, Q_b: Callable, alpha, level="Q1") -> float:
    """Functional at a mixture of two surfaces minus the mixture of functionals.

    ``level="Q1"`` mixes outcome regressions (``cols -> values``) under the
    true P_W and P_{Z|W,A}; ``level="Q2"`` mixes meta-regressions
    (``(cols, a) -> values``) under the true P_W.
    """
    if level == "Q1":
        psi = lambda q: psi_from_q1(P, pair, q)
        mix = lambda cols: alpha * Q_a(cols) + (1 - alpha) * Q_b(cols)
    elif level == "Q2":
        psi = lambda q: psi_from_q2(P, pair, q)
        mix = lambda cols, a: alpha * Q_a(cols, a) + (1 - alpha) * Q_b(cols, a)
    else:
        raise OracleError(f"level must be 'Q1' or 'Q2', got {level!r}")
    return psi(mix) - (alpha * psi(Q_a) + (1 - alpha) * psi(Q_b))


def random_surface(P, pair, rng, level="Q1", scale=3.0):
    """Arbitrary finite table on the support, for linearity checks."""
    parts = pair_parts(P, pair)
    if level == "Q1":
        return Lookup(parts.W + [P.exposure] + parts.Z,
                      {k: float(rng.normal(0, scale)) for k in parts.pWAZ})
    return ArmLookup(parts.W, {k: float(rng.normal(0, scale)) for k in parts.pWA})


# -- brute-force graph references ---------------------------------------------

def _simple_paths(G: MGraph, x, y):
    adj = {n: set(G.parents(n)) | set(G.children(n)) for n in G.names}
    stack = [(x, (x,))]
    while stack:
        node, path = stack.pop()
        if node == y:
            yield path
            continue
        for nb in adj[node]:
            if nb not in path:
                stack.append((nb, path + (nb,)))


def _descendants_incl(G, v):
    out, todo = {v}, [v]
    while todo:
        for c in G.children(todo.pop()):
            if c not in out:
                out.add(c)
                todo.append(c)
    return out


def _path_open(G, path, S):
    for i in range(1, len(path) - 1):
        a, b, c = path[i - 1], path[i], path[i + 1]
        collider = (a, b) in G.edges and (c, b) in G.edges
        if collider:
            if not (_descendants_incl(G, b) & S):
                return False
        elif b in S:
            return False
    return True


def brute_dsep(X, Y, S, G: MGraph) -> bool:
    """d-separation by enumerating every simple path of the skeleton."""
    S = set(S)
    return not any(_path_open(G, path, S)
                   for x in X for y in Y for path in _simple_paths(G, x, y))


def brute_forbidden(G: MGraph) -> set:
    """Exposure plus descendants of nodes on directed exposure-outcome paths."""
    A, Y = G.exposure, G.outcome
    on_path = set()
    stack = [(A, (A,))]
    while stack:
        node, path = stack.pop()
        if node == Y:
            on_path.update(path[1:])
            continue
        for c in G.children(node):
            stack.append((c, path + (c,)))
    fb = {A}
    for v in on_path:
        fb |= _descendants_incl(G, v)
    return fb


def brute_admissible(pair: AdmissiblePair, G: MGraph) -> bool:
    A, Y, R = G.exposure, G.outcome, G.selection
    fb = brute_forbidden(G)
    if pair.W & fb:
        return False
    # proper backdoor graph: drop A -> v for v on a directed A -> Y path
    on_path = {v for v in G.children(A) if Y in _descendants_incl(G, v)}
    bd = MGraph(G.nodes, {(u, v) for u, v in G.edges if not (u == A and v in on_path)})
    if not brute_dsep({Y}, {A}, pair.W, bd):
        return False
    return brute_dsep({Y}, {R}, pair.W | pair.Z | {A}, G)


def brute_pairs(G: MGraph) -> list:
    """Exhaustive scan of all disjoint (W, Z) covariate pairs for minimal ones."""
    covs = sorted(G.covariates)
    ok = {}
    for labels in itertools.product((0, 1, 2), repeat=len(covs)):
        W = frozenset(c for c, l in zip(covs, labels) if l == 1)
        Z = frozenset(c for c, l in zip(covs, labels) if l == 2)
        ok[(W, Z)] = brute_admissible(AdmissiblePair(W, Z), G)
    found = []
    for (W, Z), good in ok.items():
        if not good:
            continue
        if any(ok[(W - {w}, Z)] for w in W) or any(ok[(W, Z - {z})] for z in Z):
            continue
        found.append(AdmissiblePair(W, Z))
    return sorted(found, key=AdmissiblePair.sort_key)


def random_dag(rng, n_nodes, edge_prob=0.4) -> MGraph:
    """Random DAG with roles A, Y, R on three of its nodes (for d-sep checks)."""
    if n_nodes < 3:
        raise OracleError("need at least three nodes")
    names = [f"V{i}" for i in range(n_nodes)]
    order = [str(x) for x in rng.permutation(names)]
    edges = {(u, v) for i, u in enumerate(order) for v in order[i + 1:]
             if rng.random() < edge_prob}
    roles = dict(zip([str(x) for x in rng.permutation(names)[:3]],
                     ("exposure", "outcome", "selection")))
    return MGraph([Node(x, roles.get(x, "covariate")) for x in names], edges)


# -- quadrature references for the simulation designs -------------------------

def _gauss_normal(k):
    """Nodes and weights integrating against the standard normal density."""
    x, w = np.polynomial.hermite_e.hermegauss(k)
    return x, w / math.sqrt(2 * math.pi)


def missingness_quadrature(setup, theta=-1.90, params=None, k=60) -> float:
    """``Pr(R = 0)`` of a simulation design by Gauss-Hermite quadrature.

    Independent of the samplers: every normal noise is integrated out on a
    tensor grid and the probit selection step is evaluated in closed form.
    """
    from .simulate import Setup1Params, Setup2Params

    x, w = _gauss_normal(k)
    if setup == "I":
        p = params or Setup1Params()
        p_a1 = float(np.sum(w * ndtr(p.a_w * x + p.a_w2 * np.sign(x) * x ** 2)))
        u1, u2 = np.meshgrid(x, x, indexing="ij")
        ww = np.outer(w, w)
        selected = 0.0
        for a, pa in ((1, p_a1), (0, 1 - p_a1)):
            s = 2 * a - 1
            z1 = p.z1_0 + p.z1_a * a + u1
            z2 = p.z2_scale * (p.z2_0 + p.z2_s * s + p.z2_z1 * z1 + p.z2_sz1 * s * z1 + u2) ** 2
            selected += pa * float(np.sum(ww * ndtr(theta + p.r_z1 * z1 + p.r_z2 * z2)))
        return 1.0 - selected
    if setup == "II":
        p = params or Setup2Params()
        b, u, e = np.meshgrid(x, x, x, indexing="ij")
        ww = w[:, None, None] * w[None, :, None] * w[None, None, :]
        selected = 0.0
        for a in (0, 1):
            s = 2 * a - 1
            lin = p.a_b * b + p.a_b2 * np.sign(b) * b ** 2
            pa = ndtr(lin) if a == 1 else ndtr(-lin)
            c1 = p.c1_b2 * b ** 2 + p.c1_s * s + p.c1_sb * s * b + p.sd_c1 * e
            m2 = p.c2_u * u + p.c2_c1 * c1 + p.c2_uc1 * u * c1
            slope = p.r_c2 + p.r_sc2 * s
            # C2 = m2 + sd_c2 * N(0,1); integrate the probit over that noise exactly
            z = (p.r_0 + p.r_s * s + slope * m2) / np.sqrt(p.sd_r ** 2 + (slope * p.sd_c2) ** 2)
            selected += float(np.sum(ww * pa * ndtr(z)))
        return 1.0 - selected
    raise OracleError(f"unknown setup {setup!r}")
