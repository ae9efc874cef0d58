"""Simulation designs, scenario configurations and the Monte Carlo harness.

Two data-generating processes are provided:

* setup I: confounder ``W1``, mediators ``Z1``, ``Z2`` that also drive
  selection, and a single minimal pair ``({W1}; {Z1, Z2})``;
* setup II: a semi-Markovian design with latent ``U1`` and two minimal
  pairs, ``({B1, C1, C2}; {})`` and ``({B1}; {C2})``.

Randomness comes from numpy's PCG64 bit generator. Every dataset, oracle
draw and Monte Carlo replicate gets its own stream derived from the master
seed with :class:`numpy.random.SeedSequence` spawn keys; normal variates are
drawn with ``Generator.standard_normal`` (ziggurat), whose output for a given
stream is fixed across platforms.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import estimators as est
from .estimators import Dataset, EstimationError, NuisanceModel
from .graph import AdmissiblePair, MGraph, parse_graph
from .learners import LinearRegression, SuperLearnerSpec

log = logging.getLogger(__name__)

GRAPH_DIR = Path(__file__).parent / "data" / "graphs"

THETA_MISSINGNESS = {-1.90: 0.50, -0.90: 0.25, -0.30: 0.15}

# Interventional oracle: N = 10**7 shared-noise draws, seed ORACLE_SEED.
ORACLE_SEED = 20240101
ORACLE_N = 10**7
TRUE_ATE = {"I": (5.244481366, 0.000842771), "II": (-2.399349391, 0.000822305)}
# Standard deviation of the full outcome in a 10**6 reference draw (seed SD_SEED).
SD_SEED = 7
SD_N = 10**6
OUTCOME_SD = {"I": 9.069196293, "II": 8.080507881}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


def stream(seed, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _graph(name) -> MGraph:
    return parse_graph((GRAPH_DIR / f"{name}.graph").read_text())


# -- setup I ------------------------------------------------------------------

@dataclass(frozen=True)
class Setup1Params:
    """Coefficients of setup I; ``s = 2A - 1``."""

    a_w: float = 0.90
    a_w2: float = -0.09
    z1_0: float = -0.50
    z1_a: float = 1.00
    z2_scale: float = 0.20
    z2_0: float = 4.0
    z2_s: float = 0.05
    z2_z1: float = 0.50
    z2_sz1: float = 0.05
    y_w: float = 3.00
    y_sqrt: float = 1.50
    y_s: float = -0.25
    y_sw: float = 0.50
    y_z1: float = 1.25
    y_sz1: float = 0.25
    y_z2: float = 1.00
    y_sz2: float = 0.50
    sd_y: float = 7.0
    r_z1: float = 0.29
    r_z2: float = 0.54

    def null_effect(self):
        """Same design with every exposure coefficient set to zero."""
        return dataclasses.replace(self, z1_a=0.0, z2_s=0.0, z2_sz1=0.0, y_s=0.0, y_sw=0.0,
                                   y_sz1=0.0, y_sz2=0.0)


def _setup1_downstream(p, W1, a, uz1, uz2, uy):
    s = 2 * a - 1
    Z1 = p.z1_0 + p.z1_a * a + uz1
    Z2 = p.z2_scale * (p.z2_0 + p.z2_s * s + p.z2_z1 * Z1 + p.z2_sz1 * s * Z1 + uz2) ** 2
    Y = (p.y_w * W1 + p.y_sqrt * np.sqrt(np.abs(W1)) + p.y_s * s + p.y_sw * s * W1
         + p.y_z1 * Z1 + p.y_sz1 * s * Z1 + p.y_z2 * Z2 + p.y_sz2 * s * Z2 + p.sd_y * uy)
    return Z1, Z2, Y


def _setup1_full(n, theta, rng, p):
    W1, ua, uz1, uz2, uy, ur, u0 = (rng.standard_normal(n) for _ in range(7))
    A = (p.a_w * W1 + p.a_w2 * np.sign(W1) * W1 ** 2 + ua > 0).astype(float)
    Z1, Z2, Y = _setup1_downstream(p, W1, A, uz1, uz2, uy)
    R = (theta + p.r_z1 * Z1 + p.r_z2 * Z2 + ur > 0).astype(float)
    return {"W1": W1, "A": A, "Z1": Z1, "Z2": Z2, "R": R, "Y": Y, "U0": u0}


def gen_setup1(n, theta=-1.90, seed=0, params=Setup1Params()):
    """Draw ``n`` rows of setup I; ``Y`` is masked where ``R == 0``.

    ``U0`` is pure noise, used only by the misspecified exposure model.
    """
    cols = _setup1_full(n, theta, stream(seed, 1), params)
    cols["Y"] = np.where(cols["R"] == 1, cols["Y"], np.nan)
    return Dataset(cols), _graph("setup1")


# -- setup II -----------------------------------------------------------------

@dataclass(frozen=True)
class Setup2Params:
    """Coefficients of setup II; ``s = 2A - 1``.

    The noises of C1, C2 and Y are added to their equations (``sd_*``).
    """

    a_b: float = 0.90
    a_b2: float = -0.10
    y_b: float = 2.00
    y_b2: float = 1.00
    y_s: float = -1.20
    y_sb: float = 0.50
    y_u: float = 2.00
    y_su: float = 1.20
    sd_y: float = 7.0
    c1_b2: float = 0.20
    c1_s: float = 0.50
    c1_sb: float = 0.20
    sd_c1: float = 1.0
    c2_u: float = 0.10
    c2_c1: float = 0.10
    c2_uc1: float = 0.10
    sd_c2: float = 2.5
    r_0: float = 0.20
    r_s: float = 0.20
    r_c2: float = 0.10
    r_sc2: float = -0.10
    sd_r: float = 0.7

    def null_effect(self):
        return dataclasses.replace(self, y_s=0.0, y_sb=0.0, y_su=0.0)


def _setup2_outcome(p, B1, a, U1, uy):
    s = 2 * a - 1
    return (p.y_b * B1 + p.y_b2 * np.sign(B1) * B1 ** 2 + p.y_s * s + p.y_sb * s * B1
            + p.y_u * U1 + p.y_su * s * U1 + p.sd_y * uy)


def _setup2_full(n, rng, p):
    U1, B1, ua, uy, uc1, uc2, ur = (rng.standard_normal(n) for _ in range(7))
    A = (p.a_b * B1 + p.a_b2 * np.sign(B1) * B1 ** 2 + ua > 0).astype(float)
    s = 2 * A - 1
    Y = _setup2_outcome(p, B1, A, U1, uy)
    C1 = p.c1_b2 * B1 ** 2 + p.c1_s * s + p.c1_sb * s * B1 + p.sd_c1 * uc1
    C2 = p.c2_u * U1 + p.c2_c1 * C1 + p.c2_uc1 * U1 * C1 + p.sd_c2 * uc2
    R = (p.r_0 + p.r_s * s + p.r_c2 * C2 + p.r_sc2 * s * C2 + p.sd_r * ur > 0).astype(float)
    return {"B1": B1, "A": A, "C1": C1, "C2": C2, "R": R, "Y": Y}


def gen_setup2(n, seed=0, params=Setup2Params()):
    """Draw ``n`` rows of setup II. The latent ``U1`` is not returned."""
    cols = _setup2_full(n, stream(seed, 2), params)
    cols["Y"] = np.where(cols["R"] == 1, cols["Y"], np.nan)
    return Dataset(cols), _graph("setup2")


# -- oracles ------------------------------------------------------------------

def _ate_chunk(setup, n, rng, params):
    if setup == "I":
        p = params or Setup1Params()
        W1, uz1, uz2, uy = (rng.standard_normal(n) for _ in range(4))
        y1 = _setup1_downstream(p, W1, 1.0, uz1, uz2, uy)[2]
        y0 = _setup1_downstream(p, W1, 0.0, uz1, uz2, uy)[2]
    elif setup == "II":
        p = params or Setup2Params()
        U1, B1, uy = (rng.standard_normal(n) for _ in range(3))
        y1 = _setup2_outcome(p, B1, 1.0, U1, uy)
        y0 = _setup2_outcome(p, B1, 0.0, U1, uy)
    else:
        raise ConfigError(f"unknown setup {setup!r}")
    return y1 - y0


@lru_cache(maxsize=None)
def true_ate(setup, params=None, N=ORACLE_N, seed=ORACLE_SEED, chunk=10**6):
    """Interventional Monte Carlo oracle with shared noises across arms.

    Returns ``(ate, mc_se)``. Both arms reuse the same exogenous draws, so
    the per-unit contrast has small variance.
    """
    sums, sqs, done, k = [], [], 0, 0
    while done < N:
        m = min(chunk, N - done)
        d = _ate_chunk(setup, m, stream(seed, 3, k), params)
        sums.append(math.fsum(d))
        sqs.append(math.fsum(d * d))
        done += m
        k += 1
    mean = math.fsum(sums) / N
    var = (math.fsum(sqs) - N * mean * mean) / (N - 1)
    return mean, math.sqrt(max(var, 0.0) / N)


@lru_cache(maxsize=None)
def outcome_sd(setup, N=SD_N, seed=SD_SEED):
    """Standard deviation of the unmasked outcome in a reference draw."""
    if setup == "I":
        y = _setup1_full(N, -1.90, stream(seed, 4), Setup1Params())["Y"]
    elif setup == "II":
        y = _setup2_full(N, stream(seed, 4), Setup2Params())["Y"]
    else:
        raise ConfigError(f"unknown setup {setup!r}")
    return float(np.std(y, ddof=1))


# -- misspecified nuisance models -----------------------------------------------

class Design:
    """Named parametric design built from dataset columns."""

    def __init__(self, label, *terms):
        self.label = label
        self.terms = terms

    def __call__(self, cols):
        return np.column_stack([f(cols) for f in self.terms])

    def __repr__(self):
        return f"Design({self.label!r})"


_MISSPEC = {
    ("I", "piR", False): Design("Z1^2", lambda c: c["Z1"] ** 2),
    ("I", "piR", True): Design("W1^2", lambda c: c["W1"] ** 2),
    ("I", "Q1", False): Design("W1^2, A, A*W1, Z1", lambda c: c["W1"] ** 2, lambda c: c["A"],
                               lambda c: c["A"] * c["W1"], lambda c: c["Z1"]),
    ("I", "Q1", True): Design("W1^2, A, A*W1", lambda c: c["W1"] ** 2, lambda c: c["A"],
                              lambda c: c["A"] * c["W1"]),
    ("I", "Q2", False): Design("(W1-1.7)^2, A", lambda c: (c["W1"] - 1.7) ** 2, lambda c: c["A"]),
    ("I", "piA", False): Design("U0", lambda c: c["U0"]),
    ("I", "piA", True): Design("U0", lambda c: c["U0"]),
    ("II", "Q2", False): Design("|B1-1|, A", lambda c: np.abs(c["B1"] - 1), lambda c: c["A"]),
}


def misspecified_model(kind, setup="I", single=False):
    """Parametric stand-in for nuisance ``kind`` (``piA``, ``piR``, ``Q1``, ``Q2``).

    Propensities become linear probability models and regressions become
    least squares on the listed transformations. ``single`` selects the
    variant for single-regression estimators, which have no ``Q2``. Returns
    ``None`` when the kind does not apply.
    """
    if kind not in ("piA", "piR", "Q1", "Q2"):
        raise ConfigError(f"unknown nuisance kind {kind!r}")
    design = _MISSPEC.get((setup, kind, single))
    if design is None:
        if (setup, kind, not single) in _MISSPEC or kind == "Q2":
            return None
        raise ConfigError(f"setup {setup} has no misspecified {kind} model")
    return NuisanceModel(LinearRegression(), design, pooled=(kind == "Q2"))


# -- scenarios -----------------------------------------------------------------

PAIRS = {
    "I": {"sequential": AdmissiblePair({"W1"}, {"Z1", "Z2"}), "single": AdmissiblePair({"W1"}, ())},
    "II": {"sequential": AdmissiblePair({"B1"}, {"C2"}),
           "single": AdmissiblePair({"B1", "C1", "C2"}, ())},
}

# label -> (estimator class key, pair kind)
ROSTER = {
    "I": {"TSR": ("tsr", "sequential"), "DIPW": ("dipw", "sequential"), "SR": ("sr", "sequential"),
          "unadjusted": ("unadjusted", "single"), "TMLE-CC": ("tmlecc", "single"),
          "TMLE-1R": ("tmle1r", "single")},
    "II": {"TSR": ("tsr", "sequential"), "SR": ("sr", "sequential"),
           "plug-in": ("sr", "single"), "TMLE-1R": ("tmle1r", "single")},
}

SCENARIOS = {
    "I-a": ("I", -1.90, ()),
    "I-b": ("I", -0.90, ("piA",)),
    "I-c": ("I", -0.30, ("Q1",)),
    "I-d": ("I", -0.30, ("Q2", "piR")),
    "II-a": ("II", None, ()),
    "II-b": ("II", None, ("Q2",)),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo study.

    ``misspec`` lists the nuisances replaced by parametric stand-ins;
    ``estimators`` lists roster labels (all of the setup's roster when
    empty). ``bootstrap_B = 0`` skips the bootstrap intervals of SR-type
    estimators.
    """

    setup: str = "I"
    theta: float | None = -1.90
    misspec: tuple = ()
    n: int = 2000
    reps: int = 100
    seed: int = 0
    estimators: tuple = ()
    bootstrap_B: int = 200
    folds: int = 5
    trunc: float = est.DEFAULT_TRUNC
    split: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.setup not in ROSTER:
            raise ConfigError(f"setup must be 'I' or 'II', got {self.setup!r}")
        object.__setattr__(self, "misspec", tuple(sorted(set(self.misspec))))
        object.__setattr__(self, "estimators", tuple(self.estimators) or tuple(ROSTER[self.setup]))
        for m in self.misspec:
            if m not in ("piA", "piR", "Q1", "Q2"):
                raise ConfigError(f"unknown misspecification {m!r}")
            if self.setup == "II" and m != "Q2":
                raise ConfigError("setup II only has a misspecified Q2 model")
        unknown = [e for e in self.estimators if e not in ROSTER[self.setup]]
        if unknown:
            raise ConfigError(f"unknown estimator(s) {unknown} for setup {self.setup}; "
                              f"choose from {list(ROSTER[self.setup])}")
        if self.setup == "I" and self.theta is None:
            raise ConfigError("setup I needs theta")
        if self.n < 20 or self.reps < 1:
            raise ConfigError("need n >= 20 and reps >= 1")
        if self.bootstrap_B < 0 or 0 < self.bootstrap_B < 10:
            raise ConfigError("bootstrap_B must be 0 or at least 10")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < self.trunc <= 0.2:
            raise ConfigError("trunc must lie in (0, 0.2]")

    @classmethod
    def named(cls, name, **overrides):
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        setup, theta, misspec = SCENARIOS[name]
        return cls(setup=setup, theta=theta, misspec=misspec, name=name, **overrides)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "scenario" in d:
            return cls.named(d.pop("scenario"), **d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config field(s) {sorted(unknown)}")
        for k in ("misspec", "estimators"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @property
    def spec(self):
        return SuperLearnerSpec(folds=self.folds)


def generate(cfg: ScenarioConfig, seed):
    if cfg.setup == "I":
        return gen_setup1(cfg.n, cfg.theta, seed)
    return gen_setup2(cfg.n, seed)


def _models(cfg, single):
    out = {}
    for kind in cfg.misspec:
        m = misspecified_model(kind, cfg.setup, single)
        if m is not None:
            out[kind] = m
    return out or None


def _run_one(label, cfg, data, seed, shared):
    key, kind = ROSTER[cfg.setup][label]
    pair = PAIRS[cfg.setup][kind]
    single = kind == "single"
    models = _models(cfg, single)
    spec = cfg.spec
    if key == "unadjusted":
        return est.Unadjusted().fit(data).report_
    if key in ("tmle1r", "tmlecc"):
        cls = est.TMLE1R if key == "tmle1r" else est.TMLECC
        return cls(sorted(pair.W), spec, models, None, cfg.split, cfg.trunc, seed).fit(data).report_
    nuisance = None
    if not cfg.split and pair.Z:
        if kind not in shared:
            shared[kind] = est.fit_nuisance(data, pair, spec, cfg.trunc, models=models, seed=seed,
                                            fit_q2=False)
        nuisance = shared[kind]
    if key == "tsr":
        return est.TSR(pair, spec, models, nuisance, cfg.split, cfg.trunc, seed).fit(data).report_
    if key == "dipw":
        return est.DIPW(pair, spec, models, nuisance, cfg.trunc, seed).fit(data).report_
    return est.SequentialRegression(pair, spec, models, nuisance, cfg.bootstrap_B,
                                    seed).fit(data).report_


@dataclass
class EstimatorSummary:
    label: str
    method: str
    pair: str
    reps_ok: int
    reps_failed: int
    mean_estimate: float
    bias: float
    bias_std: float
    mse: float
    mse_std: float
    coverage: float
    ci_width: float
    bias_mc_se: float


@dataclass
class McSummary:
    """Aggregated Monte Carlo results, one row per estimator.

    ``bias_std`` and ``mse_std`` are standardized by the outcome standard
    deviation ``sd_y`` (Cohen's d scale). ``coverage`` is a percentage over
    replicates with a finite interval (NaN when there are none).
    """

    config: ScenarioConfig
    psi_true: float
    psi_true_se: float
    truth_source: str
    sd_y: float
    rows: list
    estimates: dict = field(default_factory=dict, repr=False)
    failures: dict = field(default_factory=dict, repr=False)

    def row(self, label) -> EstimatorSummary:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def table(self):
        head = f"{'estimator':<12}{'pair':<16}{'bias':>9}{'bias(d)':>9}{'MSE':>9}{'cover%':>8}{'ok':>5}"
        lines = [f"{self.config.name}: setup {self.config.setup}, n={self.config.n}, "
                 f"reps={self.config.reps}, true ATE={self.psi_true:.4f}", head]
        for r in self.rows:
            lines.append(f"{r.label:<12}{r.pair:<16}{r.bias:>9.4f}{r.bias_std:>9.4f}{r.mse:>9.4f}"
                         f"{r.coverage:>8.1f}{r.reps_ok:>5d}")
        return "\n".join(lines)


def _summarise(label, method, pair, results, psi, sd):
    ok = [r for r in results if r is not None]
    failed = len(results) - len(ok)
    if not ok:
        nan = float("nan")
        return EstimatorSummary(label, method, pair, 0, failed, nan, nan, nan, nan, nan, nan, nan, nan)
    psis = np.array([r[0] for r in ok])
    k = len(psis)
    mean = math.fsum(psis) / k
    bias = mean - psi
    mse = math.fsum((psis - psi) ** 2) / k
    sd_est = float(np.std(psis, ddof=1)) if k > 1 else 0.0
    finite = [(lo, hi) for _, lo, hi in ok if np.isfinite(lo) and np.isfinite(hi)]
    if finite:
        cover = 100.0 * sum(lo <= psi <= hi for lo, hi in finite) / len(finite)
        width = math.fsum(hi - lo for lo, hi in finite) / len(finite)
    else:
        cover = width = float("nan")
    return EstimatorSummary(label, method, pair, k, failed, mean, bias, bias / sd, mse,
                            mse / sd ** 2, cover, width, sd_est / math.sqrt(k))


def run_monte_carlo(cfg: ScenarioConfig, progress=None) -> McSummary:
    """Run ``cfg.reps`` replicates and aggregate bias, MSE and coverage.

    Replicate ``r`` draws its data and seeds from ``(cfg.seed, r)`` only, so
    results do not depend on execution order. A failing estimator is
    recorded per replicate and excluded from its summary row.
    """
    psi, psi_se = TRUE_ATE[cfg.setup]
    sd = OUTCOME_SD[cfg.setup]
    labels = list(cfg.estimators)
    results = {lab: [] for lab in labels}
    failures = {lab: [] for lab in labels}
    t0 = time.perf_counter()
    for r in range(cfg.reps):
        seeds = np.random.SeedSequence(cfg.seed, spawn_key=(r,)).generate_state(2)
        data, _ = generate(cfg, int(seeds[0]))
        shared = {}
        for lab in labels:
            try:
                rep = _run_one(lab, cfg, data, int(seeds[1]), shared)
                results[lab].append((rep.psi, rep.ci[0], rep.ci[1]))
            except (EstimationError, np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
                results[lab].append(None)
                failures[lab].append(f"replicate {r}: {exc}")
                log.warning("%s failed in replicate %d: %s", lab, r, exc)
        if progress:
            progress(r + 1, cfg.reps, time.perf_counter() - t0)
    rows = []
    for lab in labels:
        key, kind = ROSTER[cfg.setup][lab]
        rows.append(_summarise(lab, key, str(PAIRS[cfg.setup][kind]), results[lab], psi, sd))
    source = (f"interventional Monte Carlo oracle, N={ORACLE_N}, seed={ORACLE_SEED}, "
              f"mc_se={psi_se:.6f}")
    estimates = {lab: np.array([np.nan if x is None else x[0] for x in results[lab]])
                 for lab in labels}
    return McSummary(cfg, psi, psi_se, source, sd, rows, estimates, failures)


def missingness_rate(setup, theta=-1.90, N=10**6, seed=5):
    """Empirical outcome-missingness rate of a large draw."""
    if setup == "I":
        R = _setup1_full(N, theta, stream(seed, 6), Setup1Params())["R"]
    else:
        R = _setup2_full(N, stream(seed, 6), Setup2Params())["R"]
    return 1.0 - float(np.mean(R))
