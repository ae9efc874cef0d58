"""ATE estimators under confounding and outcome attrition.

All estimators take a :class:`Dataset` and an :class:`AdmissiblePair`
``(W; Z)`` and return an :class:`EstimateReport`. The estimator classes
follow the scikit-learn protocol (constructor stores parameters, ``fit``
returns ``self``) so they can be cloned and parameter-searched; the
``estimate_*`` functions are one-call conveniences.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, clone

from .graph import AdmissiblePair
from .learners import MeanRegressor, SuperLearner, SuperLearnerSpec

Z_CRIT = 1.959964
DEFAULT_TRUNC = 0.01
MAX_DISCRETE_LEVELS = 20


class EstimationError(ValueError):
    """The data or nuisance fits cannot support the requested estimate."""


class UnsupportedVariantError(EstimationError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed sample ``(W, A, Z, R, Y)`` stored as named numeric columns.

    ``Y`` is NaN exactly where ``R == 0``. Optional ``weights`` turn the rows
    into a weighted (e.g. exact population) distribution.
    """

    columns: Mapping[str, np.ndarray]
    exposure: str = "A"
    outcome: str = "Y"
    selection: str = "R"
    weights: np.ndarray | None = None

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        for role in (self.exposure, self.outcome, self.selection):
            if role not in cols:
                raise EstimationError(f"column {role!r} missing from dataset")
        n = {len(v) for v in cols.values()}
        if len(n) != 1:
            raise EstimationError("columns have different lengths")
        if n.pop() < 1:
            raise EstimationError("dataset is empty")
        for role in (self.exposure, self.selection):
            if not np.all(np.isin(cols[role], (0.0, 1.0))):
                raise EstimationError(f"column {role!r} must be binary 0/1")
        R, Y = cols[self.selection], cols[self.outcome]
        if np.any(np.isnan(Y) != (R == 0)):
            raise EstimationError("outcome must be observed exactly when selection == 1")
        object.__setattr__(self, "columns", cols)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != R.shape or np.any(w < 0) or w.sum() <= 0:
                raise EstimationError("weights must be nonnegative with positive sum")
            object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return len(self.columns[self.exposure])

    @property
    def A(self):
        return self.columns[self.exposure]

    @property
    def R(self):
        return self.columns[self.selection]

    @property
    def Y(self):
        return self.columns[self.outcome]

    @property
    def w(self):
        return np.ones(self.n) if self.weights is None else self.weights

    def view(self, idx=None):
        if idx is None:
            return dict(self.columns)
        return {k: v[idx] for k, v in self.columns.items()}

    def take(self, idx):
        w = None if self.weights is None else self.weights[idx]
        return Dataset(self.view(idx), self.exposure, self.outcome, self.selection, w)

    def check_pair(self, pair):
        missing = sorted((pair.W | pair.Z) - set(self.columns))
        if missing:
            raise EstimationError(f"pair column(s) {missing} not in dataset")


def _stack(names):
    names = list(names)

    def features(cols):
        n = len(next(iter(cols.values())))
        if not names:
            return np.empty((n, 0))
        return np.column_stack([cols[c] for c in names])

    return features


def _child_seed(seed, tag):
    return int(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())]).generate_state(1)[0])


def _with_exposure(cols, name, a):
    out = dict(cols)
    out[name] = np.full(len(cols[name]), float(a))
    return out


@dataclass
class NuisanceModel:
    """Unfitted learner plus the feature map it sees.

    ``features`` maps a column dict to a design matrix (``None`` uses the
    default role columns). ``pooled`` applies to the outcome meta-regression
    only: fit one model over both arms instead of one per arm.
    """

    estimator: object
    features: Callable | None = None
    pooled: bool = False


class Surface:
    """A fitted regression evaluated on column dicts."""

    def __init__(self, estimator, features, kind="fitted"):
        self.estimator = estimator
        self.features = features
        self.kind = kind

    def __call__(self, cols):
        return np.asarray(self.estimator.predict(self.features(cols)), dtype=float)


class ArmSurface:
    """Outcome meta-regression ``Q2(W, a)``, per arm or pooled."""

    def __init__(self, exposure, per_arm=None, pooled=None, features=None):
        self.exposure = exposure
        self.per_arm = per_arm
        self.pooled = pooled
        self.features = features

    def __call__(self, cols, a):
        if self.pooled is not None:
            return np.asarray(self.pooled.predict(
                self.features(_with_exposure(cols, self.exposure, a))), dtype=float)
        return np.asarray(self.per_arm[int(a)].predict(self.features(cols)), dtype=float)


@dataclass
class NuisanceSet:
    """Nuisance surfaces for one admissible pair.

    ``pi_a``, ``pi_r`` and ``q1`` are callables on column dicts; ``q2`` is a
    callable ``(cols, a)``. Propensities are truncated when read through
    :meth:`prop_a` / :meth:`prop_r`.
    """

    exposure: str
    pi_a: Callable
    pi_r: Callable
    q1: Callable
    q2: Callable | None = None
    trunc: float = DEFAULT_TRUNC
    diagnostics: dict = field(default_factory=dict)

    def prop_a(self, cols):
        return np.clip(self.pi_a(cols), self.trunc, 1 - self.trunc)

    def prop_r(self, cols):
        # an upper bound on Pr(R=1) never stabilises the weights
        return np.clip(self.pi_r(cols), self.trunc, 1.0)

    def q2_obs(self, cols):
        A = cols[self.exposure]
        return np.where(A == 1, self.q2(cols, 1), self.q2(cols, 0))

    def truncation_counts(self, cols):
        pa, pr = self.pi_a(cols), self.pi_r(cols)
        return {"pi_a_low": int(np.sum(pa < self.trunc)),
                "pi_a_high": int(np.sum(pa > 1 - self.trunc)),
                "pi_r_low": int(np.sum(pr < self.trunc))}


def _learner(models, name, spec, loss, seed):
    if models and name in models:
        m = models[name]
        return clone(m.estimator), m.features, m.pooled
    return SuperLearner.from_spec(spec, loss=loss, seed=_child_seed(seed, name)), None, False


def _fit(est, X, y, w, diag, name):
    """Fit ``est``; degenerate targets or tiny samples fall back to the mean."""
    if len(y) == 0:
        raise EstimationError(f"no rows available to fit {name}")
    folds = getattr(est, "folds", 0)
    if np.ptp(y) == 0 or (isinstance(est, SuperLearner) and len(y) < 2 * folds):
        diag.setdefault("fallbacks", []).append(name)
        est = MeanRegressor()
    est.fit(X, y, sample_weight=w)
    if isinstance(est, SuperLearner):
        diag.setdefault("ensemble_weights", {})[name] = dict(
            zip(est.names_, np.round(est.weights_, 6).tolist()))
        if est.warnings_:
            diag.setdefault("learner_warnings", []).extend(f"{name}: {m}" for m in est.warnings_)
    return est


def fit_nuisance(data: Dataset, pair: AdmissiblePair, spec: SuperLearnerSpec = SuperLearnerSpec(),
                 trunc: float = DEFAULT_TRUNC, *, models=None, seed=0, rows=None,
                 fit_q2=True, selection_model=True) -> NuisanceSet:
    """Fit exposure/selection propensities and the outcome regressions.

    ``Q1`` uses selected rows only; ``pi_A`` uses W; ``pi_R`` uses (W, A, Z).
    With ``fit_q2`` the per-arm meta-regression of ``Q1`` predictions on W is
    fitted as well (untargeted). ``rows`` restricts fitting to a subsample.
    """
    data.check_pair(pair)
    idx = np.arange(data.n) if rows is None else np.asarray(rows)
    cols = data.view(idx)
    A, R, Y, w = data.A[idx], data.R[idx], data.Y[idx], data.w[idx]
    if np.all(A == A[0]):
        raise EstimationError("both exposure arms must be present")
    sel = R == 1
    if not np.any(sel):
        raise EstimationError("no selected (R=1) rows")
    W, Z = sorted(pair.W), sorted(pair.Z)
    full = W + [data.exposure] + Z
    diag = {}

    est, feats, _ = _learner(models, "Q1", spec, "squared_error", seed)
    feats = feats or _stack(full)
    X = feats(cols)
    q1 = Surface(_fit(est, X[sel], Y[sel], w[sel], diag, "Q1"), feats)

    est, feats, _ = _learner(models, "piA", spec, "log_loss", seed)
    feats = feats or _stack(W)
    pi_a = Surface(_fit(est, feats(cols), A, w, diag, "piA"), feats)

    if selection_model:
        est, feats, _ = _learner(models, "piR", spec, "log_loss", seed)
        feats = feats or _stack(full)
        pi_r = Surface(_fit(est, feats(cols), R, w, diag, "piR"), feats)
    else:
        pi_r = lambda c: np.ones(len(c[data.exposure]))

    nuis = NuisanceSet(data.exposure, pi_a, pi_r, q1, None, trunc, diag)
    if fit_q2:
        nuis.q2 = fit_q2_surface(data, pair, q1(cols), spec, models=models, seed=seed,
                                 rows=idx, diag=diag)
    return nuis


def fit_q2_surface(data, pair, target, spec, *, models=None, seed=0, rows=None, diag=None):
    """Regress ``target`` (Q1 predictions on ``rows``) on W, per arm or pooled."""
    diag = {} if diag is None else diag
    idx = np.arange(data.n) if rows is None else np.asarray(rows)
    cols = data.view(idx)
    A, w = data.A[idx], data.w[idx]
    est, feats, pooled = _learner(models, "Q2", spec, "squared_error", seed)
    if pooled:
        return ArmSurface(data.exposure, pooled=_fit(est, feats(cols), target, w, diag, "Q2"),
                          features=feats)
    feats = feats or _stack(sorted(pair.W))
    X = feats(cols)
    per_arm = {}
    for a in (0, 1):
        m = A == a
        if not np.any(m):
            raise EstimationError(f"no rows in exposure arm {a}")
        per_arm[a] = _fit(clone(est), X[m], target[m], w[m], diag, f"Q2[{a}]")
    return ArmSurface(data.exposure, per_arm=per_arm, features=feats)


def clever_covariates(nuis: NuisanceSet, cols):
    """Return ``(H1, H2)`` at the observed exposure of each row."""
    A = cols[nuis.exposure]
    pa = nuis.prop_a(cols)
    h2 = (A - pa) / (pa * (1 - pa))
    return h2 / nuis.prop_r(cols), h2


def solve_fluctuation(residuals, clever, weights=None) -> float:
    """One-dimensional least-squares fluctuation ``sum(h*r) / sum(h^2)``."""
    r = np.asarray(residuals, dtype=float)
    h = np.asarray(clever, dtype=float)
    w = np.ones_like(h) if weights is None else np.asarray(weights, dtype=float)
    den = np.sum(w * h * h)
    if not den > 0:
        raise EstimationError("degenerate clever covariate (zero denominator)")
    return float(np.sum(w * h * r) / den)


def _eif_arrays(h1, h2, R, Y, q1, q2_obs, dq2, psi):
    resid = np.where(R == 1, np.nan_to_num(Y) - q1, 0.0)
    return h1 * resid + h2 * (q1 - q2_obs) + dq2 - psi


def eif_values(nuis: NuisanceSet, data: Dataset, psi: float, rows=None):
    """Per-row efficient influence function of the sequential formula.

    ``nuis`` may hold initial or targeted surfaces; rows with ``R == 0``
    contribute nothing to the outcome-residual term.
    """
    idx = np.arange(data.n) if rows is None else np.asarray(rows)
    cols = data.view(idx)
    h1, h2 = clever_covariates(nuis, cols)
    dq2 = nuis.q2(cols, 1) - nuis.q2(cols, 0)
    return _eif_arrays(h1, h2, data.R[idx], data.Y[idx], nuis.q1(cols), nuis.q2_obs(cols),
                       dq2, psi)


def _mean_var(x, w=None):
    if w is None:
        return float(np.mean(x)), float(np.var(x, ddof=1)) if len(x) > 1 else 0.0
    m = float(np.average(x, weights=w))
    return m, float(np.average((x - m) ** 2, weights=w))


@dataclass
class EstimateReport:
    """Point estimate, standard error and 95% interval from one estimator."""

    method: str
    psi: float
    se: float
    ci: tuple
    n: int
    pair: str = ""
    eif: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @classmethod
    def wald(cls, method, psi, se, n, pair, **kw):
        psi, se = float(psi), float(se)
        return cls(method, psi, se, (psi - Z_CRIT * se, psi + Z_CRIT * se), n, str(pair), **kw)

    def to_dict(self, include_eif=False):
        out = {"method": self.method, "pair": self.pair, "n": self.n, "psi": self.psi,
               "se": self.se, "ci_lo": self.ci[0], "ci_hi": self.ci[1],
               "diagnostics": self.diagnostics, "warnings": list(self.warnings)}
        if include_eif and self.eif is not None and len(self.eif):
            out["eif"] = [float(v) for v in self.eif]
        return out


def _split_rows(n, split, seed):
    if not split:
        idx = np.arange(n)
        return idx, idx
    if n < 20:
        raise EstimationError("sample splitting needs at least 20 rows")
    perm = np.random.default_rng(_child_seed(seed, "split")).permutation(n)
    return np.sort(perm[: n // 2]), np.sort(perm[n // 2:])


class _ATEEstimator(BaseEstimator):
    """Shared plumbing; subclasses implement ``_estimate``."""

    method = ""

    def _resolve(self, data):
        pair = self.pair if isinstance(self.pair, AdmissiblePair) else AdmissiblePair(*self.pair)
        data.check_pair(pair)
        return pair

    def fit(self, data: Dataset, y=None):
        pair = self._resolve(data)
        self.report_ = self._estimate(data, pair)
        self.psi_ = self.report_.psi
        self.se_ = self.report_.se
        self.ci_ = self.report_.ci
        self.eif_ = self.report_.eif
        return self


class TSR(_ATEEstimator):
    """Targeted sequential regressions.

    Fits the nuisances (on the first half when ``split``), fluctuates the
    outcome regression along ``H1`` on selected rows, regresses the updated
    predictions on W within each arm, fluctuates that fit along ``H2``, and
    plugs the result into the sequential formula on the evaluation rows. The
    standard error comes from the empirical variance of the influence
    function. With an empty ``Z`` this is the single-regression TMLE.

    Parameters
    ----------
    pair : AdmissiblePair or (W, Z)
    learner : SuperLearnerSpec
    models : dict, optional
        Per-nuisance :class:`NuisanceModel` overrides keyed by ``"Q1"``,
        ``"Q2"``, ``"piA"``, ``"piR"``.
    nuisance : NuisanceSet, optional
        Pre-fitted (or oracle) surfaces. If its ``q2`` is set it is used as
        the initial meta-regression instead of learning one.
    split : bool
        Fit on one random half, evaluate on the other.
    trunc : float
        Propensity truncation level.
    random_state : int
    """

    method = "TSR"

    def __init__(self, pair, learner=SuperLearnerSpec(), models=None, nuisance=None,
                 split=False, trunc=DEFAULT_TRUNC, random_state=0):
        self.pair = pair
        self.learner = learner
        self.models = models
        self.nuisance = nuisance
        self.split = split
        self.trunc = trunc
        self.random_state = random_state

    def _estimate(self, data, pair):
        if not pair.Z:
            est = TMLE1R(pair.W, self.learner, self.models, self.nuisance, self.split,
                         self.trunc, self.random_state)
            rep = est._estimate(data, pair)
            rep.method = self.method
            self.updated_nuisance_ = est.updated_nuisance_
            return rep
        seed = self.random_state
        j1, j2 = _split_rows(data.n, self.split, seed)
        nuis = self.nuisance or fit_nuisance(data, pair, self.learner, self.trunc,
                                             models=self.models, seed=seed, rows=j1, fit_q2=False)
        diag = dict(nuis.diagnostics)
        c1 = data.view(j1)
        R1, Y1, w1 = data.R[j1], data.Y[j1], data.w[j1]
        h1, h2 = clever_covariates(nuis, c1)
        q1 = nuis.q1(c1)
        sel = R1 == 1
        delta = solve_fluctuation(Y1[sel] - q1[sel], h1[sel], w1[sel])

        def q1_star(cols):
            return nuis.q1(cols) + delta * clever_covariates(nuis, cols)[0]

        q1s = q1 + delta * h1
        q2 = nuis.q2 or fit_q2_surface(data, pair, q1s, self.learner, models=self.models,
                                       seed=seed, rows=j1, diag=diag)
        q2_obs = np.where(data.A[j1] == 1, q2(c1, 1), q2(c1, 0))
        gamma = solve_fluctuation(q1s - q2_obs, h2, w1)

        def q2_star(cols, a):
            pa = nuis.prop_a(cols)
            h = 1 / pa if a == 1 else -1 / (1 - pa)
            return q2(cols, a) + gamma * h

        updated = NuisanceSet(nuis.exposure, nuis.pi_a, nuis.pi_r, q1_star, q2_star,
                              nuis.trunc, diag)
        self.updated_nuisance_ = updated
        c2 = data.view(j2)
        w2 = None if data.weights is None else data.weights[j2]
        dq2 = q2_star(c2, 1) - q2_star(c2, 0)
        psi = float(np.average(dq2, weights=w2))
        D = eif_values(updated, data, psi, rows=j2)
        _, var = _mean_var(D, w2)
        se = np.sqrt(var / len(j2))
        q2s_1 = q2_star(c1, 1)
        q2s_0 = q2_star(c1, 0)
        diag.update({
            "delta": delta, "gamma": gamma, "n_fit": len(j1), "n_eval": len(j2),
            "truncation": nuis.truncation_counts(c2),
            "score_q1": float(np.sum(w1[sel] * h1[sel] * (Y1[sel] - q1s[sel]))),
            "score_q2": float(np.sum(w1 * h2 * (q1s - np.where(data.A[j1] == 1, q2s_1, q2s_0)))),
        })
        return EstimateReport.wald(self.method, psi, se, len(j2), pair, eif=D, diagnostics=diag)


class TMLE1R(_ATEEstimator):
    """Single-regression TMLE adjusting for ``W`` only.

    The selection propensity uses (W, A); the clever covariate is
    ``H2 / pi_R(W, A)``.
    """

    method = "TMLE-1R"
    _complete_cases = False

    def __init__(self, W=(), learner=SuperLearnerSpec(), models=None, nuisance=None,
                 split=False, trunc=DEFAULT_TRUNC, random_state=0):
        self.W = W
        self.learner = learner
        self.models = models
        self.nuisance = nuisance
        self.split = split
        self.trunc = trunc
        self.random_state = random_state

    def _resolve(self, data):
        pair = AdmissiblePair(self.W, ())
        data.check_pair(pair)
        return pair

    def _estimate(self, data, pair):
        diag = {}
        if self._complete_cases:
            keep = data.R == 1
            diag["n_dropped"] = int(np.sum(~keep))
            data = data.take(np.flatnonzero(keep))
        seed = self.random_state
        j1, j2 = _split_rows(data.n, self.split, seed)
        nuis = self.nuisance or fit_nuisance(
            data, pair, self.learner, self.trunc, models=self.models, seed=seed, rows=j1,
            fit_q2=False, selection_model=not self._complete_cases)
        diag.update(nuis.diagnostics)
        c1 = data.view(j1)
        R1, Y1, w1 = data.R[j1], data.Y[j1], data.w[j1]
        h, _ = clever_covariates(nuis, c1)
        sel = R1 == 1
        q1 = nuis.q1(c1)
        delta = solve_fluctuation(Y1[sel] - q1[sel], h[sel], w1[sel])
        ex = data.exposure

        def q1_star(cols):
            return nuis.q1(cols) + delta * clever_covariates(nuis, cols)[0]

        def q1_star_arm(cols, a):
            return q1_star(_with_exposure(cols, ex, a))

        # with Z empty the meta-regression is the outcome regression itself
        updated = NuisanceSet(ex, nuis.pi_a, nuis.pi_r, q1_star, q1_star_arm, nuis.trunc, diag)
        self.updated_nuisance_ = updated
        c2 = data.view(j2)
        w2 = None if data.weights is None else data.weights[j2]
        dq = q1_star_arm(c2, 1) - q1_star_arm(c2, 0)
        psi = float(np.average(dq, weights=w2))
        D = eif_values(updated, data, psi, rows=j2)
        _, var = _mean_var(D, w2)
        se = np.sqrt(var / len(j2))
        diag.update({"delta": delta, "n_fit": len(j1), "n_eval": len(j2),
                     "truncation": nuis.truncation_counts(c2)})
        return EstimateReport.wald(self.method, psi, se, len(j2), pair, eif=D, diagnostics=diag)


class TMLECC(TMLE1R):
    """Single-regression TMLE on complete cases, ignoring selection."""

    method = "TMLE-CC"
    _complete_cases = True


class DIPW(_ATEEstimator):
    """Double inverse probability weighting.

    Each selected outcome is weighted by the inverse exposure propensity of
    its arm and the inverse selection propensity given (W, A, Z). The
    standard error is the empirical standard deviation of the per-row
    estimating function over sqrt(n).
    """

    method = "DIPW"

    def __init__(self, pair, learner=SuperLearnerSpec(), models=None, nuisance=None,
                 trunc=DEFAULT_TRUNC, random_state=0):
        self.pair = pair
        self.learner = learner
        self.models = models
        self.nuisance = nuisance
        self.trunc = trunc
        self.random_state = random_state

    def _estimate(self, data, pair):
        nuis = self.nuisance or fit_nuisance(data, pair, self.learner, self.trunc,
                                             models=self.models, seed=self.random_state,
                                             fit_q2=False)
        cols = data.view()
        A, R = data.A, data.R
        pa, pr = nuis.prop_a(cols), nuis.prop_r(cols)
        y = np.where(R == 1, np.nan_to_num(data.Y), 0.0)
        contrib = R * y * (A / pa - (1 - A) / (1 - pa)) / pr
        psi, var = _mean_var(contrib, data.weights)
        se = np.sqrt(var / data.n)
        diag = dict(nuis.diagnostics)
        diag["truncation"] = nuis.truncation_counts(cols)
        return EstimateReport.wald(self.method, psi, se, data.n, pair,
                                   eif=contrib - psi, diagnostics=diag)


def _percentile_report(method, psi, boots, n, pair, diag):
    boots = np.asarray(boots, dtype=float)
    diag["bootstrap_ok"] = int(len(boots))
    if len(boots) < 2:
        return EstimateReport(method, float(psi), float("nan"), (float("nan"),) * 2, n, str(pair),
                              diagnostics=diag)
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return EstimateReport(method, float(psi), float(np.std(boots, ddof=1)), (float(lo), float(hi)),
                          n, str(pair), diagnostics=diag)


class _BootstrapPlugin(_ATEEstimator):
    def _bootstrap(self, data, pair):
        if not self.bootstrap_B:
            return []
        if data.weights is not None:
            raise EstimationError("bootstrap is not defined for weighted datasets")
        out, failed = [], 0
        for b in range(self.bootstrap_B):
            rng = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(b,)))
            idx = rng.integers(0, data.n, data.n)
            try:
                out.append(self._point(data.take(idx), pair, _child_seed(self.random_state, f"b{b}"),
                                       None, {}))
            except EstimationError:
                failed += 1
        self._boot_failed = failed
        return out

    def _estimate(self, data, pair):
        diag = {}
        psi = self._point(data, pair, self.random_state, self.nuisance, diag)
        self._boot_failed = 0
        boots = self._bootstrap(data, pair)
        diag["bootstrap_failed"] = self._boot_failed
        return _percentile_report(self.method, psi, boots, data.n, pair, diag)


class SequentialRegression(_BootstrapPlugin):
    """Plug-in sequential regressions with a percentile bootstrap interval.

    ``Q1`` is fitted on selected rows and predicted for everyone; those
    predictions are regressed on W within each arm and the arm contrast is
    averaged. With an empty ``Z`` the outcome regression is used directly.
    """

    method = "SR"

    def __init__(self, pair, learner=SuperLearnerSpec(), models=None, nuisance=None,
                 bootstrap_B=200, random_state=0):
        self.pair = pair
        self.learner = learner
        self.models = models
        self.nuisance = nuisance
        self.bootstrap_B = bootstrap_B
        self.random_state = random_state

    def _point(self, data, pair, seed, nuisance, diag):
        cols = data.view()
        if nuisance is not None and nuisance.q2 is not None:
            q2 = nuisance.q2
        elif not pair.Z:
            q1 = nuisance.q1 if nuisance else _fit_q1_only(data, pair, self.learner,
                                                         self.models, seed, diag)
            ex = data.exposure
            q2 = lambda c, a: q1(_with_exposure(c, ex, a))
        else:
            q1 = nuisance.q1 if nuisance else _fit_q1_only(data, pair, self.learner,
                                                         self.models, seed, diag)
            q2 = fit_q2_surface(data, pair, q1(cols), self.learner, models=self.models,
                                seed=seed, diag=diag)
        return float(np.average(q2(cols, 1) - q2(cols, 0), weights=data.weights))


def _fit_q1_only(data, pair, spec, models, seed, diag):
    sel = data.R == 1
    if not np.any(sel):
        raise EstimationError("no selected (R=1) rows")
    if np.all(data.A == data.A[0]):
        raise EstimationError("both exposure arms must be present")
    est, feats, _ = _learner(models, "Q1", spec, "squared_error", seed)
    feats = feats or _stack(sorted(pair.W) + [data.exposure] + sorted(pair.Z))
    cols = data.view()
    X = feats(cols)
    return Surface(_fit(est, X[sel], data.Y[sel], data.w[sel], diag, "Q1"), feats)


class ConditionalDensityPlugin(_BootstrapPlugin):
    """Plug-in estimator integrating ``Q1`` against a model of P(Z | W, A).

    Requires discrete separators (at most 20 levels per column). The
    conditional distribution is a weighted frequency table when every W
    column is discrete too, else a multinomial logistic model per arm.
    """

    method = "CD"

    def __init__(self, pair, learner=SuperLearnerSpec(), models=None, nuisance=None,
                 bootstrap_B=200, random_state=0):
        self.pair = pair
        self.learner = learner
        self.models = models
        self.nuisance = nuisance
        self.bootstrap_B = bootstrap_B
        self.random_state = random_state

    def _resolve(self, data):
        pair = super()._resolve(data)
        for z in pair.Z:
            if np.unique(data.columns[z]).size > MAX_DISCRETE_LEVELS:
                raise UnsupportedVariantError(
                    f"separator {z!r} has more than {MAX_DISCRETE_LEVELS} levels; "
                    "the conditional-density estimator needs discrete Z")
        return pair

    def _point(self, data, pair, seed, nuisance, diag):
        W, Z = sorted(pair.W), sorted(pair.Z)
        cols = data.view()
        q1 = nuisance.q1 if nuisance else _fit_q1_only(data, pair, self.learner, self.models,
                                                     seed, diag)
        Zm = _stack(Z)(cols)
        z_cells, z_idx = np.unique(Zm, axis=0, return_inverse=True)
        z_idx = z_idx.ravel()
        probs = {a: _z_given_wa(data, W, z_idx, len(z_cells), a) for a in (0, 1)}
        total = np.zeros(data.n)
        for a, sign in ((1, 1.0), (0, -1.0)):
            qa = np.zeros(data.n)
            for k, cell in enumerate(z_cells):
                cf = _with_exposure(cols, data.exposure, a)
                for j, name in enumerate(Z):
                    cf[name] = np.full(data.n, cell[j])
                qa += probs[a][:, k] * q1(cf)
            total += sign * qa
        return float(np.average(total, weights=data.weights))


def _z_given_wa(data, W, z_idx, K, a):
    """Matrix of P(Z = cell k | W_i, A = a) for every row i."""
    cols = data.view()
    Wm = _stack(W)(cols)
    w = data.w
    arm = data.A == a
    discrete_w = all(np.unique(Wm[:, j]).size <= MAX_DISCRETE_LEVELS for j in range(Wm.shape[1]))
    if discrete_w:
        keys, inv = np.unique(Wm, axis=0, return_inverse=True) if Wm.shape[1] else (
            np.zeros((1, 0)), np.zeros(data.n, dtype=int))
        inv = np.asarray(inv).ravel()
        table = np.zeros((len(keys), K))
        np.add.at(table, (inv[arm], z_idx[arm]), w[arm])
        marginal = np.bincount(z_idx[arm], weights=w[arm], minlength=K)
        rows = table.sum(1)
        # strata without rows in this arm borrow the arm's marginal
        table[rows == 0] = marginal
        table /= table.sum(1, keepdims=True)
        return table[inv]
    from sklearn.linear_model import LogisticRegression as MultinomialLogit

    present = np.unique(z_idx[arm])
    out = np.zeros((data.n, K))
    if len(present) == 1:
        out[:, present[0]] = 1.0
        return out
    model = MultinomialLogit(max_iter=1000).fit(Wm[arm], z_idx[arm], sample_weight=w[arm])
    out[:, model.classes_] = model.predict_proba(Wm)
    return out


class Unadjusted(_ATEEstimator):
    """Complete-case difference in arm means (no adjustment)."""

    method = "unadjusted"

    def __init__(self, pair=((), ())):
        self.pair = pair

    def _estimate(self, data, pair):
        sel = data.R == 1
        A, Y, w = data.A[sel], data.Y[sel], data.w[sel]
        means, var = [], 0.0
        for a in (1, 0):
            m = A == a
            if not np.any(m):
                raise EstimationError(f"no selected rows in arm {a}")
            mu, v = _mean_var(Y[m], None if data.weights is None else w[m])
            means.append(mu)
            var += v / m.sum()
        return EstimateReport.wald(self.method, means[0] - means[1], np.sqrt(var),
                                   int(sel.sum()), pair)


def estimate_tsr(data, pair, spec=SuperLearnerSpec(), *, split=False, trunc=DEFAULT_TRUNC,
                 seed=0, models=None, nuisance=None) -> EstimateReport:
    return TSR(pair, spec, models, nuisance, split, trunc, seed).fit(data).report_


def estimate_dipw(data, pair, spec=SuperLearnerSpec(), *, trunc=DEFAULT_TRUNC, seed=0,
                  models=None, nuisance=None) -> EstimateReport:
    return DIPW(pair, spec, models, nuisance, trunc, seed).fit(data).report_


def estimate_sr(data, pair, spec=SuperLearnerSpec(), *, bootstrap_B=200, seed=0, models=None,
                nuisance=None) -> EstimateReport:
    return SequentialRegression(pair, spec, models, nuisance, bootstrap_B, seed).fit(data).report_


def estimate_cd_discrete(data, pair, spec=SuperLearnerSpec(), *, bootstrap_B=200, seed=0,
                         models=None, nuisance=None) -> EstimateReport:
    return ConditionalDensityPlugin(pair, spec, models, nuisance, bootstrap_B,
                                    seed).fit(data).report_


def estimate_tmle_1r(data, W_set, spec=SuperLearnerSpec(), *, split=False, trunc=DEFAULT_TRUNC,
                     seed=0, models=None, nuisance=None) -> EstimateReport:
    return TMLE1R(W_set, spec, models, nuisance, split, trunc, seed).fit(data).report_


def estimate_tmle_cc(data, W_set, spec=SuperLearnerSpec(), *, split=False, trunc=DEFAULT_TRUNC,
                     seed=0, models=None, nuisance=None) -> EstimateReport:
    return TMLECC(W_set, spec, models, nuisance, split, trunc, seed).fit(data).report_


def estimate_unadjusted(data) -> EstimateReport:
    return Unadjusted().fit(data).report_


ESTIMATORS = {
    "tsr": TSR,
    "dipw": DIPW,
    "sr": SequentialRegression,
    "cd": ConditionalDensityPlugin,
    "tmle1r": TMLE1R,
    "tmlecc": TMLECC,
}
