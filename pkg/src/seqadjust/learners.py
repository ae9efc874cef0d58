"""Regression learners and a cross-validated convex super-learner.

Every learner estimates a conditional mean: for a binary response
``predict`` returns a probability. All learners follow the scikit-learn
estimator protocol (``fit``/``predict``/``get_params``) and accept
``sample_weight``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

SCORE_TOL = 1e-8
MAX_IRLS_ITER = 100
SEPARATION_RIDGE = 1e-6
MAX_LINEAR_PREDICTOR = 30.0


def _validate(X, y=None, sample_weight=None):
    X = check_array(X, ensure_min_features=0, ensure_min_samples=1, dtype=float)
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains missing or infinite values")
    if sample_weight is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(sample_weight, dtype=float).ravel()
        if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("sample_weight must be finite, nonnegative and match y")
        if w.sum() <= 0:
            raise ValueError("sample_weight must have positive sum")
    return X, y, w


def _check_schema(est, X):
    check_is_fitted(est)
    X = _validate(X)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(
            f"{type(est).__name__} was fitted with {est.n_features_in_} features, got {X.shape[1]}")
    return X


class MeanRegressor(RegressorMixin, BaseEstimator):
    """Weighted sample average."""

    kind = "mean"

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        self.n_features_in_ = X.shape[1]
        self.constant_ = float(np.average(y, weights=w))
        return self

    def predict(self, X):
        X = _check_schema(self, X)
        return np.full(X.shape[0], self.constant_)


def _weighted_lstsq(D, y, w):
    """Least squares on design ``D`` (intercept included by caller).

    Falls back to a trace-scaled ridge when ``D`` is rank deficient.
    """
    sw = np.sqrt(w)
    Dw = D * sw[:, None]
    yw = y * sw
    p = D.shape[1]
    if p == 0:
        return np.zeros(0), False
    beta, _, rank, _ = np.linalg.lstsq(Dw, yw, rcond=None)
    if rank == p:
        return beta, False
    G = Dw.T @ Dw
    lam = 1e-8 * np.trace(G) / p
    if lam <= 0:
        lam = 1e-8
    return np.linalg.solve(G + lam * np.eye(p), Dw.T @ yw), True


class LinearRegression(RegressorMixin, BaseEstimator):
    """Ordinary (weighted) least squares with intercept.

    Rank-deficient designs are solved with a ridge penalty of
    ``1e-8 * trace(X'WX) / p`` and flagged through ``ridge_fallback_``.
    """

    kind = "linear"

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        self.n_features_in_ = X.shape[1]
        D = np.column_stack([np.ones(len(y)), X])
        beta, self.ridge_fallback_ = _weighted_lstsq(D, y, w)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    def predict(self, X):
        X = _check_schema(self, X)
        return self.intercept_ + X @ self.coef_


def _irls(D, y, w, ridge):
    """Newton-Raphson for the (penalised) Bernoulli log-likelihood.

    ``D`` includes the intercept column, which is never penalised.
    Returns (beta, converged, iterations).
    """
    p = D.shape[1]
    pen = np.full(p, ridge)
    pen[0] = 0.0
    ybar = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    beta = np.zeros(p)
    beta[0] = np.log(ybar / (1 - ybar))
    sw = w.sum()

    def objective(b):
        eta = D @ b
        ll = np.sum(w * (y * eta - np.logaddexp(0.0, eta)))
        return -ll + 0.5 * np.sum(pen * b * b)

    obj = objective(beta)
    for it in range(1, MAX_IRLS_ITER + 1):
        mu = expit(D @ beta)
        score = D.T @ (w * (y - mu)) - pen * beta
        if np.max(np.abs(score)) / sw < SCORE_TOL:
            return beta, True, it
        H = (D * (w * mu * (1 - mu))[:, None]).T @ D + np.diag(pen)
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            return beta, False, it
        t = 1.0
        while True:
            cand = beta + t * step
            new = objective(cand)
            if new <= obj + 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, obj = cand, new
        if not np.all(np.isfinite(beta)):
            return beta, False, it
    mu = expit(D @ beta)
    score = D.T @ (w * (y - mu)) - pen * beta
    return beta, bool(np.max(np.abs(score)) / sw < SCORE_TOL), MAX_IRLS_ITER


class LogisticRegression(RegressorMixin, BaseEstimator):
    """Logistic regression fitted by iteratively reweighted least squares.

    ``predict`` returns Pr(y=1 | x). When the unpenalised fit fails to
    converge or shows separation (divergent coefficients), the model is refit
    with a ridge penalty of 1e-6 on the slopes and ``separation_`` is set.
    """

    kind = "logistic"

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic regression needs a binary 0/1 response")
        self.n_features_in_ = X.shape[1]
        D = np.column_stack([np.ones(len(y)), X])
        beta, ok, it = _irls(D, y, w, 0.0)
        eta = D @ beta
        self.separation_ = (not ok or np.max(np.abs(eta)) > MAX_LINEAR_PREDICTOR
                            or np.max(np.abs(beta)) > 1e6)
        if self.separation_:
            beta, ok, it = _irls(D, y, w, SEPARATION_RIDGE)
        self.converged_ = ok
        self.n_iter_ = it
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    def decision_function(self, X):
        X = _check_schema(self, X)
        return self.intercept_ + X @ self.coef_

    def predict(self, X):
        eta = np.clip(self.decision_function(X), -MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR)
        return expit(eta)


@dataclass(frozen=True)
class _Term:
    # product of factors; each factor is (feature, knot, sign) with sign 0 = linear
    factors: tuple

    def evaluate(self, X):
        out = np.ones(X.shape[0])
        for j, t, s in self.factors:
            x = X[:, j]
            if s == 0:
                out = out * x
            elif s > 0:
                out = out * np.maximum(0.0, x - t)
            else:
                out = out * np.maximum(0.0, t - x)
        return out

    @property
    def features(self):
        return {j for j, _, _ in self.factors}


class MarsLite(RegressorMixin, BaseEstimator):
    """Forward-stepwise hinge regression (MARS without pruning).

    Parameters
    ----------
    max_terms : int
        Maximum number of hinge basis functions added on top of the intercept
        and (optionally) the linear terms.
    interactions : bool
        Also consider products of an existing term with a new hinge pair on a
        different feature.
    include_linear : bool
        Start from the linear model so the fit nests ordinary least squares.
    link : {"identity", "logit"}
        With ``"logit"`` the selected basis is refit by logistic regression.
    """

    kind = "mars_lite"
    QUANTILES = np.linspace(0.1, 0.9, 9)

    def __init__(self, max_terms=8, interactions=False, include_linear=True,
                 link="identity", min_improvement=1e-6):
        self.max_terms = max_terms
        self.interactions = interactions
        self.include_linear = include_linear
        self.link = link
        self.min_improvement = min_improvement

    def _knots(self, X):
        knots = {}
        for j in range(X.shape[1]):
            col = X[:, j]
            if np.unique(col).size > 2:
                knots[j] = np.unique(np.quantile(col, self.QUANTILES))
        return knots

    def _candidates(self, knots, terms):
        cands = []
        for j, ks in knots.items():
            parents = [()]
            if self.interactions:
                parents += [t.factors for t in terms if j not in t.features]
            for base in parents:
                for t in ks:
                    cands.append((_Term(base + ((j, float(t), 1),)),
                                  _Term(base + ((j, float(t), -1),))))
        return cands

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        if self.link not in ("identity", "logit"):
            raise ValueError(f"unknown link {self.link!r}")
        self.n_features_in_ = X.shape[1]
        n = len(y)
        sw = np.sqrt(w)
        wsum = w.sum()
        terms = []
        if self.include_linear:
            terms = [_Term(((j, 0.0, 0),)) for j in range(X.shape[1])
                     if np.ptp(X[:, j]) > 0]
        B = np.column_stack([np.ones(n)] + [t.evaluate(X) for t in terms])

        def basis_fit(B):
            beta, _ = _weighted_lstsq(B, y, w)
            r = y - B @ beta
            return beta, float(np.sum(w * r * r) / wsum)

        beta, mse = basis_fit(B)
        knots = self._knots(X)
        cache = {}

        def column(term):
            if term not in cache:
                cache[term] = term.evaluate(X)
            return cache[term]

        added = 0
        while added < self.max_terms:
            cands = self._candidates(knots, terms)
            if not cands:
                break
            Q, _ = np.linalg.qr(B * sw[:, None])
            r = (y - B @ beta) * sw
            C1 = np.column_stack([column(a) for a, _ in cands]) * sw[:, None]
            C2 = np.column_stack([column(b) for _, b in cands]) * sw[:, None]
            C1 -= Q @ (Q.T @ C1)
            C2 -= Q @ (Q.T @ C2)
            g11 = np.einsum("ij,ij->j", C1, C1)
            g22 = np.einsum("ij,ij->j", C2, C2)
            g12 = np.einsum("ij,ij->j", C1, C2)
            b1 = C1.T @ r
            b2 = C2.T @ r
            tiny = 1e-10 * max(float(np.sum(w * y * y)), 1.0)
            use1 = g11 > tiny
            use2 = g22 > tiny
            det = g11 * g22 - g12 ** 2
            both = use1 & use2 & (det > 1e-10 * np.maximum(g11 * g22, tiny))
            red = np.zeros(len(cands))
            with np.errstate(divide="ignore", invalid="ignore"):
                red_both = (g22 * b1 ** 2 - 2 * g12 * b1 * b2 + g11 * b2 ** 2) / det
                red1 = np.where(use1, b1 ** 2 / g11, 0.0)
                red2 = np.where(use2, b2 ** 2 / g22, 0.0)
            red = np.where(both, red_both, np.maximum(red1, red2))
            red = np.nan_to_num(red, nan=0.0, posinf=0.0)
            k = int(np.argmax(red))
            if red[k] / wsum < self.min_improvement:
                break
            a, b = cands[k]
            new_terms = [a, b] if both[k] else ([a] if red1[k] >= red2[k] else [b])
            new_terms = new_terms[: self.max_terms - added]
            B_new = np.column_stack([B] + [column(t) for t in new_terms])
            beta_new, mse_new = basis_fit(B_new)
            if mse - mse_new < self.min_improvement:
                break
            terms += new_terms
            B, beta, mse = B_new, beta_new, mse_new
            added += len(new_terms)

        self.terms_ = tuple(terms)
        self.n_hinge_terms_ = added
        if self.link == "logit":
            if not np.all((y == 0) | (y == 1)):
                raise ValueError("logit link needs a binary 0/1 response")
            self.logistic_ = LogisticRegression().fit(B[:, 1:], y, sample_weight=w)
        else:
            self.coef_ = beta
        return self

    def _basis(self, X):
        return np.column_stack([np.ones(X.shape[0])] + [t.evaluate(X) for t in self.terms_])

    def predict(self, X):
        X = _check_schema(self, X)
        B = self._basis(X)
        if self.link == "logit":
            return self.logistic_.predict(B[:, 1:])
        return B @ self.coef_


class CellMeanRegressor(RegressorMixin, BaseEstimator):
    """Saturated learner: weighted response mean within each distinct row of X.

    Rows never seen during fitting get the overall mean.
    """

    kind = "saturated"

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        self.n_features_in_ = X.shape[1]
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        num = np.bincount(inv, weights=w * y, minlength=len(keys))
        den = np.bincount(inv, weights=w, minlength=len(keys))
        self.overall_ = float(np.average(y, weights=w))
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(den > 0, num / den, self.overall_)
        self.cells_ = {tuple(k): float(m) for k, m in zip(keys, means)}
        return self

    def predict(self, X):
        X = _check_schema(self, X)
        return np.array([self.cells_.get(tuple(row), self.overall_) for row in X])


_KINDS = {
    "mean": MeanRegressor,
    "linear": LinearRegression,
    "logistic": LogisticRegression,
    "mars_lite": MarsLite,
    "saturated": CellMeanRegressor,
}


def make_learner(kind, loss="squared_error"):
    """Instantiate a battery member by name (or clone an estimator)."""
    if not isinstance(kind, str):
        return clone(kind)
    if kind not in _KINDS:
        raise ValueError(f"unknown learner kind {kind!r}; choose from {sorted(_KINDS)}")
    if kind == "mars_lite" and loss == "log_loss":
        return MarsLite(link="logit")
    return _KINDS[kind]()


def _learner_name(kind):
    return kind if isinstance(kind, str) else type(kind).__name__


def fold_assignment(n, k, seed):
    """Shuffle indices with ``seed`` and deal them round-robin into k folds."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % k
    return folds


def _loss(y, pred, w, loss):
    if loss == "squared_error":
        return float(np.sum(w * (y - pred) ** 2) / w.sum())
    p = np.clip(pred, 1e-15, 1 - 1e-15)
    return float(-np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))) / w.sum())


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def simplex_weights(P, y, w, loss="squared_error", max_iter=500, tol=1e-10):
    """Minimise the weighted loss of ``P @ alpha`` over the simplex.

    Projected gradient descent; step 1/L for squared error (L from the Gram
    matrix of ``P``), Armijo backtracking for log loss. The best single
    column is kept if it beats the iterate.
    """
    m = P.shape[1]
    wsum = w.sum()
    alpha = np.full(m, 1.0 / m)
    if m == 1:
        return alpha
    if loss == "squared_error":
        G = (P * w[:, None]).T @ P / wsum
        L = 2 * np.linalg.eigvalsh(G)[-1]
        step = 1.0 / L if L > 0 else 1.0
        c = (P * w[:, None]).T @ y / wsum
        for _ in range(max_iter):
            grad = 2 * (G @ alpha - c)
            new = project_simplex(alpha - step * grad)
            if np.linalg.norm(new - alpha) < tol:
                alpha = new
                break
            alpha = new
    else:
        f = lambda a: _loss(y, P @ a, w, loss)
        cur = f(alpha)
        step = 1.0
        for _ in range(max_iter):
            pred = np.clip(P @ alpha, 1e-15, 1 - 1e-15)
            grad = -(P * (w * (y / pred - (1 - y) / (1 - pred)))[:, None]).sum(0) / wsum
            while True:
                new = project_simplex(alpha - step * grad)
                val = f(new)
                if val <= cur - 1e-4 * grad @ (alpha - new) or step < 1e-12:
                    break
                step *= 0.5
            done = np.linalg.norm(new - alpha) < tol
            alpha, cur = new, val
            step = min(step * 2, 1e3)
            if done:
                break
    risks = [_loss(y, P[:, j], w, loss) for j in range(m)]
    j = int(np.argmin(risks))
    if risks[j] < _loss(y, P @ alpha, w, loss):
        alpha = np.zeros(m)
        alpha[j] = 1.0
    return alpha


BINARY_BATTERY = ("mean", "logistic", "mars_lite")


@dataclass(frozen=True)
class SuperLearnerSpec:
    """Battery, fold count, loss and seed for a super-learner.

    ``binary_battery`` is used for propensity models (log loss).
    """

    battery: tuple = ("mean", "linear", "mars_lite")
    binary_battery: tuple = BINARY_BATTERY
    folds: int = 5
    loss: str = "squared_error"
    seed: int = 0

    def __post_init__(self):
        if not self.battery:
            raise ValueError("battery must not be empty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.loss not in ("squared_error", "log_loss"):
            raise ValueError(f"unknown loss {self.loss!r}")


class SuperLearner(RegressorMixin, BaseEstimator):
    """K-fold cross-validated convex ensemble of base learners.

    Ensemble weights minimise the cross-validated loss over the probability
    simplex. A base learner that raises on any fold is dropped and reported
    in ``warnings_``.
    """

    kind = "ensemble"

    def __init__(self, battery=("mean", "linear", "mars_lite"), folds=5,
                 loss="squared_error", random_state=0):
        self.battery = battery
        self.folds = folds
        self.loss = loss
        self.random_state = random_state

    @classmethod
    def from_spec(cls, spec: SuperLearnerSpec, loss=None, seed=None):
        loss = loss or spec.loss
        battery = spec.binary_battery if loss == "log_loss" else spec.battery
        return cls(battery, spec.folds, loss, spec.seed if seed is None else seed)

    def fit(self, X, y, sample_weight=None):
        X, y, w = _validate(X, y, sample_weight)
        if not self.battery:
            raise ValueError("battery must not be empty")
        if self.loss not in ("squared_error", "log_loss"):
            raise ValueError(f"unknown loss {self.loss!r}")
        self.n_features_in_ = X.shape[1]
        n = len(y)
        folds = fold_assignment(n, self.folds, self.random_state)
        names = [_learner_name(k) for k in self.battery]
        cv = np.full((n, len(self.battery)), np.nan)
        failed = {}
        for j, kind in enumerate(self.battery):
            for f in range(self.folds):
                train, test = folds != f, folds == f
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        est = make_learner(kind, self.loss).fit(X[train], y[train], w[train])
                        cv[test, j] = est.predict(X[test])
                except Exception as exc:  # noqa: BLE001 - any learner failure drops it
                    failed[names[j]] = f"fold {f}: {exc}"
                    break
        keep = [j for j in range(len(self.battery)) if names[j] not in failed]
        if not keep:
            raise RuntimeError(f"every base learner failed: {failed}")
        self.warnings_ = [f"dropped {k}: {v}" for k, v in failed.items()]
        P = cv[:, keep]
        self.names_ = [names[j] for j in keep]
        self.cv_predictions_ = P
        self.cv_risk_ = np.array([_loss(y, P[:, j], w, self.loss) for j in range(P.shape[1])])
        self.weights_ = simplex_weights(P, y, w, self.loss)
        self.cv_risk_ensemble_ = _loss(y, P @ self.weights_, w, self.loss)
        self.learners_ = [make_learner(self.battery[j], self.loss).fit(X, y, w) for j in keep]
        return self

    def predict(self, X):
        X = _check_schema(self, X)
        out = np.zeros(X.shape[0])
        for a, est in zip(self.weights_, self.learners_):
            if a > 0:
                out += a * est.predict(X)
        return out


def fit_mean(X, y, sample_weight=None):
    return MeanRegressor().fit(X, y, sample_weight)


def fit_linear(X, y, sample_weight=None):
    return LinearRegression().fit(X, y, sample_weight)


def fit_logistic(X, y, sample_weight=None):
    return LogisticRegression().fit(X, y, sample_weight)


def fit_mars_lite(X, y, max_terms=8, sample_weight=None, **kwargs):
    return MarsLite(max_terms=max_terms, **kwargs).fit(X, y, sample_weight)


def fit_super_learner(X, y, spec: SuperLearnerSpec = SuperLearnerSpec(), sample_weight=None):
    return SuperLearner.from_spec(spec).fit(X, y, sample_weight)
