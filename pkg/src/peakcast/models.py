"""Probabilistic regressors sharing a single contract.

Every model fits on a FeatureFrame and maps feature rows to predicted
quantiles at a fixed grid of levels.  The natural-gradient booster
additionally exposes its (mu, sigma) parameters directly.  Quantile
crossing is deliberately NOT repaired here; that is a post-processing
step (see peakcast.dist.rearrange).
"""

from __future__ import annotations

import logging
import pickle
import time
from dataclasses import dataclass, field

import numpy as np

from .core import check_level, std_normal_quantile, weighted_quantile
from .features import FeatureFrame
from .tree import RegressionTree

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_LEVELS",
    "QuantileGrid",
    "ModelSpec",
    "pinball",
    "fit_qlr",
    "fit_qknn",
    "fit_qrf",
    "fit_qgb",
    "fit_ngb",
    "fit_residual_hybrid",
    "fit_from_spec",
    "predict",
    "save_model",
    "load_model",
    "MODEL_KINDS",
]

DEFAULT_LEVELS = (0.05, 0.25, 0.50, 0.75, 0.95)

MODEL_KINDS = ("QLR", "QKNN", "QRF", "QGB", "NGB", "QKNNL", "QRFL", "QGBL")

_HYBRID_INNER = {"QKNNL": "QKNN", "QRFL": "QRF", "QGBL": "QGB"}

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class QuantileGrid:
    """Sorted quantile levels; must contain the median."""

    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        lev = tuple(check_level(t) for t in self.levels)
        if any(b <= a for a, b in zip(lev, lev[1:])):
            raise ValueError("levels must be strictly increasing")
        if 0.5 not in lev:
            raise ValueError("grid must contain the median level 0.5")
        object.__setattr__(self, "levels", lev)

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class ModelSpec:
    """Which model to train, with hyperparameters and a seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")


def pinball(y: float, q: float, tau: float) -> float:
    """Asymmetric check loss: tau*(y-q) if y >= q else (1-tau)*(q-y)."""
    tau = check_level(tau)
    if y >= q:
        return tau * (y - q)
    return (1.0 - tau) * (q - y)


def _pinball_vec(y: np.ndarray, q: np.ndarray, tau: float) -> np.ndarray:
    r = y - q
    return np.where(r >= 0, tau * r, (tau - 1.0) * r)


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class _Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "_Scaler":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls(mean=mean, scale=scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _check_columns(model, columns) -> None:
    if columns is not None and list(columns) != list(model.columns):
        raise ValueError("feature columns do not match the fitted model")


class FittedModel:
    """Common surface: predict_quantiles(X) -> (n, n_levels) array."""

    kind: str = "?"

    def __init__(self, grid: QuantileGrid, columns, train_seconds: float):
        self.grid = grid
        self.columns = list(columns)
        self.train_seconds = train_seconds

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# quantile linear regression


def _smoothed_pinball(r: np.ndarray, tau: float, kappa: float):
    """Huberized check loss and its derivative in the residual.

    Quadratic for |r| <= kappa, linear with the pinball slopes outside;
    value and first derivative are continuous.
    """
    inner = np.abs(r) <= kappa
    loss = np.where(
        inner,
        r * r / (4.0 * kappa) + (tau - 0.5) * r,
        np.where(r > 0, tau * r, (tau - 1.0) * r) - kappa / 4.0,
    )
    grad = np.where(
        inner, r / (2.0 * kappa) + (tau - 0.5), np.where(r > 0, tau, tau - 1.0)
    )
    return loss, grad


class QLRModel(FittedModel):
    kind = "QLR"

    def __init__(self, grid, columns, train_seconds, x_scaler, y_mean, y_scale,
                 coef, intercept, converged, grad_norms):
        super().__init__(grid, columns, train_seconds)
        self.x_scaler = x_scaler
        self.y_mean = y_mean
        self.y_scale = y_scale
        self.coef = coef              # (n_levels, p), standardized space
        self.intercept = intercept    # (n_levels,)
        self.converged = converged
        self.grad_norms = grad_norms

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        _check_columns(self, columns)
        Z = self.x_scaler.transform(np.asarray(X, dtype=float))
        std_pred = Z @ self.coef.T + self.intercept
        return self.y_mean + self.y_scale * std_pred


def fit_qlr(frame: FeatureFrame, grid: QuantileGrid = QuantileGrid(),
            ridge: float = 1e-6, smoothing: float = 1e-4,
            tol: float = 1e-6, max_iter: int = 5000) -> QLRModel:
    """Linear quantile regression via smoothed pinball gradient descent.

    Features and target are standardized internally; the smoothing width
    is therefore in standardized-target units.
    """
    t0 = time.perf_counter()
    X = frame.X
    y = frame.y
    scaler = _Scaler.fit(X)
    Z = scaler.transform(X)
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    yz = (y - y_mean) / y_scale
    n, p = Z.shape

    coef = np.zeros((len(grid), p))
    intercept = np.zeros(len(grid))
    converged = []
    grad_norms = []

    # warm start from least squares; the tau-quantile of its residuals
    # seeds the intercept
    A = np.hstack([np.ones((n, 1)), Z])
    beta, *_ = np.linalg.lstsq(A, yz, rcond=None)
    res0 = yz - A @ beta

    # the smoothing width is annealed so the quantile bias of the
    # smoothed loss (up to kappa in standardized units) dies out
    kappas = (smoothing, smoothing / 10.0, smoothing / 100.0)

    for li, tau in enumerate(grid):
        theta = np.concatenate([[beta[0] + np.quantile(res0, tau)], beta[1:]])

        def objective(th, kappa):
            r = yz - (th[0] + Z @ th[1:])
            loss, grad_r = _smoothed_pinball(r, tau, kappa)
            obj = loss.mean() + ridge * float(th[1:] @ th[1:])
            g = np.empty_like(th)
            g[0] = -grad_r.mean()
            g[1:] = -(Z.T @ grad_r) / n + 2.0 * ridge * th[1:]
            return obj, g

        budget = max_iter // len(kappas)
        for kappa in kappas:
            obj, g = objective(theta, kappa)
            step = 1.0
            it = 0
            while np.linalg.norm(g) > tol and it < budget:
                gn2 = float(g @ g)
                while True:
                    cand = theta - step * g
                    obj_c, g_c = objective(cand, kappa)
                    if obj_c <= obj - 1e-4 * step * gn2 or step < 1e-16:
                        break
                    step *= 0.5
                theta, obj, g = cand, obj_c, g_c
                step *= 2.0
                it += 1
        gnorm = float(np.linalg.norm(g))
        ok = gnorm <= tol
        if not ok:
            logger.warning("QLR tau=%.3g did not converge: |grad|=%.3g", tau,
                           gnorm)
        converged.append(ok)
        grad_norms.append(gnorm)
        intercept[li] = theta[0]
        coef[li] = theta[1:]

    return QLRModel(grid, frame.column_names, time.perf_counter() - t0,
                    scaler, y_mean, y_scale, coef, intercept,
                    tuple(converged), tuple(grad_norms))


# ---------------------------------------------------------------------------
# quantile k-nearest neighbors


class QKNNModel(FittedModel):
    kind = "QKNN"

    def __init__(self, grid, columns, train_seconds, x_scaler, Z_train,
                 y_train, k):
        super().__init__(grid, columns, train_seconds)
        self.x_scaler = x_scaler
        self.Z_train = Z_train
        self.y_train = y_train
        self.k = k

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        _check_columns(self, columns)
        Z = self.x_scaler.transform(np.asarray(X, dtype=float))
        out = np.empty((Z.shape[0], len(self.grid)))
        ones = np.ones(self.k)
        for i, z in enumerate(Z):
            d2 = np.einsum("ij,ij->i", self.Z_train - z, self.Z_train - z)
            # stable sort breaks distance ties by lower training index
            nn = np.argsort(d2, kind="stable")[: self.k]
            targets = self.y_train[nn]
            for li, tau in enumerate(self.grid):
                out[i, li] = weighted_quantile(targets, ones, tau)
        return out


def fit_qknn(frame: FeatureFrame, grid: QuantileGrid = QuantileGrid(),
             k: int = 50) -> QKNNModel:
    """Empirical quantiles of the targets of the k nearest neighbours."""
    t0 = time.perf_counter()
    n = frame.X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} training samples")
    scaler = _Scaler.fit(frame.X)
    return QKNNModel(grid, frame.column_names, time.perf_counter() - t0,
                     scaler, scaler.transform(frame.X), frame.y.copy(), k)


# ---------------------------------------------------------------------------
# quantile random forest


class QRFModel(FittedModel):
    kind = "QRF"

    def __init__(self, grid, columns, train_seconds, trees, leaf_of_train,
                 y_train):
        super().__init__(grid, columns, train_seconds)
        self.trees = trees
        self.leaf_of_train = leaf_of_train    # (n_trees, n_train)
        self.y_train = y_train

    def training_weights(self, X) -> np.ndarray:
        """Forest co-membership weights, one row per query point."""
        X = np.asarray(X, dtype=float)
        n_train = self.y_train.shape[0]
        w = np.zeros((X.shape[0], n_train))
        for tree, leaf_train in zip(self.trees, self.leaf_of_train):
            leaves = tree.apply(X)
            counts = np.bincount(leaf_train, minlength=tree.value.shape[0])
            member = leaf_train[None, :] == leaves[:, None]
            w += member / counts[leaves][:, None]
        return w / len(self.trees)

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        _check_columns(self, columns)
        W = self.training_weights(X)
        out = np.empty((W.shape[0], len(self.grid)))
        for i, w in enumerate(W):
            for li, tau in enumerate(self.grid):
                out[i, li] = weighted_quantile(self.y_train, w, tau)
        return out


def fit_qrf(frame: FeatureFrame, grid: QuantileGrid = QuantileGrid(),
            trees: int = 500, mtry: int | None = None, min_leaf: int = 5,
            seed: int = 0) -> QRFModel:
    """Random forest keeping per-leaf target memberships.

    Each tree is grown on a bootstrap resample; prediction weights every
    training target by its co-membership with the query point across the
    forest, then reads quantiles off the weighted empirical CDF.
    """
    t0 = time.perf_counter()
    X, y = frame.X, frame.y
    n, p = X.shape
    if trees < 1:
        raise ValueError("need at least one tree")
    if mtry is None:
        mtry = int(np.ceil(p / 3))
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry={mtry} out of range for {p} features")
    forest = []
    leaf_of_train = np.empty((trees, n), dtype=np.int64)
    seeds = np.random.SeedSequence(seed).spawn(trees)
    for t in range(trees):
        rng = np.random.default_rng(seeds[t])
        boot = rng.integers(0, n, size=n)
        tree = RegressionTree(min_leaf=min_leaf, mtry=mtry)
        tree.fit(X[boot], y[boot], rng=rng)
        forest.append(tree)
        leaf_of_train[t] = tree.apply(X)
    return QRFModel(grid, frame.column_names, time.perf_counter() - t0,
                    forest, leaf_of_train, y.copy())


# ---------------------------------------------------------------------------
# quantile gradient boosting


class QGBModel(FittedModel):
    kind = "QGB"

    def __init__(self, grid, columns, train_seconds, base, ensembles,
                 loss_curves):
        super().__init__(grid, columns, train_seconds)
        self.base = base                  # per-level constant init
        self.ensembles = ensembles        # per-level list of trees
        self.loss_curves = loss_curves    # per-level array, rounds+1 entries

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        _check_columns(self, columns)
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], len(self.grid)))
        for li in range(len(self.grid)):
            pred = np.full(X.shape[0], self.base[li])
            for tree in self.ensembles[li]:
                pred += tree.predict(X)
            out[:, li] = pred
        return out


def fit_qgb(frame: FeatureFrame, grid: QuantileGrid = QuantileGrid(),
            rounds: int = 300, learning_rate: float = 0.05,
            max_depth: int = 6, min_leaf: int = 20,
            seed: int = 0) -> QGBModel:
    """Gradient boosting under the pinball loss, one ensemble per level.

    Each round grows a tree on the pinball subgradient, then overwrites
    every leaf with the learning-rate-scaled tau-quantile of its
    residuals; the per-leaf quantile step makes the training loss
    non-increasing for learning rates in (0, 1].
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    t0 = time.perf_counter()
    X, y = frame.X, frame.y
    n = y.shape[0]
    ones = np.ones(n)
    base, ensembles, curves = [], [], []
    for tau in grid:
        f0 = weighted_quantile(y, ones, tau)
        F = np.full(n, f0)
        trees = []
        curve = [float(_pinball_vec(y, F, tau).mean())]
        for _ in range(rounds):
            r = y - F
            g = np.where(r > 0, tau, np.where(r < 0, tau - 1.0, 0.0))
            tree = RegressionTree(max_depth=max_depth, min_leaf=min_leaf)
            tree.fit(X, g)
            leaves = tree.apply(X)
            for leaf in np.unique(leaves):
                in_leaf = leaves == leaf
                step = weighted_quantile(r[in_leaf], ones[in_leaf], tau)
                tree.set_leaf_values(np.array([leaf]),
                                     np.array([learning_rate * step]))
            F = F + tree.value[leaves]
            trees.append(tree)
            curve.append(float(_pinball_vec(y, F, tau).mean()))
        base.append(f0)
        ensembles.append(trees)
        curves.append(np.asarray(curve))
    return QGBModel(grid, frame.column_names, time.perf_counter() - t0,
                    np.asarray(base), ensembles, curves)


# ---------------------------------------------------------------------------
# natural gradient boosting


def natural_gradient(mu, log_sigma, y):
    """Natural gradient of the normal NLL in (mu, log sigma).

    The Fisher information for this parameterization is diag(1/sigma^2, 2),
    so the ordinary gradient ((mu-y)/sigma^2, 1 - z^2) becomes
    (mu - y, (1 - z^2)/2) after preconditioning.
    """
    sigma = np.exp(log_sigma)
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return mu - y, (1.0 - z * z) / 2.0


class NGBModel(FittedModel):
    kind = "NGB"

    def __init__(self, grid, columns, train_seconds, mu0, log_sigma0,
                 mu_trees, sigma_trees, learning_rate):
        super().__init__(grid, columns, train_seconds)
        self.mu0 = mu0
        self.log_sigma0 = log_sigma0
        self.mu_trees = mu_trees
        self.sigma_trees = sigma_trees
        self.learning_rate = learning_rate

    def predict_params(self, X, columns=None):
        """(mu, sigma) arrays for each row of X."""
        _check_columns(self, columns)
        X = np.asarray(X, dtype=float)
        mu = np.full(X.shape[0], self.mu0)
        ls = np.full(X.shape[0], self.log_sigma0)
        for tm, ts in zip(self.mu_trees, self.sigma_trees):
            mu -= self.learning_rate * tm.predict(X)
            ls -= self.learning_rate * ts.predict(X)
        sigma = np.maximum(np.exp(ls), SIGMA_FLOOR)
        return mu, sigma

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        mu, sigma = self.predict_params(X, columns)
        z = std_normal_quantile(np.asarray(self.grid.levels))
        return mu[:, None] + sigma[:, None] * z[None, :]


def fit_ngb(frame: FeatureFrame, grid: QuantileGrid = QuantileGrid(),
            rounds: int = 300, learning_rate: float = 0.05,
            max_depth: int = 3, min_leaf: int = 5,
            seed: int = 0) -> NGBModel:
    """Boost (mu, log sigma) of a normal under NLL with natural gradients."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    t0 = time.perf_counter()
    X, y = frame.X, frame.y
    n = y.shape[0]
    mu0 = float(y.mean())
    sd0 = float(y.std())
    if sd0 < SIGMA_FLOOR:
        logger.info("NGB: training target nearly constant, flooring sigma")
        sd0 = SIGMA_FLOOR
    ls0 = float(np.log(sd0))
    mu = np.full(n, mu0)
    ls = np.full(n, ls0)
    mu_trees, sigma_trees = [], []
    for _ in range(rounds):
        if np.any(np.exp(ls) < SIGMA_FLOOR):
            logger.info("NGB: flooring %d sigma values at %g",
                        int(np.sum(np.exp(ls) < SIGMA_FLOOR)), SIGMA_FLOOR)
            ls = np.maximum(ls, np.log(SIGMA_FLOOR))
        g_mu, g_ls = natural_gradient(mu, ls, y)
        tm = RegressionTree(max_depth=max_depth, min_leaf=min_leaf)
        tm.fit(X, g_mu)
        ts = RegressionTree(max_depth=max_depth, min_leaf=min_leaf)
        ts.fit(X, g_ls)
        mu = mu - learning_rate * tm.predict(X)
        ls = ls - learning_rate * ts.predict(X)
        mu_trees.append(tm)
        sigma_trees.append(ts)
    return NGBModel(grid, frame.column_names, time.perf_counter() - t0,
                    mu0, ls0, mu_trees, sigma_trees, learning_rate)


# ---------------------------------------------------------------------------
# linear + probabilistic-residual hybrids


class HybridModel(FittedModel):
    def __init__(self, grid, columns, train_seconds, kind, linear_coef,
                 linear_intercept, inner):
        super().__init__(grid, columns, train_seconds)
        self.kind = kind
        self.linear_coef = linear_coef
        self.linear_intercept = linear_intercept
        self.inner = inner

    def linear_prediction(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.linear_intercept + X @ self.linear_coef

    def predict_quantiles(self, X, columns=None) -> np.ndarray:
        _check_columns(self, columns)
        point = self.linear_prediction(X)
        return point[:, None] + self.inner.predict_quantiles(X)


def fit_residual_hybrid(frame: FeatureFrame,
                        grid: QuantileGrid = QuantileGrid(),
                        inner: str = "QKNN", inner_params: dict | None = None,
                        ridge: float = 0.0,
                        _force_zero_linear: bool = False) -> HybridModel:
    """Linear point model plus a probabilistic residual model.

    The final quantile set is the linear point prediction shifted by the
    inner model's quantiles of the residual distribution.  The linear
    stage is least squares by default; a positive ridge penalty (applied
    per sample in standardized feature space, intercept unpenalized)
    shrinks the point model when many features carry little signal.
    """
    if inner not in ("QKNN", "QRF", "QGB"):
        raise ValueError(f"unsupported inner model {inner!r}")
    if ridge < 0:
        raise ValueError("ridge penalty must be nonnegative")
    t0 = time.perf_counter()
    X, y = frame.X, frame.y
    n, p = X.shape
    if _force_zero_linear:
        beta = np.zeros(p + 1)
    elif ridge == 0.0:
        A = np.hstack([np.ones((n, 1)), X])
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    else:
        scaler = _Scaler.fit(X)
        Z = scaler.transform(X)
        y_bar = float(np.mean(y))
        G = Z.T @ Z / n + ridge * np.eye(p)
        w = np.linalg.solve(G, Z.T @ (y - y_bar) / n)
        coef = w / scaler.scale
        beta = np.concatenate(
            [[y_bar - float(scaler.mean @ coef)], coef])
    point = beta[0] + X @ beta[1:]
    residual_frame = frame.with_target(y - point)
    fitter = {"QKNN": fit_qknn, "QRF": fit_qrf, "QGB": fit_qgb}[inner]
    inner_model = fitter(residual_frame, grid, **(inner_params or {}))
    kind = {"QKNN": "QKNNL", "QRF": "QRFL", "QGB": "QGBL"}[inner]
    return HybridModel(grid, frame.column_names, time.perf_counter() - t0,
                       kind, beta[1:], float(beta[0]), inner_model)


# ---------------------------------------------------------------------------
# uniform entry points


def fit_from_spec(spec: ModelSpec, frame: FeatureFrame,
                  grid: QuantileGrid = QuantileGrid()) -> FittedModel:
    """Dispatch a ModelSpec to the matching fit function."""
    params = dict(spec.params)
    if spec.kind == "QLR":
        return fit_qlr(frame, grid, **params)
    if spec.kind == "QKNN":
        return fit_qknn(frame, grid, **params)
    if spec.kind == "QRF":
        return fit_qrf(frame, grid, seed=spec.seed, **params)
    if spec.kind == "QGB":
        return fit_qgb(frame, grid, seed=spec.seed, **params)
    if spec.kind == "NGB":
        return fit_ngb(frame, grid, seed=spec.seed, **params)
    inner = _HYBRID_INNER[spec.kind]
    ridge = params.pop("ridge", 0.0)
    if inner in ("QRF", "QGB"):
        params.setdefault("seed", spec.seed)
    return fit_residual_hybrid(frame, grid, inner=inner,
                               inner_params=params, ridge=ridge)


def predict(model: FittedModel, row, columns=None):
    """Predict one feature row, returning a QuantileSet.

    For NGB models the fitted NormalDist is returned alongside.
    """
    from .dist import NormalDist, QuantileSet

    row = np.asarray(row, dtype=float).reshape(1, -1)
    if row.shape[1] != len(model.columns):
        raise ValueError(
            f"row has {row.shape[1]} features, model expects "
            f"{len(model.columns)}")
    _check_columns(model, columns)
    values = model.predict_quantiles(row)[0]
    qs = QuantileSet(levels=tuple(model.grid.levels), values=tuple(values))
    if isinstance(model, NGBModel):
        mu, sigma = model.predict_params(row)
        return qs, NormalDist(mu=float(mu[0]), sigma=float(sigma[0]))
    return qs


# ---------------------------------------------------------------------------
# serialization

_FORMAT = "peakcast-model"
_VERSION = 1


def save_model(model: FittedModel, path) -> None:
    """Write a fitted model; round-trips reproduce predictions exactly."""
    with open(path, "wb") as fh:
        pickle.dump({"format": _FORMAT, "version": _VERSION, "model": model},
                    fh, protocol=4)


def load_model(path) -> FittedModel:
    with open(path, "rb") as fh:
        blob = pickle.load(fh)
    if not isinstance(blob, dict) or blob.get("format") != _FORMAT:
        raise ValueError(f"{path} is not a peakcast model file")
    if blob.get("version") != _VERSION:
        raise ValueError(f"unsupported model file version {blob.get('version')}")
    return blob["model"]
