"""Regime families, propensity models and the normalized IPW value estimator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NoAdherentPatients, PropensityFitError

P_MIN = 0.005
SEPARATION_ETA = 30.0  # |linear predictor| beyond which p is 0 or 1 to double precision


@dataclass(frozen=True)
class Trajectory:
    """One patient: stage covariates ``x`` (T, p), treatments ``z`` (T,), outcome ``y``."""

    x: np.ndarray
    z: np.ndarray
    y: float
    baseline: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        x = x.reshape(len(x), -1) if x.ndim <= 1 else x
        z = np.asarray(self.z).reshape(-1).astype(int)
        if x.shape[0] != z.shape[0] or x.shape[0] < 1:
            raise ValueError("x and z must cover the same T >= 1 stages")
        if not np.all(np.isin(z, (0, 1))):
            raise ValueError("treatments must be binary")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "baseline", np.asarray(self.baseline, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class Cohort:
    """A sample of n trajectories stored as arrays.

    Attributes
    ----------
    x : ndarray, shape (n, T, p)
    z : ndarray of int, shape (n, T)
    y : ndarray, shape (n,)
    baseline : ndarray, shape (n, q)
    weights : ndarray, shape (n,), optional
        Observation weights summing to one (e.g. Bayesian-bootstrap draws).
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    baseline: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        z = np.asarray(self.z)
        z = z.reshape(z.shape[0], -1).astype(int)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        if n < 1 or x.shape[:2] != z.shape or z.shape[0] != n:
            raise ValueError(f"inconsistent shapes x{x.shape} z{z.shape} y{y.shape}")
        if not np.all(np.isin(z, (0, 1))):
            raise ValueError("treatments must be binary")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("covariates and outcomes must be finite")
        b = np.zeros((n, 0)) if self.baseline is None else np.asarray(self.baseline, dtype=float).reshape(n, -1)
        w = self.weights
        if w is not None:
            w = np.asarray(w, dtype=float).reshape(-1)
            if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative, one per patient, and sum to one")
        for name, val in (("x", x), ("z", z), ("y", y), ("baseline", b), ("weights", w)):
            if val is not None:
                val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def from_trajectories(cls, trajectories, weights=None):
        trajectories = list(trajectories)
        return cls(
            np.stack([t.x for t in trajectories]),
            np.stack([t.z for t in trajectories]),
            np.array([t.y for t in trajectories]),
            np.stack([t.baseline for t in trajectories]),
            weights,
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def stages(self) -> int:
        return self.z.shape[1]

    def trajectory(self, i) -> Trajectory:
        return Trajectory(self.x[i], self.z[i], self.y[i], self.baseline[i])

    def with_weights(self, weights) -> Cohort:
        return Cohort(self.x, self.z, self.y, self.baseline, weights)

    def effective_weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n) if self.weights is None else self.weights


class RegimeFamily:
    """Family of deterministic rules indexed by a point in a box.

    Subclasses implement :meth:`recommend`, returning the (n, T) array of
    treatments the rule with index ``psi`` assigns to every patient.
    """

    def __init__(self, bounds):
        b = np.atleast_2d(np.asarray(bounds, dtype=float))
        if b.shape[1] != 2 or np.any(b[:, 1] < b[:, 0]):
            raise ValueError("bounds must be a (D, 2) array of nonempty intervals")
        self.bounds = b

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def check(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float).reshape(-1)
        if psi.shape != (self.dim,):
            raise ValueError(f"regime index must have {self.dim} entries, got {psi.shape}")
        return psi

    def recommend(self, cohort: Cohort, psi) -> np.ndarray:
        raise NotImplementedError

    def recommend_stage(self, x_t, baseline, psi, t):
        """Treatment at stage ``t`` given covariates ``x_t`` (n, p); used for simulation."""
        raise NotImplementedError


class ThresholdPerStage(RegimeFamily):
    """Treat at stage t iff ``x_t[covariate] > psi_t``; one index entry per stage."""

    def __init__(self, bounds, covariate: int = 0):
        super().__init__(bounds)
        self.covariate = covariate

    def recommend_stage(self, x_t, baseline, psi, t):
        return (np.asarray(x_t)[:, self.covariate] > psi[t]).astype(int)

    def recommend(self, cohort, psi):
        psi = self.check(psi)
        if cohort.stages != self.dim:
            raise ValueError(f"family has {self.dim} stages, cohort has {cohort.stages}")
        return (cohort.x[:, :, self.covariate] > psi[None, :]).astype(int)


class JointThreshold(RegimeFamily):
    """Treat (at every stage) iff each listed covariate exceeds its threshold.

    With ``covariates=(0, 1)`` and a single stage this is the rule "treat iff
    weight > psi_W and CD4 > psi_CD4".
    """

    def __init__(self, bounds, covariates=(0, 1)):
        super().__init__(bounds)
        self.covariates = tuple(covariates)
        if len(self.covariates) != self.dim:
            raise ValueError("one threshold per covariate is required")

    def recommend_stage(self, x_t, baseline, psi, t):
        x_t = np.asarray(x_t)
        return np.all(x_t[:, list(self.covariates)] > psi[None, :], axis=1).astype(int)

    def recommend(self, cohort, psi):
        psi = self.check(psi)
        sel = cohort.x[:, :, list(self.covariates)]
        return np.all(sel > psi[None, None, :], axis=2).astype(int)


class LinearSharedRule(RegimeFamily):
    """Treat at stage k iff ``p1 * x_k1 + (1 - p1) * x_k2 > 0.5 - 3 * p3 * u``.

    The free index is ``(p1, p3)``; the second coefficient is ``1 - p1``.
    ``u`` is baseline covariate ``baseline_index``.
    """

    def __init__(self, bounds=((0.2, 0.8), (-0.3, 0.3)), baseline_index: int = 0):
        super().__init__(bounds)
        if self.dim != 2:
            raise ValueError("LinearSharedRule has a two-dimensional free index (psi_1, psi_3)")
        self.baseline_index = baseline_index

    @staticmethod
    def full_index(psi):
        p1, p3 = np.asarray(psi, dtype=float).reshape(2)
        return np.array([p1, 1.0 - p1, p3])

    def recommend_stage(self, x_t, baseline, psi, t):
        p1, p2, p3 = self.full_index(psi)
        x_t = np.asarray(x_t)
        u = np.asarray(baseline)[:, self.baseline_index]
        return (p1 * x_t[:, 0] + p2 * x_t[:, 1] > 0.5 - 3.0 * p3 * u).astype(int)

    def recommend(self, cohort, psi):
        p1, p2, p3 = self.full_index(self.check(psi))
        u = cohort.baseline[:, self.baseline_index][:, None]
        score = p1 * cohort.x[:, :, 0] + p2 * cohort.x[:, :, 1]
        return (score > 0.5 - 3.0 * p3 * u).astype(int)


def adherence(cohort: Cohort, family: RegimeFamily, psi) -> np.ndarray:
    """Boolean (n,) array: observed treatments match the rule at every stage."""
    return np.all(cohort.z == family.recommend(cohort, psi), axis=1)


def is_adherent(trajectory: Trajectory, family: RegimeFamily, psi) -> bool:
    cohort = Cohort.from_trajectories([trajectory])
    return bool(adherence(cohort, family, psi)[0])


# ---------------------------------------------------------------- propensity


def history_features(cohort: Cohort, t: int) -> np.ndarray:
    """Default stage-t design matrix: intercept, stage covariates, previous treatment."""
    cols = [np.ones(cohort.n), cohort.x[:, t, :]]
    if t > 0:
        cols.append(cohort.z[:, t - 1])
    return np.column_stack(cols)


def intercept_only(cohort: Cohort, t: int) -> np.ndarray:
    return np.ones((cohort.n, 1))


def logistic_irls(X, z, weights=None, max_iter=100, tol=1e-8):
    """Weighted logistic regression by iteratively reweighted least squares.

    ``weights`` are normalized to sum to one; convergence is declared when
    the Euclidean norm of the weighted score ``X' W (z - p)`` is below
    ``tol``. Returns ``(coef, score_norm, n_iter)``; raises ``RuntimeError``
    if not converged.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.full(len(z), 1.0 / len(z)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    # column scaling keeps the Newton system well conditioned for raw clinical units
    scale = np.maximum(np.abs(X).max(axis=0), 1e-12)
    Xs = X / scale
    beta = np.zeros(X.shape[1])
    loglik = lambda b: float(np.sum(w * (z * (Xs @ b) - np.logaddexp(0.0, Xs @ b))))
    current = loglik(beta)
    score_norm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(Xs @ beta)
        score = Xs.T @ (w * (z - p))
        score_norm = float(np.linalg.norm(score * scale))
        if score_norm < tol:
            if np.max(np.abs(Xs @ beta)) > SEPARATION_ETA:
                # score vanishes only because fitted probabilities saturate at 0 or 1
                raise RuntimeError("fitted probabilities numerically 0 or 1")
            return beta / scale, score_norm, it - 1
        H = (Xs * (w * p * (1 - p))[:, None]).T @ Xs
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            val = loglik(cand)
            if val >= current - 1e-15:
                break
            t *= 0.5
        beta, current = cand, val
        if not np.all(np.isfinite(beta)):
            break
    p = expit(Xs @ beta)
    score_norm = float(np.linalg.norm((Xs.T @ (w * (z - p))) * scale))
    if score_norm < tol and np.max(np.abs(Xs @ beta)) <= SEPARATION_ETA:
        return beta / scale, score_norm, max_iter
    raise RuntimeError(f"IRLS did not converge (score norm {score_norm:.3g})")


def _observed(p1, z, p_min):
    # clip again so that 1 - (1 - p_min) cannot round below p_min
    return np.clip(np.where(z == 1, p1, 1.0 - p1), p_min, 1.0 - p_min)


class PropensityModel:
    """Per-stage logistic models for P(z_t = 1 | history).

    Use :func:`fit_propensity` to construct. ``observed_probs`` returns the
    clamped probability of the treatment actually received.
    """

    def __init__(self, coefficients, features=history_features, p_min=P_MIN):
        self.coefficients = [np.asarray(c, dtype=float) for c in coefficients]
        self.features = features
        self.p_min = p_min

    def treat_probs(self, cohort: Cohort) -> np.ndarray:
        out = np.empty((cohort.n, cohort.stages))
        for t, beta in enumerate(self.coefficients):
            out[:, t] = expit(self.features(cohort, t) @ beta)
        return np.clip(out, self.p_min, 1.0 - self.p_min)

    def observed_probs(self, cohort: Cohort) -> np.ndarray:
        return _observed(self.treat_probs(cohort), cohort.z, self.p_min)


class KnownPropensity:
    """Propensity given by a callable ``prob(cohort, t) -> P(z_t = 1)``."""

    def __init__(self, prob, p_min=P_MIN):
        self.prob = prob
        self.p_min = p_min

    def treat_probs(self, cohort):
        out = np.column_stack([self.prob(cohort, t) for t in range(cohort.stages)])
        return np.clip(out, self.p_min, 1.0 - self.p_min)

    def observed_probs(self, cohort):
        return _observed(self.treat_probs(cohort), cohort.z, self.p_min)


def fit_propensity(cohort: Cohort, features=history_features, p_min=P_MIN, weights=None,
                   max_iter=100, tol=1e-8) -> PropensityModel:
    """Fit one weighted logistic regression per stage.

    ``weights`` default to the cohort's own weights (uniform if absent).
    """
    w = cohort.effective_weights() if weights is None else np.asarray(weights, dtype=float)
    coefs = []
    for t in range(cohort.stages):
        z = cohort.z[:, t]
        treated = float(np.sum(w * z))
        if treated <= 0 or treated >= np.sum(w):
            raise PropensityFitError(f"stage {t + 1} has no weighted treated or untreated patients", stage=t + 1)
        try:
            beta, _, _ = logistic_irls(features(cohort, t), z, w, max_iter=max_iter, tol=tol)
        except RuntimeError as exc:
            raise PropensityFitError(f"stage {t + 1}: {exc} (possible separation)", stage=t + 1) from exc
        coefs.append(beta)
    return PropensityModel(coefs, features, p_min)


# ---------------------------------------------------------------- estimator


def bayesian_bootstrap_weights(n: int, rng=None) -> np.ndarray:
    """One draw from Dirichlet(1, ..., 1) via normalized standard exponentials."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng)
    e = rng.standard_exponential(n)
    return e / e.sum()


def ipw_value(cohort: Cohort, family: RegimeFamily, psi, propensity, weights=None) -> float:
    """Normalized IPW estimate of the value of the rule with index ``psi``.

    ``sum_i pi_i w_i y_i / sum_i pi_i w_i`` with ``w_i`` the adherence
    indicator over the product of stage propensities and ``pi`` the
    observation weights (cohort weights, or uniform).
    """
    return ValueEstimator(cohort, family, propensity, weights)(psi)


class ValueEstimator:
    """Callable ``psi -> normalized IPW value`` with cached inverse propensities."""

    def __init__(self, cohort: Cohort, family: RegimeFamily, propensity, weights=None):
        self.cohort = cohort
        self.family = family
        pi = cohort.effective_weights() if weights is None else np.asarray(weights, dtype=float)
        self.base_weight = pi / np.prod(propensity.observed_probs(cohort), axis=1)
        self.n_calls = 0

    def __call__(self, psi) -> float:
        self.n_calls += 1
        adh = adherence(self.cohort, self.family, psi)
        w = np.where(adh, self.base_weight, 0.0)
        total = w.sum()
        if not total > 0:
            raise NoAdherentPatients(f"no adherent patients at psi={np.asarray(psi).tolist()}")
        return float(w @ self.cohort.y / total)


def estimation_surface(cohort: Cohort, family: RegimeFamily, grid, propensity, weights=None) -> np.ndarray:
    """IPW values on ``grid``; points without adherent patients are NaN."""
    est = ValueEstimator(cohort, family, propensity, weights)
    grid = np.asarray(grid, dtype=float).reshape(-1, family.dim)
    out = np.empty(len(grid))
    for j, psi in enumerate(grid):
        try:
            out[j] = est(psi)
        except NoAdherentPatients:
            out[j] = np.nan
    return out


__all__ = [
    "P_MIN",
    "Cohort",
    "JointThreshold",
    "KnownPropensity",
    "LinearSharedRule",
    "PropensityModel",
    "RegimeFamily",
    "ThresholdPerStage",
    "Trajectory",
    "ValueEstimator",
    "adherence",
    "bayesian_bootstrap_weights",
    "estimation_surface",
    "fit_propensity",
    "history_features",
    "intercept_only",
    "ipw_value",
    "is_adherent",
    "logistic_irls",
]
