"""Gaussian-process surrogates: designs, likelihood, hyperparameter fitting, posteriors.

Inputs are mapped affinely onto the unit hypercube before any kernel
evaluation, so length scales stored on a :class:`GpFit` are in unit-cube
units. The constant prior mean is always profiled out by generalized least
squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lapack
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import FitError, NumericalError
from .kernels import (
    JITTER_MAX,
    JITTER_START,
    KernelSpec,
    _check_family,
    abs_differences,
    cholesky_jitter,
    covariance_from_differences,
    cross_covariance,
    matern_correlation,
    matern_log_derivative,
)

INTERPOLATING = "interpolating"
HOMOSKEDASTIC = "homoskedastic"
HETEROSKEDASTIC = "heteroskedastic"
NOISE_MODES = (INTERPOLATING, HOMOSKEDASTIC, HETEROSKEDASTIC)

LOG_2PI = math.log(2.0 * math.pi)

# search box, on the unit-cube scale and relative to the sample variance of y
THETA_BOUNDS = (1e-3, 10.0)
SIGNAL_BOUNDS = (1e-4, 1e4)
NOISE_BOUNDS = (1e-8, 1e2)
# multi-start seeds are drawn from this narrower box
THETA_START = (0.05, 2.0)
# noisy fits: length scales below this multiple of the median nearest-neighbour
# distance make the kernel white on the design, indistinguishable from noise
NN_THETA_FRACTION = 2.0
SIGNAL_START = (0.1, 10.0)
NOISE_START = (1e-3, 1.0)


@dataclass(frozen=True)
class Design:
    """Computer-experiment data: regime indices and their estimated values.

    Parameters
    ----------
    points : array_like, shape (m, D)
    values : array_like, shape (m,)
    tags : tuple of str, optional
        Provenance of each row, e.g. ``"design"`` or ``"infill"``.
    """

    points: np.ndarray
    values: np.ndarray
    tags: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != vals.shape[0]:
            raise ValueError(f"points {pts.shape} and values {vals.shape} disagree")
        if pts.shape[0] < 1:
            raise ValueError("a design needs at least one point")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise ValueError("design entries must be finite")
        tags = tuple(self.tags) if self.tags else ("design",) * pts.shape[0]
        if len(tags) != pts.shape[0]:
            raise ValueError("one tag per design point is required")
        pts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tags", tags)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, point, value, tag="infill") -> Design:
        point = np.asarray(point, dtype=float).reshape(1, self.dim)
        return Design(
            np.vstack([self.points, point]),
            np.append(self.values, float(value)),
            self.tags + (tag,),
        )

    def min_separation(self) -> float:
        """Smallest Euclidean distance between two rows (``inf`` if m == 1)."""
        if self.m < 2:
            return math.inf
        d = np.sqrt(((self.points[:, None, :] - self.points[None, :, :]) ** 2).sum(-1))
        d[np.diag_indices_from(d)] = np.inf
        return float(d.min())


@dataclass(frozen=True)
class UnitCube:
    """Affine map of a box onto ``[0, 1]^D``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("invalid bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_bounds(cls, bounds):
        b = np.atleast_2d(np.asarray(bounds, dtype=float))
        return cls(b[:, 0], b[:, 1])

    @classmethod
    def from_points(cls, points):
        pts = np.atleast_2d(points)
        return cls(pts.min(0), pts.max(0))

    @property
    def scale(self) -> np.ndarray:
        s = self.upper - self.lower
        return np.where(s > 0, s, 1.0)

    def to_unit(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.lower.size)
        return (X - self.lower) / self.scale

    def from_unit(self, U):
        return np.asarray(U, dtype=float) * self.scale + self.lower


@dataclass(frozen=True)
class NoiseSpec:
    """Observation-noise model of a GP fit.

    ``variance`` is the homoskedastic noise variance. For heteroskedastic
    fits ``noise_sd`` holds the per-design-point noise standard deviations,
    ``residual_fit`` the GP fitted to absolute residuals (used to predict the
    noise at new points), ``q`` the residual power and ``floor`` the lower
    bound applied to every predicted standard deviation.
    """

    mode: str = INTERPOLATING
    variance: float = 0.0
    noise_sd: np.ndarray | None = None
    residual_fit: GpFit | None = None
    q: int = 1
    floor: float = 0.0

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.variance < 0:
            raise ValueError("noise variance must be nonnegative")
        if self.q < 1:
            raise ValueError("q must be a positive integer")
        if self.mode == HETEROSKEDASTIC:
            if self.noise_sd is None:
                raise ValueError("heteroskedastic noise needs per-point standard deviations")
            sd = np.asarray(self.noise_sd, dtype=float).reshape(-1)
            if np.any(sd < 0) or np.any(sd < self.floor):
                raise ValueError("noise standard deviations must be >= floor >= 0")
            sd.flags.writeable = False
            object.__setattr__(self, "noise_sd", sd)

    @classmethod
    def interpolating(cls):
        return cls(INTERPOLATING)

    @classmethod
    def homoskedastic(cls, variance):
        return cls(HOMOSKEDASTIC, variance=float(variance))

    @classmethod
    def heteroskedastic(cls, noise_sd, residual_fit=None, q=1, floor=0.0):
        return cls(HETEROSKEDASTIC, noise_sd=noise_sd, residual_fit=residual_fit, q=q, floor=floor)

    def diagonal(self, m: int) -> np.ndarray:
        """Diagonal of the noise covariance S at the m design points."""
        if self.mode == INTERPOLATING:
            return np.zeros(m)
        if self.mode == HOMOSKEDASTIC:
            return np.full(m, self.variance)
        if self.noise_sd.shape[0] != m:
            raise ValueError(f"noise has {self.noise_sd.shape[0]} entries, design has {m}")
        return self.noise_sd**2


@dataclass(frozen=True)
class HyperPrior:
    """Log-normal priors for MAP estimation.

    ``theta_log_mean`` and ``theta_log_sd`` are scalars or per-dimension
    arrays and refer to length scales on the unit-cube scale. ``signal`` and
    ``noise`` are optional ``(log_mean, log_sd)`` pairs for the signal and
    noise variances in the units of the responses.
    """

    theta_log_mean: object = math.log(0.25)
    theta_log_sd: object = 1.0
    signal: tuple | None = None
    noise: tuple | None = None

    def __post_init__(self):
        sds = [np.atleast_1d(self.theta_log_sd)]
        for pair in (self.signal, self.noise):
            if pair is not None:
                sds.append(np.atleast_1d(pair[1]))
        if any(np.any(np.asarray(s, dtype=float) <= 0) for s in sds):
            raise ValueError("log-sd of a log-normal prior must be positive")

    def log_density(self, log_theta, log_signal, log_noise=None) -> float:
        # densities of the log-parameters (normal), which is what the search moves in
        def lnorm(x, mu, sd):
            x, mu, sd = np.broadcast_arrays(np.asarray(x, float), np.asarray(mu, float), np.asarray(sd, float))
            return float(np.sum(-0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * LOG_2PI))

        lp = lnorm(log_theta, self.theta_log_mean, self.theta_log_sd)
        if self.signal is not None:
            lp += lnorm(log_signal, *self.signal)
        if self.noise is not None and log_noise is not None:
            lp += lnorm(log_noise, *self.noise)
        return lp


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class GpFit:
    """A conditioned GP. Immutable; use :func:`posterior_f` / :func:`posterior_v`.

    ``kernel`` length scales are on the unit-cube scale of ``transform``;
    ``points_unit`` are the transformed design points.
    """

    kernel: KernelSpec
    noise: NoiseSpec
    prior_mean: float
    chol: np.ndarray
    dual_weights: np.ndarray
    log_marginal_likelihood: float
    transform: UnitCube
    design: Design
    points_unit: np.ndarray
    jitter: float
    objective: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.kernel.family

    @property
    def length_scales_original(self) -> np.ndarray:
        """Length scales in the units of the regime index."""
        return np.asarray(self.kernel.length_scales) * self.transform.scale

    @property
    def is_regressive(self) -> bool:
        return self.noise.mode != INTERPOLATING

    def covariance_matrix(self) -> np.ndarray:
        """K + S + jitter, reconstructed from the stored factor."""
        return self.chol @ self.chol.T

    def posterior_f(self, points, full_cov=False) -> PosteriorMoments:
        return posterior_f(self, points, full_cov=full_cov)

    def posterior_v(self, points, noise_variance=None) -> PosteriorMoments:
        return posterior_v(self, points, noise_variance)

    def noise_variance_at(self, points) -> np.ndarray:
        """Predicted observation-noise variance at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float).reshape(-1, self.design.dim))
        n = self.noise
        if n.mode == INTERPOLATING:
            return np.zeros(len(pts))
        if n.mode == HOMOSKEDASTIC:
            return np.full(len(pts), n.variance)
        if n.residual_fit is None:
            return np.full(len(pts), float(np.mean(n.noise_sd**2)))
        mu_e = posterior_f(n.residual_fit, pts).mean
        sd = residual_scale(n.q) * np.maximum(mu_e, n.floor)
        return sd**2


def residual_scale(q: int) -> float:
    """Correction factor relating E|r|^q to the noise standard deviation."""
    if q != 1:
        raise NotImplementedError("only q = 1 is supported")
    return math.sqrt(math.pi / 2.0)


def _solve_lower(L, B):
    x, info = lapack.dtrtrs(L, B, lower=1)
    if info != 0:
        raise NumericalError("triangular solve failed")
    return x


def _chol_solve(L, B):
    x, info = lapack.dpotrs(L, B, lower=1)
    if info != 0:
        raise NumericalError("Cholesky solve failed")
    return x


def _gls_terms(L, y):
    """Profiled constant mean and whitened residual for lower factor L."""
    m = y.shape[0]
    W = _solve_lower(L, np.column_stack([np.ones(m), y]))
    a1, ay = W[:, 0], W[:, 1]
    mu0 = float(a1 @ ay / (a1 @ a1))
    return mu0, ay - mu0 * a1


def _lml_from_factor(L, white_resid):
    m = white_resid.shape[0]
    return float(
        -0.5 * white_resid @ white_resid - np.log(np.diag(L)).sum() - 0.5 * m * LOG_2PI
    )


def log_marginal_likelihood(design: Design, prior_mean: float, kernel: KernelSpec, noise: NoiseSpec) -> float:
    """Log density of the responses under N(prior_mean * 1, K + S).

    The kernel is evaluated directly on ``design.points`` (no unit-cube map).
    """
    K = cross_covariance(kernel, design.points, design.points)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += noise.diagonal(design.m)
    L, _ = cholesky_jitter(K, kernel.signal_variance, name="K + S")
    r = _solve_lower(L, (design.values - prior_mean)[:, None])[:, 0]
    return _lml_from_factor(L, r)


class _Objective:
    """Negative (penalized) log marginal likelihood over log-parameters.

    Parameter vector: log theta_d (D entries), log(sigma_f^2 / v), and for
    homoskedastic fits log(gamma^2 / v), where v is the sample variance of y.
    Working relative to v makes the search invariant to rescaling y.
    """

    def __init__(self, X, y, family, mode, fixed_noise_diag=None, prior=None):
        self.X = X
        self.y = y
        self.m, self.D = X.shape
        self.family = family
        self.mode = mode
        self.diffs = abs_differences(X, X)
        v = float(np.var(y)) if self.m > 1 else 0.0
        self.v = v if v > 0 else max(float(np.mean(y**2)), 1.0)
        self.fixed = np.zeros(self.m) if fixed_noise_diag is None else np.asarray(fixed_noise_diag)
        self.prior = prior
        self.n_params = self.D + 1 + (mode == HOMOSKEDASTIC)
        self.idx = np.diag_indices(self.m)
        self.n_evals = 0
        self.theta_min = THETA_BOUNDS[0]
        if mode != INTERPOLATING and self.m > 1:
            d = np.sqrt(np.sum(self.diffs**2, axis=0))
            d[self.idx] = np.inf
            nn = float(np.median(d.min(axis=1)))
            self.theta_min = float(np.clip(NN_THETA_FRACTION * nn, THETA_BOUNDS[0], THETA_START[0]))

    def bounds(self):
        b = [(math.log(self.theta_min), math.log(THETA_BOUNDS[1]))] * self.D + [tuple(np.log(SIGNAL_BOUNDS))]
        if self.mode == HOMOSKEDASTIC:
            b.append(tuple(np.log(NOISE_BOUNDS)))
        return b

    def start_box(self):
        b = [(math.log(max(THETA_START[0], self.theta_min)), math.log(THETA_START[1]))] * self.D
        b.append(tuple(np.log(SIGNAL_START)))
        if self.mode == HOMOSKEDASTIC:
            b.append(tuple(np.log(NOISE_START)))
        return np.array(b)

    def unpack(self, p):
        theta = np.exp(p[: self.D])
        s2 = self.v * math.exp(p[self.D])
        g2 = self.v * math.exp(p[self.D + 1]) if self.mode == HOMOSKEDASTIC else 0.0
        return theta, s2, g2

    def _prior_terms(self, p):
        theta, s2, g2 = self.unpack(p)
        lt, ls = np.log(theta), math.log(s2)
        ln = math.log(g2) if self.mode == HOMOSKEDASTIC else None
        val = self.prior.log_density(lt, ls, ln)
        grad = np.zeros(self.n_params)
        pr = self.prior
        grad[: self.D] = -(lt - np.asarray(pr.theta_log_mean, float)) / np.asarray(pr.theta_log_sd, float) ** 2
        if pr.signal is not None:
            grad[self.D] = -(ls - pr.signal[0]) / pr.signal[1] ** 2
        if pr.noise is not None and ln is not None:
            grad[self.D + 1] = -(ln - pr.noise[0]) / pr.noise[1] ** 2
        return val, grad

    def __call__(self, p):
        return self.evaluate(p, grad=False)

    def value_and_grad(self, p):
        return self.evaluate(p, grad=True)

    def evaluate(self, p, grad=False):
        self.n_evals += 1
        theta, s2, g2 = self.unpack(p)
        corr = [matern_correlation(self.diffs[d] / theta[d], self.family) for d in range(self.D)]
        R = corr[0]
        for c in corr[1:]:
            R = R * c
        K = s2 * R
        C = K.copy()
        C[self.idx] = s2 + g2 + self.fixed
        try:
            L, _ = cholesky_jitter(C, s2, name="K + S")
            mu0, w = _gls_terms(L, self.y)
        except NumericalError:
            return (1e300, np.zeros(self.n_params)) if grad else 1e300
        val = _lml_from_factor(L, w)
        g = None
        if grad:
            Cinv, info = lapack.dpotri(L, lower=1)
            if info != 0:
                raise NumericalError(f"covariance inverse failed (LAPACK info {info})")
            Cinv = np.tril(Cinv) + np.tril(Cinv, -1).T
            alpha = Cinv @ (self.y - mu0)
            A = np.outer(alpha, alpha) - Cinv
            g = np.empty(self.n_params)
            for d in range(self.D):
                dK = K * matern_log_derivative(self.diffs[d] / theta[d], self.family)
                g[d] = 0.5 * np.sum(A * dK)
            K[self.idx] = s2
            g[self.D] = 0.5 * np.sum(A * K)
            if self.mode == HOMOSKEDASTIC:
                g[self.D + 1] = 0.5 * g2 * np.trace(A)
        if self.prior is not None:
            pv, pg = self._prior_terms(p)
            val += pv
            if grad:
                g += pg
        if not np.isfinite(val):
            return (1e300, np.zeros(self.n_params)) if grad else 1e300
        return (-val, -g) if grad else -val


def _scrambled_starts(box, n, seed):
    sampler = qmc.Sobol(d=box.shape[0], scramble=True, seed=seed)
    u = sampler.random_base2(max(0, math.ceil(math.log2(n))))[:n] if n > 0 else np.empty((0, box.shape[0]))
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


OPTIMIZERS = ("l-bfgs-b", "nelder-mead")


def fit_hyperparams(
    design: Design,
    family: str = "matern52",
    noise_mode: str = HOMOSKEDASTIC,
    prior: HyperPrior | None = None,
    *,
    bounds=None,
    noise: NoiseSpec | None = None,
    n_starts: int = 8,
    seed: int = 0,
    warm_start=None,
    optimizer: str = "l-bfgs-b",
) -> GpFit:
    """Empirical-Bayes (or MAP, with ``prior``) fit of a Matérn GP.

    Maximizes the log marginal likelihood over log length scales, log signal
    variance and, for ``noise_mode="homoskedastic"``, log noise variance,
    from ``n_starts`` scrambled Sobol seeds plus any ``warm_start`` vectors.
    Each start is polished by L-BFGS-B with analytic gradients, or by
    Nelder-Mead with ``optimizer="nelder-mead"``. The constant prior mean is
    profiled by GLS at every candidate.

    For ``noise_mode="heteroskedastic"`` a fixed heteroskedastic ``noise``
    spec must be supplied; only the kernel parameters are searched.

    Parameters
    ----------
    bounds : array_like, shape (D, 2), optional
        Box mapped onto the unit cube. Defaults to the design's bounding box.
    warm_start : array_like, optional
        Extra starting parameter vectors (rows), e.g. ``fit.diagnostics["params"]``
        of a previous fit.
    """
    family = _check_family(family)
    if noise_mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {noise_mode!r}")
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if design.m < 2 and prior is None:
        raise ValueError("empirical Bayes needs at least two design points")
    transform = UnitCube.from_bounds(bounds) if bounds is not None else UnitCube.from_points(design.points)
    X = transform.to_unit(design.points)
    y = design.values

    fixed = None
    if noise_mode == HETEROSKEDASTIC:
        if noise is None or noise.mode != HETEROSKEDASTIC:
            raise ValueError("heteroskedastic fits need a fixed heteroskedastic NoiseSpec")
        fixed = noise.diagonal(design.m)
    obj = _Objective(X, y, family, noise_mode, fixed, prior)
    box = obj.bounds()
    lo, hi = np.array(box).T

    starts = _scrambled_starts(obj.start_box(), n_starts, seed) if n_starts > 0 else np.empty((0, obj.n_params))
    if prior is not None and len(starts):
        mode = np.broadcast_to(np.asarray(prior.theta_log_mean, dtype=float), (obj.D,))
        starts[0, : obj.D] = np.clip(mode, lo[: obj.D], hi[: obj.D])
    if warm_start is not None:
        extra = np.atleast_2d(np.asarray(warm_start, dtype=float))
        if extra.shape[1] == obj.n_params:
            starts = np.vstack([np.clip(extra, lo, hi), starts])
    if len(starts) == 0:
        raise ValueError("at least one start is required")

    start_values = []
    best_p, best_val = None, np.inf
    for p0 in starts:
        f0 = obj(p0)
        start_values.append(-f0)
        if optimizer == "l-bfgs-b":
            res = minimize(obj.value_and_grad, p0, jac=True, method="L-BFGS-B", bounds=box,
                           options={"maxiter": 200, "ftol": 1e-10, "gtol": 1e-6})
        else:
            res = minimize(obj, p0, method="Nelder-Mead", bounds=box,
                           options={"xatol": 1e-4, "fatol": 1e-7, "maxiter": 200 * obj.n_params})
        for val, p in ((float(res.fun), res.x), (f0, p0)):
            if val < best_val:
                best_val, best_p = val, np.array(p)
    if best_p is None or best_val >= 1e300:
        raise FitError(
            "hyperparameter search failed at every start",
            best_params=best_p,
            diagnostic="covariance not factorizable at any start",
        )

    theta, s2, g2 = obj.unpack(best_p)
    kernel = KernelSpec(family, theta, s2)
    if noise_mode == INTERPOLATING:
        noise_spec = NoiseSpec.interpolating()
    elif noise_mode == HOMOSKEDASTIC:
        noise_spec = NoiseSpec.homoskedastic(g2)
    else:
        noise_spec = noise
    fit = condition(design, kernel, noise_spec, transform)
    diagnostics = {
        "start_objectives": [float(v) for v in start_values],
        "objective": -float(best_val),
        "params": best_p.tolist(),
        "map": prior is not None,
        "n_evals": obj.n_evals,
    }
    return replace(fit, objective=-float(best_val), diagnostics=diagnostics)


def condition(design: Design, kernel: KernelSpec, noise: NoiseSpec, transform: UnitCube, prior_mean=None) -> GpFit:
    """Condition a GP with fixed hyperparameters on ``design``.

    ``kernel`` acts on unit-cube coordinates. When ``prior_mean`` is ``None``
    it is profiled by GLS.
    """
    X = transform.to_unit(design.points)
    y = design.values
    K = covariance_from_differences(kernel.family, kernel.length_scales, kernel.signal_variance, abs_differences(X, X))
    K[np.diag_indices_from(K)] = kernel.signal_variance + noise.diagonal(design.m)
    L, jitter = cholesky_jitter(K, kernel.signal_variance, name="K + S")
    if prior_mean is None:
        mu0, w = _gls_terms(L, y)
    else:
        mu0 = float(prior_mean)
        w = _solve_lower(L, (y - mu0)[:, None])[:, 0]
    alpha = _chol_solve(L, (y - mu0)[:, None])[:, 0]
    lml = _lml_from_factor(L, w)
    return GpFit(
        kernel=kernel, noise=noise, prior_mean=mu0, chol=L, dual_weights=alpha,
        log_marginal_likelihood=lml, transform=transform, design=design,
        points_unit=X, jitter=jitter, objective=lml,
    )


def posterior_f(fit: GpFit, points, full_cov: bool = False) -> PosteriorMoments:
    """Posterior of the latent value surface at ``points`` (original units)."""
    U = fit.transform.to_unit(np.asarray(points, dtype=float).reshape(-1, fit.design.dim))
    Ks = cross_covariance(fit.kernel, fit.points_unit, U)
    mean = fit.prior_mean + Ks.T @ fit.dual_weights
    V = _solve_lower(fit.chol, Ks)
    s2 = fit.kernel.signal_variance
    var = np.maximum(s2 - np.einsum("ij,ij->j", V, V), 0.0)
    cov = None
    if full_cov:
        cov = cross_covariance(fit.kernel, U, U) - V.T @ V
        cov = 0.5 * (cov + cov.T)
    return PosteriorMoments(mean, var, cov)


def posterior_v(fit: GpFit, points, noise_variance=None) -> PosteriorMoments:
    """Posterior predictive of a noisy estimate at ``points``.

    ``noise_variance`` defaults to the fit's own noise model: the fitted
    variance for homoskedastic fits, the residual-GP prediction for
    heteroskedastic ones and zero for interpolating ones.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, fit.design.dim)
    pf = posterior_f(fit, pts)
    if noise_variance is None:
        g2 = fit.noise_variance_at(pts)
    else:
        g2 = np.broadcast_to(np.asarray(noise_variance, dtype=float), pf.variance.shape)
        if np.any(g2 < 0):
            raise ValueError("noise variance must be nonnegative")
    return PosteriorMoments(pf.mean, pf.variance + g2)


def sample_posterior_paths(fit: GpFit, grid, n_paths: int, rng) -> np.ndarray:
    """Joint draws of the latent surface over ``grid``; shape (n_paths, len(grid))."""
    rng = np.random.default_rng(rng)
    pm = posterior_f(fit, grid, full_cov=True)
    L, _ = cholesky_jitter(pm.covariance, fit.kernel.signal_variance, name="posterior covariance")
    Z = rng.standard_normal((L.shape[0], int(n_paths)))
    return pm.mean[None, :] + (L @ Z).T


__all__ = [
    "HETEROSKEDASTIC",
    "HOMOSKEDASTIC",
    "INTERPOLATING",
    "JITTER_MAX",
    "JITTER_START",
    "Design",
    "GpFit",
    "HyperPrior",
    "NoiseSpec",
    "PosteriorMoments",
    "UnitCube",
    "condition",
    "fit_hyperparams",
    "log_marginal_likelihood",
    "posterior_f",
    "posterior_v",
    "residual_scale",
    "sample_posterior_paths",
]
