"""Simulation data-generating mechanisms and their true value functions.

``sim1``: one stage, ``x ~ U(-1.5, 1.5)``, ``z ~ Bern(expit(2x))`` and

    y = (x + 0.8) x (x - 0.9) z + z e1 + (1 - z) e2,  e1 ~ N(0, 0.25^2), e2 ~ N(0, 0.05^2).

The leading sign is chosen so that the rule "treat if x > 0.9" is the global
maximizer with value 0.165 and a second local maximum sits near -0.8.

``sim2``: two stages,

    x1 ~ N(0, 1.5^2),  z1 ~ Bern(expit(-x1 / 1.5)),
    x2 = 1.5 z1 + N(0, 1.5^2),  z2 ~ Bern(expit(-x2 / 1.5 + z1 / 1.5)),
    y = 0.2 x1 - 0.2 P1(x1) (1[x1 > 1.5] - z1) - 0.2 P2(x2) (1[x2 > 0.75] - z2) + e,

with quintic polynomials P1, P2 given in :func:`sim2_outcome` and
``e ~ N(0, 0.3^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dtr import Cohort, KnownPropensity, ThresholdPerStage

SCENARIOS = ("sim1", "sim2")
NOISE_VARIANTS = ("paper", "homoskedastic", "hetero_by_arm", "hetero_by_region")

SIM1_BOUNDS = np.array([[-1.5, 1.5]])
SIM2_BOUNDS = np.array([[-2.25, 1.8], [-2.25, 1.8]])


@dataclass(frozen=True)
class ScenarioSpec:
    id: str = "sim1"
    n: int = 500
    noise_variant: str = "paper"
    seed: int = 0

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.id!r}; valid scenarios: {', '.join(SCENARIOS)}")
        if self.noise_variant not in NOISE_VARIANTS:
            raise ValueError(
                f"unknown noise variant {self.noise_variant!r}; valid: {', '.join(NOISE_VARIANTS)}"
            )
        if self.n < 10:
            raise ValueError("n must be at least 10")


def family_for(scenario_id: str) -> ThresholdPerStage:
    if scenario_id == "sim1":
        return ThresholdPerStage(SIM1_BOUNDS)
    if scenario_id == "sim2":
        return ThresholdPerStage(SIM2_BOUNDS)
    raise ValueError(f"unknown scenario {scenario_id!r}; valid scenarios: {', '.join(SCENARIOS)}")


# ------------------------------------------------------------------ sim 1


def sim1_effect(x):
    """Treatment effect polynomial of ``sim1``."""
    x = np.asarray(x, dtype=float)
    return (x + 0.8) * x * (x - 0.9)


def _sim1_noise(x, z, variant, rng):
    n = len(x)
    if variant == "paper":
        sd = np.where(z == 1, 0.25, 0.05)
    elif variant == "homoskedastic":
        sd = np.full(n, 0.25)
    elif variant == "hetero_by_arm":
        # individual-level noise much larger in the treated arm: variances 5 and 0.5
        sd = np.where(z == 1, np.sqrt(5.0), np.sqrt(0.5))
    else:
        sd = 0.05 + 0.2 * np.abs(x)
    return sd * rng.standard_normal(n)


def sim1_propensity(x):
    return expit(2.0 * np.asarray(x, dtype=float))


def _generate_sim1(n, variant, rng):
    x = rng.uniform(-1.5, 1.5, n)
    z = (rng.uniform(size=n) < sim1_propensity(x)).astype(int)
    y = sim1_effect(x) * z + _sim1_noise(x, z, variant, rng)
    return Cohort(x[:, None, None], z[:, None], y)


def _sim1_antiderivative(x):
    # integral of x^3 - 0.1 x^2 - 0.72 x
    return x**4 / 4.0 - 0.1 * x**3 / 3.0 - 0.36 * x**2


def sim1_true_value(psi):
    """Closed-form value of "treat if x > psi" under x ~ U(-1.5, 1.5)."""
    psi = np.clip(np.asarray(psi, dtype=float), -1.5, 1.5)
    return (_sim1_antiderivative(1.5) - _sim1_antiderivative(psi)) / 3.0


# ------------------------------------------------------------------ sim 2


def _p1(x):
    return (x + 2.25) * (x + 1.5) * (x + 0.3) * (x - 1.8) * (x - 0.75)


def _p2(x):
    return (x + 2.1) * (x + 1.65) * (x + 0.3) * (x - 2.1) * (x - 1.35)


def sim2_outcome(x1, z1, x2, z2, eps):
    return (
        0.2 * x1
        - 0.2 * _p1(x1) * ((x1 - 1.5 > 0).astype(float) - z1)
        - 0.2 * _p2(x2) * ((x2 - 0.75 > 0).astype(float) - z2)
        + eps
    )


def sim2_propensity(x, z_prev, t):
    x = np.asarray(x, dtype=float)
    if t == 0:
        return expit(-x / 1.5)
    return expit(-x / 1.5 + np.asarray(z_prev, dtype=float) / 1.5)


def _sim2_noise(x1, z1, z2, variant, rng):
    n = len(x1)
    if variant in ("paper", "homoskedastic"):
        sd = np.full(n, 0.3)
    elif variant == "hetero_by_arm":
        sd = np.where(z2 == 1, np.sqrt(5.0), np.sqrt(0.5))
    else:
        sd = 0.1 + 0.2 * np.abs(x1)
    return sd * rng.standard_normal(n)


def _generate_sim2(n, variant, rng, regime_psi=None):
    x1 = rng.normal(0.0, 1.5, n)
    if regime_psi is None:
        z1 = (rng.uniform(size=n) < sim2_propensity(x1, None, 0)).astype(int)
    else:
        z1 = (x1 > regime_psi[0]).astype(int)
    x2 = 1.5 * z1 + rng.normal(0.0, 1.5, n)
    if regime_psi is None:
        z2 = (rng.uniform(size=n) < sim2_propensity(x2, z1, 1)).astype(int)
    else:
        z2 = (x2 > regime_psi[1]).astype(int)
    eps = _sim2_noise(x1, z1, z2, variant, rng)
    y = sim2_outcome(x1, z1, x2, z2, eps)
    return x1, z1, x2, z2, y


# ------------------------------------------------------------------ public


def generate_cohort(spec: ScenarioSpec) -> Cohort:
    """Draw ``spec.n`` patients from the scenario; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.id == "sim1":
        return _generate_sim1(spec.n, spec.noise_variant, rng)
    x1, z1, x2, z2, y = _generate_sim2(spec.n, spec.noise_variant, rng)
    x = np.stack([x1, x2], axis=1)[:, :, None]
    return Cohort(x, np.column_stack([z1, z2]), y)


def known_propensity(scenario_id: str) -> KnownPropensity:
    """The true treatment mechanism of a scenario."""
    if scenario_id == "sim1":
        return KnownPropensity(lambda c, t: sim1_propensity(c.x[:, 0, 0]))
    if scenario_id == "sim2":
        return KnownPropensity(
            lambda c, t: sim2_propensity(c.x[:, t, 0], c.z[:, t - 1] if t else None, t)
        )
    raise ValueError(f"unknown scenario {scenario_id!r}")


def monte_carlo_value(scenario_id: str, psi, n_draws: int = 10**6, seed: int = 12345,
                      noise_variant: str = "paper", chunk: int = 10**6):
    """Average outcome when the rule with index ``psi`` is enforced.

    Returns ``(value, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    total, total_sq, count = 0.0, 0.0, 0
    while count < n_draws:
        k = min(chunk, n_draws - count)
        if scenario_id == "sim1":
            x = rng.uniform(-1.5, 1.5, k)
            z = (x > psi[0]).astype(int)
            y = sim1_effect(x) * z + _sim1_noise(x, z, noise_variant, rng)
        elif scenario_id == "sim2":
            *_, y = _generate_sim2(k, noise_variant, rng, regime_psi=psi)
        else:
            raise ValueError(f"unknown scenario {scenario_id!r}")
        total += float(y.sum())
        total_sq += float((y * y).sum())
        count += k
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / (count - 1)
    return mean, float(np.sqrt(var / count))


def true_value(scenario_id: str, psi, n_draws: int = 10**6, seed: int = 12345):
    """True value of the rule ``psi``: ``(value, standard_error)``.

    sim1 uses the closed form (standard error 0); sim2 a
    Monte Carlo average over ``n_draws`` subjects with enforced treatments.
    """
    if scenario_id == "sim1":
        return float(sim1_true_value(np.atleast_1d(psi)[0])), 0.0
    if scenario_id == "sim2":
        return monte_carlo_value("sim2", psi, n_draws=n_draws, seed=seed)
    raise ValueError(f"unknown scenario {scenario_id!r}; valid scenarios: {', '.join(SCENARIOS)}")


__all__ = [
    "NOISE_VARIANTS",
    "SCENARIOS",
    "SIM1_BOUNDS",
    "SIM2_BOUNDS",
    "ScenarioSpec",
    "family_for",
    "generate_cohort",
    "known_propensity",
    "monte_carlo_value",
    "sim1_effect",
    "sim1_true_value",
    "sim2_outcome",
    "true_value",
]
