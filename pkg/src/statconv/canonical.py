"""Canonical-form values and their closed statistical algebra.

A canonical form represents one scalar quantity as

    mean + sum_k sens[k] * X_k + noise * R

where the X_k are shared standard-normal basis components and R is a
private standard-normal noise term. Sums, scalings and (moment-matched)
maxima of canonical forms are again canonical forms, so whole tensors of
them can be pushed through linear and max-type network layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

# Below this spread the max of two forms degenerates to a hard max.
THETA_EPS = 1e-9
# Below this output-noise level the max backward falls back to pass-through.
NOISE_EPS = 1e-9

SQRT_2PI = math.sqrt(2.0 * math.pi)


def std_normal_pdf(x):
    """Standard normal density, vectorized."""
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def std_normal_cdf(x):
    """Standard normal CDF via the erf-based ndtr (abs error < 1e-15)."""
    return ndtr(x)


@dataclass(frozen=True)
class BasisContext:
    """Dimensions shared by every form in one computation graph.

    m  -- number of shared basis components
    N  -- number of frames the basis was extracted from
    """

    m: int
    N: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError(f"basis dimension must be >= 0, got {self.m}")
        if self.N < 1:
            raise ValueError(f"extraction span must be >= 1, got {self.N}")
        if self.m > self.N:
            raise ValueError(f"basis dimension {self.m} exceeds span {self.N}")


@dataclass(frozen=True)
class CanonicalForm:
    """One statistical value: mean, basis sensitivities, private noise weight."""

    mean: float
    sens: np.ndarray = field(default_factory=lambda: np.zeros(0))
    noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sens", np.asarray(self.sens, dtype=np.float64))
        object.__setattr__(self, "noise", float(self.noise))
        if self.noise < 0:
            raise ValueError(f"noise weight must be >= 0, got {self.noise}")
        if not np.all(np.isfinite(self.sens)) or not math.isfinite(self.mean) \
                or not math.isfinite(self.noise):
            raise ValueError("canonical form fields must be finite")

    @property
    def m(self) -> int:
        return self.sens.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CanonicalForm):
            return NotImplemented
        return (self.mean == other.mean and self.noise == other.noise
                and np.array_equal(self.sens, other.sens))


def _check_same_basis(a: CanonicalForm, b: CanonicalForm):
    if a.m != b.m:
        raise ValueError(f"basis dimension mismatch: {a.m} vs {b.m}")


def variance(d: CanonicalForm) -> float:
    """Total variance: basis components are unit-variance and independent."""
    return float(np.dot(d.sens, d.sens) + d.noise * d.noise)


def covariance(a: CanonicalForm, b: CanonicalForm) -> float:
    """Covariance through the shared basis; private noise contributes 0."""
    _check_same_basis(a, b)
    return float(np.dot(a.sens, b.sens))


def scale(d: CanonicalForm, w: float) -> CanonicalForm:
    """Multiply by a deterministic weight. Noise keeps its sign convention."""
    return CanonicalForm(w * d.mean, w * d.sens, abs(w) * d.noise)


def weighted_sum(ds, ws) -> CanonicalForm:
    """Weighted sum of forms: linear in mean/sens, quadrature in noise."""
    if len(ds) == 0 or len(ds) != len(ws):
        raise ValueError(f"need equal nonzero lengths, got {len(ds)} forms, "
                         f"{len(ws)} weights")
    m = ds[0].m
    for d in ds:
        if d.m != m:
            raise ValueError("basis dimension mismatch in weighted_sum")
    mean = sum(w * d.mean for d, w in zip(ds, ws))
    sens = np.zeros(m)
    for d, w in zip(ds, ws):
        sens += w * d.sens
    noise = math.sqrt(sum((w * d.noise) ** 2 for d, w in zip(ds, ws)))
    return CanonicalForm(mean, sens, noise)


def _theta_beta(a: CanonicalForm, b: CanonicalForm):
    """Spread theta and standardized mean gap beta of a - b.

    Uses the covariance form theta^2 = var(a) + var(b) - 2 cov(a, b),
    which is the variance of the difference for correlated forms.
    Parameter-identical forms denote the same variable (their private
    noise is shared, not independent), so their spread is zero.
    """
    if a == b:
        return 0.0, None
    theta_sq = variance(a) + variance(b) - 2.0 * covariance(a, b)
    theta = math.sqrt(max(theta_sq, 0.0))
    if theta < THETA_EPS:
        return theta, None
    return theta, (a.mean - b.mean) / theta


def _tie_tightness(a_mean: float, b_mean: float) -> float:
    if a_mean > b_mean:
        return 1.0
    if a_mean < b_mean:
        return 0.0
    return 0.5


def tightness(a: CanonicalForm, b: CanonicalForm) -> float:
    """Probability that a exceeds b. Degenerate spread falls back to means."""
    _check_same_basis(a, b)
    theta, beta = _theta_beta(a, b)
    if beta is None:
        return _tie_tightness(a.mean, b.mean)
    return float(std_normal_cdf(beta))


def max2(a: CanonicalForm, b: CanonicalForm):
    """Moment-matched maximum of two forms.

    Returns (max form, tightness t). Mean and variance match the exact
    first two moments of max(a, b) for jointly Gaussian inputs; the
    sensitivities blend with weight t and the residual variance goes to
    the private noise term (floored at zero against rounding).
    """
    _check_same_basis(a, b)
    theta, beta = _theta_beta(a, b)
    if beta is None:
        t = _tie_tightness(a.mean, b.mean)
        return (a if a.mean >= b.mean else b), t
    t = float(std_normal_cdf(beta))
    phi = float(std_normal_pdf(beta))
    va, vb = variance(a), variance(b)
    mean = a.mean * t + b.mean * (1.0 - t) + theta * phi
    second = (va + a.mean ** 2) * t + (vb + b.mean ** 2) * (1.0 - t) \
        + (a.mean + b.mean) * theta * phi
    var_max = second - mean * mean
    sens = t * a.sens + (1.0 - t) * b.sens
    noise = math.sqrt(max(var_max - float(np.dot(sens, sens)), 0.0))
    return CanonicalForm(mean, sens, noise), t


def max_n(ds):
    """Left fold of max2 over the forms in listed order.

    Returns (max form, tightness chain); an input of length p yields a
    chain of p - 1 tightness values, consumed in reverse by the backward
    pass of max-pooling.
    """
    if len(ds) == 0:
        raise ValueError("max_n needs at least one form")
    acc = ds[0]
    chain = []
    for d in ds[1:]:
        acc, t = max2(acc, d)
        chain.append(t)
    return acc, chain


def evaluate(d: CanonicalForm, x) -> float:
    """Substitute basis realizations x; private noise is taken at its mean 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d.m,):
        raise ValueError(f"realization length {x.shape} does not match "
                         f"basis dimension {d.m}")
    return float(d.mean + np.dot(d.sens, x))


def sample(d: CanonicalForm, basis_draws: np.ndarray, noise_draws: np.ndarray):
    """Realizations of d given standard-normal draws.

    basis_draws: (m, n) shared basis samples; noise_draws: (n,) private
    samples. Used by the Monte Carlo oracles.
    """
    if d.m:
        mix = d.sens @ basis_draws
    else:
        mix = 0.0
    return d.mean + mix + d.noise * noise_draws
