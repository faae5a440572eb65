"""Seeded probability kernels used by the simulator, the likelihood and the sampler.

Module-level ``*_logpdf`` functions are vectorized and never raise: they return
``-inf`` off the support, including for degenerate truncation intervals, so the
likelihood can call them on any proposed state. The distribution classes wrap
them with parameter validation and add samplers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from vlsero.errors import SupportError

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_2_OVER_PI = float(np.log(2.0 / np.pi))


def make_rng(seed, *stream) -> np.random.Generator:
    """Generator for the stream ``(seed, *stream)``.

    Identical keys give identical draws on every platform; distinct stream ids
    give statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))


def normal_logpdf(x, mu, sigma):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return -0.5 * z * z - 0.5 * LOG_2PI - np.log(sigma)


def log_ndtr_diff(a, b):
    """log(Phi(b) - Phi(a)) for a <= b, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_lo = special.log_ndtr(lo)
    log_hi = special.log_ndtr(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    return np.where(hi > lo, out, -np.inf)


def truncnorm_logpdf(x, mu, sigma, lo, hi):
    """Normal(mu, sigma) density renormalized to [lo, hi]; -inf if lo >= hi or x is outside."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    with np.errstate(invalid="ignore"):
        valid = (lo < hi) & (x >= lo) & (x <= hi)
        a = np.where(valid, (lo - mu) / sigma, -1.0)
        b = np.where(valid, (hi - mu) / sigma, 1.0)
        out = normal_logpdf(x, mu, sigma) - log_ndtr_diff(a, b)
    return np.where(valid, out, -np.inf)


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) + special.xlogy(shape - 1.0, x) - rate * x - special.gammaln(shape)
    return np.where(x >= 0, out, -np.inf)


def gamma_cdf(x, shape, rate):
    """Gamma(shape, rate) CDF through the regularized lower incomplete gamma function.

    ``scipy.special.gammainc`` switches between the power series (x < shape + 1)
    and the continued fraction, which keeps double precision on both sides of
    the mode. Negative times map to 0.
    """
    x = np.asarray(x, dtype=float)
    return special.gammainc(shape, rate * np.maximum(x, 0.0))


def gamma_sf(x, shape, rate):
    """1 - gamma_cdf, computed directly so the upper tail keeps full precision."""
    x = np.asarray(x, dtype=float)
    return special.gammaincc(shape, rate * np.maximum(x, 0.0))


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(a - 1.0, x) + special.xlog1py(b - 1.0, -x) - special.betaln(a, b)
    return np.where((x > 0) & (x < 1), out, -np.inf)


def half_cauchy_logpdf(x, scale):
    x = np.asarray(x, dtype=float)
    out = LOG_2_OVER_PI - np.log(scale) - np.log1p((x / scale) ** 2)
    return np.where(x >= 0, out, -np.inf)


def bernoulli_logit_logpmf(k, logit):
    """log P(K = k) for K ~ Bernoulli(expit(logit))."""
    k = np.asarray(k)
    return np.where(k.astype(bool), special.log_expit(logit), special.log_expit(-np.asarray(logit)))


def mvnormal3_logpdf(x, mean, cov):
    """Row-wise MVN log density for (n, 3) arrays sharing one covariance.

    Raises :class:`SupportError` when ``cov`` is not positive-definite, which
    the sampler treats as a rejected proposal.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    resid = x - np.atleast_2d(mean)
    try:
        chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SupportError("covariance is not positive-definite") from exc
    z = linalg.solve_triangular(chol, resid.T, lower=True)
    dim = x.shape[1]
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * dim * LOG_2PI


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def logpdf(self, x):
        return normal_logpdf(x, self.mu, self.sigma)

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.sigma, size=size)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sigma) truncated to [lo, hi]; either bound may be infinite."""

    mu: float
    sigma: float
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.lo < self.hi:
            raise ValueError(f"empty truncation interval [{self.lo}, {self.hi}]")

    def logpdf(self, x):
        return truncnorm_logpdf(x, self.mu, self.sigma, self.lo, self.hi)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        a = (self.lo - self.mu) / self.sigma
        z = (x - self.mu) / self.sigma
        b = (self.hi - self.mu) / self.sigma
        with np.errstate(divide="ignore"):
            return np.exp(log_ndtr_diff(a, z) - log_ndtr_diff(a, b))

    def sample(self, rng, size=None):
        out = truncnorm_sample(rng, self.mu, self.sigma, self.lo, self.hi, size=size)
        return float(out) if size is None else out


def truncnorm_sample(rng, mu, sigma, lo=-np.inf, hi=np.inf, size=None):
    """Inverse-CDF draws on [lo, hi], broadcasting over the parameters.

    Works in log space on the lower tail (reflecting intervals that lie above
    the mean), so intervals far out in either tail stay accurate.
    """
    mu, sigma, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sigma, lo, hi)))
    shape = mu.shape if size is None else size
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    flip = a > 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    log_a = special.log_ndtr(a)
    log_mass = log_ndtr_diff(a, b)
    u = rng.uniform(size=shape)
    with np.errstate(divide="ignore"):
        log_p = np.logaddexp(log_a, np.log(u) + log_mass)
    z = special.ndtri_exp(np.minimum(log_p, 0.0))
    z = np.where(flip, -z, z)
    return np.clip(mu + sigma * z, lo, hi)


@dataclass(frozen=True)
class Gamma:
    """Gamma law with shape ``shape`` and rate ``rate`` (mean shape / rate)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("shape and rate must be positive")

    @property
    def mean(self):
        return self.shape / self.rate

    def logpdf(self, x):
        return gamma_logpdf(x, self.shape, self.rate)

    def cdf(self, x):
        return gamma_cdf(x, self.shape, self.rate)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta shapes must be positive")

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    def logpdf(self, x):
        return beta_logpdf(x, self.a, self.b)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)


@dataclass(frozen=True)
class HalfCauchy:
    """Cauchy(0, scale) folded at zero; used for scale parameters."""

    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def logpdf(self, x):
        return half_cauchy_logpdf(x, self.scale)

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return 2.0 / np.pi * np.arctan(x / self.scale)

    def sample(self, rng, size=None):
        u = rng.uniform(size=size)
        return self.scale * np.tan(0.5 * np.pi * u)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")

    def logpmf(self, k):
        k = np.asarray(k)
        with np.errstate(divide="ignore"):
            return np.where(k.astype(bool), np.log(self.p), np.log1p(-self.p))

    def sample(self, rng, size=None):
        return (rng.uniform(size=size) < self.p).astype(int)


class MultivariateNormal3:
    """Three-dimensional normal law, density and sampling through the Cholesky factor."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float).reshape(3)
        self.cov = np.asarray(cov, dtype=float).reshape(3, 3)
        try:
            self.chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise SupportError("covariance is not positive-definite") from exc

    def logpdf(self, x):
        out = mvnormal3_logpdf(x, self.mean, self.cov)
        return out[0] if np.ndim(x) == 1 else out

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        z = rng.standard_normal((n, 3))
        draws = self.mean + z @ self.chol.T
        return draws[0] if size is None else draws


class InverseWishart:
    """Inverse-Wishart law IW(nu, scale) over 3x3 covariance matrices."""

    def __init__(self, nu, scale):
        self.nu = float(nu)
        self.scale = np.asarray(scale, dtype=float)
        if self.nu <= self.scale.shape[0] - 1:
            raise ValueError("nu must exceed dimension - 1")
        try:
            np.linalg.cholesky(self.scale)
        except np.linalg.LinAlgError as exc:
            raise SupportError("inverse-Wishart scale is not positive-definite") from exc

    @property
    def mean(self):
        return self.scale / (self.nu - self.scale.shape[0] - 1.0)

    def logpdf(self, x):
        try:
            np.linalg.cholesky(np.asarray(x, dtype=float))
        except np.linalg.LinAlgError:
            return -np.inf
        return float(stats.invwishart.logpdf(x, df=self.nu, scale=self.scale))

    def sample(self, rng):
        draw = np.asarray(stats.invwishart.rvs(df=self.nu, scale=self.scale, random_state=rng), dtype=float)
        return 0.5 * (draw + draw.T)
