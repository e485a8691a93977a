"""Shared statistical machinery: intervals, two-sample tests, rate fits."""

from dataclasses import dataclass

import numpy as np
from scipy import stats as _ss
from scipy.spatial.distance import cdist

from .errors import DomainError
from .seeds import generator

__all__ = [
    "EstimateWithCI",
    "TestReport",
    "mean_ci",
    "proportion_ci",
    "ks_two_sample",
    "energy_distance",
    "loglog_rate_fit",
]

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    stderr: float
    n_reps: int
    tag: str = ""
    ci_low: float = np.nan
    ci_high: float = np.nan
    flags: tuple = ()

    def __post_init__(self):
        if self.stderr < 0:
            raise DomainError("stderr must be nonnegative")
        if self.n_reps < 1:
            raise DomainError("n_reps must be >= 1")


@dataclass(frozen=True)
class TestReport:
    statistic: float
    p_value: float
    n_a: int
    n_b: int
    method: str

    def __post_init__(self):
        if not 0 <= self.p_value <= 1:
            raise DomainError("p_value must lie in [0, 1]")
        if min(self.n_a, self.n_b) < 2:
            raise DomainError("need at least 2 observations per arm")


def mean_ci(samples, tag: str = "") -> EstimateWithCI:
    """Sample mean with stderr = sd/sqrt(n) and a normal 95% interval."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise DomainError("mean_ci needs at least 2 samples")
    m = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(x.size))
    return EstimateWithCI(m, se, x.size, tag, m - _Z95 * se, m + _Z95 * se)


def proportion_ci(hits: int, n: int, tag: str = "") -> EstimateWithCI:
    """Wilson 95% score interval; stderr is the binomial sqrt(p(1-p)/n)."""
    if not 0 <= hits <= n or n < 1:
        raise DomainError(f"need 0 <= hits <= n, n >= 1; got hits={hits}, n={n}")
    p = hits / n
    z2 = _Z95 * _Z95
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = _Z95 * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    flags = ("zero-hits-upper-bound-only",) if hits == 0 else ()
    return EstimateWithCI(
        p,
        float(np.sqrt(p * (1 - p) / n)),
        n,
        tag,
        min(max(center - half, 0.0), p),
        max(min(center + half, 1.0), p),
        flags,
    )


def ks_two_sample(a, b) -> TestReport:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if min(a.size, b.size) < 20:
        raise DomainError("ks_two_sample needs >= 20 observations per arm")
    res = _ss.ks_2samp(a, b, method="asymp")
    return TestReport(float(res.statistic), float(res.pvalue), a.size, b.size, "ks")


def _energy_stat(dab_sum, daa_sum, dbb_sum, na, nb):
    return (
        2.0 * dab_sum / (na * nb)
        - 2.0 * daa_sum / (na * na)
        - 2.0 * dbb_sum / (nb * nb)
    )


def energy_distance(a, b, n_permutations: int = 400, seed: int = 0) -> TestReport:
    """Permutation test on the energy distance between two vector samples."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na, nb = a.shape[0], b.shape[0]
    if a.shape[1] != b.shape[1]:
        raise DomainError("energy_distance arms must share a feature dimension")
    if min(na, nb) < 20:
        raise DomainError("energy_distance needs >= 20 observations per arm")
    pooled = np.vstack([a, b])
    dist = cdist(pooled, pooled)
    idx = np.arange(na + nb)

    def stat(ia, ib):
        return _energy_stat(
            dist[np.ix_(ia, ib)].sum(),
            np.triu(dist[np.ix_(ia, ia)], 1).sum(),
            np.triu(dist[np.ix_(ib, ib)], 1).sum(),
            ia.size,
            ib.size,
        )

    observed = stat(idx[:na], idx[na:])
    rng = generator(seed, 0xE4E)
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(idx)
        if stat(perm[:na], perm[na:]) >= observed:
            exceed += 1
    p = (exceed + 1) / (n_permutations + 1)
    return TestReport(float(observed), float(p), na, nb, "energy")


def loglog_rate_fit(eps, err) -> tuple[float, float]:
    """Least-squares slope of log(err) on log(eps), with its standard error."""
    eps = np.asarray(eps, dtype=np.float64).ravel()
    err = np.asarray(err, dtype=np.float64).ravel()
    if eps.size != err.size or eps.size < 3:
        raise DomainError("loglog_rate_fit needs >= 3 (eps, err) pairs")
    if np.any(eps <= 0) or np.any(err <= 0):
        raise DomainError("loglog_rate_fit needs strictly positive inputs")
    x, y = np.log(eps), np.log(err)
    n = x.size
    sxx = np.sum((x - x.mean()) ** 2)
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    resid = y - (y.mean() + slope * (x - x.mean()))
    if n > 2:
        se = float(np.sqrt(resid @ resid / (n - 2) / sxx))
    else:
        se = 0.0
    return slope, se
