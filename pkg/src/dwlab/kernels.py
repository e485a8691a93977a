"""Analytic oracles: heat kernels, moment densities, total-mass laws.

Everything here is deterministic; the simulation modules are validated
against these values.  The covariance density of the measure-valued
process is evaluated through an exact one-dimensional reduction of its
defining time integral (see `covariance_density`).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _si
from scipy.special import gammaln

from .errors import DomainError, SingularityError, ToleranceError

__all__ = [
    "MAX_DIM",
    "MASS_CAP",
    "DiscreteMeasure",
    "check_dimension",
    "heat_kernel",
    "mean_density",
    "covariance_density",
    "covariance_total_integral",
    "total_mass_laplace",
    "extinction_probability",
    "bound_times",
    "log_time_factor",
]

MAX_DIM = 8
MASS_CAP = 1e6  # guards against absurd initial measures reaching the simulator

_TWO_PI = 2.0 * np.pi


def check_dimension(d) -> int:
    d = int(d)
    if not 1 <= d <= MAX_DIM:
        raise DomainError(f"dimension must be in [1, {MAX_DIM}], got {d}")
    return d


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite atomic measure on R^d: positions (n, d), strictly positive weights (n,)."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if pos.ndim != 2:
            raise DomainError("positions must be an (n, d) array")
        if w.shape != (pos.shape[0],):
            raise DomainError("weights must be one per atom")
        if pos.shape[0] > 0:
            check_dimension(pos.shape[1])
            if not np.all(np.isfinite(pos)):
                raise DomainError("non-finite atom position")
            if not (np.all(np.isfinite(w)) and np.all(w > 0)):
                raise DomainError("weights must be finite and strictly positive")
        if w.sum() >= MASS_CAP:
            raise DomainError(f"total mass {w.sum():g} exceeds cap {MASS_CAP:g}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def delta(cls, x, weight: float = 1.0) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return cls(x[None, :], np.array([weight]))

    @classmethod
    def empty(cls, d: int) -> "DiscreteMeasure":
        d = check_dimension(d)
        return cls(np.empty((0, d)), np.empty(0))


def _point(x, d=None):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if d is None:
        d = x.size
    d = check_dimension(d)
    if x.size != d:
        raise DomainError(f"point has {x.size} coordinates, expected {d}")
    return x, d


def heat_kernel(x, t: float, d: int | None = None) -> float:
    """Gaussian transition density p_t(x) = (2*pi*t)^(-d/2) exp(-|x|^2 / 2t)."""
    x, d = _point(x, d)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    return float((_TWO_PI * t) ** (-0.5 * d) * np.exp(-0.5 * float(x @ x) / t))


def mean_density(mu: DiscreteMeasure, x, t: float) -> float:
    """Intensity density of the process at time t: (mu * p_t)(x)."""
    x, d = _point(x, mu.d if mu.n_atoms else None)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if mu.n_atoms == 0:
        return 0.0
    sq = np.sum((mu.positions - x) ** 2, axis=1)
    return float((_TWO_PI * t) ** (-0.5 * d) * (mu.weights @ np.exp(-0.5 * sq / t)))


def _quad(f, a, b, quad_tol, what):
    val, err = _si.quad(f, a, b, epsabs=1e-300, epsrel=quad_tol, limit=200)
    if not np.isfinite(val) or (val != 0 and err > 10 * quad_tol * abs(val) + 1e-300):
        raise ToleranceError(f"{what}: quadrature error {err:g} at value {val:g}")
    return val


def _q_pair(xbar_sq: float, r_sq: float, t: float, d: int, quad_tol: float) -> float:
    # q_t(x1, x2) = 2^(1-d) * int_0^t p_{(t+s)/2}(xbar) p_{(t-s)/2}(r) ds
    # with x_i = xbar +- r.  The s -> t endpoint is singular for r near 0;
    # substituting v = |r|^2 / (t - s) gives a smooth exponentially damped
    # integrand on (|r|^2/t, inf).
    if r_sq == 0.0:
        if d >= 2:
            raise SingularityError("covariance density diverges on the diagonal for d >= 2")
        # d = 1: integrable endpoint; substitute u = sqrt(t - s)
        def g(u):
            a = 0.5 * (2.0 * t - u * u)
            return (_TWO_PI * a) ** -0.5 * np.exp(-0.5 * xbar_sq / a)

        return 2.0 / np.sqrt(np.pi) * _quad(g, 0.0, np.sqrt(t), quad_tol, "q diag")

    pref = 2.0 ** (1 - d) * np.pi ** (-0.5 * d) * r_sq ** (0.5 * (2 - d))

    def g(v):
        a = 0.5 * (2.0 * t - r_sq / v)  # = (t + s(v)) / 2
        pt = (_TWO_PI * a) ** (-0.5 * d) * np.exp(-0.5 * xbar_sq / a)
        return v ** (0.5 * d - 2.0) * np.exp(-v) * pt

    return pref * _quad(g, r_sq / t, np.inf, quad_tol, "q offdiag")


def covariance_density(
    mu: DiscreteMeasure, x1, x2, t: float, quad_tol: float = 1e-8
) -> float:
    """Covariance density (mu * q_t)(x1, x2) of the process at time t.

    Evaluated per atom through the exact one-dimensional reduction
    q_t(x1, x2) = 2^(1-d) * int_0^t p_{(t+s)/2}(xbar) p_{(t-s)/2}(r) ds
    with xbar = (x1+x2)/2, r = (x1-x2)/2 (Gaussian product identity applied
    to the defining convolution integral; cross-checked against direct
    multi-dimensional quadrature in the test suite).
    """
    x1, d = _point(x1, mu.d if mu.n_atoms else None)
    x2, _ = _point(x2, d)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    r = 0.5 * (x1 - x2)
    r_sq = float(r @ r)
    if r_sq == 0.0 and d >= 2:
        raise SingularityError("x1 == x2: covariance density diverges for d >= 2")
    total = 0.0
    for u, w in zip(mu.positions, mu.weights):
        xbar = 0.5 * (x1 + x2) - u
        total += w * _q_pair(float(xbar @ xbar), r_sq, t, d, quad_tol)
    return total


def _gauss_total(a: float, d: int, quad_tol: float) -> float:
    # int_{R^d} p_a(x) dx by radial quadrature (deliberately numeric: this is
    # the normalization check, not a shortcut through the known value 1)
    log_surf = np.log(2.0) + 0.5 * d * np.log(np.pi) - gammaln(0.5 * d)
    surf = np.exp(log_surf)  # area of the unit sphere S^{d-1}

    def g(r):
        return surf * r ** (d - 1) * (_TWO_PI * a) ** (-0.5 * d) * np.exp(-0.5 * r * r / a)

    return _quad(g, 0.0, np.inf, quad_tol, "gaussian total")


def covariance_total_integral(t: float, d: int, quad_tol: float = 1e-9) -> float:
    """Numeric evaluation of the full double integral of delta_0 * q_t over R^d x R^d.

    Uses the same reduction as `covariance_density` integrated in the
    midpoint/half-difference coordinates (Jacobian 2^d); the analytic value
    is 2t, asserted only in tests.
    """
    d = check_dimension(d)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")

    def g(s):
        return _gauss_total(0.5 * (t + s), d, quad_tol) * _gauss_total(
            0.5 * (t - s), d, quad_tol
        )

    return 2.0 * _quad(g, 0.0, t, quad_tol, "covariance total")


def total_mass_laplace(theta: float, t: float, m0: float) -> float:
    """E exp(-theta * total mass at t), started from total mass m0.

    Spatially flat solutions of the evolution equation reduce to the Riccati
    ODE v' = -v^2, giving v_t = theta / (1 + theta t).
    """
    if theta < 0:
        raise DomainError(f"theta must be nonnegative, got {theta}")
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if m0 < 0:
        raise DomainError(f"m0 must be nonnegative, got {m0}")
    return float(np.exp(-m0 * theta / (1.0 + theta * t)))


def extinction_probability(m0: float, t: float) -> float:
    """P{process started from total mass m0 is dead by time t} = exp(-m0/t)."""
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if m0 < 0:
        raise DomainError(f"m0 must be nonnegative, got {m0}")
    return float(np.exp(-m0 / t))


def log_time_factor(eps: float) -> float:
    """d = 2 time-inflation factor l(eps) for the hitting upper bound.

    The raw expression (1/(1+eps) - 4 log|log eps| / |log eps|)^(-1) is only
    useful once eps is tiny; it is clamped into [1, 1 + |log eps|^(-1/2)],
    the window the bound actually needs.
    """
    if not 0 < eps < 0.5:
        raise DomainError(f"eps must be in (0, 1/2), got {eps}")
    L = -np.log(eps)
    cap = 1.0 + L ** -0.5
    denom = 1.0 / (1.0 + eps) - 4.0 * np.log(L) / L
    if denom <= 0:
        return cap
    return float(min(max(1.0 / denom, 1.0), cap))


def bound_times(t: float, eps: float, d: int) -> float:
    """Adjusted time t_eps entering the hitting-probability upper bounds.

    d >= 3: t + eps^2.  d = 2: t * l(eps / sqrt(t)) with the log factor above.
    """
    d = check_dimension(d)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if d >= 3:
        if not 0 < eps < np.sqrt(t):
            raise DomainError(f"need 0 < eps < sqrt(t), got eps={eps}, t={t}")
        return t + eps * eps
    if d == 2:
        if not 0 < eps < 0.5 * np.sqrt(t):
            raise DomainError(f"need 0 < eps < sqrt(t)/2, got eps={eps}, t={t}")
        return t * log_time_factor(eps / np.sqrt(t))
    raise DomainError("bound_times is defined for d = 2 and d >= 3 only")
