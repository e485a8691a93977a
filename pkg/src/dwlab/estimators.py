"""Monte Carlo estimators and theorem-level experiments.

Conventions shared by everything here:

* all randomness flows from cfg.seed through named substreams, so each
  estimator is a deterministic function of its arguments;
* bounds that hold only up to constant factors are reported as ratios and
  tested for boundedness/constancy, never as exact inequalities;
* proportions carry Wilson intervals; zero-hit results are flagged rather
  than silently reported as 0 +- 0.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError, DomainError
from .geometry import (
    Window,
    integrate,
    median_nn_distance,
    neighborhood_measure,
)
from .kernels import (
    DiscreteMeasure,
    bound_times,
    extinction_probability,
    heat_kernel,
    log_time_factor,
    mean_density,
)
from .runner import pmap
from .seeds import generator, substream
from .simulate import (
    ParticleState,
    SimConfig,
    poisson_forest,
    rescale_state,
    sample_cluster,
    simulate_dw,
    subcluster_tags,
)
from .stats import (
    EstimateWithCI,
    TestReport,
    energy_distance,
    ks_two_sample,
    mean_ci,
    proportion_ci,
)

__all__ = [
    "NormalizerTable",
    "CdEstimate",
    "hit_probability",
    "sandwich_check",
    "estimate_cd",
    "estimate_m",
    "m_table",
    "lebesgue_approximation",
    "lebesgue_experiment",
    "multiplicity_overcount",
    "extinction_curve",
    "scaling_check",
    "palm_local_profile",
    "occupancy_contrast",
    "local_law_universality",
    "forest_check",
]

_LOW_POWER_MIN = 50  # conditioning events below this get a low-power flag


def _hits(state: ParticleState, center, eps: float) -> bool:
    if state.n == 0:
        return False
    c = np.asarray(center, dtype=np.float64)
    return bool(np.any(np.sum((state.positions - c) ** 2, axis=1) < eps * eps))


def _ball_mass(state: ParticleState, center, r: float) -> float:
    if state.n == 0:
        return 0.0
    c = np.asarray(center, dtype=np.float64)
    sq = np.sum((state.positions - c) ** 2, axis=1)
    return float(np.count_nonzero(sq < r * r) * state.particle_mass)


# ---------------------------------------------------------------------------
# hitting probabilities


def hit_probability(
    mu: DiscreteMeasure,
    t: float,
    center,
    eps: float,
    cfg: SimConfig,
    n_reps: int,
    mode: str = "direct",
) -> EstimateWithCI:
    """P{process at time t charges the open ball B(center, eps)}.

    direct mode: hit frequency over full-process replications.  cluster
    mode: per-cluster hit probabilities mapped through the forest identity
    P{hit} = 1 - exp(-t^-1 sum_i w_i P_{x_i}{cluster hits}); much lower
    variance when the ball is small.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if n_reps < 100:
        raise DomainError("hit_probability needs n_reps >= 100")
    if mu.total_mass == 0:
        return EstimateWithCI(0.0, 0.0, n_reps, "hit-empty")
    if mode == "direct":
        hits = sum(
            pmap(lambda rep: _hits(simulate_dw(mu, t, cfg, rep), center, eps), n_reps)
        )
        return proportion_ci(hits, n_reps, "hit-direct")
    if mode != "cluster":
        raise DomainError(f"mode must be 'direct' or 'cluster', got {mode!r}")
    # clusters per atom, proportional to weight
    alloc = np.maximum(
        np.round(n_reps * mu.weights / mu.total_mass).astype(int), 1
    )
    theta = 0.0
    var_theta = 0.0
    total = 0
    any_hits = False
    for i in range(mu.n_atoms):
        n_i = int(alloc[i])
        hits = sum(
            pmap(
                lambda rep, i=i: _hits(
                    sample_cluster(
                        mu.positions[i], t, cfg, rep=(i << 24) + rep
                    ).particles,
                    center,
                    eps,
                ),
                n_i,
            )
        )
        p_i = hits / n_i
        any_hits = any_hits or hits > 0
        theta += mu.weights[i] * p_i / t
        var_theta += (mu.weights[i] / t) ** 2 * p_i * (1 - p_i) / n_i
        total += n_i
    est = 1.0 - np.exp(-theta)
    se = float(np.exp(-theta) * np.sqrt(var_theta))
    flags = () if any_hits else ("zero-hits-upper-bound-only",)
    return EstimateWithCI(
        float(est), se, total, "hit-cluster", est - 1.96 * se, est + 1.96 * se, flags
    )


def _cluster_hit_ci(
    mu: DiscreteMeasure, t: float, center, eps: float, cfg: SimConfig, n_clusters: int
) -> EstimateWithCI:
    # weighted per-cluster hit probability sum_i w_i P_{x_i}{cluster hits}
    alloc = np.maximum(
        np.round(n_clusters * mu.weights / mu.total_mass).astype(int), 1
    )
    val = 0.0
    var = 0.0
    total = 0
    for i in range(mu.n_atoms):
        n_i = int(alloc[i])
        hits = sum(
            pmap(
                lambda rep, i=i: _hits(
                    sample_cluster(
                        mu.positions[i], t, cfg, rep=(i << 24) + rep
                    ).particles,
                    center,
                    eps,
                ),
                n_i,
            )
        )
        p_i = hits / n_i
        val += mu.weights[i] * p_i
        var += mu.weights[i] ** 2 * p_i * (1 - p_i) / n_i
        total += n_i
    return EstimateWithCI(val, float(np.sqrt(var)), total, "cluster-hit")


@dataclass(frozen=True)
class SandwichTable:
    rows: list  # dicts: eps, normalized, ratio_t, ratio_t_eps, stderr
    band: float  # max/min of ratio_t across the grid

    def ratios(self, key: str = "ratio_t"):
        return [r[key] for r in self.rows]


def sandwich_check(
    mu: DiscreteMeasure,
    t: float,
    eps_grid,
    cfg: SimConfig,
    n_clusters: int = 4000,
) -> SandwichTable:
    """Normalized cluster-hit estimates against the mean-density envelopes.

    d >= 3 normalization: t^-1 eps^(2-d) P{cluster hits B_0^eps};
    d = 2:               t^-1 log(t/eps^2) P{cluster hits B_0^eps}.
    Both are divided by (mu*p_t)(0) and by (mu*p_{t_eps})(0); the envelopes
    hold up to constants, so only bounded ratios are asserted downstream.
    """
    d = cfg.d
    if d < 2:
        raise DomainError("sandwich_check needs d >= 2")
    origin = np.zeros(d)
    rows = []
    for eps in eps_grid:
        t_eps = bound_times(t, eps, d)
        hit = _cluster_hit_ci(mu, t, origin, eps, cfg, n_clusters)
        if d >= 3:
            norm = eps ** (2 - d) / t
        else:
            norm = np.log(t / eps**2) / t
        value = norm * hit.mean
        se = norm * hit.stderr
        rows.append(
            {
                "eps": float(eps),
                "normalized": float(value),
                "ratio_t": float(value / mean_density(mu, origin, t)),
                "ratio_t_eps": float(value / mean_density(mu, origin, t_eps)),
                "stderr": float(se),
                "n": hit.n_reps,
            }
        )
    ratios = [r["ratio_t"] for r in rows if r["ratio_t"] > 0]
    band = max(ratios) / min(ratios) if ratios else np.inf
    return SandwichTable(rows, float(band))


@dataclass(frozen=True)
class CdEstimate:
    value: EstimateWithCI  # pooled c_d
    rows: list  # per design point: ratio, stderr, mu tag, t, x, eps
    dispersion: float  # max pairwise z-score across design points


def estimate_cd(
    design: list,
    cfg: SimConfig,
    n_reps: int = 4000,
    mode: str = "cluster",
) -> CdEstimate:
    """c_d from eps^(2-d) P{hit B_x^eps} / (mu*p_t)(x) across a design grid.

    `design`: list of (mu, t, x, eps).  The limit constant is universal, so
    the per-point ratios must be mutually consistent; `dispersion` is the
    largest pairwise z-score.
    """
    if cfg.d < 3:
        raise DomainError("the power-law hitting constant requires d >= 3")
    keys = {(tuple(np.atleast_1d(x)), float(t)) for (_, t, x, _) in design}
    if len(keys) < 2:
        raise DesignError("need >= 2 distinct (x, t) design points to test constancy")
    rows = []
    for j, (mu, t, x, eps) in enumerate(design):
        point_cfg = SimConfig(
            cfg.d,
            cfg.mass_scale,
            substream(cfg.seed, 0xCD, j),
            cfg.max_particles,
            cfg.rejection_budget,
            cfg.engine,
        )
        hit = hit_probability(mu, t, x, eps, point_cfg, n_reps, mode=mode)
        dens = mean_density(mu, x, t)
        scale = eps ** (2 - cfg.d) / dens
        rows.append(
            {
                "t": float(t),
                "x": list(np.atleast_1d(np.asarray(x, dtype=float))),
                "eps": float(eps),
                "mu_mass": mu.total_mass,
                "ratio": float(scale * hit.mean),
                "stderr": float(scale * hit.stderr),
                "n": hit.n_reps,
            }
        )
    r = np.array([row["ratio"] for row in rows])
    se = np.array([row["stderr"] for row in rows])
    w = 1.0 / se**2
    pooled = float(np.sum(w * r) / np.sum(w))
    pooled_se = float(np.sqrt(1.0 / np.sum(w)))
    z = 0.0
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            z = max(z, abs(r[i] - r[j]) / np.sqrt(se[i] ** 2 + se[j] ** 2))
    est = EstimateWithCI(
        pooled,
        pooled_se,
        int(sum(row["n"] for row in rows)),
        "c_d",
        pooled - 1.96 * pooled_se,
        pooled + 1.96 * pooled_se,
    )
    return CdEstimate(est, rows, float(z))


# ---------------------------------------------------------------------------
# the d = 2 normalizer m(eps)


@dataclass(frozen=True)
class MEstimate:
    value: EstimateWithCI
    eps: float
    R: float
    tail_bound: float  # additive bias bound from truncating at radius R
    mode: str


def estimate_m(
    eps: float,
    cfg: SimConfig,
    n_samples: int = 300,
    R: float = 6.0,
    mode: str = "neighborhood",
    t: float = 1.0,
) -> MEstimate:
    """The d = 2 hitting normalizer m(eps) = |log eps| * integral over x of
    P_x{age-1 cluster charges B_0^eps}.

    neighborhood mode (default): by symmetry the integral equals the
    expected area of the eps-neighborhood of a cluster rooted at 0, measured
    exactly per replication (window adapted per cluster, so no truncation
    bias; R only caps the window for the tail report).  uniform-roots mode:
    importance sampling with roots uniform on the disc of radius R and
    per-root cluster hit indicators; carries the Gaussian-envelope tail
    bound (valid up to the envelope's constant).
    """
    if cfg.d != 2:
        raise DomainError("m(eps) is the d = 2 normalizer")
    if not 0 < eps < 0.5:
        raise DomainError(f"eps must be in (0, 1/2), got {eps}")
    if R < 4:
        raise DomainError("truncation radius R must be >= 4")
    L = abs(np.log(eps))
    l_eps = log_time_factor(eps)
    tail = 0.5 * np.exp(-R * R / (2.0 * l_eps))  # up to the envelope constant
    if mode == "neighborhood":

        def one(rep):
            cl = sample_cluster(np.zeros(2), t, cfg, rep)
            pts = cl.particles.positions
            win = Window(pts.min(0) - 2 * eps, pts.max(0) + 2 * eps)
            return L * neighborhood_measure(pts, eps, win, eps / 10.0).total

        est = mean_ci(pmap(one, n_samples), "m-neighborhood")
        return MEstimate(est, float(eps), float(R), 0.0, mode)
    if mode != "uniform-roots":
        raise DomainError(f"mode must be 'neighborhood' or 'uniform-roots', got {mode!r}")
    origin = np.zeros(2)
    area = np.pi * R * R

    def one(rep):
        # root uniform on the disc of radius R, one stream per replication
        rng = generator(cfg.seed, 0x3E, rep)
        u = rng.random()
        ang = 2 * np.pi * rng.random()
        root = R * np.sqrt(u) * np.array([np.cos(ang), np.sin(ang)])
        cl = sample_cluster(root, t, cfg, rep)
        return L * area * float(_hits(cl.particles, origin, eps))

    est = mean_ci(pmap(one, n_samples), "m-uniform-roots")
    if est.mean > 0 and tail * L > 0.1 * est.mean:
        raise DomainError(f"tail bound {tail * L:g} exceeds 10% of estimate {est.mean:g}; increase R")
    return MEstimate(est, float(eps), float(R), float(tail * L), mode)


@dataclass(frozen=True)
class NormalizerTable:
    rows: list  # per eps: MEstimate, descending eps

    def m_hat(self, eps: float) -> MEstimate:
        for row in self.rows:
            if row.eps == eps:
                return row
        raise KeyError(eps)


def m_table(eps_grid, cfg: SimConfig, n_samples: int = 300, **kw) -> NormalizerTable:
    eps_grid = [float(e) for e in eps_grid]
    if any(not 0 < e < 0.5 for e in eps_grid):
        raise DomainError("eps grid must lie in (0, 1/2)")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise DomainError("eps grid must be strictly descending")
    return NormalizerTable([estimate_m(e, cfg, n_samples, **kw) for e in eps_grid])


# ---------------------------------------------------------------------------
# Lebesgue approximation of the singular state


@dataclass(frozen=True)
class LebesgueValue:
    value: float  # normalizer x neighborhood integral of f
    direct: float  # particle integral of f (the target functional)
    flags: tuple


def lebesgue_approximation(
    state: ParticleState,
    eps: float,
    f,
    normalizer: float,
    delta: float | None = None,
) -> LebesgueValue:
    """normalizer * integral of f over the eps-neighborhood of the support.

    The vague-limit statement concerns the exact singular state; a particle
    cloud only supports it while eps dominates the inter-particle spacing,
    so results with eps < 5 x median nearest-neighbor distance are flagged
    untrusted (still returned).
    """
    flags = ()
    if state.n == 0:
        return LebesgueValue(0.0, 0.0, ())
    if eps < 5.0 * median_nn_distance(state.positions):
        flags = ("regime-guard-violated",)
    win = Window(state.positions.min(0) - 2 * eps, state.positions.max(0) + 2 * eps)
    grid = neighborhood_measure(state.positions, eps, win, delta)
    value = normalizer * integrate(grid, f)
    try:
        direct_vals = np.asarray(f(state.positions), dtype=np.float64)
        if direct_vals.shape != (state.n,):
            raise TypeError
    except Exception:
        direct_vals = np.array([float(f(p)) for p in state.positions])
    direct = float(direct_vals.sum() * state.particle_mass)
    return LebesgueValue(float(value), direct, flags)


def lebesgue_experiment(
    mu: DiscreteMeasure,
    t: float,
    eps_grid,
    f,
    normalizers: dict,
    cfg: SimConfig,
    n_reps: int = 200,
    delta_factor: float = 6.0,
) -> list:
    """Replication study of the normalized neighborhood functional.

    `normalizers` maps eps -> the constant multiplying the neighborhood
    integral.  Returns one row per eps with the replication mean (to compare
    against the analytic first moment) and the median per-replication
    relative error against the direct particle integral (the convergence
    diagnostic).  Extinct replications contribute 0 to both integrals.
    """
    rows = []
    states = pmap(lambda rep: simulate_dw(mu, t, cfg, rep), n_reps)
    for eps in eps_grid:
        results = pmap(
            lambda rep, eps=eps: lebesgue_approximation(
                states[rep], eps, f, normalizers[eps], eps / delta_factor
            ),
            n_reps,
        )
        vals = np.array([lv.value for lv in results])
        guard = sum("regime-guard-violated" in lv.flags for lv in results)
        rel = [
            abs(lv.value - lv.direct) / lv.direct for lv in results if lv.direct > 0
        ]
        est = mean_ci(vals, "lebesgue")
        rows.append(
            {
                "eps": float(eps),
                "mean": est.mean,
                "stderr": est.stderr,
                "median_rel_err": float(np.median(rel)) if rel else np.nan,
                "n_reps": n_reps,
                "n_guard_violations": guard,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# multiplicities, extinction, scaling


def multiplicity_overcount(
    mu: DiscreteMeasure,
    t: float,
    h: float,
    eps: float,
    cfg: SimConfig,
    n_reps: int = 2000,
) -> EstimateWithCI:
    """E(kappa - 1)_+ where kappa counts age-h subclusters charging B_0^eps.

    Subclusters are resolved from the stored coalescence depths (particles
    descend from the same time t-h ancestor iff no merge boundary of depth
    >= h separates them).
    """
    if not 0 < h <= t:
        raise DomainError(f"need 0 < h <= t, got h={h}, t={t}")
    ratio = eps * eps / h if cfg.d >= 3 else eps / h
    if ratio > 0.1:
        raise DomainError(
            f"multiplicity window violated: eps{'^2' if cfg.d >= 3 else ''}/h = "
            f"{ratio:.3g} > 0.1"
        )
    origin = np.zeros(cfg.d)

    def one(rep):
        st = simulate_dw(mu, t, cfg, rep)
        if st.n == 0:
            return 0.0
        tags = subcluster_tags(st, h)
        sq = np.sum((st.positions - origin) ** 2, axis=1)
        kappa = np.unique(tags[sq < eps * eps]).size
        return float(max(kappa - 1, 0))

    return mean_ci(pmap(one, n_reps), "multiplicity-overcount")


def extinction_curve(
    mu: DiscreteMeasure,
    center,
    radius: float,
    t_grid,
    cfg: SimConfig,
    n_reps: int = 2000,
) -> list:
    """P{ball still charged at t} alongside its deterministic decay companion.

    Companion: (mu*p_t)(center) for d >= 3; (log t)^-1 (mu*p_t)(center) for
    d = 2 (undefined at t <= 1, reported as nan there).
    """
    rows = []
    for j, t in enumerate(t_grid):
        hits = sum(
            pmap(
                lambda rep, j=j, t=t: _hits(
                    simulate_dw(mu, float(t), cfg, (j << 24) + rep), center, radius
                ),
                n_reps,
            )
        )
        p = proportion_ci(hits, n_reps, "extinction-curve")
        dens = mean_density(mu, center, float(t))
        if cfg.d >= 3:
            companion = dens
        else:
            companion = dens / np.log(t) if t > 1 else np.nan
        rows.append(
            {
                "t": float(t),
                "hit_prob": p.mean,
                "stderr": p.stderr,
                "ci_low": p.ci_low,
                "ci_high": p.ci_high,
                "survival_bound": 1.0 - extinction_probability(mu.total_mass, float(t)),
                "companion": float(companion),
                "n_reps": n_reps,
            }
        )
    return rows


@dataclass(frozen=True)
class ScalingReport:
    ks_mass: TestReport
    energy: TestReport
    mean_rescaled: float
    mean_direct: float


def scaling_check(
    mu: DiscreteMeasure, t: float, r: float, cfg: SimConfig, n_reps: int = 2000
) -> ScalingReport:
    """Diffusive-rescaling identity: run to r^2 t and rescale by r, versus a
    direct run to t from the rescaled initial measure.  Two-sample KS on
    total mass plus an energy test on [mass B_0^1, hit B_0^0.2, mass B_0^0.5].
    """
    if r <= 0:
        raise DomainError(f"r must be positive, got {r}")
    mu_scaled = DiscreteMeasure(mu.positions / r, mu.weights / (r * r))
    cfg_b = SimConfig(
        cfg.d,
        cfg.mass_scale,
        substream(cfg.seed, 0x5CA1E),
        cfg.max_particles,
        cfg.rejection_budget,
        cfg.engine,
    )
    origin = np.zeros(cfg.d)

    def battery(st):
        return [
            st.total_mass,
            _ball_mass(st, origin, 1.0),
            float(_hits(st, origin, 0.2)),
            _ball_mass(st, origin, 0.5),
        ]

    arm_a = np.array(
        pmap(
            lambda rep: battery(rescale_state(simulate_dw(mu, r * r * t, cfg, rep), r)),
            n_reps,
        )
    )
    arm_b = np.array(
        pmap(lambda rep: battery(simulate_dw(mu_scaled, t, cfg_b, rep)), n_reps)
    )
    ks = ks_two_sample(arm_a[:, 0], arm_b[:, 0])
    en = energy_distance(arm_a[:, 1:], arm_b[:, 1:], 200, seed=substream(cfg.seed, 0xE0))
    return ScalingReport(ks, en, float(arm_a[:, 0].mean()), float(arm_b[:, 0].mean()))


# ---------------------------------------------------------------------------
# local structure: the d = 2 vs d >= 3 dichotomy


def palm_local_profile(
    mu: DiscreteMeasure,
    t: float,
    eps: float,
    annuli,
    cfg: SimConfig,
    n_reps: int = 2000,
) -> dict:
    """Mass profile around a size-biased (Palm) recentring point, d = 2.

    Per surviving replication: pick a particle uniformly (equal masses make
    this the exact mass-weighted pick), recenter there, rescale space by
    1/eps, and record annulus masses normalized by (mass of the unit
    rescaled ball)/pi.  Flat-measure behavior means annulus means approach
    the annulus areas.
    """
    if cfg.d != 2:
        raise DomainError("the Palm flatness profile is the d = 2 experiment")
    annuli = [(float(a), float(b)) for a, b in annuli]
    if any(not 0 <= a < b <= 1 for a, b in annuli):
        raise DomainError("annuli must satisfy 0 <= inner < outer <= 1")
    rows = {f"{a:g}-{b:g}": [] for a, b in annuli}

    def one(rep):
        st = simulate_dw(mu, t, cfg, rep)
        if st.n == 0:
            return None
        # uniform pick = size-biased pick, since all particles share one mass
        pick = int(generator(cfg.seed, 0xBA1, rep).integers(st.n))
        y = (st.positions - st.positions[pick]) / eps
        sq = np.sum(y * y, axis=1)
        rho = np.count_nonzero(sq < 1.0) * st.particle_mass / np.pi
        return [
            np.count_nonzero((sq >= a * a) & (sq < b * b)) * st.particle_mass / rho
            for a, b in annuli
        ]

    results = pmap(one, n_reps)
    skipped = sum(r is None for r in results)
    used = n_reps - skipped
    for r in results:
        if r is None:
            continue
        for (a, b), v in zip(annuli, r):
            rows[f"{a:g}-{b:g}"].append(v)
    out = {"eps": eps, "n_used": used, "n_extinct_skipped": skipped, "annuli": {}}
    for key, vals in rows.items():
        est = mean_ci(vals, f"palm-{key}")
        a, b = (float(v) for v in key.split("-"))
        out["annuli"][key] = {
            "mean": est.mean,
            "stderr": est.stderr,
            "area": float(np.pi * (b * b - a * a)),
        }
    return out


def occupancy_contrast(
    mu: DiscreteMeasure,
    t: float,
    eps_grid,
    offsets,
    radii,
    cfg: SimConfig,
    n_reps: int = 20000,
) -> list:
    """Conditional miss frequencies of the rescaled process.

    For each (eps, x, h): frequency that the process puts nothing in the
    rescaled ball B_x^h (i.e. B_{eps x}^{eps h}) given it charges B_0^eps.
    In d >= 3 these tend to 1 as eps decreases; the d = 2 companion (same
    statistic) stays bounded away from 1.
    """
    origin = np.zeros(cfg.d)
    offsets = [np.atleast_1d(np.asarray(x, dtype=float)) for x in offsets]
    if any(np.allclose(x, 0) for x in offsets):
        raise DomainError("offsets must be nonzero")
    rows = []
    for j, eps in enumerate(eps_grid):

        def one(rep, j=j, eps=eps):
            st = simulate_dw(mu, t, cfg, (j << 24) + rep)
            if not _hits(st, origin, eps):
                return None
            return [
                [not _hits(st, eps * x, eps * float(h)) for h in radii]
                for x in offsets
            ]

        results = [r for r in pmap(one, n_reps) if r is not None]
        n_cond = len(results)
        misses = {
            (k, m): sum(r[k][m] for r in results)
            for k in range(len(offsets))
            for m in range(len(radii))
        }
        for k, x in enumerate(offsets):
            for m, h in enumerate(radii):
                flags = ("low-power",) if n_cond < _LOW_POWER_MIN else ()
                freq = misses[(k, m)] / n_cond if n_cond else np.nan
                rows.append(
                    {
                        "eps": float(eps),
                        "x": list(map(float, x)),
                        "h": float(h),
                        "miss_freq": float(freq),
                        "n_cond": n_cond,
                        "n_reps": n_reps,
                        "flags": list(flags),
                    }
                )
    return rows


@dataclass(frozen=True)
class UniversalityReport:
    baseline_mean: float
    baseline_sd: float
    cross: list  # dicts: pair, distance, z (against the baseline spread)
    n_cond: int
    flags: tuple


def _conditioned_battery(
    mu: DiscreteMeasure,
    t: float,
    eps: float,
    cfg: SimConfig,
    n_cond: int,
    max_reps: int,
    mass_rescale: float = 1.0,
):
    """Functional battery of eps^-2 * (state rescaled by eps) restricted to
    B_0^1, conditioned on the state charging B_0^eps."""
    d = cfg.d
    origin = np.zeros(d)
    subcenters = [np.zeros(d) for _ in range(4)]
    for k in range(2):
        subcenters[2 * k][k] = 0.5
        subcenters[2 * k + 1][k] = -0.5
    out = []
    rep = 0
    while len(out) < n_cond and rep < max_reps:
        st = simulate_dw(mu, t, cfg, rep)
        rep += 1
        if not _hits(st, origin, eps):
            continue
        scale = mass_rescale / (eps * eps * cfg.mass_scale)
        y = st.positions / eps
        sq = np.sum(y * y, axis=1)
        row = [np.count_nonzero(sq < 1.0) * scale]
        for c in subcenters:
            row.append(
                np.count_nonzero(np.sum((y - c) ** 2, axis=1) < 0.25) * scale
            )
        out.append(row)
    return np.array(out), rep


def local_law_universality(
    arms: list,
    eps: float,
    cfg: SimConfig,
    n_cond: int = 150,
    n_baseline_pairs: int = 6,
    scale_pair: tuple | None = None,
) -> UniversalityReport:
    """Conditional local-law comparison across initial conditions.

    Each arm (mu, t) contributes the conditional law (given a charge in
    B_0^eps) of a functional battery of the rescaled, mass-renormalized
    state.  Cross-arm energy distances are compared with the spread of
    split-seed same-arm baseline distances; `scale_pair=(r,)` additionally
    compares scale eps against r*eps with masses multiplied by r^2.
    """
    if cfg.d < 3:
        raise DomainError("conditional local-law universality is the d >= 3 experiment")
    if len(arms) < 2 and scale_pair is None:
        raise DesignError("need >= 2 arms (or a scale pair)")
    max_reps = 400 * n_cond * max(1, int(1.0 / eps))

    def arm_sample(mu, t, salt, e=eps, mass_rescale=1.0):
        acfg = SimConfig(
            cfg.d,
            cfg.mass_scale,
            substream(cfg.seed, 0x8A, salt),
            cfg.max_particles,
            cfg.rejection_budget,
            cfg.engine,
        )
        return _conditioned_battery(mu, t, e, acfg, n_cond, max_reps, mass_rescale)

    mu0, t0 = arms[0]
    baselines = []
    flags = []
    pool = []
    for k in range(n_baseline_pairs + 1):
        s, _ = arm_sample(mu0, t0, 100 + k)
        pool.append(s)
    n_min = min(len(s) for s in pool)
    if n_min < _LOW_POWER_MIN:
        flags.append("low-power")
    pool = [s[:n_min] for s in pool]
    for k in range(n_baseline_pairs):
        baselines.append(
            energy_distance(
                pool[k], pool[k + 1], 200, seed=substream(cfg.seed, 0xBB, k)
            ).statistic
        )
    base_mean = float(np.mean(baselines))
    base_sd = float(np.std(baselines, ddof=1))
    ref = pool[0]
    cross = []
    for j, (mu, t) in enumerate(arms[1:], start=1):
        s, _ = arm_sample(mu, t, j)
        s = s[:n_min]
        if len(s) < n_min:
            flags.append(f"arm{j}-low-power")
        dist = energy_distance(
            ref[: len(s)], s, 200, seed=substream(cfg.seed, 0xCC, j)
        ).statistic
        cross.append(
            {
                "pair": f"arm0-vs-arm{j}",
                "distance": float(dist),
                "z": float((dist - base_mean) / base_sd) if base_sd > 0 else np.nan,
                "n": int(len(s)),
            }
        )
    if scale_pair is not None:
        (r,) = scale_pair
        # the battery's e^-2 prefactor at scale r*eps is already the base
        # scale's eps^-2 times the self-similarity mass factor r^-2, so no
        # further rescaling is applied
        s, _ = arm_sample(mu0, t0, 999, e=r * eps)
        s = s[:n_min]
        dist = energy_distance(
            ref[: len(s)], s, 200, seed=substream(cfg.seed, 0xCC, 999)
        ).statistic
        cross.append(
            {
                "pair": f"scale-{eps:g}-vs-{r * eps:g}",
                "distance": float(dist),
                "z": float((dist - base_mean) / base_sd) if base_sd > 0 else np.nan,
                "n": int(len(s)),
            }
        )
    return UniversalityReport(base_mean, base_sd, cross, n_min, tuple(flags))


# ---------------------------------------------------------------------------
# forest equivalence


def forest_check(
    mu: DiscreteMeasure, t: float, cfg: SimConfig, n_reps: int = 2000
) -> dict:
    """Poisson-forest sampler versus the direct simulator, plus the exact
    hitting identity between cluster-level and process-level estimates."""
    origin = np.zeros(cfg.d)
    masses_direct = np.array(
        pmap(lambda rep: simulate_dw(mu, t, cfg, rep).total_mass, n_reps)
    )
    cfg_f = SimConfig(
        cfg.d,
        cfg.mass_scale,
        substream(cfg.seed, 0xF0),
        cfg.max_particles,
        cfg.rejection_budget,
        cfg.engine,
    )
    masses_forest = np.array(
        pmap(
            lambda rep: sum(
                c.particles.total_mass for c in poisson_forest(mu, t, cfg_f, rep)
            ),
            n_reps,
        )
    )
    ks = ks_two_sample(masses_direct, masses_forest)
    eps = 0.1
    direct = hit_probability(mu, t, origin, eps, cfg, n_reps, mode="direct")
    converted = hit_probability(mu, t, origin, eps, cfg_f, n_reps, mode="cluster")
    z = abs(direct.mean - converted.mean) / np.sqrt(
        direct.stderr**2 + converted.stderr**2
    )
    return {
        "ks_statistic": ks.statistic,
        "ks_p": ks.p_value,
        "hit_direct": direct.mean,
        "hit_direct_se": direct.stderr,
        "hit_converted": converted.mean,
        "hit_converted_se": converted.stderr,
        "identity_z": float(z),
        "n_reps": n_reps,
    }
