"""Config-driven experiment runner.

Experiments are described by a TOML spec file with a `subcommand` key; the
runner validates, executes, and writes `results.csv`, `summary.json`, and
`schema.json` (plus `plot.script` with --emit-plot-script) into the output
directory.  Identical (spec, seed) always produce byte-identical artifacts,
for any --threads value.

Exit codes: 0 ok, 2 validation failure, 3 resource cap, 4 low statistical
power (soft failure: artifacts are still written).
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import estimators as est
from . import kernels, runner
from .errors import DesignError, DomainError, ResourceError
from .kernels import DiscreteMeasure
from .simulate import SimConfig

__all__ = ["main", "run", "validate_spec"]

SUBCOMMANDS = (
    "moments",
    "hit",
    "sandwich",
    "cd",
    "m-table",
    "lebesgue",
    "multiplicity",
    "extinction",
    "scaling",
    "palm",
    "contrast",
    "universality",
    "forest-check",
)

_D3_ONLY = {"cd", "contrast", "universality"}
_D2_ONLY = {"m-table", "palm"}


def _violations(spec: dict) -> list:
    """Schema and regime-guard pre-flight; returns human-readable key paths."""
    v = []
    sub = spec.get("subcommand")
    if sub not in SUBCOMMANDS:
        v.append(f"subcommand: must be one of {', '.join(SUBCOMMANDS)}; got {sub!r}")
        return v
    if "seed" not in spec:
        v.append("seed: mandatory (the tool never invents entropy)")
    d = spec.get("d")
    if not isinstance(d, int) or not 1 <= d <= kernels.MAX_DIM:
        v.append(f"d: integer in [1, {kernels.MAX_DIM}] required; got {d!r}")
        return v
    if sub in _D3_ONLY and d < 3:
        v.append(f"d: subcommand {sub!r} requires d >= 3")
    if sub in _D2_ONLY and d != 2:
        v.append(f"d: subcommand {sub!r} requires d = 2")
    atoms = spec.get("atoms")
    if sub != "moments":
        if not isinstance(spec.get("N"), int) or spec.get("N", 0) < 1:
            v.append("N: positive integer mass scale required")
        if not atoms:
            v.append("atoms: nonempty list of [weight, coordinates...] required")
        elif any(len(a) != d + 1 or a[0] <= 0 for a in atoms):
            v.append(f"atoms: each entry must be [weight > 0, {d} coordinates]")
    for key in ("eps", "times", "t_grid"):
        if key in spec and not spec[key]:
            v.append(f"{key}: grid must be nonempty")
    if sub in ("hit", "sandwich", "m-table", "lebesgue", "contrast", "palm"):
        if not spec.get("eps"):
            v.append("eps: nonempty grid required")
    if sub == "multiplicity":
        h = spec.get("h", 0)
        for e in spec.get("eps", []):
            ratio = e * e / h if d >= 3 else e / h
            if h <= 0 or ratio > 0.1:
                v.append(
                    f"eps/h: window guard violated for eps={e}, h={h} "
                    f"({'eps^2/h' if d >= 3 else 'eps/h'} = {ratio:.3g} > 0.1)"
                )
    if sub == "m-table":
        for e in spec.get("eps", []):
            if not 0 < e < 0.5:
                v.append(f"eps: m-table entries must lie in (0, 1/2); got {e}")
    if sub == "universality" and len(spec.get("arm_times", [])) < 2:
        v.append("arm_times: need at least 2 arms")
    return v


def validate_spec(spec: dict) -> dict:
    v = _violations(spec)
    return {"ok": not v, "violations": v}


def _measure(spec) -> DiscreteMeasure:
    atoms = np.asarray(spec["atoms"], dtype=np.float64)
    return DiscreteMeasure(atoms[:, 1:], atoms[:, 0])


def _simconfig(spec) -> SimConfig:
    return SimConfig(
        d=spec["d"],
        mass_scale=spec["N"],
        seed=spec["seed"],
        max_particles=spec.get("max_particles", 4_000_000),
        rejection_budget=spec.get("rejection_budget", 1_000_000),
        engine=spec.get("engine", "genealogy"),
    )


def _run_subcommand(spec: dict) -> tuple:
    """Returns (rows, summary_extras, power_flag)."""
    sub = spec["subcommand"]
    power_flag = False
    extras = {}
    rows = []
    if sub == "moments":
        d = spec["d"]
        mu = _measure(spec) if spec.get("atoms") else DiscreteMeasure.delta(np.zeros(d))
        for t in spec.get("times", [1.0]):
            for x in spec.get("points", [[0.0] * d]):
                rows.append(
                    {
                        "t": t,
                        **{f"x{k}": float(c) for k, c in enumerate(x)},
                        "heat_kernel": kernels.heat_kernel(x, t, d),
                        "mean_density": kernels.mean_density(mu, x, t),
                        "extinction_probability": kernels.extinction_probability(
                            mu.total_mass, t
                        ),
                    }
                )
    elif sub == "hit":
        mu, cfg = _measure(spec), _simconfig(spec)
        for e in spec["eps"]:
            r = est.hit_probability(
                mu,
                spec["t"],
                spec.get("center", [0.0] * spec["d"]),
                e,
                cfg,
                spec["n_reps"],
                mode=spec.get("mode", "direct"),
            )
            power_flag |= bool(r.flags)
            rows.append(
                {
                    "eps": e,
                    "estimate": r.mean,
                    "stderr": r.stderr,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "n_reps": r.n_reps,
                    "flags": ";".join(r.flags),
                }
            )
    elif sub == "sandwich":
        table = est.sandwich_check(
            _measure(spec),
            spec["t"],
            spec["eps"],
            _simconfig(spec),
            spec.get("n_clusters", 4000),
        )
        rows = table.rows
        extras["band"] = table.band
    elif sub == "cd":
        mu = _measure(spec)
        design = [
            (mu, float(t), x, float(e))
            for (t, x, e) in (
                (p[0], p[1:-1], p[-1]) for p in spec["design"]
            )
        ]
        r = est.estimate_cd(
            design, _simconfig(spec), spec["n_reps"], mode=spec.get("mode", "cluster")
        )
        rows = [
            {
                "t": row["t"],
                **{f"x{k}": c for k, c in enumerate(row["x"])},
                "eps": row["eps"],
                "ratio": row["ratio"],
                "stderr": row["stderr"],
                "n_reps": row["n"],
            }
            for row in r.rows
        ]
        extras.update(
            c_d=r.value.mean,
            c_d_stderr=r.value.stderr,
            dispersion_max_z=r.dispersion,
        )
    elif sub == "m-table":
        cfg = _simconfig(spec)
        table = est.m_table(
            spec["eps"],
            cfg,
            spec.get("n_samples", 300),
            R=spec.get("R", 6.0),
            mode=spec.get("mode", "neighborhood"),
        )
        rows = [
            {
                "eps": m.eps,
                "m_hat": m.value.mean,
                "stderr": m.value.stderr,
                "n_samples": m.value.n_reps,
                "R": m.R,
                "tail_bound": m.tail_bound,
                "mode": m.mode,
            }
            for m in table.rows
        ]
    elif sub == "lebesgue":
        hw = spec.get("f_box_halfwidth", 1.0)

        def f(pts):
            return np.all(np.abs(pts) <= hw, axis=1).astype(float)

        normalizers = dict(zip(spec["eps"], spec["normalizers"]))
        rows = est.lebesgue_experiment(
            _measure(spec),
            spec["t"],
            spec["eps"],
            f,
            normalizers,
            _simconfig(spec),
            spec["n_reps"],
            delta_factor=spec.get("delta_factor", 6.0),
        )
        power_flag |= any(r["n_guard_violations"] > 0 for r in rows)
    elif sub == "multiplicity":
        for e in spec["eps"]:
            r = est.multiplicity_overcount(
                _measure(spec),
                spec["t"],
                spec["h"],
                e,
                _simconfig(spec),
                spec["n_reps"],
            )
            rows.append(
                {
                    "eps": e,
                    "h": spec["h"],
                    "overcount": r.mean,
                    "stderr": r.stderr,
                    "n_reps": r.n_reps,
                }
            )
    elif sub == "extinction":
        rows = est.extinction_curve(
            _measure(spec),
            spec.get("center", [0.0] * spec["d"]),
            spec.get("radius", 1.0),
            spec["t_grid"],
            _simconfig(spec),
            spec["n_reps"],
        )
    elif sub == "scaling":
        r = est.scaling_check(
            _measure(spec), spec["t"], spec["r"], _simconfig(spec), spec["n_reps"]
        )
        rows = [
            {
                "test": "ks-total-mass",
                "statistic": r.ks_mass.statistic,
                "p_value": r.ks_mass.p_value,
                "n_per_arm": r.ks_mass.n_a,
            },
            {
                "test": "energy-battery",
                "statistic": r.energy.statistic,
                "p_value": r.energy.p_value,
                "n_per_arm": r.energy.n_a,
            },
        ]
        extras.update(mean_rescaled=r.mean_rescaled, mean_direct=r.mean_direct)
    elif sub == "palm":
        annuli = spec.get("annuli", [[0.0, 0.7071067811865476], [0.7071067811865476, 1.0]])
        for e in spec["eps"]:
            prof = est.palm_local_profile(
                _measure(spec), spec["t"], e, annuli, _simconfig(spec), spec["n_reps"]
            )
            for key, a in prof["annuli"].items():
                rows.append(
                    {
                        "eps": e,
                        "annulus": key,
                        "normalized_mass": a["mean"],
                        "stderr": a["stderr"],
                        "area": a["area"],
                        "n_used": prof["n_used"],
                        "n_extinct_skipped": prof["n_extinct_skipped"],
                    }
                )
    elif sub == "contrast":
        rows = est.occupancy_contrast(
            _measure(spec),
            spec["t"],
            spec["eps"],
            spec.get("offsets", [[1.0] + [0.0] * (spec["d"] - 1)]),
            spec.get("radii", [0.25]),
            _simconfig(spec),
            spec["n_reps"],
        )
        power_flag |= any(r["flags"] for r in rows)
        for r in rows:
            r["x"] = ";".join(f"{c:g}" for c in r["x"])
            r["flags"] = ";".join(r["flags"])
    elif sub == "universality":
        mu = _measure(spec)
        arms = [(mu, float(t)) for t in spec["arm_times"]]
        scale_pair = (spec["scale_r"],) if "scale_r" in spec else None
        r = est.local_law_universality(
            arms,
            spec["eps"][0] if isinstance(spec.get("eps"), list) else spec["eps"],
            _simconfig(spec),
            n_cond=spec.get("n_cond", 150),
            scale_pair=scale_pair,
        )
        power_flag |= bool(r.flags)
        rows = [
            {
                "pair": c["pair"],
                "distance": c["distance"],
                "z_vs_baseline": c["z"],
                "n": c["n"],
            }
            for c in r.cross
        ]
        extras.update(
            baseline_mean=r.baseline_mean,
            baseline_sd=r.baseline_sd,
            n_cond=r.n_cond,
            flags=list(r.flags),
        )
    elif sub == "forest-check":
        extras = est.forest_check(
            _measure(spec), spec["t"], _simconfig(spec), spec["n_reps"]
        )
        rows = [
            {"metric": k, "value": v}
            for k, v in extras.items()
        ]
    return rows, extras, power_flag


def _spec_hash(spec: dict) -> str:
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_csv(path: Path, rows: list, seed, spec_hash):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    cols += ["seed", "spec_hash"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({**{k: r.get(k, "") for k in cols}, "seed": seed, "spec_hash": spec_hash})
    return cols


_PLOT_SCRIPT = """\
# standalone plot script (generated): reads results.csv next to this file
import csv
from pathlib import Path
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open(Path(__file__).parent / "results.csv")))
xcol = {xcol!r}
ycol = {ycol!r}
xs = [float(r[xcol]) for r in rows if r.get(xcol) and r.get(ycol)]
ys = [float(r[ycol]) for r in rows if r.get(xcol) and r.get(ycol)]
fig, ax = plt.subplots()
ax.plot(xs, ys, "o-")
ax.set_xlabel(xcol)
ax.set_ylabel(ycol)
ax.set_title({title!r})
fig.savefig(Path(__file__).parent / "plot.png", dpi=150)
"""

_PLOT_COLS = {
    "hit": ("eps", "estimate"),
    "sandwich": ("eps", "ratio_t"),
    "m-table": ("eps", "m_hat"),
    "lebesgue": ("eps", "median_rel_err"),
    "multiplicity": ("eps", "overcount"),
    "extinction": ("t", "hit_prob"),
    "palm": ("eps", "normalized_mass"),
    "contrast": ("eps", "miss_freq"),
}


def run(spec: dict, out_dir, emit_plot_script: bool = False) -> int:
    report = validate_spec(spec)
    if not report["ok"]:
        for line in report["violations"]:
            print(f"spec error: {line}", file=sys.stderr)
        return 2
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_hash = _spec_hash(spec)
    try:
        rows, extras, power_flag = _run_subcommand(spec)
    except (DomainError, DesignError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 3
    cols = _write_csv(out / "results.csv", rows, spec["seed"], spec_hash)
    summary = {
        "subcommand": spec["subcommand"],
        "spec": spec,
        "spec_hash": spec_hash,
        "seed": spec["seed"],
        "n_rows": len(rows),
        "low_power": power_flag,
        **extras,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    with open(out / "schema.json", "w") as fh:
        json.dump(
            {"subcommand": spec["subcommand"], "columns": cols}, fh, indent=1,
            sort_keys=True,
        )
    if emit_plot_script:
        xcol, ycol = _PLOT_COLS.get(spec["subcommand"], (cols[0], cols[1]))
        with open(out / "plot.script", "w") as fh:
            fh.write(
                _PLOT_SCRIPT.format(
                    xcol=xcol, ycol=ycol, title=spec["subcommand"]
                )
            )
    return 4 if power_flag else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="dwlab", description="superprocess simulation laboratory"
    )
    ap.add_argument("--spec", required=True, help="TOML experiment spec")
    ap.add_argument("--out", help="output directory (required unless --validate)")
    ap.add_argument("--seed", type=int, help="override the spec seed")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--emit-plot-script", action="store_true")
    ap.add_argument(
        "--validate", action="store_true", help="pre-flight report only, no simulation"
    )
    args = ap.parse_args(argv)
    try:
        with open(args.spec, "rb") as fh:
            spec = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.validate:
        report = validate_spec(spec)
        print(json.dumps(report, indent=1))
        return 0
    if not args.out:
        print("spec error: --out is required", file=sys.stderr)
        return 2
    runner.set_threads(args.threads)
    return run(spec, args.out, emit_plot_script=args.emit_plot_script)


if __name__ == "__main__":
    sys.exit(main())
