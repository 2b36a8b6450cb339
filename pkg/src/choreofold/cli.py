"""Command-line front end: find, scan, locate, branch, fold, surface, reproduce.

Every command reads an optional JSON run config (``--config``); flags
override its fields one for one.  Outputs go to ``--out`` (default
``out``), are written atomically and start with a provenance header.
Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .continuation import (
    ContinuationControls,
    ReferenceFamily,
    branch_from_rows,
    continue_branch,
    default_theta,
    fit_kappa_linear,
    fold_from_table,
    read_branch_csv,
    relative_action_curve,
    write_branch_csv,
    write_curve_rows,
)
from .families import Family, FamilyTracker, SeedKind
from .orbit import action, orbit_to_dict, residual_norm
from .outputs import atomic_write_text, header_lines, num, provenance
from .pipeline import CASES, linear_window, model_errors, run_case, solve_seed
from .reduction import (
    a3_coefficient,
    a3_integrals,
    branch_radii,
    critical_points,
    fit_A3A4,
    fold_condition,
    fold_prediction,
    reduced_action,
    surface_grid,
    write_surface_csv,
)
from .spectrum import (
    ScanRow,
    bifurcation_from_dict,
    bifurcation_to_dict,
    locate_bifurcation,
    make_tracker,
    scan_eigenvalue,
    write_scan_csv,
)

log = logging.getLogger(__name__)

EXIT_NUMERICAL = 3
FAMILIES = [k.value for k in SeedKind]


@dataclass
class RunConfig:
    """All inputs of one run; JSON keys match the field names."""

    family: str = SeedKind.LJ_HIGH.value
    period: float | None = None  # LJ: seed period (default 16); homogeneous: fixed period (default 2 pi)
    exponent: float = 1.0  # homogeneous seed exponent
    modes: int = 64
    tol: float = 1e-11
    bracket: list[float] | None = None
    degeneracy: int = 2
    window: float = 0.05
    scan: list[float] | None = None  # [lo, hi, n]
    max_points: int = 80
    ds_max: float | None = None
    h: float | None = None
    theta: float | None = None
    out: str = "out"

    @classmethod
    def load(cls, path) -> "RunConfig":
        d = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def merged(self, **flags) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in flags.items() if v is not None})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def family_spec(self) -> tuple[Family, SeedKind, float]:
        """Family, seed kind and seed parameter."""
        kind = SeedKind(self.family)
        if kind is SeedKind.NEWTONIAN:
            return Family.homogeneous(self.period or 2 * math.pi), kind, self.exponent
        return Family.lennard_jones(), kind, self.period or 16.0


def _fmt(v) -> str:
    return num(v) if isinstance(v, (float, np.floating)) else str(v)


def _numerical(fn):
    """Map numerical failures to exit code 3."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit):
            raise
        except (RuntimeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _config(ctx: click.Context, command: str, **flags) -> tuple[RunConfig, dict]:
    cfg = ctx.obj["config"].merged(**flags)
    rec = {"command": command, **cfg.to_dict()}
    return cfg, rec


def _out(cfg: RunConfig, name: str, override: str | None) -> Path:
    return Path(override) if override else Path(cfg.out) / name


def _write_json(path: Path, payload: dict, rec: dict) -> None:
    atomic_write_text(path, json.dumps({"provenance": provenance(rec), "config": rec, **payload}, indent=1) + "\n")


def _seed_tracker(cfg: RunConfig) -> FamilyTracker:
    family, kind, p0 = cfg.family_spec()
    return FamilyTracker(family, solve_seed(kind, p0, cfg.modes, family), tol=cfg.tol)


def _scan_params(scan) -> np.ndarray:
    if scan is None or len(scan) != 3:
        raise click.UsageError("a scan range LO HI N is required")
    lo, hi, n = scan
    if int(n) < 3 or not lo < hi:
        raise click.UsageError("scan range needs LO < HI and N >= 3")
    return np.linspace(float(lo), float(hi), int(n))


def _pick_tracker(tr: FamilyTracker, lo: float, hi: float, degeneracy: int, window: float):
    """Tracked group changing sign on [lo, hi], else the one nearest zero at lo."""
    cands = make_tracker(tr, lo, degeneracy, window=window)
    if not cands:
        raise RuntimeError(f"no {degeneracy}-fold eigenvalue with |kappa| < {window} at {lo}")
    for kt in cands:
        if kt.kappa(lo) * kt.kappa(hi) < 0:
            return kt
    return min(cands, key=lambda kt: abs(kt.kappa(lo)))


@click.group()
@click.version_option(__version__, prog_name="choreofold")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON run config.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
@click.pass_context
def main(ctx: click.Context, config_path, out, verbose) -> None:
    """Three-body choreographies, their three-fold bifurcations and folds."""
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)], format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(config_path) if config_path else RunConfig()
    except (json.JSONDecodeError, TypeError) as exc:
        raise click.UsageError(f"bad config: {exc}") from exc
    ctx.obj = {"config": cfg.merged(out=out)}


family_option = click.option("--family", type=click.Choice(FAMILIES), default=None)
modes_option = click.option("--modes", type=click.IntRange(8), default=None, help="Fourier modes M.")


@main.command()
@family_option
@click.option("--period", type=float, default=None)
@click.option("--exponent", type=float, default=None, help="Homogeneous exponent a.")
@modes_option
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def find(ctx, family, period, exponent, modes, output):
    """Solve a figure-eight choreography and write it as orbit JSON."""
    cfg, rec = _config(ctx, "find", family=family, period=period, exponent=exponent, modes=modes)
    fam, kind, p = cfg.family_spec()
    if cfg.period is not None and cfg.period <= 0:
        raise RuntimeError("period must be positive")
    o = solve_seed(kind, p, cfg.modes, fam)
    S, res = action(o), residual_norm(o)
    path = _out(cfg, "orbit.json", output)
    # orbit-solver format at top level, so load_orbit reads it directly
    _write_json(path, {**orbit_to_dict(o), "summary": {"S": S, "T": o.period, "residual": res, "min_distance": o.min_distance()}}, rec)
    param = "" if fam.symbol == "T" else f" {fam.symbol}={num(p)}"
    click.echo(f"{kind.value}: T={num(o.period)}{param} S={num(S)} residual={res:.3e}")
    click.echo(f"wrote {path}")


@main.command()
@family_option
@click.option("--period", type=float, default=None)
@click.option("--exponent", type=float, default=None)
@modes_option
@click.option("--range", "scan", type=(float, float, int), default=None, help="LO HI N.")
@click.option("--degeneracy", type=click.IntRange(1, 3), default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def scan(ctx, family, period, exponent, modes, scan, degeneracy, output):
    """Track a Hessian eigenvalue group along the family."""
    cfg, rec = _config(ctx, "scan", family=family, period=period, exponent=exponent, modes=modes, scan=scan and list(scan), degeneracy=degeneracy)
    params = _scan_params(cfg.scan)
    tr = _seed_tracker(cfg)
    kt = _pick_tracker(tr, float(params[0]), float(params[-1]), cfg.degeneracy, cfg.window)
    rows = scan_eigenvalue(kt, params)
    path = _out(cfg, "scan.csv", output)
    write_scan_csv(rows, path, header_lines(rec))
    for r in rows:
        click.echo(f"{num(r.parameter)} {num(r.kappa)} d={r.degeneracy}")
    click.echo(f"wrote {path}")


@main.command()
@family_option
@click.option("--period", type=float, default=None)
@click.option("--exponent", type=float, default=None)
@modes_option
@click.option("--bracket", type=(float, float), default=None, help="LO HI.")
@click.option("--degeneracy", type=click.IntRange(1, 3), default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def locate(ctx, family, period, exponent, modes, bracket, degeneracy, output):
    """Locate the zero crossing of a degenerate eigenvalue and write it as JSON."""
    cfg, rec = _config(ctx, "locate", family=family, period=period, exponent=exponent, modes=modes, bracket=bracket and list(bracket), degeneracy=degeneracy)
    if not cfg.bracket or len(cfg.bracket) != 2 or not cfg.bracket[0] < cfg.bracket[1]:
        raise click.UsageError("--bracket LO HI with LO < HI is required")
    bp = locate_bifurcation(_seed_tracker(cfg), tuple(cfg.bracket), degeneracy=cfg.degeneracy, window=cfg.window)
    report = {
        "parameter": bp.parameter,
        "degeneracy": bp.degeneracy,
        "symmetry_tag": bp.symmetry_tag.value if bp.symmetry_tag else None,
        "kappa": bp.kappa,
    }
    if bp.degeneracy == 2:
        a0, a1 = a3_integrals(bp)
        report.update(A3_0=a0, A3_1=a1, A3_integral=a3_coefficient(a0, a1, bp.symmetry_tag))
    path = _out(cfg, "bifurcation.json", output)
    _write_json(path, {"report": report, "bifurcation": bifurcation_to_dict(bp)}, rec)
    for k, v in report.items():
        click.echo(f"{k}: {_fmt(v)}")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--bifurcation", "bif_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--range", "scan", type=(float, float, int), default=None, help="Reference-family scan LO HI N; also bounds the branch.")
@click.option("--max-points", type=click.IntRange(4), default=None)
@click.option("--h", type=float, default=None, help="Seed amplitude (L2).")
@click.option("--theta", type=float, default=None, help="Seed direction in the (phi1, phi2) plane.")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def branch(ctx, bif_path, scan, max_points, h, theta, output):
    """Continue the bifurcated branch through its fold."""
    cfg, rec = _config(ctx, "branch", scan=scan and list(scan), max_points=max_points, h=h, theta=theta)
    rec["bifurcation_file"] = Path(bif_path).name
    bp = bifurcation_from_dict(json.loads(Path(bif_path).read_text())["bifurcation"])
    params = _scan_params(cfg.scan)
    lo, hi = float(params[0]), float(params[-1])
    if not lo < bp.parameter < hi:
        raise click.UsageError(f"scan range must contain the bifurcation parameter {bp.parameter!r}")
    tr = FamilyTracker(bp.family, bp.orbit, tol=cfg.tol)
    kt = _pick_tracker(tr, lo, hi, bp.degeneracy, cfg.window)
    rows = scan_eigenvalue(kt, params)
    ref = ReferenceFamily(tr, rows)
    theta = cfg.theta if cfg.theta is not None else default_theta(*a3_integrals(bp))
    ctl = ContinuationControls(max_points=cfg.max_points, ds_max=cfg.ds_max, param_bounds=(lo, hi))
    b = continue_branch(bp, ref, ctl, theta=theta, h=cfg.h)
    path = _out(cfg, "branch.csv", output)
    write_branch_csv(b, path, header_lines(rec))
    write_scan_csv(rows, path.with_name(path.stem + "-reference.csv"), header_lines(rec))
    click.echo(f"{len(b.points)} points, fold index {b.fold_index} ({b.message})")
    click.echo(f"wrote {path}")


def _fold_row(rows: list[dict], p_star: float, A3_integral: float | None, scan_rows: list[ScanRow] | None):
    s = [r["arclength"] for r in rows]
    p = [r["parameter"] for r in rows]
    fi = next((i for i, r in enumerate(rows) if r["is_fold"]), None)
    f = fold_from_table(s, p, [r["dS"] for r in rows], [r["amplitude"] for r in rows], [r["kappa_ref"] for r in rows], fi)
    A3, A4 = fit_A3A4(f.kappa0, f.deltaS0)
    if scan_rows is None:
        scan_rows = [ScanRow(r["parameter"], r["kappa_ref"], 2) for r in rows]
    line = fit_kappa_linear(linear_window(scan_rows, p_star, f.parameter))
    r0, ok = fold_condition(A3, A4)
    row = {
        "fold": f.parameter,
        "kappa0": f.kappa0,
        "deltaS0": f.deltaS0,
        "A3_fit": A3,
        "A3_integral": A3_integral,
        "A4": A4,
        "r0": r0,
        "fold_condition": ok,
        "kappa_intercept": line[0],
        "kappa_slope": line[1],
    }
    return row, line


@main.command()
@click.option("--branch", "branch_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--bifurcation", "bif_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--scan", "scan_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Scan CSV for the linear kappa map.")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def fold(ctx, branch_path, bif_path, scan_path, output):
    """Fold data, fitted coefficients and model-vs-branch curves."""
    cfg, rec = _config(ctx, "fold")
    rec.update(branch_file=Path(branch_path).name, bifurcation_file=bif_path and Path(bif_path).name)
    rows = read_branch_csv(branch_path)
    if len(rows) < 3:
        raise RuntimeError("branch has fewer than 3 points")
    A3_integral = p_star = None
    if bif_path:
        d = json.loads(Path(bif_path).read_text())
        A3_integral = d["report"].get("A3_integral")
        p_star = d["report"]["parameter"]
    if p_star is None:
        p_star = min(rows, key=lambda r: abs(r["amplitude"]))["parameter"]
    scan_rows = None
    if scan_path:
        with open(scan_path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")][1:]
        scan_rows = [ScanRow(float(a), float(k), int(dg)) for a, k, dg in (ln.strip().split(",") for ln in lines)]
    row, line = _fold_row(rows, p_star, A3_integral, scan_rows)
    path = _out(cfg, "fold.json", output)
    _write_json(path, {"fold": row}, rec)
    b = branch_from_rows(rows)
    curve = relative_action_curve(b, row["A3_fit"], row["A4"], line)
    write_curve_rows(curve, path.with_name(path.stem + "-curve.csv"), header_lines(rec))
    click.echo(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    click.echo(f"wrote {path}")


@main.command()
@click.option("--a3", "A3", type=float, required=True)
@click.option("--a4", "A4", type=float, required=True)
@click.option("--kappa", type=float, default=None)
@click.option("--kappa-rel", type=float, default=None, help="kappa in units of kappa0.")
@click.option("--extent", type=click.FloatRange(min=0, min_open=True), default=None)
@click.option("--resolution", type=click.IntRange(16), default=101)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_numerical
def surface(ctx, A3, A4, kappa, kappa_rel, extent, resolution, output):
    """Reduced-action surface on a square grid, with its critical points."""
    if (kappa is None) == (kappa_rel is None):
        raise click.UsageError("give exactly one of --kappa and --kappa-rel")
    cfg, rec = _config(ctx, "surface")
    rec.update(A3=A3, A4=A4, kappa=kappa, kappa_rel=kappa_rel, extent=extent, resolution=resolution)
    pred = fold_prediction(A3, A4)
    k = kappa if kappa is not None else kappa_rel * pred.kappa0
    if extent is None:
        radii = branch_radii(k, A3, A4) or (pred.r0,)
        extent = 1.5 * max(abs(3 * A3 / A4), *map(abs, radii))
    grid = surface_grid(A3, A4, k, extent, resolution)
    path = _out(cfg, "surface.csv", output)
    write_surface_csv(grid, path, header_lines(rec))
    cps = critical_points(k, A3, A4)
    lines = header_lines(rec)
    text = "".join(f"# {h}\n" for h in lines) + "label,r1,r2,kind,dS\n"
    for c in cps:
        text += f"{c.label},{num(c.r1)},{num(c.r2)},{c.kind},{num(reduced_action(c.r1, c.r2, k, A3, A4))}\n"
    atomic_write_text(path.with_name(path.stem + "-critical.csv"), text)
    click.echo(f"kappa={num(k)} kappa0={num(pred.kappa0)} critical points: {len(cps)}")
    for c in cps:
        click.echo(f"  {c.label:<12} ({c.r1:+.6f}, {c.r2:+.6f}) {c.kind}")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--case", "case", type=click.Choice(sorted(CASES)), required=True)
@click.pass_context
@_numerical
def reproduce(ctx, case):
    """Run one preset case end to end: locate, branch, fold and curves."""
    cfg, rec = _config(ctx, "reproduce")
    rec["case"] = CASES[case].to_dict()
    res = run_case(case)
    out = Path(cfg.out) / case
    hl = header_lines(rec)
    write_scan_csv(res.scan, out / "scan.csv", hl)
    write_branch_csv(res.branch, out / "branch.csv", hl)
    write_curve_rows(relative_action_curve(res.branch, res.A3_fit, res.A4_fit, res.kappa_line), out / "curve.csv", hl)
    row = res.table_row()
    err = model_errors(res)
    row["max_model_error"] = float(err.max()) if err.size else None
    _write_json(out / "table.json", {"table_row": row}, rec)
    click.echo(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    click.echo(f"wrote {out}")


if __name__ == "__main__":  # pragma: no cover
    main()
