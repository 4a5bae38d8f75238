"""Experiment runner: every verification and simulation as a subcommand.

Each run writes ``<out>/<command>.json`` (validated against the bundled
report schema) plus, for the time-dependent commands, a trace CSV and a
final-state checkpoint. Exit codes: 0 pass, 1 check failure, 2 config or
format error, 3 blow-up, 4 bracket failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import darboux as dbx
from .config import ConfigError, RunConfig, load_config, render_config, validate
from .diagnostics import (
    IDENTITY_FLOOR,
    TraceContext,
    TraceFormatError,
    TraceRecorder,
    consistency_check,
    damping_report,
    dense_centres,
    measured_constants,
    read_trace,
    virial_identity_check,
    windowed_mean,
    write_trace,
)
from .dynamics import (
    BracketError,
    EvolveConfig,
    Evolver,
    FieldState,
    PreconditionError,
    energy,
    fit_exponent,
    fit_frequency,
    fit_growth_rate,
    project_off_unstable,
    shadow_manifold,
    shoot_manifold,
    steady_residual,
    unstable_direction,
)
from .numerics import EVEN, ODD, ConfigurationError, Grid1D, GridFn, inner
from .spectral import (
    GAMMA_CLOSED,
    SOLITON_ENERGY,
    build_basis,
    build_weights,
    eigen_residuals,
    fgr_constant_by_quadrature,
    fgr_H_identities,
    gram_matrix,
    project_continuous,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP, EXIT_BRACKET = 0, 1, 2, 3, 4
COMMANDS = ("eigencheck", "fgr", "darboux", "evolve", "shoot", "trace-check")
SMOOTHING_SWEEP = (0.01, 0.05, 0.2)
DOUBLING_GRIDS = (1201, 2401)
DOUBLING_FACTOR = 64.0


class Report:
    def __init__(self, command: str):
        self.command = command
        self.checks: list[dict] = []
        self.data: dict = {}
        self.error: str | None = None
        self.exit_code: int | None = None

    def check(self, name: str, residual, tolerance: float, passed: bool | None = None):
        residual = None if residual is None else float(residual)
        if passed is None:
            passed = residual is not None and math.isfinite(residual) and residual <= tolerance
        self.checks.append({"check_name": name, "residual": residual,
                            "tolerance": float(tolerance), "pass": bool(passed)})

    def extend(self, checks):
        for c in checks:
            self.check(c["check_name"], c["residual"], c["tolerance"], c["pass"])

    def fail(self, code: int, message: str):
        # the most severe failure wins: 3 and 4 outrank 2, which outranks 1
        if self.exit_code is None or code > self.exit_code:
            self.exit_code = code
        self.error = message if self.error is None else f"{self.error}; {message}"

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks) and self.exit_code in (None, EXIT_PASS)

    def final_code(self) -> int:
        if self.exit_code not in (None, EXIT_PASS):
            return self.exit_code
        return EXIT_PASS if self.passed else EXIT_FAIL

    def as_dict(self, cfg: RunConfig | None) -> dict:
        out = {
            "command": self.command,
            "pass": self.passed,
            "exit_code": self.final_code(),
            "checks": self.checks,
            "data": self.data,
            "config": asdict(cfg) if cfg is not None else {},
        }
        if self.error is not None:
            out["error"] = self.error
        return plain(out)


def plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def report_schema() -> dict:
    return json.loads(resources.files("kglab").joinpath("report.schema.json").read_text())


def write_report(out_dir: Path, payload: dict) -> Path:
    jsonschema.validate(payload, report_schema())
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{payload['command']}.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get("KGLAB_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"KGLAB_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError("KGLAB_THREADS must be at least 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


# initial states and checkpoints -------------------------------------------------

def bump(grid: Grid1D) -> GridFn:
    """Unit-L2 even Gaussian used by the bump presets."""
    f = grid.sample(lambda x: np.exp(-x**2 / 2), EVEN)
    return f / f.norm()


def perturbation(kind: str, amplitude: float, basis) -> FieldState:
    grid = basis.grid
    zero = grid.fn(0.0, EVEN)
    if kind == "Y0":
        yp = unstable_direction(basis)
        return FieldState(amplitude * yp.phi1, amplitude * yp.phi2)
    if kind == "Y2":
        return FieldState(amplitude * basis.Y2, zero)
    if kind == "bump":
        return FieldState(amplitude * bump(grid), zero)
    if kind == "none":
        return FieldState(zero, zero)
    raise ConfigError(f"unknown perturbation {kind!r}")


def write_checkpoint(path: Path, s: FieldState):
    grid = s.grid
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "phi1", "phi2"])
    for row in zip(grid.x, s.phi1.values, s.phi2.values):
        writer.writerow([format(float(v), ".17g") for v in row])
    buf.write(f"# t={format(float(s.time), '.17g')}\n# R={grid.half_width!r}\n# N={grid.n_points}\n")
    path.write_text(buf.getvalue())


def read_checkpoint(path: str, grid: Grid1D) -> FieldState:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from None
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or rows[0] != ["x", "phi1", "phi2"]:
        raise ConfigError("checkpoint header must be x,phi1,phi2")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        t0 = float(meta.get("t", "0"))
    except ValueError as exc:
        raise ConfigError(f"checkpoint: {exc}") from None
    if data.shape != (grid.n_points, 3) or np.max(np.abs(data[:, 0] - grid.x)) > 1e-9 * grid.half_width:
        raise ConfigError("checkpoint grid does not match the configured grid")
    p1, p2 = data[:, 1], data[:, 2]
    # the mode decomposition is defined on even states only
    if np.any(p1 != p1[::-1]) or np.any(p2 != p2[::-1]):
        raise ConfigError("checkpoint state is not exactly even")
    return FieldState(GridFn(grid, p1, EVEN), GridFn(grid, p2, EVEN), t0)


# eigencheck ------------------------------------------------------------------------

def refined(grid: Grid1D) -> Grid1D:
    return Grid1D(grid.half_width, 2 * grid.n_points - 1, grid.sponge_width)


def cmd_eigencheck(cfg: RunConfig, out_dir: Path) -> Report:
    rep = Report("eigencheck")
    coarse = cfg.make_grid()
    for label, grid in (("N", coarse), ("2N", refined(coarse))):
        basis = build_basis(grid)
        for name, value in eigen_residuals(basis).items():
            rep.check(f"{label}:eigen_residual_{name}", value, 1e-7)
        gram = gram_matrix(basis)
        rep.check(f"{label}:orthonormality", np.max(np.abs(gram - np.eye(3))), 1e-10)
        rep.check(f"{label}:soliton_steady_residual", steady_residual(basis.Q), 1e-7)
        zero = grid.fn(0.0, EVEN)
        rep.check(f"{label}:soliton_energy", abs(energy(FieldState(basis.Q, zero)) - SOLITON_ENERGY), 1e-10)
        rep.check(f"{label}:g_orthogonal_Y0", abs(inner(basis.Y0, basis.g)), 1e-9)
        rep.check(f"{label}:g_orthogonal_Y2", abs(inner(basis.Y2, basis.g)), 1e-9)
        rep.data[label] = {"R": grid.half_width, "N": grid.n_points, "h": grid.h,
                           "gram": gram.tolist()}
    return rep


# fgr -------------------------------------------------------------------------------

def half_domain(grid: Grid1D) -> Grid1D:
    """Grid with the same spacing on (about) half the domain, odd point count kept."""
    m = (grid.n_points - 1) // 2
    if m % 2:
        m -= 1
    return Grid1D(m * grid.h / 2, m + 1)


def cmd_fgr(cfg: RunConfig, out_dir: Path) -> Report:
    rep = Report("fgr")
    grid = cfg.make_grid()
    basis = build_basis(grid)
    gq = fgr_constant_by_quadrature(basis)
    rep.check("Gamma_quadrature_vs_closed_form", abs(gq - GAMMA_CLOSED) / GAMMA_CLOSED, 1e-9)
    ident = fgr_H_identities(basis)
    rep.extend(ident["checks"])
    rep.check("g_orthogonal_Y0", abs(inner(basis.Y0, basis.g)), 1e-9)
    rep.check("g_orthogonal_Y2", abs(inner(basis.Y2, basis.g)), 1e-9)
    half = half_domain(grid)
    g_half = fgr_constant_by_quadrature(build_basis(half))
    rep.check("Gamma_half_domain_agreement", abs(g_half - gq), 1e-9)
    rep.data.update({
        "Gamma_quadrature": gq,
        "Gamma_closed_form": GAMMA_CLOSED,
        "Gamma_from_Hhat": ident["Gamma_from_Hhat"],
        "Gamma_half_domain": g_half,
        "half_domain_R": half.half_width,
        "H_parity": ident["H_parity"],
        "Hhat_polynomial_factor": ident["polynomial_factor_at_xi2_eq_2"],
    })
    return rep


# darboux ---------------------------------------------------------------------------

def function_suite(grid: Grid1D, seed: int) -> list[tuple[str, GridFn]]:
    """Ten even and ten odd decaying test functions with seeded shapes."""
    rng = np.random.default_rng(seed)
    suite = []
    for k in range(10):
        w, q = rng.uniform(1.0, 4.0), rng.uniform(0.0, 2.0)
        suite.append((f"even_{k}", grid.sample(
            lambda x, w=w, q=q: np.exp(-(x / w) ** 2) * np.cos(q * x), EVEN)))
    for k in range(10):
        w, q = rng.uniform(1.0, 4.0), rng.uniform(0.0, 2.0)
        suite.append((f"odd_{k}", grid.sample(
            lambda x, w=w, q=q: x * np.exp(-(x / w) ** 2) * np.cos(q * x), ODD)))
    return suite


def darboux_residuals(f: GridFn, basis) -> dict[str, float]:
    """Residuals used for the grid-doubling convergence check."""
    app = dbx.appendix_identities(f)
    return {
        "conjugation": dbx.conjugation_residual(f, basis)[0],
        "D123_R": dbx.right_inverse_residuals(basis)["D123_R"],
        "appendix_R_d2v": app["R_d2v"]["residual"],
        "appendix_R_d4v": app["R_d4v"]["residual"],
        "transfer": dbx.transfer_identity_residual(f, basis),
    }


def cmd_darboux(cfg: RunConfig, out_dir: Path) -> Report:
    rep = Report("darboux")
    grid = cfg.make_grid()
    basis = build_basis(grid)
    weights = build_weights(grid, cfg.weights.A, cfg.weights.eps)
    suite = function_suite(grid, cfg.seed)

    not_decaying = []
    for name, f in suite:
        rel, flagged = dbx.conjugation_residual(f, basis)
        rep.check(f"conjugation_{name}", rel, 1e-6)
        if flagged:
            not_decaying.append(name)
    for name, v in dbx.kernel_residuals(basis).items():
        rep.check(f"kernel_{name}", v, 1e-7)
    for name, v in dbx.right_inverse_residuals(basis).items():
        rep.check(f"right_inverse_{name}", v, 1e-7)
    for name, v in dbx.z_identities(grid).items():
        rep.check(f"z_identity_{name}", v, 1e-7)

    worst: dict[str, float] = {}
    transfer = 0.0
    for name, f in suite:
        app = dbx.appendix_identities(f)
        for key in ("ibp_R1", "ibp_R2", "ibp_R3", "R_d2v", "R_d4v"):
            worst[key] = max(worst.get(key, 0.0), app[key]["residual"])
        transfer = max(transfer, dbx.transfer_identity_residual(f, basis))
    for key, v in worst.items():
        rep.check(f"appendix_{key}", v, 1e-6)
    rep.check("transfer_identity", transfer, 1e-7)

    fine_over_coarse = {}
    levels = []
    for n in DOUBLING_GRIDS:
        g = Grid1D(grid.half_width, n)
        levels.append(darboux_residuals(function_suite(g, cfg.seed)[0][1], build_basis(g)))
    for key in levels[0]:
        ratio = levels[0][key] / levels[1][key] if levels[1][key] > 0 else math.inf
        fine_over_coarse[key] = {"coarse": levels[0][key], "fine": levels[1][key], "ratio": ratio}
        rep.check(f"doubling_{key}", 1.0 / ratio, 1.0 / DOUBLING_FACTOR)

    pairing = max(dbx.adjoint_pairing_residual(l, suite[0][1], suite[10][1]) for l in dbx.INDICES)
    rep.check("adjoint_pairing", pairing, 1e-10)

    table = []
    probes = [(name, project_continuous(f, basis)) for name, f in suite[::5]]
    for eps in SMOOTHING_SWEEP:
        for name, u in probes:
            lhs, rhs = dbx.transfer_bound_probe(u, eps, basis, weights.rho)
            table.append({
                "eps": eps, "function": name, "rho_u": lhs, "rho_S_u_plus_rho_dS_u": rhs,
                "transfer_ratio": rhs / lhs,
                "weighted_S_constant": dbx.weighted_S_bound_probe(u, eps, weights.sigma_A),
                "smoothing_constants": {str(m): c for m, c in dbx.smoothing_norm_probe(u, eps).items()},
            })
    f0 = suite[0][1]
    rep.data.update({
        "suite_not_decaying": not_decaying,
        "doubling": fine_over_coarse,
        "transfer_ratio_table": table,
        "weighted_R_constants": {
            str(l): dbx.weighted_R_norm(l, f0, weights.rho) / f0.norm() for l in dbx.INDICES
        },
        "appendix_worst": worst,
    })
    return rep


# evolve ----------------------------------------------------------------------------

_PRESET_PERTURBATION = {"soliton": "none", "soliton+Y0": "Y0", "soliton+Y2": "Y2",
                        "soliton+bump": "bump"}


def evolve_config(cfg: RunConfig, **kw) -> EvolveConfig:
    e = cfg.evolve
    base = dict(dt=e.dt, t_end=e.t_end, sponge=e.sponge, mode=e.mode, record_every=e.record_every)
    base.update(kw)
    return EvolveConfig(**base)


def first_exit_time(records, theta: float) -> float | None:
    for r in records:
        if abs(r.bplus) > theta:
            return r.t
    return None


def rate_fits(records) -> dict:
    t = np.array([r.t for r in records])
    out = {}
    bp = np.array([r.bplus for r in records])
    half = len(t) // 2
    if len(t) >= 4 and np.all(np.abs(bp[half:]) > 0):
        out["bplus_growth_rate"] = fit_growth_rate(t[half:], bp[half:])
    z1 = np.array([r.z1 for r in records])
    # roundoff-level z1 has spurious zero crossings
    if np.max(np.abs(z1)) > 1e-9:
        try:
            out["z1_frequency"] = fit_frequency(t, z1)
        except ValueError:
            pass
    return out


def cmd_evolve(cfg: RunConfig, out_dir: Path) -> Report:
    rep = Report("evolve")
    e = cfg.evolve
    grid = cfg.make_grid()
    basis = build_basis(grid)
    weights = build_weights(grid, cfg.weights.A, cfg.weights.eps)
    evolver = Evolver(basis, evolve_config(cfg))
    linear = e.mode == "linearized"
    q_state = FieldState(basis.Q, grid.fn(0.0, EVEN))

    if e.preset == "custom":
        full = read_checkpoint(e.custom_file, grid)
        start = full - q_state if linear else full
    else:
        pert = perturbation(_PRESET_PERTURBATION[e.preset], e.amplitude, basis)
        start = pert if linear else evolver.soliton_state() + pert
    t0 = start.time

    ctx = TraceContext(basis, weights, e.sponge, e.dt)
    records = []

    def on_record(s):
        records.append(ctx.record(q_state.at(s.time) + s if linear else s))

    final, outcome = evolver.evolve(start, t0 + e.t_end, on_record, e.record_every)
    meta = {"command": "evolve", "preset": e.preset, "mode": e.mode, "amplitude": e.amplitude,
            "dt": e.dt, "R": grid.half_width, "N": grid.n_points, "sponge": e.sponge,
            "seed": cfg.seed}
    if outcome.status == "blowup":
        meta["blowup_time"] = outcome.time
        rep.fail(EXIT_BLOWUP, f"solution blew up after t={outcome.time:.6g}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "evolve_trace.csv", records, meta)
    write_checkpoint(out_dir / "evolve_checkpoint.csv", q_state.at(final.time) + final if linear else final)

    rep.check("parity_defect", final.parity_defect(), 1e-12)
    cons = consistency_check(records)
    rep.check("trace_consistency", max(v["max_relative_error"] for k, v in cons.items() if k != "pass"),
              1e-12)
    energies = [r.E for r in records]
    rep.data.update({
        "n_records": len(records),
        "t_final": final.time,
        "status": outcome.status,
        "first_exit_time": first_exit_time(records, cfg.shoot.theta_exit),
        "theta_exit": cfg.shoot.theta_exit,
        "energy_initial": energies[0],
        "energy_final": energies[-1],
        "max_field_variation": max(
            abs(getattr(r, k) - getattr(records[0], k))
            for r in records for k in ("a1", "a2", "z1", "z2", "M", "E")
        ),
        **rate_fits(records),
    })
    return rep


# shoot -----------------------------------------------------------------------------

def shoot_one(cfg: RunConfig, amplitude: float) -> dict:
    """One bisection; a top-level function so a process pool can run it."""
    grid = cfg.make_grid()
    basis = build_basis(grid)
    evolver = Evolver(basis, evolve_config(cfg, mode="nonlinear"))
    eps = perturbation(cfg.shoot.perturbation, amplitude, basis)
    s = cfg.shoot
    try:
        res = shoot_manifold(eps, evolver, s.t_horizon, s.tol, s.theta_exit)
    except BracketError as exc:
        return {"amplitude": amplitude, "error": str(exc), "lo_class": exc.lo_class,
                "hi_class": exc.hi_class, "h_max": exc.h_max}
    return {"amplitude": amplitude, "h": res.h, "bracket": list(res.bracket), "h_max": res.h_max,
            "norm_eps": res.norm_eps, "n_probes": res.n_probes, "t_horizon": res.t_horizon}


def run_sweep(cfg: RunConfig, amplitudes) -> list[dict]:
    workers = worker_count(len(amplitudes))
    if workers == 1:
        return [shoot_one(cfg, a) for a in amplitudes]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(shoot_one, [cfg] * len(amplitudes), amplitudes))


def cmd_shoot(cfg: RunConfig, out_dir: Path) -> Report:
    rep = Report("shoot")
    s = cfg.shoot
    amplitudes = list(s.amplitudes)
    wanted = amplitudes + ([s.trajectory_amplitude] if s.trajectory_amplitude not in amplitudes else [])
    results = run_sweep(cfg, wanted)
    by_amp = dict(zip(wanted, results))
    sweep = [by_amp[a] for a in amplitudes]
    failed = [r for r in results if "error" in r]
    for r in failed:
        rep.fail(EXIT_BRACKET, f"amplitude {r['amplitude']}: {r['error']}")

    ok = [r for r in sweep if "error" not in r]
    rep.data["sweep"] = sweep
    rep.data["largest_successful_amplitude"] = max((r["amplitude"] for r in ok), default=None)
    for r in ok:
        if r["amplitude"] == 0:
            rep.check("zero_amplitude_h", abs(r["h"]), 1e-10)
    fit_pts = [(r["norm_eps"], r["h"]) for r in ok if r["amplitude"] > 0 and r["h"] != 0]
    if len(fit_pts) >= 2:
        p, c = fit_exponent(*zip(*fit_pts))
        rep.data["h_exponent"] = p
        rep.data["h_log_prefactor"] = c
        rep.check("h_scaling_exponent_min", p, 1.4, passed=p >= 1.4)

    traj = by_amp[s.trajectory_amplitude]
    if "error" in traj or s.trajectory_t_end <= 0:
        return rep

    grid = cfg.make_grid()
    basis = build_basis(grid)
    weights = build_weights(grid, cfg.weights.A, cfg.weights.eps)
    evolver = Evolver(basis, evolve_config(cfg, mode="nonlinear"))
    eps = perturbation(s.perturbation, s.trajectory_amplitude, basis)
    eps = project_off_unstable(eps, basis)
    h = traj["h"]
    yp = unstable_direction(basis)
    start = evolver.soliton_state() + eps + yp.scaled(h)
    start = start.with_even()
    ctx = TraceContext(basis, weights, cfg.evolve.sponge, cfg.evolve.dt)
    dense = s.dense_window > 0
    recorder = TraceRecorder(ctx, s.dense_window if dense else None, cfg.evolve.record_every)
    shadow = shadow_manifold(start, evolver, s.trajectory_t_end, recorder,
                             record_every=1 if dense else cfg.evolve.record_every,
                             segment=s.reshoot_segment, theta=s.theta_exit)
    records = recorder.records
    meta = {"command": "shoot", "amplitude": s.trajectory_amplitude, "perturbation": s.perturbation,
            "h": h, "norm_eps": traj["norm_eps"], "dt": cfg.evolve.dt, "R": grid.half_width,
            "N": grid.n_points, "sponge": cfg.evolve.sponge, "seed": cfg.seed,
            "n_corrections": len(shadow.corrections)}
    if shadow.outcome.status == "blowup":
        meta["blowup_time"] = shadow.outcome.time
        rep.fail(EXIT_BLOWUP, f"trajectory blew up after t={shadow.outcome.time:.6g}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "shoot_trace.csv", records, meta)
    write_checkpoint(out_dir / "shoot_checkpoint.csv", shadow.final)

    norm_eps = traj["norm_eps"]
    max_dist = max(r.dist_H1L2 for r in records)
    if norm_eps > 0:
        rep.check("trajectory_distance_over_eps", max_dist / norm_eps, 5.0)
    corr = [abs(c) for _, c in shadow.corrections]
    t_end = records[-1].t
    damping = damping_report(records)
    if t_end >= 400 - 1e-9:
        rep.check("M_decay_ratio", damping["M_ratio"], 0.1)
        rep.check("local_energy_5_ratio", damping["localE_5_ratio"], 0.2)
        rep.check("int_M_flattening", damping["flattening_ratio"], 0.5)
    if len(dense_centres(records)):
        idc = virial_identity_check(records)
        for name, v in idc["identities"].items():
            rep.check(f"identity_{name}", v["max_excess_over_truncation"], IDENTITY_FLOOR, v["pass"])
        rep.data["identities"] = idc
    means = {}
    if t_end > 0:
        w = min(10.0, t_end / 2)
        means = {"modz2_first_window": windowed_mean(records, "modz2", 0.0, w),
                 "modz2_last_window": windowed_mean(records, "modz2", t_end - w, t_end)}
    rep.data["trajectory"] = {
        "amplitude": s.trajectory_amplitude,
        "h": h,
        "norm_eps": norm_eps,
        "max_distance": max_dist,
        "t_end": t_end,
        "n_records": len(records),
        "max_correction": max(corr, default=0.0),
        "n_corrections": len(corr),
        "damping": damping,
        "measured_constants": measured_constants(records, cfg.weights.A, norm_eps),
        **means,
    }
    return rep


# trace-check -----------------------------------------------------------------------

def cmd_trace_check(trace_file: str, out_dir: Path) -> Report:
    rep = Report("trace-check")
    try:
        records, meta = read_trace(trace_file)
    except (OSError, TraceFormatError) as exc:
        rep.fail(EXIT_CONFIG, f"unreadable trace: {exc}")
        return rep
    rep.data["metadata"] = meta
    rep.data["n_records"] = len(records)
    cons = consistency_check(records)
    for name, v in cons.items():
        if name != "pass":
            rep.check(f"consistency_{name}", v["max_relative_error"], 1e-12)
    try:
        idc = virial_identity_check(records)
    except PreconditionError as exc:
        rep.fail(EXIT_CONFIG, f"trace cannot be replayed: {exc}")
        return rep
    for name, v in idc["identities"].items():
        rep.check(f"identity_{name}", v["max_excess_over_truncation"], IDENTITY_FLOOR, v["pass"])
    rep.data["identities"] = idc
    return rep


# entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [run] output_dir)")
    common.add_argument("--seed", type=int, help="seed for randomized suites")
    common.add_argument("--preset", metavar="NAME", help="initial-state preset for evolve")
    common.add_argument("--print-config", action="store_true",
                        help="print the full configuration with defaults and exit")
    parser = argparse.ArgumentParser(prog="kglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "trace-check":
            sp.add_argument("trace_file", nargs="?", help="trace CSV to replay")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.preset is not None:
        cfg = replace(cfg, evolve=replace(cfg.evolve, preset=args.preset))
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    validate(cfg)
    return cfg


def run(args) -> tuple[Report, RunConfig | None]:
    try:
        cfg = resolve_config(args)
    except (ConfigError, ConfigurationError) as exc:
        rep = Report(args.command)
        rep.fail(EXIT_CONFIG, f"config error: {exc}")
        return rep, None
    out_dir = Path(cfg.output_dir)
    try:
        if args.command == "trace-check":
            if not args.trace_file:
                raise ConfigError("trace-check needs a trace file")
            rep = cmd_trace_check(args.trace_file, out_dir)
        else:
            handler = {"eigencheck": cmd_eigencheck, "fgr": cmd_fgr, "darboux": cmd_darboux,
                       "evolve": cmd_evolve, "shoot": cmd_shoot}[args.command]
            rep = handler(cfg, out_dir)
    except (ConfigError, ConfigurationError, PreconditionError, dbx.PreconditionError) as exc:
        rep = Report(args.command)
        rep.fail(EXIT_CONFIG, f"config error: {exc}")
    return rep, cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_config:
        try:
            sys.stdout.write(render_config(resolve_config(args)))
        except (ConfigError, ConfigurationError) as exc:
            print(f"kglab: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_PASS
    rep, cfg = run(args)
    out_dir = Path(cfg.output_dir if cfg is not None else (args.out or RunConfig().output_dir))
    payload = rep.as_dict(cfg)
    path = write_report(out_dir, payload)
    failed = [c["check_name"] for c in payload["checks"] if not c["pass"]]
    status = "PASS" if payload["pass"] else "FAIL"
    print(f"kglab {args.command}: {status} (exit {payload['exit_code']}), "
          f"{len(payload['checks'])} checks, report {path}")
    for name in failed:
        print(f"  failed: {name}")
    if rep.error:
        print(f"  error: {rep.error}", file=sys.stderr)
    return payload["exit_code"]
