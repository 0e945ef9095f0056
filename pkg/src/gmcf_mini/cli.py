"""Command-line front end: coupled runs, standalone LES, the pressure-solver
benchmark, and the boundary-range audit.

Usage: ``gmcf-mini <mode> --config <path> [--out DIR] [--seed N]
[--workers N] [--steps N]`` -- flags override config keys.  Exit codes:
0 success, 2 configuration error, 3 protocol error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dump, les, sor
from .config import MODES, RunConfig, parse_config, validate, validate_for_mode
from .driver import DriverConfig, driver_main, generate_profile
from .errors import ConfigError, GmcfError, NumericsError, ProtocolError
from .les import FlowState, les_main
from .runtime import ModelSpec, PacketType, Runtime, RuntimeConfig
from .sor import Grid, Scheme


def _scheme(cfg: RunConfig) -> Scheme:
    return Scheme.REDBLACK if cfg.sor_scheme == "redblack" else Scheme.TWINNED


def _omega(cfg: RunConfig) -> float:
    if cfg.sor_omega is not None:
        return cfg.sor_omega
    return 1.7 if cfg.sor_scheme == "redblack" else 1.0


def build_driver_config(cfg: RunConfig) -> DriverConfig:
    heights = cfg.z0 + cfg.level_spacing * np.arange(1, cfg.km + 1, dtype=np.float64)
    return DriverConfig(
        kp=cfg.km,
        u_star=cfg.u_star,
        z0=cfg.z0,
        level_heights=heights,
        gust_amplitude=cfg.gust_amplitude,
        gust_period=cfg.gust_period,
    )


def _raise_model_failures(results: dict) -> None:
    failures = {mid: r.error for mid, r in results.items() if not r.ok}
    if not failures:
        return
    msg = "; ".join(f"model {mid}: {err}" for mid, err in sorted(failures.items()))
    if any("NumericsError" in e for e in failures.values()):
        raise NumericsError("model run", msg)
    if any("ProtocolError" in e or "DeadlockError" in e for e in failures.values()):
        raise ProtocolError(msg)
    raise GmcfError(msg)


def _interval_lines(cfg, rt_cfg, send_log, les_id, les_record):
    """One record per coupled interval, from the LES tile's point of view."""
    interval = rt_cfg.coupled_interval_microsteps
    bounds = les_record.get("boundaries", [])
    steps_total = les_record.get("steps", 0)
    lines = []
    for k in range(1, cfg.n_coupled_intervals + 1):
        lo, hi = (k - 1) * interval, k * interval
        if k <= len(bounds):
            start = bounds[k - 1]["steps_before"]
            end = bounds[k]["steps_before"] if k < len(bounds) else steps_total
            steps_run = end - start
        else:
            steps_run = 0
        pin = sum(1 for s in send_log if s[1] == les_id and lo <= s[3] < hi)
        pout = sum(1 for s in send_log if s[0] == les_id and lo <= s[3] < hi)
        lines.append(
            {
                "interval": k,
                "driver_time_s": (k - 1) * interval * rt_cfg.microstep_seconds,
                "les_steps_run": steps_run,
                "packets_in": pin,
                "packets_out": pout,
            }
        )
    return lines


def run_coupled(cfg: RunConfig, out_dir: Path) -> dict:
    """Build the runtime, register both model entries, run, emit artifacts."""
    specs = [ModelSpec(i + 1, name, dt) for i, (name, dt) in enumerate(cfg.models)]
    rt_cfg = RuntimeConfig(specs)
    ids = {s.entry: s.model_id for s in specs}
    driver_id, les_id = ids["driver"], ids["les"]
    interval = rt_cfg.coupled_interval_microsteps
    if rt_cfg.dt_microsteps(driver_id) != interval:
        raise ConfigError("coupled mode expects the driver to own the largest time step")
    les_dt = rt_cfg.dt_microsteps(les_id)
    les_steps = cfg.n_coupled_intervals * (interval // les_dt)

    grid = Grid.uniform(cfg.im, cfg.jm, cfg.km, cfg.h)
    flow = FlowState.create(
        grid, dt=rt_cfg.microstep_seconds * les_dt, vn=cfg.vn, cs=cfg.cs
    )
    drv_cfg = build_driver_config(cfg)
    les_record: dict = {}
    wall: dict[str, float] = {}

    rt = Runtime(rt_cfg, cfg.worker_mode)

    def timed(name, fn):
        def entry(tile, mid):
            t0 = time.perf_counter()
            try:
                fn(tile, mid)
            finally:
                wall[name] = time.perf_counter() - t0

        return entry

    rt.register_entry(
        "driver",
        timed(
            "driver",
            lambda tile, mid: driver_main(
                tile, mid, drv_cfg, [les_id], cfg.n_coupled_intervals,
                interval, rt_cfg.microstep_seconds,
            ),
        ),
    )
    rt.register_entry(
        "les",
        timed(
            "les",
            lambda tile, mid: les_main(
                tile, mid, flow, [driver_id], les_steps, interval,
                dt_microsteps=les_dt, sor_iters=cfg.sor_n_iter,
                scheme=_scheme(cfg), record=les_record,
            ),
        ),
    )

    t0 = time.perf_counter()
    results = rt.run()
    total = time.perf_counter() - t0

    lines = _interval_lines(cfg, rt_cfg, rt.send_log, les_id, les_record)
    log_path = out_dir / "run.log"
    with log_path.open("w") as fh:
        for line in lines:
            text = (
                f"interval={line['interval']} driver_time={line['driver_time_s']:.1f}s "
                f"les_steps_run={line['les_steps_run']} "
                f"packets_in={line['packets_in']} packets_out={line['packets_out']}"
            )
            print(text, flush=True)
            fh.write(text + "\n")

    counts: dict[str, int] = {}
    for rec in rt.send_log:
        counts[rec[2]] = counts.get(rec[2], 0) + 1
    fins_observed = {
        str(mid): sorted(
            {k[1] for k in tile.consumed if k[0] == "FIN"}
            | {p.source for p in tile.pending[PacketType.FIN]}
        )
        for mid, tile in rt.tiles.items()
    }

    summary = {
        "mode": "coupled",
        "n_coupled_intervals": cfg.n_coupled_intervals,
        "seed": cfg.seed,
        "message_counts": dict(sorted(counts.items())),
        "les_steps": les_record.get("steps"),
        "first_interpolation_interval": les_record.get("first_interpolation_interval"),
        "profiles_received": les_record.get("profiles_received"),
        "fins_observed": fins_observed,
        "per_interval": lines,
        "exit_status": {str(mid): r.status for mid, r in sorted(results.items())},
        "timing": {"per_model_s": wall, "total_s": total},
    }

    _raise_model_failures(results)

    for name, arr in (("u", flow.u), ("v", flow.v), ("w", flow.w), ("p", flow.p)):
        dump.write_field(out_dir / f"{name}.gmcf", arr)
    dump.write_sidecar(
        out_dir / "fields.txt",
        {
            "fields": "u v w p",
            "dims": f"{cfg.im + 2} {cfg.jm + 2} {cfg.km + 2}",
            "dtype": "float32 little-endian",
            "seed": cfg.seed,
        },
    )
    dump.write_json(out_dir / "summary.json", summary)
    return summary


def run_les_standalone(cfg: RunConfig, out_dir: Path) -> dict:
    grid = Grid.uniform(cfg.im, cfg.jm, cfg.km, cfg.h)
    flow = FlowState.create(grid, dt=cfg.models[0][1], vn=cfg.vn, cs=cfg.cs)
    inflow = generate_profile(build_driver_config(cfg), 0.0)
    t0 = time.perf_counter()
    for _ in range(cfg.n_steps):
        les.step(flow, inflow, n_iter=cfg.sor_n_iter, scheme=_scheme(cfg), workers=cfg.sor_workers)
    elapsed = time.perf_counter() - t0
    for name, arr in (("u", flow.u), ("v", flow.v), ("w", flow.w), ("p", flow.p)):
        dump.write_field(out_dir / f"{name}.gmcf", arr)
    summary = {
        "mode": "les-standalone",
        "steps": cfg.n_steps,
        "max_abs_u": float(np.abs(flow.u).max()),
        "timing": {"total_s": elapsed},
    }
    dump.write_json(out_dir / "summary.json", summary)
    return summary


def run_sor_bench(cfg: RunConfig, out_dir: Path) -> dict:
    """Both schemes on the configured domain: residual CSVs plus a wall-time
    table over worker counts 1,2,4,... up to the configured limit."""
    grid = Grid.uniform(cfg.im, cfg.jm, cfg.km, cfg.h)
    coeffs = sor.build_uniform_coeffs(grid)
    rng = np.random.default_rng(cfg.seed)
    rhs = sor.make_field(cfg.im, cfg.jm, cfg.km)
    rhs[1:-1, 1:-1, 1:-1] = rng.uniform(-1, 1, size=(cfg.im, cfg.jm, cfg.km)).astype(np.float32)
    p0 = sor.make_field(cfg.im, cfg.jm, cfg.km)

    times = []
    t0 = time.perf_counter()
    _, res_rb = sor.solve_pressure(
        p0, rhs, coeffs, cfg.sor_omega if cfg.sor_omega is not None else 1.7,
        cfg.sor_n_iter, Scheme.REDBLACK,
    )
    times.append(("redblack", 1, time.perf_counter() - t0))
    dump.write_csv(
        out_dir / "redblack_residuals.csv",
        "iteration,residual",
        [(i, f"{r:.17g}") for i, r in enumerate(res_rb)],
    )

    counts = [1]
    while counts[-1] * 2 <= cfg.sor_workers:
        counts.append(counts[-1] * 2)
    omega_tw = cfg.sor_omega if cfg.sor_omega is not None else 1.0
    res_tw_base = None
    bitwise_ok = True
    for w in counts:
        t0 = time.perf_counter()
        p_tw, res_tw = sor.solve_pressure(p0, rhs, coeffs, omega_tw, cfg.sor_n_iter, Scheme.TWINNED, workers=w)
        times.append(("twinned", w, time.perf_counter() - t0))
        if res_tw_base is None:
            res_tw_base = res_tw
            dump.write_csv(
                out_dir / "twinned_residuals.csv",
                "iteration,residual",
                [(i, f"{r:.17g}") for i, r in enumerate(res_tw)],
            )
        else:
            bitwise_ok = bitwise_ok and np.array_equal(res_tw, res_tw_base)

    dump.write_csv(
        out_dir / "sor_bench_times.csv",
        "scheme,workers,seconds",
        [(s, w, f"{t:.4f}") for s, w, t in times],
    )
    for s, w, t in times:
        print(f"{s:9s} workers={w}: {t:.3f}s", flush=True)
    tw_times = {w: t for s, w, t in times if s == "twinned"}
    summary = {
        "mode": "sor-bench",
        "domain": [cfg.im, cfg.jm, cfg.km],
        "n_iter": cfg.sor_n_iter,
        "worker_counts": counts,
        "residuals_worker_invariant": bool(bitwise_ok),
        "speedup_vs_1": {str(w): tw_times[1] / tw_times[w] for w in counts},
        "timing": {"table": [(s, w, t) for s, w, t in times]},
    }
    dump.write_json(out_dir / "summary.json", summary)
    return summary


def run_boundary_audit(cfg: RunConfig, out_dir: Path) -> dict:
    """Exhaustive check that the gid decode covers every boundary point
    exactly once and that all padding gids hit the guarded branch."""
    ip, jp, kp = cfg.im, cfg.jm, cfg.km
    br = sor.boundary_range(ip, jp, kp)
    pr = sor.padded_range(br, cfg.nthreads, cfg.nunits)
    seen: dict = {}
    for gid in range(br):
        bp = sor.map_boundary_gid(gid, ip, jp, kp)
        if bp is sor.PADDING:
            raise GmcfError(f"coverage violation: gid {gid} mapped to padding inside the range")
        key = (bp.face, bp.coords)
        if key in seen:
            raise GmcfError(f"coverage violation: gid {gid} repeats point hit by gid {seen[key]}")
        seen[key] = gid
    expected = jp * kp + kp * ip + jp * ip
    if len(seen) != expected:
        raise GmcfError(f"coverage violation: {len(seen)} points covered, expected {expected}")
    for gid in range(br, pr):
        if sor.map_boundary_gid(gid, ip, jp, kp) is not sor.PADDING:
            raise GmcfError(f"padding violation: gid {gid} escaped the guard")
    print(
        f"boundary audit ok: domain=({ip},{jp},{kp}) m={cfg.nthreads * cfg.nunits} "
        f"covered={br} padding={pr - br}",
        flush=True,
    )
    summary = {
        "mode": "boundary-audit",
        "domain": [ip, jp, kp],
        "boundary_range": br,
        "padded_range": pr,
        "padding_gids": pr - br,
    }
    dump.write_json(out_dir / "summary.json", summary)
    return summary


_RUNNERS = {
    "coupled": run_coupled,
    "les-standalone": run_les_standalone,
    "sor-bench": run_sor_bench,
    "boundary-audit": run_boundary_audit,
}


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmcf-mini")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None, help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None, help="solver workers")
    ap.add_argument(
        "--steps", type=int, default=None,
        help="coupled: intervals; les-standalone: steps; sor-bench: iterations",
    )
    return ap


def _apply_overrides(cfg: RunConfig, args) -> None:
    cfg.mode = args.mode
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.sor_workers = args.workers
    if args.steps is not None:
        if cfg.mode == "coupled":
            cfg.n_coupled_intervals = args.steps
        elif cfg.mode == "sor-bench":
            cfg.sor_n_iter = args.steps
        else:
            cfg.n_steps = args.steps
    validate(cfg)
    validate_for_mode(cfg)


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        cfg = parse_config(Path(args.config).read_text())
        _apply_overrides(cfg, args)
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _RUNNERS[cfg.mode](cfg, out_dir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except GmcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
