"""Config-driven benchmark harness around the cavity solver.

A run builds the mesh and state, executes warmup plus N outer iterations per
repeat under the configured dispatch policy and memory mode, and reports the
figure of merit (mean seconds per step, warmup excluded), the residual
history, the migration profile, pool statistics and a Chrome trace.

Config files are flat `key = value` assignments, one per line, `#` comments
allowed.  Every key can be overridden by an environment variable named
BENCH_<KEY upper-cased>, e.g. BENCH_N_STEPS=5.

cost_per_page_us defaults to "auto": it is calibrated at run start so that
one full cell-field transfer costs five times the measured time of one
elementwise kernel over that field, at the configured mesh size and lane.
"""

import json
import math
import os
import statistics
import time
from dataclasses import dataclass, asdict

from .dispatch import (ExecPolicy, Lane, run_kernel, run_serial,
                       write_chrome_trace)
from .field import Field
from .memory import PoolAllocator, profile_summary
from .mesh import build_structured_mesh
from .simple import SimpleControls, initialize_state, simple_outer_iteration


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_cutoff(text):
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return int(t)


def _parse_cost(text):
    t = text.strip().lower()
    if t == "auto":
        return "auto"
    return float(t)


_REQUIRED = object()

# key -> (parser, default)
_CONFIG_KEYS = {
    "nx": (int, _REQUIRED),
    "ny": (int, _REQUIRED),
    "lid_velocity": (float, 1.0),
    "reynolds": (float, 100.0),
    "n_steps": (int, 20),
    "n_warmup": (int, 1),
    "cutoff": (_parse_cutoff, 10000),
    "mode": (str, "unified"),
    "parallel_width": (int, 4),
    "pool_enabled": (_parse_bool, True),
    "pool_threshold": (int, 5000),
    "page_bytes": (int, 4096),
    "cost_per_page_us": (_parse_cost, "auto"),
    "repeats": (int, 5),
    "simulate_delay": (_parse_bool, False),
    "trace_path": (str, "trace.json"),
    "report_path": (str, "bench_report.json"),
    "baseline_report": (str, ""),
    "seed": (int, 0),
}


@dataclass
class RunConfig:
    nx: int
    ny: int
    lid_velocity: float = 1.0
    reynolds: float = 100.0
    n_steps: int = 20
    n_warmup: int = 1
    cutoff: float = 10000
    mode: str = "unified"
    parallel_width: int = 4
    pool_enabled: bool = True
    pool_threshold: int = 5000
    page_bytes: int = 4096
    cost_per_page_us: object = "auto"
    repeats: int = 5
    simulate_delay: bool = False
    trace_path: str = "trace.json"
    report_path: str = "bench_report.json"
    baseline_report: str = ""
    seed: int = 0

    def validate(self):
        checks = [
            (self.nx >= 2 and self.ny >= 2, "nx/ny must be at least 2"),
            (self.n_steps >= 1, "n_steps must be at least 1"),
            (self.repeats >= 1, "repeats must be at least 1"),
            (self.n_warmup >= 0, "n_warmup must be non-negative"),
            (self.cutoff >= 0, "cutoff must be non-negative"),
            (self.parallel_width >= 1, "parallel_width must be at least 1"),
            (self.mode in ("unified", "discrete"),
             "mode must be 'unified' or 'discrete'"),
            (self.reynolds > 0, "reynolds must be positive"),
            (self.lid_velocity != 0, "lid_velocity must be non-zero"),
            (self.pool_threshold >= 0, "pool_threshold must be non-negative"),
            (self.page_bytes >= 1, "page_bytes must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(f"invalid config: {message}")
        return self

    def echo(self):
        return asdict(self)


def parse_config(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(
                f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key not in _CONFIG_KEYS:
            raise ValueError(
                f"{source}:{lineno}: unknown key {key!r}; valid keys: "
                f"{', '.join(sorted(_CONFIG_KEYS))}")
        parser, _ = _CONFIG_KEYS[key]
        try:
            values[key] = parser(value.strip())
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}")

    for key, (parser, default) in _CONFIG_KEYS.items():
        env = os.environ.get("BENCH_" + key.upper())
        if env is not None:
            try:
                values[key] = parser(env)
            except ValueError as exc:
                raise ValueError(
                    f"environment override BENCH_{key.upper()}: {exc}")

    missing = [k for k, (_, d) in _CONFIG_KEYS.items()
               if d is _REQUIRED and k not in values]
    if missing:
        raise ValueError(f"{source}: missing required keys: {missing}")
    return RunConfig(**values).validate()


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, source=str(path))


def calibrate_cost_per_page(config, n_cells):
    """cost_per_page such that migrating one full cell field costs five
    times one elementwise kernel pass over it.

    The sample kernel runs under the configured lane/width and alternates
    with serial sections, mirroring how solver kernels interleave with the
    sequential sweeps in a real step, and the mean is used: both choices
    keep the calibrated time commensurable with the durations that land in
    compute_us on machines with noisy thread scheduling.
    """
    scratch = ExecPolicy(cutoff=config.cutoff, mode=config.mode,
                         parallel_width=config.parallel_width,
                         trace_enabled=False,
                         page_bytes=config.page_bytes)
    a = Field.zeros(n_cells, "calib.a")
    b = Field.zeros(n_cells, "calib.b")
    av, bv = a.values, b.values

    def body(s, e):
        bv[s:e] += 0.5 * av[s:e]

    times = []
    for i in range(12):
        ev = run_kernel("calibration.axpy", n_cells, scratch,
                        [a.handle, b.handle], body)
        run_serial("calibration.sweep", scratch, [a.handle],
                   lambda: av.sum())
        if i >= 2:  # skip warm-up of the worker pool
            times.append(ev.duration)
    pages = -(-n_cells * 8 // config.page_bytes)
    return max(5.0 * statistics.mean(times) / pages, 1e-3)


def _make_policy(config, cost_per_page):
    pool = PoolAllocator(config.pool_threshold if config.pool_enabled
                         else None)
    return ExecPolicy(cutoff=config.cutoff, mode=config.mode,
                      parallel_width=config.parallel_width,
                      trace_enabled=True, inject_delay=config.simulate_delay,
                      pool=pool, page_bytes=config.page_bytes,
                      cost_per_page_us=cost_per_page)


def _make_controls(config):
    # Unit square cavity; viscosity from the Reynolds number.
    nu = abs(config.lid_velocity) * 1.0 / config.reynolds
    return SimpleControls(nu=nu, lid_velocity=config.lid_velocity)


def run_benchmark(config, write_report=True, write_trace=True):
    """Execute the configured benchmark and return the report dict."""
    config.validate()
    mesh = build_structured_mesh(config.nx, config.ny, 1.0, 1.0)
    controls = _make_controls(config)
    cost = config.cost_per_page_us
    if cost == "auto":
        cost = calibrate_cost_per_page(config, mesh.n_cells)

    fom_per_repeat = []
    residual_history = []
    errors = []
    policy = None
    for repeat in range(config.repeats):
        policy = _make_policy(config, cost)
        state = initialize_state(mesh, controls, policy)
        try:
            for _ in range(config.n_warmup):
                simple_outer_iteration(state, controls, policy)
            step_seconds = []
            for step in range(config.n_steps):
                t0 = time.perf_counter()
                rep = simple_outer_iteration(state, controls, policy)
                step_seconds.append(time.perf_counter() - t0)
                if repeat == 0:
                    residual_history.append({
                        "step": step,
                        "u_initial": rep.u_perf.initial_residual,
                        "v_initial": rep.v_perf.initial_residual,
                        "p_initial": rep.p_perf.initial_residual,
                        "continuity": rep.continuity_max,
                        "continuity_normalized": rep.continuity_normalized,
                    })
            fom_per_repeat.append(sum(step_seconds) / config.n_steps)
        except Exception as exc:  # solver failure aborts this repeat only
            errors.append({"repeat": repeat, "error": str(exc)})

    profile = profile_summary(policy.ledger, policy.trace)
    report = {
        "fom_seconds_per_step": (statistics.mean(fom_per_repeat)
                                 if fom_per_repeat else None),
        "fom_per_repeat": fom_per_repeat,
        "residual_history": residual_history,
        "migration_profile": profile.as_dict(),
        "pool_stats": dict(policy.pool.stats),
        "lane_event_counts": policy.lane_counts(),
        "config": config.echo(),
        "speedup_vs_baseline": None,
        "errors": errors,
    }
    if config.baseline_report:
        baseline = read_report(config.baseline_report)
        report["speedup_vs_baseline"] = {
            "baseline": config.baseline_report,
            "speedup": compare_reports(report, baseline),
        }
    if write_trace and config.trace_path:
        write_chrome_trace(policy.trace, config.trace_path)
    if write_report and config.report_path:
        with open(config.report_path, "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


def compare_reports(report_a, report_b):
    """Normalized speedup of a over b: fom_b / fom_a (> 1 means a faster)."""
    ca, cb = report_a["config"], report_b["config"]
    for key in ("nx", "ny", "n_steps"):
        if ca[key] != cb[key]:
            raise ValueError(
                f"cannot compare reports: {key} differs ({ca[key]} vs {cb[key]})")
    fom_a = report_a["fom_seconds_per_step"]
    fom_b = report_b["fom_seconds_per_step"]
    if not fom_a or not fom_b:
        raise ValueError("cannot compare reports: missing FOM")
    return fom_b / fom_a


def lane_parallel_events(report):
    return report["lane_event_counts"].get(Lane.PARALLEL.value, 0)
