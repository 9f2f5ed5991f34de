"""Experiment harness: config loading, seeded channels, runs, CSV output.

The configuration is JSON with unit-suffixed key names (``bandwidth_hz``,
``deadline_s``). Values may be plain numbers, already in the key's unit, or
strings with an explicit unit that is converted into it ("25 MHz", "5 MB").
Data sizes use decimal SI with uppercase B for bytes: 1 MB = 8e6 bits.
Noise can be given as ``n0_dbm_per_hz`` (10^((dBm-30)/10) W/Hz) or directly
as ``noise_density_w_per_hz``.

Channel generation is pinned to a named, documented recipe so any language
can reproduce the exact matrices: a Philox4x64-10 counter stream keyed by the
trial seed yields raw 64-bit words; each complex entry consumes two words
(u = (raw+1) * 2^-64 in double precision, Box-Muller
z = sqrt(-2 ln u1) * exp(2*pi*i*u2)) and is scaled by sqrt(variance/2). Trial
t uses child seed = seed XOR splitmix64(t), so the seed column in the CSV
also serves as the channel checksum for paired comparisons.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ChannelSet, SystemParams, TaskSpec
from .optimizer import (Scenario, SolverKnobs, solve_fdma, solve_full_offload,
                        solve_joint, solve_local)
from .oracles import GridResult, grid_rate_feasible, oracle_grid

__all__ = [
    "ALGORITHMS",
    "CSV_HEADER",
    "TRACE_HEADER",
    "ExperimentConfig",
    "TrialRecord",
    "GridResult",
    "child_seed",
    "generate_channels",
    "load_config",
    "oracle_grid",
    "grid_rate_feasible",
    "run",
    "splitmix64",
    "write_records",
    "write_traces",
]

ALGORITHMS = {
    "proposed": solve_joint,
    "local": solve_local,
    "full": solve_full_offload,
    "fdma": solve_fdma,
}

CSV_HEADER = ("trial", "seed", "algorithm", "deadline_s", "status",
              "total_energy_j", "user", "beta", "f_hz", "rate_bps",
              "offload_time_s", "iters")
TRACE_HEADER = ("trial", "algorithm", "iter", "objective_j")

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One SplitMix64 output step (Steele, Lea, Flood 2014 constants)."""
    x = (int(x) + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def child_seed(seed, trial):
    """Per-trial channel seed: base seed XOR splitmix64(trial index)."""
    return (int(seed) ^ splitmix64(trial)) & _MASK64


def generate_channels(seed, variance, n_users, n_rx, n_tx, decoding_order=None):
    """Draw one set of Rayleigh-fading uplink matrices, bit-reproducibly.

    Each entry is circularly-symmetric complex Gaussian with E|h|^2 equal to
    ``variance``. The recipe is fixed (see module docstring): Philox4x64-10
    keyed with ``seed``, raw uint64 words in C order over the array shape
    (n_users, n_rx, n_tx, 2), mapped through Box-Muller.
    """
    if variance <= 0.0:
        raise ValueError("variance must be positive")
    gen = np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
    raw = gen.integers(0, _MASK64, size=(n_users, n_rx, n_tx, 2),
                       dtype=np.uint64, endpoint=True)
    u = (raw.astype(np.float64) + 1.0) * 2.0 ** -64
    radius = np.sqrt(-2.0 * np.log(u[..., 0]))
    angle = 2.0 * np.pi * u[..., 1]
    z = radius * (np.cos(angle) + 1j * np.sin(angle))
    mats = tuple(math.sqrt(variance / 2.0) * z[k] for k in range(n_users))
    order = tuple(decoding_order) if decoding_order is not None \
        else tuple(range(n_users))
    return ChannelSet(channels=mats, decoding_order=order)


# ---------------------------------------------------------------------------
# unit-aware config parsing
# ---------------------------------------------------------------------------

_SCALES = {
    "hz": {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "s": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "min": 60.0},
    "w": {"w": 1.0, "mw": 1e-3, "uw": 1e-6},
    "": {"": 1.0},
}
# data sizes are case-sensitive: uppercase B is bytes (8 bits), decimal SI
_BIT_SCALES = {"bit": 1.0, "bits": 1.0, "b": 1.0, "kb": 1e3, "Mb": 1e6,
               "Gb": 1e9, "B": 8.0, "kB": 8e3, "KB": 8e3, "MB": 8e6,
               "GB": 8e9, "byte": 8.0, "bytes": 8.0}


def _parse_quantity(value, kind, fld):
    if isinstance(value, bool):
        raise ConfigError(fld, "expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(fld, f"expected number or string, got {type(value).__name__}")
    text = value.strip()
    split = len(text)
    while split > 0 and not (text[split - 1].isdigit() or text[split - 1] == "."):
        split -= 1
    num, suffix = text[:split].strip(), text[split:].strip()
    try:
        base = float(num)
    except ValueError:
        raise ConfigError(fld, f"cannot parse number from {value!r}") from None
    if kind == "bits":
        table, key = _BIT_SCALES, suffix or "bits"
    else:
        table, key = _SCALES[kind], suffix.lower()
    if key not in table:
        raise ConfigError(fld, f"unknown unit {suffix!r} (accepted: {sorted(table)})")
    return base * table[key]


def _section(cfg, name, required=True):
    block = cfg.get(name)
    if block is None:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    if not isinstance(block, dict):
        raise ConfigError(name, "must be an object")
    return block


def _field(block, section, name, kind=None, default=None, required=False):
    if name not in block:
        if required:
            raise ConfigError(f"{section}.{name}", "missing required field")
        return default
    value = block[name]
    if kind is None:
        return value
    return _parse_quantity(value, kind, f"{section}.{name}")


def _int_field(block, section, name, default=None, required=False, minimum=None):
    value = _field(block, section, name, default=default, required=required)
    if value is None:
        return None
    fld = f"{section}.{name}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(fld, "expected an integer")
    if float(value) != int(value):
        raise ConfigError(fld, f"expected an integer, got {value}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(fld, f"must be at least {minimum}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-parsed experiment description in solver units."""

    params: SystemParams
    tasks: tuple
    variance: float
    seed: int
    trials: int
    algorithms: tuple = tuple(ALGORITHMS)
    sweep_deadlines_s: tuple = ()
    decoding_order: tuple = None
    csv_path: str = None
    trace_path: str = None
    knobs: SolverKnobs = field(default_factory=SolverKnobs)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "sweep_deadlines_s",
                           tuple(float(t) for t in self.sweep_deadlines_s))
        if self.trials < 1:
            raise ConfigError("run.trials", "must be at least 1")
        if not self.algorithms:
            raise ConfigError("run.algorithms", "must not be empty")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError("run.algorithms",
                                  f"unknown algorithm {name!r} (have {sorted(ALGORITHMS)})")
        for t in self.sweep_deadlines_s:
            if t <= 0.0:
                raise ConfigError("run.sweep_deadlines_s", "deadlines must be positive")
        if len(self.tasks) != self.params.n_users:
            raise ConfigError("tasks", f"expected {self.params.n_users} tasks, "
                                       f"got {len(self.tasks)}")


def load_config(source):
    """Parse a JSON config file (or an equivalent dict) into ExperimentConfig.

    Every schema violation raises ConfigError naming the offending field.
    """
    if isinstance(source, dict):
        cfg = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(str(source), f"cannot read config: {exc}") from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(source), f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")

    sys_blk = _section(cfg, "system")
    n_users = _int_field(sys_blk, "system", "n_users", required=True, minimum=1)
    n_tx = _int_field(sys_blk, "system", "n_tx", required=True, minimum=1)
    n_rx = _int_field(sys_blk, "system", "n_rx", required=True, minimum=1)
    bandwidth = _field(sys_blk, "system", "bandwidth_hz", kind="hz", required=True)
    p_max = _field(sys_blk, "system", "p_max_w", kind="w", required=True)
    f_max = _field(sys_blk, "system", "f_max_hz", kind="hz", required=True)
    eta = _field(sys_blk, "system", "eta", kind="", default=1e-32)
    if "noise_density_w_per_hz" in sys_blk:
        noise = _field(sys_blk, "system", "noise_density_w_per_hz", kind="")
    elif "n0_dbm_per_hz" in sys_blk:
        dbm = _field(sys_blk, "system", "n0_dbm_per_hz", kind="")
        noise = 10.0 ** ((dbm - 30.0) / 10.0)
    else:
        raise ConfigError("system", "need n0_dbm_per_hz or noise_density_w_per_hz")
    try:
        params = SystemParams(n_users=n_users, n_tx=n_tx, n_rx=n_rx,
                              bandwidth_hz=bandwidth,
                              noise_density_w_per_hz=noise,
                              p_max_w=p_max, f_max_hz=f_max, eta=eta)
    except ValueError as exc:
        raise ConfigError("system", str(exc)) from exc

    if "tasks" in cfg:
        raw_tasks = cfg["tasks"]
        if not isinstance(raw_tasks, list):
            raise ConfigError("tasks", "must be a list of task objects")
        task_blocks = [(f"tasks[{i}]", blk) for i, blk in enumerate(raw_tasks)]
    else:
        task_blocks = [("task", _section(cfg, "task"))] * n_users
    tasks = []
    for label, blk in task_blocks:
        if not isinstance(blk, dict):
            raise ConfigError(label, "must be an object")
        bits = _field(blk, label, "data_bits", kind="bits", required=True)
        cpb = _field(blk, label, "cycles_per_bit", kind="", required=True)
        ddl = _field(blk, label, "deadline_s", kind="s", required=True)
        try:
            tasks.append(TaskSpec(data_bits=bits, cycles_per_bit=cpb, deadline_s=ddl))
        except ValueError as exc:
            raise ConfigError(label, str(exc)) from exc

    chan_blk = _section(cfg, "channel")
    variance = _field(chan_blk, "channel", "variance", kind="", required=True)
    if variance <= 0.0:
        raise ConfigError("channel.variance", "must be positive")
    seed = _int_field(chan_blk, "channel", "seed", required=True, minimum=0)
    order = _field(chan_blk, "channel", "decoding_order")
    if order is not None:
        if (not isinstance(order, list)
                or sorted(int(k) for k in order) != list(range(n_users))):
            raise ConfigError("channel.decoding_order",
                              f"must be a permutation of 0..{n_users - 1}")
        order = tuple(int(k) for k in order)

    run_blk = _section(cfg, "run", required=False)
    trials = _int_field(run_blk, "run", "trials", default=50, minimum=1)
    algorithms = _field(run_blk, "run", "algorithms", default=list(ALGORITHMS))
    if not isinstance(algorithms, list) or not algorithms:
        raise ConfigError("run.algorithms", "must be a non-empty list")
    sweep = _field(run_blk, "run", "sweep_deadlines_s", default=[])
    if not isinstance(sweep, list):
        raise ConfigError("run.sweep_deadlines_s", "must be a list")
    sweep = [_parse_quantity(v, "s", f"run.sweep_deadlines_s[{i}]")
             for i, v in enumerate(sweep)]

    out_blk = _section(cfg, "output", required=False)
    csv_path = _field(out_blk, "output", "csv")
    trace_path = _field(out_blk, "output", "trace")

    solver_blk = _section(cfg, "solver", required=False)
    known = {f.name for f in dataclasses.fields(SolverKnobs)}
    extra = set(solver_blk) - known
    if extra:
        raise ConfigError("solver", f"unknown keys {sorted(extra)} (have {sorted(known)})")
    try:
        knobs = SolverKnobs(**solver_blk)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc

    return ExperimentConfig(params=params, tasks=tuple(tasks), variance=variance,
                            seed=seed, trials=trials,
                            algorithms=tuple(algorithms),
                            sweep_deadlines_s=tuple(sweep),
                            decoding_order=order, csv_path=csv_path,
                            trace_path=trace_path, knobs=knobs)


# ---------------------------------------------------------------------------
# Monte-Carlo runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    """One CSV row: a user's operating point under one algorithm run."""

    trial: int
    seed: int
    algorithm: str
    deadline_s: float
    status: str
    total_energy_j: float
    user: int
    beta: float
    f_hz: float
    rate_bps: float
    offload_time_s: float
    iters: int

    def __post_init__(self):
        if self.status not in ("converged", "max-iters", "infeasible"):
            raise ValueError(f"unknown status {self.status!r}")
        if math.isfinite(self.total_energy_j) and self.total_energy_j < 0.0:
            raise ValueError("total_energy_j must be nonnegative")


def _records_for(trial, seed, algorithm, tasks, sol):
    rows = []
    for k, task in enumerate(tasks):
        if sol.feasible:
            beta = sol.decision.ratios[k]
            f_hz = sol.decision.frequencies_hz[k]
            rate = sol.breakdown.rate_bps[k]
            t_off = sol.breakdown.offload_time_s[k]
            total = sol.breakdown.total_energy_j
        else:
            beta = f_hz = rate = t_off = total = math.nan
        rows.append(TrialRecord(
            trial=trial, seed=seed, algorithm=algorithm,
            deadline_s=task.deadline_s, status=sol.status,
            total_energy_j=total, user=k, beta=beta, f_hz=f_hz,
            rate_bps=rate, offload_time_s=t_off, iters=sol.iterations))
    return rows


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_records(records, path):
    """Write TrialRecords as CSV with the stable schema."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for rec in records:
                writer.writerow([_fmt(getattr(rec, name)) for name in CSV_HEADER])
    except OSError as exc:
        raise ConfigError("output.csv", f"cannot write {path}: {exc}") from exc


def write_traces(traces, path):
    """Write per-iteration objective traces as CSV."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for row in traces:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise ConfigError("output.trace", f"cannot write {path}: {exc}") from exc


def run(config):
    """Execute the configured Monte-Carlo experiment, return all records.

    Per trial the channels are generated once from the child seed and shared
    by every algorithm and every sweep deadline (paired comparison). Records
    are emitted in (trial, deadline, algorithm, user) order, so output is
    deterministic. CSV files are written when the config names paths. The
    trace CSV has no deadline column, so traces cover only the first deadline
    of the sweep (the base deadline when no sweep is configured).
    """
    params, tasks = config.params, config.tasks
    deadlines = config.sweep_deadlines_s or (None,)
    records, traces = [], []
    for trial in range(config.trials):
        seed = child_seed(config.seed, trial)
        channels = generate_channels(seed, config.variance, params.n_users,
                                     params.n_rx, params.n_tx,
                                     config.decoding_order)
        for pos, deadline in enumerate(deadlines):
            if deadline is None:
                trial_tasks = tasks
            else:
                trial_tasks = tuple(dataclasses.replace(t, deadline_s=deadline)
                                    for t in tasks)
            scenario = Scenario(params=params, tasks=trial_tasks,
                                channels=channels, knobs=config.knobs)
            for name in config.algorithms:
                sol = ALGORITHMS[name](scenario)
                records.extend(_records_for(trial, seed, name, trial_tasks, sol))
                if pos == 0:
                    for it, value in enumerate(sol.trace):
                        traces.append((trial, name, it, float(value)))
    if config.csv_path:
        write_records(records, config.csv_path)
    if config.trace_path:
        write_traces(traces, config.trace_path)
    return records
