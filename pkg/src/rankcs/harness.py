"""Experiment harness: metrics, Monte-Carlo sweeps, CSV and manifest output.

Sweep cells are the Cartesian product of methods x SNR x missing-fraction x
pilot-overhead; every cell/trial gets a seed derived only from the master
seed and the trial index, so methods and sweep axes see paired channel and
noise realisations and adding trials never disturbs earlier ones.
"""

import concurrent.futures
import configparser
import dataclasses
import hashlib
import itertools
import json
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import chanmodel, pipeline

__version__ = "0.1.0"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    channel: chanmodel.ChannelConfig = field(default_factory=chanmodel.ChannelConfig)
    solver: pipeline.SolverConfig = field(default_factory=pipeline.SolverConfig)
    l1: int = 32
    l2: int = 32
    m_bs: int = 8
    m_ms: int = 8
    snr_db_list: tuple = (25.0,)
    miss_frac_list: tuple = (0.1,)
    pilot_overhead_list: tuple = (1.0,)
    methods: tuple = ("proposed",)
    n_trials: int = 100
    n_steps: int = 4
    seed: int = 0
    success_threshold: float = 1e-2
    ber_bits: int = 2000
    compute_ber: bool = True
    puncture_mode: str = "missing"
    workers: int = 1
    forced_birth_times: tuple = ()
    forced_death_times: tuple = ()

    def __post_init__(self):
        if self.n_trials < 1 or self.n_steps < 1:
            raise ConfigError("n_trials and n_steps must be >= 1")
        for name in ("snr_db_list", "miss_frac_list", "pilot_overhead_list", "methods"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be nonempty")
        for m in self.methods:
            if m not in pipeline.METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for ov in self.pilot_overhead_list:
            if not 0.0 < ov <= 1.0:
                raise ConfigError("pilot overheads must lie in (0, 1]")


@dataclass
class ResultRow:
    trial: int
    time_index: int
    method: str
    snr_db: float
    miss_frac: float
    pilot_overhead: float
    n_bs: int
    n_ms: int
    nmse: float
    ber: float
    rank_true: int
    rank_est: int
    success: bool
    iters_phase1: int
    iters_phase2: int
    runtime_ms: float


RESULT_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def nmse(h_true, h_est):
    """Single-sample normalised squared error ||H - Hhat||_F^2 / ||H||_F^2."""
    h_true = np.asarray(h_true)
    h_est = np.asarray(h_est)
    if h_true.shape != h_est.shape:
        raise ValueError("shape mismatch")
    denom = float(np.linalg.norm(h_true) ** 2)
    if denom == 0.0:
        raise ValueError("reference channel is zero")
    return float(np.linalg.norm(h_true - h_est) ** 2) / denom


def ber(h_true, h_est, fe, snr_db, n_bits, rng_seed):
    """QPSK bit error rate, single stream on the estimated dominant direction.

    Transmit/receive beamformers come from the top singular pair of the
    estimated effective channel; the scalar MMSE equaliser also uses the
    estimate, so a zero estimate yields coin-flip detection.
    """
    if n_bits < 1000:
        raise ValueError("n_bits must be >= 1000")
    rng = np.random.default_rng(rng_seed)
    g_true = fe.w.conj().T @ h_true @ fe.f
    g_est = fe.w.conj().T @ h_est @ fe.f
    u, s, vh = np.linalg.svd(g_est)
    combine = u[:, 0]
    precode = vh[0].conj()
    eff_true = complex(combine.conj() @ g_true @ precode)
    eff_est = complex(s[0])
    n_sym = int(np.ceil(n_bits / 2))
    bits = rng.integers(0, 2, size=(2, n_sym))
    symbols = ((1.0 - 2.0 * bits[0]) + 1j * (1.0 - 2.0 * bits[1])) / np.sqrt(2.0)
    rx = eff_true * symbols
    if np.isinf(snr_db):
        noise_var = 0.0
    else:
        snr = 10.0 ** (snr_db / 10.0)
        noise_var = float(np.linalg.norm(g_true) ** 2) / (g_true.size * snr)
        rx = rx + np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(n_sym) + 1j * rng.standard_normal(n_sym)
        )
    eq = np.conj(eff_est) * rx / (abs(eff_est) ** 2 + noise_var + 1e-300)
    err = int(np.count_nonzero((eq.real < 0) != (bits[0] == 1)))
    err += int(np.count_nonzero((eq.imag < 0) != (bits[1] == 1)))
    return err / (2 * n_sym)


def success_probability(rows, threshold=1e-2):
    """Fraction of rows whose NMSE clears the success threshold."""
    if not rows:
        raise ValueError("empty group")
    return sum(1 for r in rows if r.nmse <= threshold) / len(rows)


def _cell_pipeline_config(cfg, method, snr_db, miss_frac, overhead):
    return pipeline.PipelineConfig(
        channel=cfg.channel, l1=cfg.l1, l2=cfg.l2, m_bs=cfg.m_bs, m_ms=cfg.m_ms,
        method=method, solver=cfg.solver, snr_db=snr_db, miss_frac=miss_frac,
        puncture_mode=cfg.puncture_mode, pilot_overhead=overhead,
        forced_birth_times=cfg.forced_birth_times,
        forced_death_times=cfg.forced_death_times,
    )


def _run_cell_trial(args):
    cfg, method, snr_db, miss_frac, overhead, trial = args
    pcfg = _cell_pipeline_config(cfg, method, snr_db, miss_frac, overhead)
    trial_seed = pipeline.derive_seed(cfg.seed, 7, trial)
    try:
        reports = pipeline.run_timeline(pcfg, cfg.n_steps, trial_seed)
    except Exception as exc:  # noqa: BLE001 - failures become tagged rows
        return [], [f"{method},{snr_db},{miss_frac},{overhead},{trial},{type(exc).__name__}: {exc}"]
    rows = []
    for rep in reports:
        if cfg.compute_ber and rep.h_est is not None and rep.h_true is not None:
            b = ber(rep.h_true, rep.h_est, rep.front_end, snr_db, cfg.ber_bits,
                    pipeline.derive_seed(trial_seed, rep.time_index, 8))
        else:
            b = 0.0
        rows.append(ResultRow(
            trial=trial, time_index=rep.time_index, method=method,
            snr_db=snr_db, miss_frac=miss_frac, pilot_overhead=overhead,
            n_bs=cfg.channel.n_bs, n_ms=cfg.channel.n_ms,
            nmse=rep.nmse, ber=b, rank_true=rep.rank_true, rank_est=rep.rank_est,
            success=rep.nmse <= cfg.success_threshold,
            iters_phase1=rep.iters_phase1, iters_phase2=rep.iters_phase2,
            runtime_ms=rep.runtime_ms,
        ))
    return rows, []


def run_experiment(cfg, out_dir=None):
    """Full sweep; returns (rows, summary, errors) and optionally writes them."""
    tasks = [
        (cfg, method, snr, miss, ov, trial)
        for method, snr, miss, ov, trial in itertools.product(
            cfg.methods, cfg.snr_db_list, cfg.miss_frac_list,
            cfg.pilot_overhead_list, range(cfg.n_trials),
        )
    ]
    rows, errors = [], []
    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for r, e in pool.map(_run_cell_trial, tasks, chunksize=4):
                rows.extend(r)
                errors.extend(e)
    else:
        for task in tasks:
            r, e = _run_cell_trial(task)
            rows.extend(r)
            errors.extend(e)
    rows.sort(key=lambda r: (r.method, r.snr_db, r.miss_frac, r.pilot_overhead,
                             r.trial, r.time_index))
    summary = summarize(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(rows, out / "results.csv")
        write_summary(summary, out / "summary.csv")
        write_manifest(cfg, out / "run.json", n_rows=len(rows), n_errors=len(errors))
        if errors:
            (out / "errors.csv").write_text(
                "method,snr_db,miss_frac,pilot_overhead,trial,error\n"
                + "\n".join(errors) + "\n"
            )
    return rows, summary, errors


def pilot_overhead_sweep(cfg, out_dir=None):
    """NMSE versus retained measurement fraction (mask density before puncture)."""
    if not cfg.pilot_overhead_list:
        raise ConfigError("pilot_overhead_list must be nonempty")
    return run_experiment(cfg, out_dir=out_dir)


def summarize(rows):
    """Per-cell aggregates: mean/median/p10/p90 NMSE, mean BER, success rate."""
    cells = {}
    for r in rows:
        cells.setdefault((r.method, r.snr_db, r.miss_frac, r.pilot_overhead), []).append(r)
    out = []
    for key in sorted(cells):
        group = cells[key]
        vals = np.array([r.nmse for r in group])
        out.append({
            "method": key[0], "snr_db": key[1], "miss_frac": key[2],
            "pilot_overhead": key[3], "n_rows": len(group),
            "nmse_mean": float(vals.mean()), "nmse_median": float(np.median(vals)),
            "nmse_p10": float(np.percentile(vals, 10)),
            "nmse_p90": float(np.percentile(vals, 90)),
            "ber_mean": float(np.mean([r.ber for r in group])),
            "success_rate": sum(r.success for r in group) / len(group),
        })
    return out


def _format_value(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def write_rows(rows, path):
    lines = [",".join(RESULT_FIELDS)]
    for r in rows:
        lines.append(",".join(_format_value(getattr(r, f)) for f in RESULT_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_rows(path):
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].split(",") != RESULT_FIELDS:
        raise ValueError("malformed results header")
    kinds = {f.name: _kind(f.type) for f in dataclasses.fields(ResultRow)}
    rows = []
    for line in text[1:]:
        parts = line.split(",")
        kwargs = {}
        for name, raw in zip(RESULT_FIELDS, parts):
            kind = kinds[name]
            if kind == "bool":
                kwargs[name] = raw == "True"
            elif kind == "int":
                kwargs[name] = int(raw)
            elif kind == "float":
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        rows.append(ResultRow(**kwargs))
    return rows


def write_summary(summary, path):
    if not summary:
        Path(path).write_text("")
        return
    keys = list(summary[0])
    lines = [",".join(keys)]
    for item in summary:
        lines.append(",".join(_format_value(item[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(cfg):
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(cfg, path, n_rows=0, n_errors=0):
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "n_rows": n_rows,
        "n_errors": n_errors,
        "pilot_overhead_semantics": "retained fraction of measurement entries (mask density before puncture)",
        "versions": {
            "rankcs": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Config file parsing (INI: one section per nested config, key = value)

_SECTION_TARGETS = {
    "experiment": ExperimentConfig,
    "channel": chanmodel.ChannelConfig,
    "solver": pipeline.SolverConfig,
}
_TOP_LEVEL_KEYS = {
    "l1", "l2", "m_bs", "m_ms", "snr_db_list", "miss_frac_list",
    "pilot_overhead_list", "methods", "n_trials", "n_steps", "seed",
    "success_threshold", "ber_bits", "compute_ber", "puncture_mode",
    "workers", "forced_birth_times", "forced_death_times",
}


def _kind(annotation):
    s = str(annotation)
    if annotation is bool or s == "<class 'bool'>":
        return "bool"
    if annotation is int or s == "<class 'int'>":
        return "int"
    if annotation is float or s == "<class 'float'>":
        return "float"
    if annotation is tuple or s == "<class 'tuple'>":
        return "tuple"
    if "float" in s and "None" in s:
        return "opt_float"
    if "int" in s and "None" in s:
        return "opt_int"
    return "str"


def _coerce(name, raw, annotation):
    raw = raw.strip()
    kind = _kind(annotation)
    if raw.lower() in ("", "none", "auto"):
        if kind in ("opt_float", "opt_int"):
            return None
        raise ConfigError(f"empty value for {name!r}")
    if kind == "int" or kind == "opt_int":
        return int(raw)
    if kind == "float" or kind == "opt_float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean {name}={raw!r}")
    if kind == "tuple":
        items = [p.strip() for p in raw.split(",") if p.strip()]
        if name == "methods":
            return tuple(items)
        if name in ("forced_birth_times", "forced_death_times"):
            return tuple(int(p) for p in items)
        return tuple(float(p) for p in items)
    return raw


def parse_config(path):
    """Read an INI experiment description; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    kwargs = {"channel": {}, "solver": {}}
    for section in parser.sections():
        if section not in _SECTION_TARGETS:
            raise ConfigError(f"unknown config section [{section}]")
        target = _SECTION_TARGETS[section]
        fields = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            if section == "experiment":
                if key in ("channel", "solver"):
                    raise ConfigError("nested configs go in their own sections")
                kwargs[key] = _coerce(key, raw, fields[key])
            else:
                kwargs[section][key] = _coerce(key, raw, fields[key])
    try:
        channel = chanmodel.ChannelConfig(**kwargs.pop("channel"))
        solver = pipeline.SolverConfig(**kwargs.pop("solver"))
        return ExperimentConfig(channel=channel, solver=solver, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
