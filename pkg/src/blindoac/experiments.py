"""Batch experiment runners: NMSE sweeps, the federated benchmark, the
fit-weight calibration sweep, and the solver/oracle cross-check.

All runs are driven by a versioned JSON config, write CSV + a JSON
manifest into the output directory, checkpoint per cell, and are
byte-reproducible from (config, seed).
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import datasets, feel
from .channel import draw_channel, precode, transmit_round
from .denoise import (
    DEFAULT_SCALE_C,
    DenoiseProblem,
    SolverConfig,
    atomic_denoise_batch,
    select_lambda,
)
from .errors import ConfigError
from .gridsearch import grid_oracle
from .spectral import SampleGrid

SCHEMA_VERSION = 1
KINDS = ("nmse_vs_snr_L", "nmse_vs_snr_K", "feel_benchmark",
         "lambda_calibration", "solver_oracle_check")

_COMMON_KEYS = {"schema_version", "kind", "seed", "solver", "noise_mode"}
_KIND_KEYS = {
    "nmse_vs_snr_L": {"L", "K", "snr_db", "trials", "scale_c"},
    "nmse_vs_snr_K": {"L", "K", "snr_db", "trials", "scale_c"},
    "feel_benchmark": {"L", "K", "snr_db", "seeds", "rounds", "eta", "task",
                       "n_hidden", "modes", "reuse_subset", "scale_c",
                       "gamma_margin", "batch_size"},
    "lambda_calibration": {"L", "K", "snr_db", "trials", "scale_c_grid"},
    "solver_oracle_check": {"L", "K", "snr_db", "trials", "grid_points",
                            "tolerance", "scale_c"},
}
NOISE_MODES = ("white", "correlated")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated contents of one experiment config file."""

    kind: str
    L: tuple
    K: tuple
    snr_db: tuple
    trials: int = 100
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    scale_c: float = None
    noise_mode: str = "white"
    # feel_benchmark only
    seeds: int = 5
    rounds: int = 60
    eta: float = 0.5
    task: str = "digits"
    n_hidden: int = 32
    modes: tuple = ("IdealSync", "BlindDelayReuse-L0", "BlindDelayReuse-L1", "NoRecovery")
    reuse_subset: int = 8
    gamma_margin: float = 0.05
    batch_size: int = None
    # lambda_calibration only
    scale_c_grid: tuple = (0.1, 0.3, 1.0, 3.0, 10.0)
    # solver_oracle_check only
    grid_points: int = 960
    tolerance: float = 1e-2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for name in ("L", "K", "snr_db"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"grid {name!r} must be non-empty")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if any(not (np.isfinite(s) or np.isinf(s)) for s in self.snr_db):
            raise ConfigError("SNR values must be finite or inf")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}, "
                              f"got {self.noise_mode!r}")

    def to_dict(self):
        d = {
            "schema_version": SCHEMA_VERSION, "kind": self.kind,
            "L": list(self.L), "K": list(self.K),
            "snr_db": [("inf" if np.isinf(s) else s) for s in self.snr_db],
            "trials": self.trials, "seed": self.seed,
            "solver": self.solver.to_dict(), "scale_c": self.scale_c,
            "noise_mode": self.noise_mode,
        }
        if self.kind == "feel_benchmark":
            d.update(seeds=self.seeds, rounds=self.rounds, eta=self.eta,
                     task=self.task, n_hidden=self.n_hidden,
                     modes=list(self.modes), reuse_subset=self.reuse_subset,
                     gamma_margin=self.gamma_margin, batch_size=self.batch_size)
        elif self.kind == "lambda_calibration":
            d["scale_c_grid"] = list(self.scale_c_grid)
        elif self.kind == "solver_oracle_check":
            d.update(grid_points=self.grid_points, tolerance=self.tolerance)
        return d


def load_config(path, seed_override=None):
    """Parse and validate a JSON experiment config; unknown keys are fatal."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw.get('schema_version')!r}; "
            f"this build reads version {SCHEMA_VERSION}"
        )
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys for kind {kind!r}: {sorted(unknown)}")

    kwargs = {"kind": kind}
    for name in ("L", "K"):
        if name in raw:
            kwargs[name] = tuple(int(v) for v in raw[name])
    if "snr_db" in raw:
        kwargs["snr_db"] = tuple(
            float("inf") if v in ("inf", "Infinity") else float(v) for v in raw["snr_db"]
        )
    for name in ("trials", "seed", "seeds", "rounds", "n_hidden",
                 "reuse_subset", "grid_points"):
        if name in raw:
            kwargs[name] = int(raw[name])
    for name in ("eta", "scale_c", "gamma_margin", "tolerance"):
        if raw.get(name) is not None:
            kwargs[name] = float(raw[name])
    if raw.get("batch_size") is not None:
        kwargs["batch_size"] = int(raw["batch_size"])
    if "task" in raw:
        kwargs["task"] = str(raw["task"])
    if "noise_mode" in raw:
        kwargs["noise_mode"] = str(raw["noise_mode"])
    if "modes" in raw:
        kwargs["modes"] = tuple(raw["modes"])
    if "scale_c_grid" in raw:
        kwargs["scale_c_grid"] = tuple(float(v) for v in raw["scale_c_grid"])
    if "solver" in raw:
        try:
            kwargs["solver"] = SolverConfig.from_dict(raw["solver"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver config: {exc}") from None
    cfg = ExperimentConfig(**{k: v for k, v in kwargs.items() if k in ExperimentConfig.__dataclass_fields__})
    if seed_override is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seed": int(seed_override)})
    return cfg


# ---------------------------------------------------------------------------
# result table + CSV
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("kind", "L", "K", "snr_db", "statistic", "value", "trials",
               "stderr", "flagged")


@dataclass
class ResultTable:
    """One row per (cell, statistic); serializes to a stable CSV."""

    rows: list = field(default_factory=list)

    def add(self, kind, L, K, snr_db, statistic, value, trials, stderr, flagged=False):
        if not np.isfinite(value):
            raise ValueError(f"non-finite statistic {statistic}={value}")
        self.rows.append({
            "kind": kind, "L": int(L), "K": int(K), "snr_db": float(snr_db),
            "statistic": statistic, "value": float(value), "trials": int(trials),
            "stderr": float(stderr), "flagged": int(bool(flagged)),
        })

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["kind"], r["L"], r["K"],
                                                r["snr_db"], r["statistic"]))

    def any_flagged(self):
        return any(r["flagged"] for r in self.rows)

    def value(self, statistic, **cell):
        hits = [r["value"] for r in self.rows
                if r["statistic"] == statistic
                and all(r[k] == v for k, v in cell.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {statistic} {cell}")
        return hits[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.sorted_rows():
                f.write(",".join(_fmt(r[c]) for c in CSV_COLUMNS) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_round_csv(path, entries, timing_path=None):
    """Per-round learning-curve CSV for the federated benchmark.

    Wall-clock timings are written to a separate file so the learning-curve
    CSV stays byte-reproducible across re-runs of the same seed.
    """
    cols = ("seed", "mode", "L", "round", "nmse", "loss", "accuracy")
    ordered = sorted(entries, key=lambda e: (e["seed"], e["mode"], e["L"], e["round"]))
    with open(path, "w", newline="") as f:
        f.write(",".join(cols) + "\n")
        for e in ordered:
            f.write(",".join(_fmt(e[c]) for c in cols) + "\n")
    if timing_path is not None:
        tcols = ("seed", "mode", "L", "round", "wall_ms")
        with open(timing_path, "w", newline="") as f:
            f.write(",".join(tcols) + "\n")
            for e in ordered:
                f.write(",".join(_fmt(e[c]) for c in tcols) + "\n")


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _ckpt_path(out_dir, cell_id):
    return os.path.join(out_dir, "checkpoints", f"{cell_id}.json")


def load_checkpoint(out_dir, cell_id):
    path = _ckpt_path(out_dir, cell_id)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return json.load(f)


def save_checkpoint(out_dir, cell_id, payload):
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    path = _ckpt_path(out_dir, cell_id)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, sort_keys=True)
    os.replace(tmp, path)


def write_manifest(out_dir, config, extra=None):
    manifest = {"config": config.to_dict(), "seed": config.seed}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# NMSE sweeps
# ---------------------------------------------------------------------------

def _trial_seeds(master, cell_index, n, salt):
    ss = np.random.SeedSequence([int(master), int(salt), int(cell_index)])
    return ss.generate_state(2 * n, dtype=np.uint64).reshape(n, 2)


def _solve_chunk(L):
    return max(4, int(2.5e6 / (L * L)))


def run_nmse_cell(L, K, snr_db, trials, master_seed, cell_index, solver,
                  scale_c=None, noise_mode="white"):
    """All Monte Carlo trials of one (L, K, SNR) cell, solved in batches."""
    scale_c = DEFAULT_SCALE_C if scale_c is None else scale_c
    grid = SampleGrid.from_nominal(L)
    seeds = _trial_seeds(master_seed, cell_index, trials, salt=0xA11CE)

    V = np.empty((trials, grid.L), dtype=np.complex128)
    lams = np.empty(trials)
    truth = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng(int(seeds[t, 0]))
        ch = draw_channel(K, seed=int(seeds[t, 0]))
        amps = rng.uniform(0.5, 1.5, size=K)
        truth[t] = amps.sum()
        pg = precode(amps[None, :], 0.0, ch)
        meas = transmit_round(pg, ch, grid, snr_db, seed=int(seeds[t, 1]),
                              white_noise_after_inversion=(noise_mode == "white"))
        V[t] = meas.V[0]
        lams[t] = select_lambda(float(meas.sigma_v[0]), grid, scale_c=scale_c)

    estimates = np.empty(trials)
    failures = 0
    chunk = _solve_chunk(grid.L)
    for lo in range(0, trials, chunk):
        sols = atomic_denoise_batch(V[lo:lo + chunk], lams[lo:lo + chunk], grid, solver)
        for j, s in enumerate(sols):
            estimates[lo + j] = s.atomic_norm_value
            failures += not s.converged
    nmse = (estimates - truth) ** 2 / truth**2
    return {
        "nmse_mean": float(nmse.mean()),
        "nmse_stderr": float(nmse.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0,
        "failure_rate": failures / trials,
        "trials": trials,
    }


def run_nmse_sweep(config, out_dir, threads=1, log=None):
    """NMSE over the (L, K, SNR) grid with per-cell checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    cells = [(L, K, s) for L in config.L for K in config.K for s in config.snr_db]

    def compute(idx_cell):
        idx, (L, K, snr) = idx_cell
        cid = f"nmse_L{L}_K{K}_snr{snr}"
        cached = load_checkpoint(out_dir, cid)
        if cached is not None:
            return idx, cached
        stats = run_nmse_cell(L, K, snr, config.trials, config.seed, idx,
                              config.solver, config.scale_c, config.noise_mode)
        save_checkpoint(out_dir, cid, stats)
        if log:
            log(f"cell {cid}: nmse={stats['nmse_mean']:.4g}")
        return idx, stats

    results = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for idx, stats in pool.map(compute, enumerate(cells)):
            results[idx] = stats

    table = ResultTable()
    for idx, (L, K, snr) in enumerate(cells):
        st = results[idx]
        flagged = st["failure_rate"] > 0.2
        table.add(config.kind, L, K, snr, "nmse", st["nmse_mean"],
                  st["trials"], st["nmse_stderr"], flagged)
        table.add(config.kind, L, K, snr, "failure_rate", st["failure_rate"],
                  st["trials"], 0.0, flagged)
    table.to_csv(os.path.join(out_dir, "results.csv"))
    write_manifest(out_dir, config)
    return table


# ---------------------------------------------------------------------------
# federated benchmark
# ---------------------------------------------------------------------------

def _make_task(config):
    if config.task == "digits":
        return datasets.digits_task(seed=config.seed)
    if config.task == "blobs":
        return datasets.blobs_task(seed=config.seed)
    raise ConfigError(f"unknown task {config.task!r}")


def _mode_specs(config):
    """Expand mode labels: '-L0'/'-L1' suffixes pick entries of the L grid."""
    specs = []
    for label in config.modes:
        base, L = label, config.L[0]
        if "-L" in label:
            base, suffix = label.split("-L", 1)
            L = config.L[int(suffix)]
        if base not in feel.MODES:
            raise ConfigError(f"unknown training mode {base!r} in {label!r}")
        specs.append((label, base, L))
    return specs


def run_feel_benchmark(config, out_dir, threads=1, log=None):
    """Learning curves for every (mode, seed) pair at K devices, fixed SNR."""
    os.makedirs(out_dir, exist_ok=True)
    K = config.K[0]
    snr = config.snr_db[0]
    train_set, test_set = _make_task(config)
    specs = _mode_specs(config)
    jobs = [(label, base, L, s) for (label, base, L) in specs
            for s in range(config.seeds)]

    def compute(job):
        label, base, L, seed_idx = job
        cid = f"feel_{label}_seed{seed_idx}"
        cached = load_checkpoint(out_dir, cid)
        if cached is not None:
            return cid, cached
        run_seed = int(np.random.SeedSequence(
            [config.seed, 0xFEE1, seed_idx]).generate_state(1)[0])
        parts = datasets.partition_iid(train_set, K, seed=run_seed)
        tc = feel.TrainingConfig(
            K=K, rounds=config.rounds, eta=config.eta, mode=base, L=L,
            snr_db=snr, gamma_margin=config.gamma_margin,
            scale_c=config.scale_c, reuse_subset=config.reuse_subset,
            batch_size=config.batch_size, seed=run_seed,
            n_hidden=config.n_hidden, solver=config.solver,
            noise_mode=config.noise_mode,
        )
        logs = feel.train(tc, parts, test_set)
        payload = {
            "label": label, "L": L, "seed_idx": seed_idx,
            "diverged": bool(logs[-1].diagnostics.get("diverged", False)),
            "rounds": [
                {"round": l.round, "nmse": l.nmse, "loss": l.loss,
                 "accuracy": l.accuracy, "wall_ms": l.wall_ms}
                for l in logs
            ],
        }
        save_checkpoint(out_dir, cid, payload)
        if log:
            log(f"{cid}: final acc={logs[-1].accuracy:.3f}")
        return cid, payload

    payloads = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for cid, payload in pool.map(compute, jobs):
            payloads[cid] = payload

    entries = []
    table = ResultTable()
    for label, base, L in specs:
        finals, nmse_finals, diverged = [], [], 0
        for s in range(config.seeds):
            p = payloads[f"feel_{label}_seed{s}"]
            diverged += p["diverged"]
            finals.append(p["rounds"][-1]["accuracy"])
            nmse_finals.append(np.mean([r["nmse"] for r in p["rounds"]]))
            for r in p["rounds"]:
                entries.append({"seed": s, "mode": label, "L": L, **r})
        finals = np.array(finals)
        n = len(finals)
        table.add(config.kind, L, K, snr, f"final_accuracy[{label}]",
                  finals.mean(), n,
                  finals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0,
                  flagged=diverged > 0)
        table.add(config.kind, L, K, snr, f"mean_nmse[{label}]",
                  float(np.mean(nmse_finals)), n, 0.0, flagged=diverged > 0)
    write_round_csv(os.path.join(out_dir, "rounds.csv"), entries,
                    timing_path=os.path.join(out_dir, "timings.csv"))
    table.to_csv(os.path.join(out_dir, "results.csv"))
    write_manifest(out_dir, config)
    return table


# ---------------------------------------------------------------------------
# fit-weight calibration
# ---------------------------------------------------------------------------

def run_lambda_calibration(config, out_dir, threads=1, log=None):
    """Sweep scale_c at the reference cell and record the NMSE minimizer."""
    os.makedirs(out_dir, exist_ok=True)
    L, K = config.L[0], config.K[0]
    snrs = [s for s in config.snr_db if not np.isinf(s)]  # zero-noise cells excluded
    if not snrs:
        raise ConfigError("calibration needs at least one finite SNR")

    jobs = list(enumerate((sc, snr) for sc in config.scale_c_grid for snr in snrs))

    def compute(job):
        idx, (sc, snr) = job
        cid = f"cal_sc{sc}_snr{snr}"
        cached = load_checkpoint(out_dir, cid)
        if cached is not None:
            return idx, cached
        stats = run_nmse_cell(L, K, snr, config.trials, config.seed, 0,
                              config.solver, scale_c=sc,
                              noise_mode=config.noise_mode)
        save_checkpoint(out_dir, cid, stats)
        if log:
            log(f"{cid}: nmse={stats['nmse_mean']:.4g}")
        return idx, stats

    results = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for idx, stats in pool.map(compute, jobs):
            results[idx] = stats

    table = ResultTable()
    per_scale = {}
    for idx, (sc, snr) in jobs:
        st = results[idx]
        table.add(config.kind, L, K, snr, f"nmse[scale_c={_fmt(sc)}]",
                  st["nmse_mean"], st["trials"], st["nmse_stderr"],
                  flagged=st["failure_rate"] > 0.2)
        per_scale.setdefault(sc, []).append(st["nmse_mean"])
    mean_by_scale = {sc: float(np.mean(v)) for sc, v in per_scale.items()}
    lo, hi = min(mean_by_scale.values()), max(mean_by_scale.values())
    flat = hi - lo < 0.05 * hi
    selected = 1.0 if flat else min(mean_by_scale, key=mean_by_scale.get)
    with open(os.path.join(out_dir, "selected_scale_c.json"), "w") as f:
        json.dump({"scale_c": selected, "flat_objective": flat,
                   "nmse_by_scale_c": {repr(k): v for k, v in
                                       sorted(mean_by_scale.items())}}, f,
                  indent=2, sort_keys=True)
    table.add(config.kind, L, K, snrs[0], "selected_scale_c", selected,
              config.trials, 0.0, flagged=flat)
    table.to_csv(os.path.join(out_dir, "results.csv"))
    write_manifest(out_dir, config, extra={"selected_scale_c": selected})
    return table


# ---------------------------------------------------------------------------
# solver/oracle cross-check
# ---------------------------------------------------------------------------

def run_oracle_check(config, out_dir, threads=1, log=None):
    """Compare SDP objectives against the finite-grid reference solver."""
    os.makedirs(out_dir, exist_ok=True)
    L, K = config.L[0], config.K[0]
    grid = SampleGrid.from_nominal(L)
    scale_c = config.scale_c

    table = ResultTable()
    worst = 0.0
    flagged = False
    for snr in config.snr_db:
        cid = f"oracle_L{L}_snr{snr}"
        cached = load_checkpoint(out_dir, cid)
        if cached is None:
            seeds = _trial_seeds(config.seed, 0, config.trials, salt=int(abs(snr)) + 7)
            gaps = []
            for t in range(config.trials):
                rng = np.random.default_rng(int(seeds[t, 0]))
                ch = draw_channel(K, seed=int(seeds[t, 0]))
                amps = rng.uniform(0.5, 1.5, size=K)
                pg = precode(amps[None, :], 0.0, ch)
                meas = transmit_round(
                    pg, ch, grid, snr, seed=int(seeds[t, 1]),
                    white_noise_after_inversion=(config.noise_mode == "white"))
                lam = select_lambda(float(meas.sigma_v[0]), grid,
                                    scale_c=scale_c if scale_c else DEFAULT_SCALE_C)
                prob = DenoiseProblem(V=meas.V[0], lam=lam, grid=grid)
                sol = atomic_denoise_batch(meas.V[:1], np.array([lam]), grid,
                                           config.solver)[0]
                ref = grid_oracle(prob, config.grid_points)
                ref_obj = ref.diagnostics["objective"]
                gaps.append(abs(sol.objective - ref_obj) / (1.0 + ref_obj))
            cached = {"gaps": gaps}
            save_checkpoint(out_dir, cid, cached)
        gaps = np.array(cached["gaps"])
        bad = bool(gaps.max() > config.tolerance)
        flagged |= bad
        worst = max(worst, float(gaps.max()))
        if log:
            log(f"{cid}: max gap={gaps.max():.3e}")
        table.add(config.kind, L, K, snr, "objective_gap_max", float(gaps.max()),
                  config.trials, 0.0, flagged=bad)
        table.add(config.kind, L, K, snr, "objective_gap_mean", float(gaps.mean()),
                  config.trials,
                  float(gaps.std(ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0,
                  flagged=bad)
    table.to_csv(os.path.join(out_dir, "results.csv"))
    write_manifest(out_dir, config, extra={"worst_gap": worst})
    return table


RUNNERS = {
    "nmse_vs_snr_L": run_nmse_sweep,
    "nmse_vs_snr_K": run_nmse_sweep,
    "feel_benchmark": run_feel_benchmark,
    "lambda_calibration": run_lambda_calibration,
    "solver_oracle_check": run_oracle_check,
}
