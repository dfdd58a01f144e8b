"""Command-line pipeline: generate circuits, sample, estimate, evaluate, calibrate.

Usage::

    qmonitor run-all --profile desk --out runs/desk
    qmonitor gen-circuits --config exp.toml --out circuits.jsonl
    qmonitor sample --gateset true --circuits circuits.jsonl --shots 4096 --out samples.jsonl
    qmonitor estimate --circuits circuits.jsonl --samples samples.jsonl --out-dir est
    qmonitor evaluate --checkpoints est/checkpoints --circuits ... --samples ... --truth true
    qmonitor calibrate --gateset true --shots 8192 --estimate est/checkpoints/i0128.json

Exit codes: 0 success, 1 validation or input error, 2 numerical failure.

Every stage draws its random numbers from a seed derived from the master
seed and the stage name (:func:`stage_seed`), so a whole experiment is
reproducible from one integer.  ``QMONITOR_THREADS`` caps the BLAS thread
pool; ``--deterministic`` forces a single thread.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuits import DEFAULT_DEVICE, CircuitError, Device, GateSet, random_circuits, validate_circuit
from .estimator import EstimationError, EstimatorConfig, Record, monitoring_run
from .files import (
    read_circuits,
    atomic_write,
    read_gateset,
    read_loss_trace,
    read_samples,
    write_calibration,
    write_circuits,
    write_curves,
    write_distances,
    write_gateset,
    write_loss_trace,
    write_rates,
    write_samples,
)
from .metrics import (
    ErrorRates,
    calibration_matrix,
    distance_report,
    error_rates_from_calibration,
    fill_estimated_rates,
    layerwise_curves,
)
from .noise import true_gateset
from .simulator import sample_outcomes

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("qmonitor")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

THREADS_ENV = "QMONITOR_THREADS"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _schedule(upto: int) -> tuple[int, ...]:
    out, i = [], 2
    while i <= upto:
        out.append(i)
        i *= 2
    return tuple(out)


PROFILES = {
    "full": {
        "n_circuits": 1024,
        "n_heldout": 64,
        "shots": 8192,
        "estimator": {"max_iters": 2000, "checkpoint_schedule": _schedule(1024)},
    },
    "desk": {
        "n_circuits": 128,
        "n_heldout": 32,
        "shots": 4096,
        "estimator": {"max_iters": 500, "checkpoint_schedule": _schedule(128)},
    },
    "smoke": {
        "n_circuits": 8,
        "n_heldout": 4,
        "shots": 512,
        "estimator": {"max_iters": 30, "checkpoint_schedule": (2, 4, 8)},
    },
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a synthetic monitoring experiment.

    ``n_circuits`` circuits feed the estimator; ``n_heldout`` further
    circuits are generated and sampled alongside but only ever used as test
    data by ``evaluate``.
    """

    device: Device = DEFAULT_DEVICE
    noise_table: str | None = None
    n_circuits: int = 1024
    n_heldout: int = 64
    shots: int = 8192
    calibration_shots: int = 8192
    seed: int = 0
    output_dir: str = "run"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if self.shots < 1 or self.calibration_shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.n_circuits < 0 or self.n_heldout < 0:
            raise ConfigError("circuit counts must be >= 0")
        sched = self.estimator.checkpoint_schedule
        if sched and self.n_circuits < max(sched):
            raise ConfigError(
                f"n_circuits={self.n_circuits} is smaller than the last checkpoint {max(sched)}"
            )

    @property
    def total_circuits(self) -> int:
        return self.n_circuits + self.n_heldout

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["device"] = {"n_qubits": self.device.n_qubits, "couplings": [list(c) for c in self.device.couplings]}
        d["estimator"]["checkpoint_schedule"] = list(self.estimator.checkpoint_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "device" in d:
            dev = d["device"]
            d["device"] = Device(int(dev["n_qubits"]), tuple(tuple(c) for c in dev["couplings"]))
        est = dict(d.get("estimator", {}))
        est_known = {f.name for f in dataclasses.fields(EstimatorConfig)}
        if set(est) - est_known:
            raise ConfigError(f"unknown estimator keys {sorted(set(est) - est_known)}")
        d["estimator"] = EstimatorConfig(**est)
        if d.get("noise_table") == "":
            d["noise_table"] = None
        return cls(**d)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path: str | Path | None = None, profile: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Profile defaults, then the TOML file, then explicit overrides."""
    d: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        d = _merge(d, PROFILES[profile])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                d = _merge(d, tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if overrides:
        d = _merge(d, overrides)
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc


def stage_seed(master: int, stage: str) -> int:
    """Seed for one pipeline stage: SeedSequence over the master seed and a hash of the stage name."""
    tag = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:8], "little")
    return int(np.random.SeedSequence([int(master), tag]).generate_state(1, np.uint64)[0])


def stage_rng(master: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master, stage))


def set_threads(n: int | None) -> None:
    if n is None:
        return
    from threadpoolctl import threadpool_limits

    threadpool_limits(int(n))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def resolve_gateset(spec: str, noise_table: str | None = None, device: Device = DEFAULT_DEVICE) -> GateSet:
    """``"true"`` (bundled or given noise table), ``"ideal"``, or a gate-set JSON path."""
    if spec == "true":
        return true_gateset(noise_table, device)
    if spec == "ideal":
        return GateSet.ideal(device)
    return read_gateset(spec)[0]


def cmd_gen_circuits(cfg: ExperimentConfig, out: Path) -> list:
    rng = stage_rng(cfg.seed, "circuits")
    circuits = random_circuits(rng, cfg.total_circuits, cfg.device)
    for j, c in enumerate(circuits):
        errs = validate_circuit(c, cfg.device)
        if errs:
            raise CircuitError(f"generated circuit {j} is invalid: {errs}")
    write_circuits(out, circuits)
    log.info("wrote %d circuits to %s", len(circuits), out)
    return circuits


def cmd_sample(g: GateSet, circuits_path: Path, shots: int, seed: int, out: Path) -> list:
    circuits = read_circuits(circuits_path)
    g.require(circuits)
    rng = stage_rng(seed, "sample")
    samples = [sample_outcomes(c, g, shots, rng) for c in circuits]
    write_samples(out, samples)
    log.info("wrote %d samples to %s", len(samples), out)
    return samples


def _checkpoint_path(ckdir: Path, i: int) -> Path:
    return ckdir / f"i{i:04d}.json"


def read_checkpoints(ckdir: Path) -> dict[int, tuple[GateSet, dict]]:
    out = {}
    for p in sorted(Path(ckdir).glob("i*.json")):
        g, meta = read_gateset(p)
        out[int(meta.get("i", int(p.stem[1:])))] = (g, meta)
    return out


def cmd_estimate(cfg: ExperimentConfig, circuits_path: Path, samples_path: Path, out_dir: Path,
                 resume: bool = True) -> dict[int, GateSet]:
    circuits = read_circuits(circuits_path)
    samples = read_samples(samples_path)
    if len(samples) != len(circuits):
        raise ValueError(f"{len(circuits)} circuits but {len(samples)} samples")
    n = min(cfg.n_circuits, len(circuits))
    est_cfg = dataclasses.replace(
        cfg.estimator,
        seed=stage_seed(cfg.seed, "estimate"),
        checkpoint_schedule=tuple(i for i in cfg.estimator.checkpoint_schedule if i <= n),
    )
    digest = est_cfg.digest()
    ckdir = out_dir / "checkpoints"
    trace_path = out_dir / "loss_trace.csv"
    done: dict[int, tuple[GateSet, dict]] = {}
    if resume and ckdir.exists():
        found = {i: gm for i, gm in read_checkpoints(ckdir).items() if gm[1].get("config_hash") == digest}
        # only a prefix of the schedule can be reused: later fits are warm-started from earlier ones
        for i in sorted(est_cfg.checkpoint_schedule):
            if i not in found:
                break
            done[i] = found[i]
    if done:
        log.info("resuming: checkpoints %s already present", sorted(done))
    init = done[max(done)][0] if done else None
    records = [Record(c, s) for c, s in zip(circuits[:n], samples[:n])]
    cps = monitoring_run(records, est_cfg, init=init, skip=set(done))
    traces = {}
    if done and trace_path.exists():
        traces = {i: t for i, t in read_loss_trace(trace_path).items() if i in done}
    for cp in cps:
        meta = {
            "i": cp.index,
            "loss": cp.loss,
            "iterations": cp.iterations,
            "seed": est_cfg.seed,
            "config_hash": digest,
            "wall_time": cp.wall_time,
            "window_start": cp.window_start,
        }
        write_gateset(_checkpoint_path(ckdir, cp.index), cp.gateset, meta)
        traces[cp.index] = cp.loss_trace
    write_loss_trace(trace_path, traces)
    result = {i: gm[0] for i, gm in done.items()}
    result.update({cp.index: cp.gateset for cp in cps})
    return result


def cmd_evaluate(ckdir: Path, circuits_path: Path, samples_path: Path, out_dir: Path,
                 truth: GateSet | None = None, max_eval: int | None = None,
                 device: Device = DEFAULT_DEVICE) -> None:
    cks = read_checkpoints(ckdir)
    if not cks:
        raise ValueError(f"no checkpoints found in {ckdir}")
    checkpoints = {i: gm[0] for i, gm in cks.items()}
    circuits = read_circuits(circuits_path)
    samples = read_samples(samples_path)
    if len(samples) != len(circuits):
        raise ValueError(f"{len(circuits)} circuits but {len(samples)} samples")
    ideal = GateSet.ideal(device)
    write_curves(out_dir / "curves.csv", layerwise_curves(checkpoints, circuits, samples, max_eval))
    write_distances(out_dir / "distances.csv", distance_report(checkpoints, ideal, truth))
    last = checkpoints[max(checkpoints)]
    rates = fill_estimated_rates(ErrorRates(), last, range(device.n_qubits))
    write_rates(out_dir / "rates.csv", rates)
    log.info("evaluated %d checkpoints into %s", len(checkpoints), out_dir)


def cmd_calibrate(g: GateSet, shots: int, seed: int, out_dir: Path, estimate: GateSet | None = None,
                  device: Device = DEFAULT_DEVICE) -> None:
    rng = stage_rng(seed, "calibrate")
    cm = calibration_matrix(g, shots, rng, device.n_qubits)
    write_calibration(out_dir / "calibration.csv", cm)
    rates = error_rates_from_calibration(cm)
    fill_estimated_rates(rates, g if estimate is None else estimate, range(device.n_qubits))
    write_rates(out_dir / "calibration_rates.csv", rates)
    log.info("calibration written to %s", out_dir)


def cmd_run_all(cfg: ExperimentConfig, out_dir: Path, resume: bool = True) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_write(out_dir / "config.json") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    truth = true_gateset(cfg.noise_table, cfg.device)
    circuits_path, samples_path = out_dir / "circuits.jsonl", out_dir / "samples.jsonl"
    if not (resume and circuits_path.exists()):
        cmd_gen_circuits(cfg, circuits_path)
    if not (resume and samples_path.exists()):
        cmd_sample(truth, circuits_path, cfg.shots, cfg.seed, samples_path)
    cks = cmd_estimate(cfg, circuits_path, samples_path, out_dir, resume=resume)
    cmd_evaluate(out_dir / "checkpoints", circuits_path, samples_path, out_dir, truth, device=cfg.device)
    cmd_calibrate(truth, cfg.calibration_shots, cfg.seed, out_dir, estimate=cks[max(cks)] if cks else None,
                  device=cfg.device)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment configuration")
    p.add_argument("--profile", choices=sorted(PROFILES), help="preset scale (applied before --config)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--n-circuits", type=int)
    p.add_argument("--n-heldout", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--schedule", type=lambda s: [int(x) for x in s.split(",") if x],
                   help="comma-separated checkpoint indices")


def _config_from_args(a) -> ExperimentConfig:
    over: dict = {}
    for name in ("seed", "n_circuits", "n_heldout", "shots"):
        if getattr(a, name, None) is not None:
            over[name] = getattr(a, name)
    est = {}
    if getattr(a, "max_iters", None) is not None:
        est["max_iters"] = a.max_iters
    if getattr(a, "schedule", None) is not None:
        est["checkpoint_schedule"] = a.schedule
    if est:
        over["estimator"] = est
    return load_config(a.config, a.profile, over)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmonitor", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--deterministic", action="store_true", help="single-threaded linear algebra")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-circuits", help="generate random layered circuits")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sample", help="sample outcome strings for a circuit file")
    p.add_argument("--gateset", default="true", help='"true", "ideal" or a gate-set JSON file')
    p.add_argument("--noise-table", help="noise table CSV used by --gateset true")
    p.add_argument("--circuits", type=Path, required=True)
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("estimate", help="run the monitoring estimator over a sample stream")
    _add_config_args(p)
    p.add_argument("--circuits", type=Path, required=True)
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--no-resume", dest="resume", action="store_false",
                   help="refit checkpoints that already exist")

    p = sub.add_parser("evaluate", help="metric tables for a directory of checkpoints")
    p.add_argument("--checkpoints", type=Path, required=True)
    p.add_argument("--circuits", type=Path, required=True)
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--truth", help='"true" or a gate-set JSON file; omit for ideal-only distances')
    p.add_argument("--max-eval", type=int, help="evaluate only the first N circuits")
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("calibrate", help="simulated read-out calibration and rate comparison")
    p.add_argument("--gateset", default="true")
    p.add_argument("--noise-table")
    p.add_argument("--estimate", help="gate-set JSON whose rates are compared (default: --gateset)")
    p.add_argument("--shots", type=int, default=8192)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("run-all", help="full synthetic pipeline")
    _add_config_args(p)
    p.add_argument("--out", type=Path, help="output directory (default: output_dir from config)")
    p.add_argument("--no-resume", dest="resume", action="store_false")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(a.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    threads = os.environ.get(THREADS_ENV)
    set_threads(1 if a.deterministic else (int(threads) if threads else None))
    try:
        if a.command == "gen-circuits":
            cmd_gen_circuits(_config_from_args(a), a.out)
        elif a.command == "sample":
            cmd_sample(resolve_gateset(a.gateset, a.noise_table), a.circuits, a.shots, a.seed, a.out)
        elif a.command == "estimate":
            cmd_estimate(_config_from_args(a), a.circuits, a.samples, a.out_dir, a.resume)
        elif a.command == "evaluate":
            truth = resolve_gateset(a.truth) if a.truth else None
            cmd_evaluate(a.checkpoints, a.circuits, a.samples, a.out_dir, truth, a.max_eval)
        elif a.command == "calibrate":
            est = read_gateset(a.estimate)[0] if a.estimate else None
            cmd_calibrate(resolve_gateset(a.gateset, a.noise_table), a.shots, a.seed, a.out_dir, est)
        elif a.command == "run-all":
            cfg = _config_from_args(a)
            cmd_run_all(cfg, a.out if a.out is not None else Path(cfg.output_dir), a.resume)
    except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
