# Path: main.py
# Version: 0.4.0
# Purpose: subtrack command line (synth | track | complete | eval).
#   Config precedence: model defaults < SUBTRACK_* env < --config JSON < flags.
#   Exit codes: 0 ok, 1 runtime failure, 2 validation failure.

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from subtrack import persist
from subtrack.errors import InvalidArgumentError, InvariantViolationError, SubtrackError
from subtrack.metrics import DEFAULT_OUTLIER_THRESHOLD, evaluate
from subtrack.params import Hyperparams
from subtrack.settings import hyperparam_env_overrides, load_env, log_level_from_env
from subtrack.synth import Scenario, generate
from subtrack.tracker import MaskedMatrix, batch_complete, init_tracker, run_stream

APP_VERSION = "0.4.0"
log = logging.getLogger("subtrack.cli")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["synth", "track", "complete", "eval"]
    hyper: Hyperparams = Field(default_factory=Hyperparams)
    scenario: Scenario = Field(default_factory=Scenario)
    rank: Optional[int] = Field(None, ge=1)
    seed: int = 0
    epochs: int = Field(5, ge=1)
    out: Optional[str] = None
    stream: Optional[str] = None
    truth: Optional[str] = None
    trace: Optional[str] = None
    estimates: Optional[str] = None
    snapshot_every: int = Field(1, ge=0)
    threshold: float = Field(DEFAULT_OUTLIER_THRESHOLD, gt=0.0)
    workers: int = Field(1, ge=1)
    verbosity: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_mode_fields(self) -> "RunConfig":
        needed = {
            "synth": ["out"],
            "track": ["stream", "out"],
            "complete": ["stream", "out"],
            "eval": ["trace", "truth", "out"],
        }[self.mode]
        missing = [f for f in needed if getattr(self, f) is None]
        if missing:
            raise ValueError(f"mode {self.mode} requires --{', --'.join(m.replace('_', '-') for m in missing)}")
        return self


# ---------------------------------------------------------------------------
# argument parsing / config assembly
# ---------------------------------------------------------------------------

_HYPER_FLAGS = {
    "lam": "lambda", "C": "C", "eta_max": "eta_max", "f": "f", "sigmoid": "sigmoid_mode",
    "inner_tol": "inner_tol", "inner_max_iters": "inner_max_iters", "reorth_every": "reorthonormalize_every",
}
_SCENARIO_FLAGS = {
    "n": "n", "frames": "num_frames", "obs_fraction": "obs_fraction", "outlier_fraction": "outlier_fraction",
    "outlier_scale": "outlier_scale", "noise_sigma": "noise_sigma", "rotation_rate": "rotation_rate",
    "rotation_start": "rotation_start",
}
_TOP_FLAGS = ("rank", "seed", "epochs", "out", "stream", "truth", "trace", "estimates",
              "snapshot_every", "threshold", "workers")


def build_parser() -> argparse.ArgumentParser:
    d = Hyperparams()
    s = Scenario()
    ap = argparse.ArgumentParser(
        prog="subtrack",
        description="Robust online subspace tracking from incomplete, outlier-corrupted frames.",
    )
    ap.add_argument("--mode", choices=["synth", "track", "complete", "eval"], help="command to run")
    ap.add_argument("--config", help="JSON file with RunConfig fields (hyper/scenario as nested objects)")
    g = ap.add_argument_group("tracker")
    g.add_argument("--lambda", dest="lam", type=float, help="l1 weight on outliers (default: 1/sqrt(n))")
    g.add_argument("--C", dest="C", type=float, help=f"step-size numerator and eta floor (default: {d.C})")
    g.add_argument("--eta-max", type=float, help=f"eta ceiling (default: {d.eta_max})")
    g.add_argument("--f", dest="f", type=float, help=f"sigmoid amplitude (default: {d.f})")
    g.add_argument("--sigmoid", choices=["default", "paper-literal"],
                   help="increment form: default = -f + 2f/(1+e^(-10x)); paper-literal = f + 2f/(1+e^(10x))")
    g.add_argument("--inner-tol", type=float, help=f"inner solve relative tolerance (default: {d.inner_tol})")
    g.add_argument("--inner-max-iters", type=int, help=f"inner solve sweep cap (default: {d.inner_max_iters})")
    g.add_argument("--reorth-every", type=int, help="re-orthonormalize U every k frames (default: 0 = never)")
    g.add_argument("--warm-start", action="store_true", default=None, help="start each fit from the previous frame's")
    g.add_argument("--skip-on-rank-fail", action="store_true", default=None,
                   help="skip frames whose basis lost rank instead of failing")
    g.add_argument("--rank", type=int, help="subspace rank r (synth: scenario r; track: default from stream header)")
    g.add_argument("--seed", type=int, help="seed for the scenario (synth) or the initial basis (default: 0)")
    g.add_argument("--epochs", type=int, help="passes over the columns in complete mode (default: 5)")
    sc = ap.add_argument_group("scenario (synth)")
    sc.add_argument("--n", type=int, help=f"ambient dimension (default: {s.n})")
    sc.add_argument("--frames", type=int, help=f"number of frames (default: {s.num_frames})")
    sc.add_argument("--obs-fraction", type=float, help=f"observed fraction per frame (default: {s.obs_fraction})")
    sc.add_argument("--outlier-fraction", type=float, help=f"outlier fraction (default: {s.outlier_fraction})")
    sc.add_argument("--outlier-scale", type=float, help=f"outlier std (default: {s.outlier_scale})")
    sc.add_argument("--noise-sigma", type=float, help=f"dense noise std (default: {s.noise_sigma})")
    sc.add_argument("--rotation-rate", type=float, help=f"per-frame basis perturbation (default: {s.rotation_rate})")
    sc.add_argument("--rotation-start", type=int, help="stationary frames before rotation starts (default: 0)")
    io_ = ap.add_argument_group("files")
    io_.add_argument("--out", help="output directory (eval: report path or directory)")
    io_.add_argument("--stream", help="stream file, or a directory of stream files (track)")
    io_.add_argument("--truth", help="ground-truth file written by synth")
    io_.add_argument("--trace", help="trace file written by track (eval)")
    io_.add_argument("--estimates", help="estimates file (eval; default: estimates.csv next to the trace)")
    io_.add_argument("--snapshot-every", type=int, help="write U_t every k frames (default: 1, 0 = never)")
    io_.add_argument("--threshold", type=float, help=f"outlier detection threshold (default: {DEFAULT_OUTLIER_THRESHOLD})")
    io_.add_argument("--workers", type=int, help="parallel trackers for a directory of streams (default: 1)")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    ap.add_argument("--version", action="version", version=f"subtrack {APP_VERSION}")
    return ap


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def assemble_config(args: argparse.Namespace) -> RunConfig:
    raw: Dict[str, Any] = {"hyper": hyperparam_env_overrides(), "scenario": {}}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidArgumentError(f"--config {args.config}: {e}") from e
        if not isinstance(file_cfg, dict):
            raise InvalidArgumentError(f"--config {args.config}: expected a JSON object")
        raw = _merge(raw, file_cfg)
    if args.mode:
        raw["mode"] = args.mode
    for flag, field in _HYPER_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            raw["hyper"][field] = v
    for flag in ("warm_start", "skip_on_rank_fail"):
        if getattr(args, flag):
            raw["hyper"][flag] = True
    for flag, field in _SCENARIO_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            raw["scenario"][field] = v
    for flag in _TOP_FLAGS:
        v = getattr(args, flag)
        if v is not None:
            raw[flag] = v
    raw["verbosity"] = max(raw.get("verbosity", 0), args.verbose)
    # synth reads rank/seed as scenario dimensions; a flag beats the config file
    if raw.get("mode") == "synth":
        for top, field in (("rank", "r"), ("seed", "seed")):
            if getattr(args, top) is not None:
                raw["scenario"][field] = getattr(args, top)
            elif top in raw:
                raw["scenario"].setdefault(field, raw[top])
    return RunConfig.model_validate(raw)


def effective_config(cfg: RunConfig, n: int, r: int, **inputs: Any) -> Dict[str, Any]:
    """Header record: everything needed to reproduce the run, defaults resolved."""
    return {
        "version": APP_VERSION,
        "mode": cfg.mode,
        "n": n,
        "r": r,
        "seed": cfg.seed,
        "hyper": cfg.hyper.resolved(n).header(),
        **({"epochs": cfg.epochs} if cfg.mode == "complete" else {}),
        **({"snapshot_every": cfg.snapshot_every} if cfg.mode == "track" else {}),
        **{k: v for k, v in inputs.items() if v is not None},
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    sc = cfg.scenario
    out = Path(cfg.out)
    frames, truth = generate(sc)
    persist.write_stream(out / "stream.csv", frames, sc.n, sc.r, sc.seed)
    persist.write_truth(out / "truth.csv", truth, sc.seed)
    persist.write_json(out / "scenario.json", {"version": APP_VERSION, "scenario": sc.model_dump(mode="json")})
    print(f"OK synth frames={sc.num_frames} n={sc.n} r={sc.r} seed={sc.seed} -> {out}")
    return EXIT_OK


def _track_one(cfg: RunConfig, stream_path: Path, out: Path, truth_path: Optional[Path]) -> str:
    sf = persist.read_stream(stream_path)
    n = sf.n
    r = cfg.rank or sf.r
    if not 1 <= r < n:
        raise InvalidArgumentError(f"rank {r} must satisfy 1 <= r < n = {n}")
    truth = persist.read_truth(truth_path) if truth_path else None
    if truth is not None and truth.bases[0].shape != (n, r):
        raise InvalidArgumentError(
            f"ground truth is {truth.bases[0].shape[0]}x{truth.bases[0].shape[1]}, tracker is {n}x{r}")

    header = effective_config(cfg, n, r, stream=str(stream_path), truth=str(truth_path) if truth_path else None)
    print(f"Plan: track {stream_path.name} frames={len(sf.frames)} n={n} r={r} "
          f"lambda={header['hyper']['lambda']:.6g} seed={cfg.seed}")
    log.info("run header: %s", json.dumps(header, sort_keys=True))
    if not sf.frames:
        log.warning("%s: empty stream, nothing to track", stream_path)

    state = init_tracker(n, r, cfg.hyper, cfg.seed)
    writer = persist.EstimatesWriter(out / "estimates.csv", n, r, cfg.snapshot_every)
    writer.start(state.basis.matrix)
    state, traces = run_stream(
        state, sf.frames,
        on_trace=lambda st, tr: writer.add(tr.frame_index, tr.fit.coeffs, tr.fit.outliers, st.basis.matrix),
    )
    persist.write_trace(out / "trace.csv", traces, header)
    writer.close(header)
    persist.write_dense(out / "basis_final.csv", state.basis.matrix, kind="basis")

    msg = f"OK track {stream_path.name} frames={len(traces)} mu={state.step.mu:.4g} eta={state.step.eta:.4g}"
    if truth is not None:
        report = evaluate(writer.estimates, writer.snapshots, truth, cfg.threshold, header)
        persist.write_report(out / "report.json", report)
        final = report.summary()["subspace_distance"]["final"]
        if final is not None:
            msg += f" subspace_distance={final:.4g}"
    return msg


def _is_stream_file(p: Path) -> bool:
    try:
        with p.open(encoding="utf-8") as fh:
            return fh.readline().startswith("# subtrack-stream ")
    except OSError:
        return False


def cmd_track(cfg: RunConfig) -> int:
    src = Path(cfg.stream)
    out = Path(cfg.out)
    if not src.is_dir():
        print(_track_one(cfg, src, out, Path(cfg.truth) if cfg.truth else None))
        return EXIT_OK

    streams = sorted(p for p in src.glob("*.csv") if _is_stream_file(p))
    if not streams:
        log.warning("%s: no stream files found", src)
    # one tracker per stream; results printed in file order
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_track_one, cfg, p, out / p.stem, None) for p in streams]
        for fut in futures:
            print(fut.result())
    return EXIT_OK


def cmd_complete(cfg: RunConfig) -> int:
    src = Path(cfg.stream)
    out = Path(cfg.out)
    sf = persist.read_stream(src)
    B = MaskedMatrix.from_frames(sf.n, sf.frames)
    n, m = B.shape
    r = cfg.rank or sf.r
    if r > min(n, m) or r >= n:
        raise InvalidArgumentError(f"rank {r} too large for a {n}x{m} matrix")
    truth = persist.read_truth(Path(cfg.truth)) if cfg.truth else None
    header = effective_config(cfg, n, r, stream=str(src), truth=cfg.truth)
    print(f"Plan: complete {src.name} n={n} m={m} r={r} epochs={cfg.epochs} "
          f"lambda={header['hyper']['lambda']:.6g} seed={cfg.seed}")

    res = batch_complete(B, r, cfg.hyper, cfg.epochs, cfg.seed)
    persist.write_dense(out / "U.csv", res.basis.matrix, kind="basis")
    persist.write_dense(out / "A.csv", res.coeffs)
    persist.write_dense(out / "S.csv", res.outliers)

    obs = B.observed
    recon = res.reconstruction()
    denom = float(np.sum(B.values[obs] ** 2))
    summary: Dict[str, Any] = {
        "config": header,
        "observed_rel_error": float(np.sum((recon[obs] - B.values[obs]) ** 2) / denom) if denom > 0 else None,
    }
    if truth is not None:
        clean = truth.clean_frames.T
        if clean.shape != (n, m):
            raise InvalidArgumentError(f"ground truth is {clean.shape}, matrix is {(n, m)}")
        low = res.lowrank()
        summary["nmse_lowrank"] = float(np.sum((low - clean) ** 2) / np.sum(clean ** 2))
        summary["nmse_observed_clean"] = float(np.sum((low[obs] - clean[obs]) ** 2) / np.sum(clean[obs] ** 2))
    persist.write_json(out / "summary.json", {"schema": f"subtrack-complete v{persist.SCHEMA_MAJOR}", **summary})
    note = f" nmse_lowrank={summary['nmse_lowrank']:.4g}" if "nmse_lowrank" in summary else ""
    print(f"OK complete n={n} m={m} r={r} mu={res.state.step.mu:.4g}{note} -> {out}")
    return EXIT_OK


def _check_trace_bounds(config: Dict[str, Any], rows: Sequence[persist.TraceRow]) -> None:
    hyper = Hyperparams.model_validate(config.get("hyper", {}))
    lo, hi = hyper.mu_bounds
    tol = 1e-12
    for row in rows:
        if not (lo * (1 - tol) <= row.mu <= hi * (1 + tol)):
            raise InvariantViolationError(row.t, f"mu {row.mu} outside [{lo}, {hi}]")
        if not (hyper.eta_low <= row.eta <= hyper.eta_max):
            raise InvariantViolationError(row.t, f"eta {row.eta} outside [{hyper.eta_low}, {hyper.eta_max}]")


def cmd_eval(cfg: RunConfig) -> int:
    trace_path = Path(cfg.trace)
    est_path = Path(cfg.estimates) if cfg.estimates else trace_path.with_name("estimates.csv")
    config, rows = persist.read_trace(trace_path)
    _check_trace_bounds(config, rows)
    est = persist.read_estimates(est_path)
    if len(est.estimates) != len(rows):
        raise InvalidArgumentError(f"trace has {len(rows)} frames, estimates have {len(est.estimates)}")
    truth = persist.read_truth(Path(cfg.truth))
    report = evaluate(est.estimates, est.snapshots, truth, cfg.threshold, config)
    out = Path(cfg.out)
    target = out if out.suffix == ".json" else out / "report.json"
    persist.write_report(target, report)
    final = report.summary()["subspace_distance"]["final"]
    print(f"OK eval frames={len(rows)} final_subspace_distance={final if final is None else f'{final:.4g}'} -> {target}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "track": cmd_track, "complete": cmd_complete, "eval": cmd_eval}


def _setup_logging(verbosity: int) -> None:
    level = {0: log_level_from_env(), 1: "INFO"}.get(verbosity, "DEBUG")
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("subtrack").setLevel(level)


def main(argv: Optional[List[str]] = None) -> int:
    load_env()
    args = build_parser().parse_args(argv)
    try:
        cfg = assemble_config(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvalidArgumentError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    _setup_logging(cfg.verbosity)

    try:
        return COMMANDS[cfg.mode](cfg)
    except (ValidationError, InvalidArgumentError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SubtrackError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {getattr(e, 'filename', '') or ''}: {e.strerror or e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
