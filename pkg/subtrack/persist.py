# Path: subtrack/persist.py
# Purpose: CSV/JSON codecs for streams, ground truth, traces, estimates,
#          dense matrices and evaluation reports.
# Version: 0.4.0
#
# Every file opens with "# subtrack-<kind> v<major>[, key=value ...]".
# Trace and estimate files add "# config: <json>" with the effective run
# config. Reals are written with 17 significant digits so reads are exact.

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core_model import Frame, ObservationMask
from .errors import InvalidArgumentError, ParseError, SchemaVersionError
from .metrics import EvalReport, FrameEstimate
from .synth import GroundTruth
from .tracker import FrameTrace

log = logging.getLogger("subtrack.persist")

SCHEMA_MAJOR = 1
_HEADER_RE = re.compile(r"^# subtrack-([a-z]+) v(\d+)(?:\.\d+)?(?:, (.*))?$")
_CONFIG_PREFIX = "# config: "
TRACE_COLUMNS = ["t", "inner_iters", "mu", "eta", "residual_norm", "loss", "s_nnz"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def join_reals(values: Iterable[float]) -> str:
    return ";".join(fmt(v) for v in values)


def join_ints(values: Iterable[int]) -> str:
    return ";".join(str(int(v)) for v in values)


def _split(text: str, cast, path: str, line: int, what: str) -> List:
    text = text.strip()
    if not text:
        return []
    try:
        return [cast(p) for p in text.split(";")]
    except ValueError as e:
        raise ParseError(path, line, f"bad {what}: {e}") from e


def _frame_index(text: str, expected: int, path: str, line: int) -> int:
    if not text.strip().isdigit() or int(text) != expected:
        raise ParseError(path, line, f"frame index {text!r} out of sequence (expected {expected})")
    return expected


def _indices(text: str, n: int, path: str, line: int, what: str) -> List[int]:
    idx = _split(text, int, path, line, what)
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise ParseError(path, line, f"{what} index {bad[0]} outside [0, {n})")
    return idx


def _mask(text: str, n: int, path: str, line: int) -> ObservationMask:
    try:
        return ObservationMask(n, _indices(text, n, path, line, "mask"))
    except InvalidArgumentError as e:
        raise ParseError(path, line, str(e)) from e


@dataclass
class CsvDoc:
    kind: str
    meta: Dict[str, str]
    config: Optional[Dict]
    columns: List[str]
    rows: List[Tuple[int, List[str]]] = field(default_factory=list)  # (line number, cells)

    def meta_int(self, key: str, path: str) -> int:
        try:
            return int(self.meta[key])
        except (KeyError, ValueError) as e:
            raise ParseError(path, 1, f"header field {key!r} missing or not an integer") from e


def _header_line(kind: str, meta: Dict[str, object]) -> str:
    extra = ", ".join(f"{k}={v}" for k, v in meta.items())
    return f"# subtrack-{kind} v{SCHEMA_MAJOR}" + (f", {extra}" if extra else "")


def _write_csv(path: Path, kind: str, meta: Dict[str, object], columns: Optional[Sequence[str]],
               rows: Iterable[Sequence[object]], config: Optional[Dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(_header_line(kind, meta) + "\n")
    if config is not None:
        buf.write(_CONFIG_PREFIX + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    if columns:
        w.writerow(columns)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _read_csv(path: Path, kind: str, columns: Optional[Sequence[str]]) -> CsvDoc:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParseError(str(path), None, f"cannot read: {e.strerror or e}") from e
    if not lines:
        raise ParseError(str(path), 1, f"empty file, expected '# subtrack-{kind} v{SCHEMA_MAJOR}' header")
    m = _HEADER_RE.match(lines[0].strip())
    if not m:
        raise ParseError(str(path), 1, f"missing '# subtrack-{kind} v{SCHEMA_MAJOR}' header")
    if m.group(1) != kind:
        raise ParseError(str(path), 1, f"expected a {kind} file, found {m.group(1)}")
    if int(m.group(2)) != SCHEMA_MAJOR:
        raise SchemaVersionError(str(path), f"v{m.group(2)}", f"v{SCHEMA_MAJOR}")
    meta: Dict[str, str] = {}
    for part in (m.group(3) or "").split(","):
        if "=" in part:
            k, v = part.split("=", 1)
            meta[k.strip()] = v.strip()

    pos = 1
    config = None
    if pos < len(lines) and lines[pos].startswith(_CONFIG_PREFIX):
        try:
            config = json.loads(lines[pos][len(_CONFIG_PREFIX):])
        except json.JSONDecodeError as e:
            raise ParseError(str(path), pos + 1, f"bad config header: {e.msg}") from e
        pos += 1

    doc = CsvDoc(kind=kind, meta=meta, config=config, columns=list(columns or []))
    body = csv.reader(lines[pos:])
    first = True
    for offset, cells in enumerate(body):
        lineno = pos + offset + 1
        if not cells:
            continue
        if first and columns:
            first = False
            if [c.strip() for c in cells] != list(columns):
                raise ParseError(str(path), lineno, f"expected columns {','.join(columns)}")
            continue
        first = False
        if columns and len(cells) != len(columns):
            raise ParseError(str(path), lineno, f"expected {len(columns)} fields, got {len(cells)}")
        doc.rows.append((lineno, cells))
    return doc


# ---------------------------------------------------------------------------
# streams (also the on-disk form of a masked matrix, one row per column)
# ---------------------------------------------------------------------------

def write_stream(path: Path, frames: Sequence[Frame], n: int, r: int, seed: int) -> None:
    rows = ([t, join_ints(f.mask.indices), join_reals(f.observed())] for t, f in enumerate(frames))
    _write_csv(path, "stream", {"n": n, "r": r, "seed": seed}, ["t", "mask", "values"], rows)


@dataclass
class StreamFile:
    n: int
    r: int
    seed: int
    frames: List[Frame]


def read_stream(path: Path) -> StreamFile:
    p = str(path)
    doc = _read_csv(path, "stream", ["t", "mask", "values"])
    n, r, seed = doc.meta_int("n", p), doc.meta_int("r", p), doc.meta_int("seed", p)
    frames = []
    for lineno, (t, mask_txt, vals_txt) in doc.rows:
        _frame_index(t, len(frames), p, lineno)
        idx = _split(mask_txt, int, p, lineno, "mask")
        vals = _split(vals_txt, float, p, lineno, "values")
        if len(idx) != len(vals):
            raise ParseError(p, lineno, f"mask has {len(idx)} indices but {len(vals)} values")
        try:
            frames.append(Frame.from_observed(ObservationMask(n, idx), vals))
        except InvalidArgumentError as e:
            raise ParseError(p, lineno, str(e)) from e
    return StreamFile(n=n, r=r, seed=seed, frames=frames)


# ---------------------------------------------------------------------------
# dense matrices (basis snapshots, factors)
# ---------------------------------------------------------------------------

def write_dense(path: Path, M: np.ndarray, kind: str = "matrix") -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows = ([fmt(x) for x in row] for row in M)
    _write_csv(path, kind, {"rows": M.shape[0], "cols": M.shape[1]}, None, rows)


def read_dense(path: Path, kind: str = "matrix") -> np.ndarray:
    p = str(path)
    doc = _read_csv(path, kind, None)
    rows, cols = doc.meta_int("rows", p), doc.meta_int("cols", p)
    out = np.zeros((rows, cols))
    if len(doc.rows) != rows:
        raise ParseError(p, None, f"expected {rows} rows, found {len(doc.rows)}")
    for i, (lineno, cells) in enumerate(doc.rows):
        if len(cells) != cols:
            raise ParseError(p, lineno, f"expected {cols} values, got {len(cells)}")
        try:
            out[i] = [float(c) for c in cells]
        except ValueError as e:
            raise ParseError(p, lineno, str(e)) from e
    return out


def _bases_dir(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_bases")


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

TRUTH_COLUMNS = ["t", "basis", "coeffs", "outliers", "visible_outliers", "mask"]


def write_truth(path: Path, truth: GroundTruth, seed: int) -> None:
    path = Path(path)
    bdir = _bases_dir(path)
    refs = []
    for i, B in enumerate(truth.bases):
        ref = f"{bdir.name}/basis_{i:05d}.csv"
        write_dense(path.parent / ref, B, kind="basis")
        refs.append(ref)
    n, r = truth.bases[0].shape
    rows = (
        [t, refs[truth.basis_index[t]], join_reals(truth.coeffs[t]), join_ints(truth.outlier_supports[t]),
         join_ints(truth.visible_outlier_support(t)), join_ints(truth.masks[t].indices)]
        for t in range(truth.num_frames)
    )
    meta = {"n": n, "r": r, "frames": truth.num_frames, "seed": seed, "init": refs[0]}
    _write_csv(path, "truth", meta, TRUTH_COLUMNS, rows)


def read_truth(path: Path) -> GroundTruth:
    path = Path(path)
    p = str(path)
    doc = _read_csv(path, "truth", TRUTH_COLUMNS)
    n, r = doc.meta_int("n", p), doc.meta_int("r", p)
    ref_index: Dict[str, int] = {}
    bases: List[np.ndarray] = []

    def load(ref: str, lineno: int) -> int:
        if ref not in ref_index:
            B = read_dense(path.parent / ref, kind="basis")
            if B.shape != (n, r):
                raise ParseError(p, lineno, f"basis {ref} has shape {B.shape}, expected {(n, r)}")
            ref_index[ref] = len(bases)
            bases.append(B)
        return ref_index[ref]

    if "init" in doc.meta:
        load(doc.meta["init"], 1)
    basis_index, coeffs, supports, masks = [], [], [], []
    for lineno, (t, ref, co, out, _visible, mask) in doc.rows:
        _frame_index(t, len(basis_index), p, lineno)
        basis_index.append(load(ref, lineno))
        a = _split(co, float, p, lineno, "coeffs")
        if len(a) != r:
            raise ParseError(p, lineno, f"expected {r} coefficients, got {len(a)}")
        coeffs.append(a)
        supports.append(np.asarray(_indices(out, n, p, lineno, "outlier support"), dtype=np.int64))
        masks.append(_mask(mask, n, p, lineno))
    return GroundTruth(bases=bases, basis_index=basis_index,
                       coeffs=np.asarray(coeffs, dtype=float).reshape(-1, r),
                       outlier_supports=supports, masks=masks)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass
class TraceRow:
    t: int
    inner_iters: int
    mu: float
    eta: float
    residual_norm: float
    loss: float
    s_nnz: int


def trace_row(tr: FrameTrace) -> List[object]:
    return [tr.frame_index, tr.inner_iterations, fmt(tr.mu_used), fmt(tr.eta),
            fmt(tr.residual_norm), fmt(tr.loss), tr.s_nnz]


def write_trace(path: Path, traces: Sequence[FrameTrace], config: Dict) -> None:
    _write_csv(path, "trace", {}, TRACE_COLUMNS, (trace_row(tr) for tr in traces), config=config)


def read_trace(path: Path) -> Tuple[Dict, List[TraceRow]]:
    p = str(path)
    doc = _read_csv(path, "trace", TRACE_COLUMNS)
    rows = []
    for lineno, cells in doc.rows:
        try:
            rows.append(TraceRow(int(cells[0]), int(cells[1]), float(cells[2]), float(cells[3]),
                                 float(cells[4]), float(cells[5]), int(cells[6])))
        except ValueError as e:
            raise ParseError(p, lineno, str(e)) from e
    return doc.config or {}, rows


# ---------------------------------------------------------------------------
# per-frame estimates + basis snapshots
# ---------------------------------------------------------------------------

ESTIMATE_COLUMNS = ["t", "coeffs", "outlier_idx", "outlier_vals", "basis"]


def _snapshot(ref: Path, n: int, r: int, path: str, line: int) -> np.ndarray:
    U = read_dense(ref, kind="basis")
    if U.shape != (n, r):
        raise ParseError(path, line, f"snapshot {ref.name} has shape {U.shape}, expected {(n, r)}")
    return U


class EstimatesWriter:
    """Streams per-frame estimates; snapshots U_t every `every` frames."""

    def __init__(self, path: Path, n: int, r: int, every: int = 1):
        self.path = Path(path)
        self.n, self.r = n, r
        self.every = max(0, int(every))
        self.bdir = _bases_dir(self.path)
        self.rows: List[List[object]] = []
        self.snapshots: Dict[int, np.ndarray] = {}
        self.estimates: List[FrameEstimate] = []
        self.init_ref = ""

    def start(self, U0: np.ndarray) -> None:
        self.init_ref = f"{self.bdir.name}/basis_init.csv"
        write_dense(self.path.parent / self.init_ref, U0, kind="basis")
        self.snapshots[-1] = np.array(U0, order="C")

    def add(self, t: int, coeffs: np.ndarray, outliers: np.ndarray, U_after: np.ndarray) -> None:
        ref = ""
        if self.every and (t + 1) % self.every == 0:
            ref = f"{self.bdir.name}/basis_{t:05d}.csv"
            write_dense(self.path.parent / ref, U_after, kind="basis")
            self.snapshots[t] = np.array(U_after, order="C")
        idx = np.flatnonzero(outliers)
        self.rows.append([t, join_reals(coeffs), join_ints(idx), join_reals(outliers[idx]), ref])
        self.estimates.append(FrameEstimate(t, np.array(coeffs), np.array(outliers)))

    def close(self, config: Dict) -> None:
        meta = {"n": self.n, "r": self.r, "init": self.init_ref}
        _write_csv(self.path, "estimates", meta, ESTIMATE_COLUMNS, self.rows, config=config)


@dataclass
class EstimatesFile:
    config: Dict
    estimates: List[FrameEstimate]
    snapshots: Dict[int, np.ndarray]


def read_estimates(path: Path) -> EstimatesFile:
    path = Path(path)
    p = str(path)
    doc = _read_csv(path, "estimates", ESTIMATE_COLUMNS)
    n, r = doc.meta_int("n", p), doc.meta_int("r", p)
    snapshots: Dict[int, np.ndarray] = {}
    if doc.meta.get("init"):
        snapshots[-1] = _snapshot(path.parent / doc.meta["init"], n, r, p, 1)
    estimates = []
    for lineno, (t, co, idx_txt, vals_txt, ref) in doc.rows:
        t = _frame_index(t, len(estimates), p, lineno)
        a = np.asarray(_split(co, float, p, lineno, "coeffs"))
        if a.size != r:
            raise ParseError(p, lineno, f"expected {r} coefficients, got {a.size}")
        idx = _indices(idx_txt, n, p, lineno, "outlier")
        vals = _split(vals_txt, float, p, lineno, "outlier values")
        if len(idx) != len(vals):
            raise ParseError(p, lineno, "outlier indices and values differ in length")
        s = np.zeros(n)
        s[np.asarray(idx, dtype=np.int64)] = vals
        if ref.strip():
            snapshots[t] = _snapshot(path.parent / ref.strip(), n, r, p, lineno)
        estimates.append(FrameEstimate(t, a, s))
    return EstimatesFile(config=doc.config or {}, estimates=estimates, snapshots=snapshots)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_SCHEMA = f"subtrack-report v{SCHEMA_MAJOR}"


def write_report(path: Path, report: EvalReport) -> None:
    write_json(path, {"schema": REPORT_SCHEMA, **report.to_dict()})


def write_json(path: Path, payload: Dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: Path) -> Dict:
    p = str(path)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(p, e.lineno, e.msg) from e
    schema = str(data.get("schema", ""))
    m = re.match(r"^subtrack-report v(\d+)", schema)
    if not m:
        raise ParseError(p, None, "missing report schema field")
    if int(m.group(1)) != SCHEMA_MAJOR:
        raise SchemaVersionError(p, f"v{m.group(1)}", f"v{SCHEMA_MAJOR}")
    return data
