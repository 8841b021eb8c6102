"""Persistence: datasets (binary / CSV), baseline bundles, reports, score traces, run manifests.

Every writer goes through :func:`atomic_write`, so a crash never leaves a
half-written file under the final name.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import struct
import tempfile
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import BaselineModel, DetectionReport, EngineConfig
from .errors import FormatError
from .features import RawStream
from .gan import gan_from_bytes, gan_to_bytes
from .gaussian import one_cg_from_bytes, one_cg_to_bytes
from .reliability import DetectionSystem

DATASET_MAGIC = b"SHMDATA\x01"
_DATASET_HEAD = struct.Struct("<QdQQ")  # channels, rate, samples, boundary count
CSV_HEADER = ["channels", "rate", "samples"]
_ZIP_TIME = (2020, 1, 1, 0, 0, 0)  # fixed member timestamps keep bundles byte-stable


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- datasets -------------------------------------------------------------

@dataclass
class DatasetFile:
    stream: RawStream
    boundaries: list[int] | None = None

    def __post_init__(self):
        if self.boundaries is not None:
            self.boundaries = [int(b) for b in self.boundaries]
            if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
                raise FormatError("class boundaries must be strictly increasing")


def _storage_samples(stream: RawStream) -> np.ndarray:
    return np.ascontiguousarray(stream.samples, dtype="<f4")


def dataset_to_bytes(ds: DatasetFile) -> bytes:
    samples = _storage_samples(ds.stream)
    bounds = ds.boundaries or []
    n, m = samples.shape
    return (DATASET_MAGIC + _DATASET_HEAD.pack(n, float(ds.stream.sample_rate_hz), m, len(bounds))
            + struct.pack(f"<{len(bounds)}Q", *bounds) + samples.tobytes())


def dataset_from_bytes(buf: bytes) -> DatasetFile:
    if len(buf) < 8 or bytes(buf[:8]) != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)", 0)
    if len(buf) < 8 + _DATASET_HEAD.size:
        raise FormatError("truncated dataset header", len(buf))
    n, rate, m, nb = _DATASET_HEAD.unpack_from(buf, 8)
    off = 8 + _DATASET_HEAD.size
    if n == 0 or m == 0:
        raise FormatError("dataset header declares an empty stream", 8)
    if not rate > 0:
        raise FormatError("sample rate must be positive", 16)
    if off + 8 * nb > len(buf):
        raise FormatError("truncated boundary list", len(buf))
    bounds = list(struct.unpack_from(f"<{nb}Q", buf, off))
    off += 8 * nb
    need = off + 4 * n * m
    if len(buf) != need:
        raise FormatError(f"payload holds {len(buf) - off} bytes, header implies {4 * n * m}", min(len(buf), need))
    samples = np.frombuffer(buf, "<f4", n * m, off).reshape(n, m).astype(np.float64)
    try:
        return DatasetFile(RawStream(samples, rate), bounds or None)
    except FormatError as exc:
        raise FormatError(str(exc), 8 + _DATASET_HEAD.size) from None


def dataset_to_csv(ds: DatasetFile) -> str:
    samples = _storage_samples(ds.stream)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerow([samples.shape[0], repr(float(ds.stream.sample_rate_hz)), samples.shape[1]])
    if ds.boundaries:
        w.writerow(["boundaries", *ds.boundaries])
    for row in samples.T:
        w.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def dataset_from_csv(text: str) -> DatasetFile:
    lines = text.splitlines()
    offsets = np.cumsum([0] + [len(x.encode()) + 1 for x in lines]).tolist()
    rows = list(csv.reader(lines))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise FormatError("CSV must start with the header 'channels,rate,samples'", 0)
    try:
        n, rate, m = int(rows[1][0]), float(rows[1][1]), int(rows[1][2])
    except (IndexError, ValueError):
        raise FormatError("bad CSV size row", offsets[1] if len(offsets) > 1 else 0) from None
    body = 2
    bounds = None
    if len(rows) > 2 and rows[2] and rows[2][0] == "boundaries":
        try:
            bounds = [int(b) for b in rows[2][1:]]
        except ValueError:
            raise FormatError("bad boundary row", offsets[2]) from None
        body = 3
    data = rows[body:]
    if len(data) != m:
        raise FormatError(f"CSV has {len(data)} sample rows, header says {m}", offsets[min(len(offsets) - 1, body + len(data))])
    samples = np.empty((m, n), dtype=np.float64)
    for i, row in enumerate(data):
        if len(row) != n:
            raise FormatError(f"row has {len(row)} values, expected {n}", offsets[body + i])
        try:
            samples[i] = [float(v) for v in row]
        except ValueError:
            raise FormatError("non-numeric sample", offsets[body + i]) from None
    # match the binary format's float32 storage precision
    samples = samples.T.astype("<f4").astype(np.float64)
    try:
        return DatasetFile(RawStream(samples, rate), bounds)
    except FormatError as exc:
        raise FormatError(str(exc), offsets[2]) from None


def _is_csv(path) -> bool:
    return Path(path).suffix.lower() == ".csv"


def save_dataset(path, ds: DatasetFile) -> Path:
    return atomic_write(path, dataset_to_csv(ds) if _is_csv(path) else dataset_to_bytes(ds))


def load_dataset(path) -> DatasetFile:
    path = Path(path)
    if _is_csv(path):
        return dataset_from_csv(path.read_text())
    return dataset_from_bytes(path.read_bytes())


# --- baseline bundles -----------------------------------------------------

def _zip_bytes(members: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            zf.writestr(zipfile.ZipInfo(name, _ZIP_TIME), members[name])
    return buf.getvalue()


def baseline_to_bytes(b: BaselineModel, cfg: EngineConfig | None = None) -> bytes:
    manifest = {
        "format": 1,
        "class_index": b.class_index,
        "train_range": list(b.train_range),
        "n_channels": b.n_channels,
        "d_l": b.d_l,
        "latent_dim": b.gan.latent_dim,
        "feature_length": b.gan.feature_length,
        "config": None if cfg is None else cfg.to_dict(),
    }
    members = {
        "manifest.json": _json(manifest).encode(),
        "gan.bin": gan_to_bytes(b.gan),
        "one_cg.bin": one_cg_to_bytes(b.one_cg),
    }
    if b.system is not None:
        members["system.json"] = _json(b.system.to_dict()).encode()
    return _zip_bytes(members)


def baseline_from_bytes(buf: bytes) -> tuple[BaselineModel, EngineConfig | None]:
    try:
        zf = zipfile.ZipFile(io.BytesIO(buf))
        names = set(zf.namelist())
        if not {"manifest.json", "gan.bin", "one_cg.bin"} <= names:
            raise FormatError("baseline bundle is missing members", 0)
        manifest = json.loads(zf.read("manifest.json"))
        gan = gan_from_bytes(zf.read("gan.bin"))
        one_cg = one_cg_from_bytes(zf.read("one_cg.bin"))
        system = DetectionSystem.from_dict(json.loads(zf.read("system.json"))) if "system.json" in names else None
    except zipfile.BadZipFile as exc:
        raise FormatError(f"baseline bundle is not a zip archive: {exc}", 0) from None
    if gan.feature_length != manifest["n_channels"] * manifest["d_l"] // 2 or one_cg.dim != 3 * manifest["n_channels"]:
        raise FormatError("baseline members disagree with the manifest shapes")
    cfg = None if manifest.get("config") is None else EngineConfig.from_dict(manifest["config"])
    baseline = BaselineModel(manifest["class_index"], gan, one_cg, system, tuple(manifest["train_range"]),
                             manifest["n_channels"], manifest["d_l"])
    return baseline, cfg


def save_baseline(path, b: BaselineModel, cfg: EngineConfig | None = None) -> Path:
    return atomic_write(path, baseline_to_bytes(b, cfg))


def load_baseline(path) -> tuple[BaselineModel, EngineConfig | None]:
    return baseline_from_bytes(Path(path).read_bytes())


# --- reports and score traces ---------------------------------------------

def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save_report(path, report: DetectionReport) -> Path:
    return atomic_write(path, _json(report.to_dict()))


def load_report(path) -> DetectionReport:
    try:
        return DetectionReport.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"not a detection report: {exc}") from None


TRACE_COLUMNS = ["iteration", "start", "end", "baseline", "load_I", "load_II", "load_III",
                 "T_I", "T_II", "T_III", "alarm", "failed"]


def score_trace_csv(report: DetectionReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in report.iterations:
        w.writerow([r.iteration, r.start, r.end, r.baseline, *map(repr, r.loads), *map(repr, r.thresholds),
                    int(r.alarm), "+".join(r.failed)])
    return out.getvalue()


def save_score_trace(path, report: DetectionReport) -> Path:
    return atomic_write(path, score_trace_csv(report))


def report_summary(report: DetectionReport) -> dict:
    return {
        "mode": report.mode,
        "v_l": report.v_l,
        "t_l": report.t_l,
        "iterations": report.n_iterations,
        "alarms": len(report.alarms),
        "false_alarms": report.false_alarms,
        "false_alarm_ratio": report.false_alarm_ratio,
        "outcomes": {str(k): v for k, v in report.outcomes.items()},
        "baselines": len(report.baselines),
        "incomplete": report.incomplete,
    }


# --- run manifests --------------------------------------------------------

def software_versions() -> dict:
    import scipy

    from . import __version__

    return {"shmnovelty": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    config: dict
    seed: int
    dataset: str
    dataset_sha256: str
    command: str = "run"
    versions: dict = field(default_factory=software_versions)
    outputs: dict = field(default_factory=dict)
    truth: list[int] | None = None

    def engine_config(self) -> EngineConfig:
        return EngineConfig.from_dict(self.config)

    def to_dict(self) -> dict:
        return asdict(self)


def save_manifest(path, manifest: RunManifest) -> Path:
    return atomic_write(path, _json(manifest.to_dict()))


def load_manifest(path) -> RunManifest:
    try:
        return RunManifest(**json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"not a run manifest: {exc}") from None
