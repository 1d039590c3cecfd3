"""Binary tensor and checkpoint formats, run configuration, manifests and exports.

Tensor file::

    b"MSTK" | u32 version | u32 rank | u64 dims[rank] | f64 payload (little-endian, row-major)

Checkpoint::

    b"MSCK" | u32 version | u32 n_blocks |
    n_blocks * (u32 name_len | name utf-8 | u32 rank | u64 dims[rank] | f64 values)

Blocks named ``meta.*`` carry model hyperparameters stored as float64.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .denoiser import PARAM_NAMES, DenoiserModel

TENSOR_MAGIC = b"MSTK"
CHECKPOINT_MAGIC = b"MSCK"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8", order="C")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(buf: bytes, offset: int):
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    dims = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    end = offset + 8 * count
    if end > len(buf):
        raise FormatError(f"payload truncated: need {end} bytes, have {len(buf)}")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims).astype(np.float64)
    return arr, end


def _check_header(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")


def encode_tensor(arr: np.ndarray) -> bytes:
    return TENSOR_MAGIC + struct.pack("<I", FORMAT_VERSION) + _pack_array(arr)


def decode_tensor(buf: bytes, path="<bytes>") -> np.ndarray:
    _check_header(buf, TENSOR_MAGIC, path)
    try:
        arr, end = _unpack_array(buf, 8)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated array header: {exc}") from None
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after payload")
    return arr


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), path)


def encode_checkpoint(model: DenoiserModel) -> bytes:
    blocks = {
        "meta.image_shape": np.array(model.image_shape, dtype=np.float64),
        "meta.num_classes": np.array([model.num_classes], dtype=np.float64),
        "meta.time_dim": np.array([model.time_dim], dtype=np.float64),
        "meta.class_dim": np.array([model.class_dim], dtype=np.float64),
        "meta.hidden": np.array([model.hidden], dtype=np.float64),
    }
    blocks.update({name: model.params[name] for name in PARAM_NAMES})
    out = [CHECKPOINT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(blocks))]
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + _pack_array(arr))
    return b"".join(out)


def decode_checkpoint(buf: bytes, path="<bytes>") -> DenoiserModel:
    _check_header(buf, CHECKPOINT_MAGIC, path)
    blocks = {}
    try:
        (count,) = struct.unpack_from("<I", buf, 8)
        offset = 12
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            name = buf[offset:offset + n].decode("utf-8")
            offset += n
            blocks[name], offset = _unpack_array(buf, offset)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt block table: {exc}") from None
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after last block")
    missing = [n for n in (*PARAM_NAMES, "meta.image_shape") if n not in blocks]
    if missing:
        raise FormatError(f"{path}: missing blocks {missing}")
    meta = lambda key: int(blocks[f"meta.{key}"][0])
    return DenoiserModel(
        image_shape=tuple(int(v) for v in blocks["meta.image_shape"]),
        num_classes=meta("num_classes"), time_dim=meta("time_dim"),
        class_dim=meta("class_dim"), hidden=meta("hidden"),
        params={name: blocks[name] for name in PARAM_NAMES},
    )


def write_checkpoint(path, model: DenoiserModel) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def read_checkpoint(path) -> DenoiserModel:
    return decode_checkpoint(Path(path).read_bytes(), path)


# --------------------------------------------------------------------------- config


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # noise schedule
    T: int = 500
    beta_1: float = 1e-4
    beta_T: float = 2.8e-2
    # stroke schedule
    k: int = 2
    f_rough: float = 0.75
    w_max: float = 0.5
    # data and model
    image_size: int = 8
    channels: int = 1
    dataset_size: int = 512
    data_seed: int = 0
    hidden: int = 256
    time_dim: int = 32
    class_dim: int = 16
    # training
    mode: str = "multistroke"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    batch_size: int = 32
    steps: int = 2000
    label_drop: float = 0.1
    buckets: int = 5
    aligned_target: bool = False
    seed: int = 0
    # sampling
    checkpoint: str = ""
    num_steps: str = "10"
    variance: str = "fixedlarge"
    num_samples: int = 8
    label: int = 0
    # surrogate simulation
    sim_steps: int = 10
    rho: float = 0.5
    kappa: float = 0.0
    sigma: float = 0.1
    bias_energy: float = 0.0
    sim_w: float = -1.0
    sim_samples: int = 100_000
    detail_kind: str = "random"
    # audit
    sample_dirs: str = ""
    reference: str = "per_class"

    def step_budgets(self) -> list[int]:
        return [int(s) for s in self.num_steps.split(",") if s.strip()]

    def sample_dir_list(self) -> list[str]:
        return [s.strip() for s in self.sample_dirs.split(",") if s.strip()]

    def validate(self) -> list[str]:
        problems = []
        if self.mode not in ("ddpm", "multistroke"):
            problems.append(f"mode must be ddpm or multistroke, got {self.mode!r}")
        if self.variance not in ("fixedlarge", "fixedsmall"):
            problems.append(f"variance must be fixedlarge or fixedsmall, got {self.variance!r}")
        if self.reference not in ("per_class", "global"):
            problems.append(f"reference must be per_class or global, got {self.reference!r}")
        if self.detail_kind not in ("random", "scalar"):
            problems.append(f"detail_kind must be random or scalar, got {self.detail_kind!r}")
        if self.image_size % self.k:
            problems.append(f"image_size {self.image_size} is not divisible by k={self.k}")
        if not 0 <= self.w_max < 1:
            problems.append(f"w_max must lie in [0, 1), got {self.w_max}")
        if not 0 <= self.f_rough <= 1:
            problems.append(f"f_rough must lie in [0, 1], got {self.f_rough}")
        if self.label < 0:
            problems.append(f"label must be 0 (cycle classes) or a class index, got {self.label}")
        if not 0 <= self.label_drop <= 1:
            problems.append(f"label_drop must lie in [0, 1], got {self.label_drop}")
        for key in ("T", "k", "image_size", "channels", "dataset_size", "hidden", "batch_size", "buckets",
                    "num_samples", "sim_steps", "sim_samples"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1, got {getattr(self, key)}")
        try:
            budgets = self.step_budgets()
            if any(not 1 <= n <= self.T for n in budgets):
                problems.append(f"num_steps entries must lie in [1, T={self.T}]")
        except ValueError:
            problems.append(f"num_steps must be a comma-separated list of integers, got {self.num_steps!r}")
        return problems


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    if kind in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def parse_config(text: str, base_dir: Path | None = None, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; every problem is collected and raised together."""
    values, problems, seen = {}, [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"{source}:{lineno}: expected key = value, got {line.strip()!r}")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: bad value for {key}: {exc}")
    if problems:
        raise ConfigError("\n".join(problems))
    cfg = RunConfig(**values)
    problems = [f"{source}: {p}" for p in cfg.validate()]
    base = base_dir or Path(".")
    if cfg.checkpoint:
        path = base / cfg.checkpoint
        if not path.is_file():
            problems.append(f"{source}: checkpoint file not found: {path}")
        cfg.checkpoint = str(path)
    dirs = []
    for d in cfg.sample_dir_list():
        path = base / d
        if not path.is_dir():
            problems.append(f"{source}: sample directory not found: {path}")
        dirs.append(str(path))
    cfg.sample_dirs = ",".join(dirs)
    if problems:
        raise ConfigError("\n".join(problems))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent, str(path))


# --------------------------------------------------------------------------- outputs


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return v


def write_pgm(path, image: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> None:
    """Binary 8-bit portable graymap of a 2D array, clamped to [lo, hi]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"graymap export needs a 2D array, got shape {img.shape}")
    scaled = np.round((np.clip(img, lo, hi) - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = scaled.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(data[-w * h:], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / maxval


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, seed: int, command: str) -> Path:
    """List every file under ``out_dir`` with size and SHA-256 in ``manifest.json``."""
    out_dir = Path(out_dir)
    entries = []
    for path in sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json"):
        entries.append({"path": path.relative_to(out_dir).as_posix(),
                        "size": path.stat().st_size,
                        "sha256": sha256_file(path)})
    manifest = {"command": command, "seed": seed, "files": entries}
    target = out_dir / "manifest.json"
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target
