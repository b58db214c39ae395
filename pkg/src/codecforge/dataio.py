"""Point-cloud file formats and flat key=value experiment configs.

ASCII format: header ``PCSEG v1 <point_count> <class_count>`` followed by
one ``x y z r g b label`` line per point, coordinates and colors printed
with six fractional digits. The binary twin is little-endian: magic
``PCSB``, u32 count, u32 classes, then per point 3 x f32 coords,
3 x f32 colors, u16 label.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .pointops import PointCloud

ASCII_MAGIC = "PCSEG"
ASCII_VERSION = "v1"
BINARY_MAGIC = b"PCSB"


def save_cloud_ascii(cloud: PointCloud, path, classes: int) -> None:
    if cloud.colors is None or cloud.labels is None:
        raise ConfigError("ASCII clouds need colors and labels")
    lines = [f"{ASCII_MAGIC} {ASCII_VERSION} {len(cloud)} {classes}"]
    for (x, y, z), (r, g, b), lab in zip(cloud.coords, cloud.colors, cloud.labels):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r:.6f} {g:.6f} {b:.6f} {int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_cloud_binary(cloud: PointCloud, path, classes: int) -> None:
    if cloud.colors is None or cloud.labels is None:
        raise ConfigError("binary clouds need colors and labels")
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC)
        f.write(struct.pack("<II", len(cloud), classes))
        coords = cloud.coords.astype("<f4")
        colors = cloud.colors.astype("<f4")
        labels = cloud.labels.astype("<u2")
        for i in range(len(cloud)):
            f.write(coords[i].tobytes())
            f.write(colors[i].tobytes())
            f.write(labels[i].tobytes())


def load_cloud(path) -> tuple[PointCloud, int]:
    """Load either format; returns (cloud, class_count)."""
    raw = Path(path).read_bytes()
    if raw[:4] == BINARY_MAGIC:
        return _load_binary(raw, path)
    return _load_ascii(raw, path)


def _load_ascii(raw: bytes, path) -> tuple[PointCloud, int]:
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not an ASCII cloud file ({e})", line=1) from None
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file", line=1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != ASCII_MAGIC or header[1] != ASCII_VERSION:
        raise ParseError(
            f"{path}: expected header '{ASCII_MAGIC} {ASCII_VERSION} <count> <classes>', "
            f"got {lines[0]!r}",
            line=1,
        )
    try:
        count, classes = int(header[2]), int(header[3])
    except ValueError:
        raise ParseError(f"{path}: non-integer header counts {header[2:]!r}", line=1) from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise ParseError(
            f"{path}: header promises {count} points, body has {len(body)}",
            line=len(lines),
        )
    coords = np.empty((count, 3))
    colors = np.empty((count, 3))
    labels = np.empty(count, dtype=np.int64)
    for i, ln in enumerate(body):
        lineno = i + 2
        parts = ln.split()
        if len(parts) != 7:
            raise ParseError(
                f"{path}: expected 7 fields 'x y z r g b label', got {len(parts)}",
                line=lineno,
            )
        try:
            vals = [float(p) for p in parts[:6]]
            lab = int(parts[6])
        except ValueError:
            raise ParseError(f"{path}: malformed number in {ln!r}", line=lineno) from None
        if not 0 <= lab < classes:
            raise ParseError(
                f"{path}: label {lab} outside [0, {classes})", line=lineno
            )
        coords[i] = vals[:3]
        colors[i] = vals[3:]
        labels[i] = lab
    return PointCloud(coords=coords, colors=colors, labels=labels), classes


def _load_binary(raw: bytes, path) -> tuple[PointCloud, int]:
    if len(raw) < 12:
        raise ParseError(f"{path}: truncated binary header", line=1)
    count, classes = struct.unpack("<II", raw[4:12])
    record = 4 * 3 + 4 * 3 + 2
    expected = 12 + count * record
    if len(raw) != expected:
        raise ParseError(
            f"{path}: header promises {count} points ({expected} bytes), "
            f"file has {len(raw)} bytes",
            line=1,
        )
    body = np.frombuffer(raw, dtype=np.uint8, offset=12).reshape(count, record)
    coords = body[:, :12].copy().view("<f4").astype(np.float64)
    colors = body[:, 12:24].copy().view("<f4").astype(np.float64)
    labels = body[:, 24:26].copy().view("<u2").astype(np.int64).reshape(count)
    if labels.size and labels.max() >= classes:
        raise ParseError(
            f"{path}: label {int(labels.max())} outside [0, {classes})", line=1
        )
    return PointCloud(coords=coords, colors=colors, labels=labels), classes


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class TrainConfig:
    """Flat training configuration; every field is a config-file key.

    Desk-scale defaults throughout. The corresponding full-scale settings
    are points_per_sample=40960, epochs=100, levels=4 with k=16 (the rest
    already matches).
    """

    seed: int  # mandatory, no entropy default
    topology: str = "unext"
    levels: int = 2
    block: str = "shared_mlp"
    supervision: str = "multi_level"
    width_mult: int = 1
    wide_extra: bool = False  # adds (2, 4, 8, 16, 32) to the row widths
    k: int = 16
    points_per_sample: int = 4096
    batch_size: int = 4
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    num_classes: int = 6
    use_colors: bool = True
    ratios: tuple[int, ...] = (4, 4, 4, 4, 2)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positives = {
            "levels": self.levels,
            "width_mult": self.width_mult,
            "k": self.k,
            "points_per_sample": self.points_per_sample,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "num_classes": self.num_classes,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lr < 0:  # lr=0 is a legal frozen-parameter run
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        if len(self.ratios) < self.levels + 1:
            raise ConfigError(
                f"{len(self.ratios)} ratios cannot build {self.levels + 1} rows"
            )

    def to_text(self) -> str:
        """Canonical sorted key=value form (also the hashing input)."""
        pairs = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            pairs.append(f"{f.name}={value}")
        return "\n".join(pairs) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _parse_value(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "tuple" in str(field.type):
        return tuple(int(v) for v in raw.split(",") if v != "")
    return raw


def parse_train_config(text: str) -> TrainConfig:
    """Parse flat key=value text; unknown keys and a missing seed are errors."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    seen: dict[str, object] = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        stripped = ln.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {ln!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            seen[key] = _parse_value(fields[key], raw)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    if "seed" not in seen:
        raise ConfigError("config must set an explicit seed (no entropy default)")
    return TrainConfig(**seen)


def load_train_config(path) -> TrainConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_train_config(p.read_text())
