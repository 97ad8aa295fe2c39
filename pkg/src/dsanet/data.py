"""Feature/label file formats, class maps, and a seeded synthetic generator."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FEATURE_MAGIC = b"DSAF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    """A file does not follow the expected on-disk layout."""


@dataclass
class VideoSample:
    id: str
    features: np.ndarray  # L x d_f, float64
    labels: np.ndarray  # L, int64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"video {self.id!r}: {self.features.shape[0] if self.features.ndim else 0} feature rows "
                f"but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]


class ClassMap:
    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise FormatError("class names must be unique")
        self.names = names
        self.index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassMap) and self.names == other.names

    def encode(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.index[n] for n in names], dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.names[int(i)] for i in ids]

    @classmethod
    def load(cls, path) -> ClassMap:
        names = []
        for line in _read_lines(path):
            parts = line.split()
            if not parts:
                continue
            # "<id> <name>" as in the public benchmark mapping files, or just "<name>"
            names.append(parts[-1] if len(parts) == 2 and parts[0].isdigit() else line.strip())
        if not names:
            raise FormatError(f"{path}: empty class map")
        return cls(names)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{n}\n" for n in self.names), encoding="utf-8")


def _read_lines(path) -> list[str]:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def save_features(path, features) -> None:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"features must be a matrix, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(buf)}")
    magic, version, length, dim = _HEADER.unpack_from(buf, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if length < 1 or dim < 1:
        raise FormatError(f"{path}: empty feature matrix ({length} x {dim}) at byte 8")
    need = _HEADER.size + 4 * length * dim
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, file has {len(buf)} (truncated at byte {min(len(buf), need)})")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size, count=length * dim)
    return data.astype(np.float64).reshape(length, dim)


def load_labels(path, class_map: ClassMap) -> np.ndarray:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(f"{path}: empty label file")
    out = np.empty(len(lines), dtype=np.int64)
    for i, line in enumerate(lines):
        name = line.strip()
        if name not in class_map.index:
            raise FormatError(f"{path}:{i + 1}: unknown class {name!r}")
        out[i] = class_map.index[name]
    return out


def save_labels(path, labels, class_map: ClassMap) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in class_map.decode(labels)), encoding="utf-8")


def load_split(path) -> list[str]:
    return [line.strip() for line in _read_lines(path) if line.strip()]


@dataclass(frozen=True)
class DatasetLayout:
    """``features/<id>.bin``, ``groundTruth/<id>.txt``, ``mapping.txt``, ``splits/<name>.txt``."""

    root: Path

    @property
    def mapping(self) -> Path:
        return Path(self.root) / "mapping.txt"

    def features(self, vid: str) -> Path:
        return Path(self.root) / "features" / f"{vid}.bin"

    def labels(self, vid: str) -> Path:
        return Path(self.root) / "groundTruth" / f"{vid}.txt"

    def split(self, name: str) -> Path:
        return Path(self.root) / "splits" / f"{name}.txt"


def load_dataset(root, split: str = "train") -> tuple[list[VideoSample], ClassMap]:
    layout = DatasetLayout(Path(root))
    class_map = ClassMap.load(layout.mapping)
    ids = load_split(layout.split(split))
    videos = [
        VideoSample(vid, load_features(layout.features(vid)), load_labels(layout.labels(vid), class_map))
        for vid in ids
    ]
    return videos, class_map


def write_dataset(root, videos: Sequence[VideoSample], class_map: ClassMap, split: str = "train") -> None:
    layout = DatasetLayout(Path(root))
    for sub in ("features", "groundTruth", "splits"):
        (Path(root) / sub).mkdir(parents=True, exist_ok=True)
    class_map.save(layout.mapping)
    for v in videos:
        save_features(layout.features(v.id), v.features)
        save_labels(layout.labels(v.id), v.labels, class_map)
    layout.split(split).write_text("".join(f"{v.id}\n" for v in videos), encoding="utf-8")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    segments_per_video: int = 5
    min_duration: int = 30
    max_duration: int = 50
    d_f: int = 32
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("durations must satisfy 1 <= min <= max")
        if self.segments_per_video < 1 or self.d_f < 1 or self.noise_sigma < 0:
            raise ValueError("invalid synthetic spec")


def class_prototypes(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    protos = rng.normal(size=(spec.num_classes, spec.d_f))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    diff = protos[:, None, :] - protos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1) + np.eye(spec.num_classes) * 1e9
    if dist.min() <= 0.1:
        raise ValueError("class prototypes too close; choose another seed or larger d_f")
    return protos


def generate_synthetic(spec: SyntheticSpec, n_videos: int) -> list[VideoSample]:
    protos = class_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1])
    videos = []
    for v in range(n_videos):
        labels = []
        current = int(rng.integers(spec.num_classes))
        for s in range(spec.segments_per_video):
            if s:
                current = int(rng.choice([c for c in range(spec.num_classes) if c != current]))
            labels.extend([current] * int(rng.integers(spec.min_duration, spec.max_duration + 1)))
        y = np.array(labels, dtype=np.int64)
        x = protos[y] + spec.noise_sigma * rng.normal(size=(y.size, spec.d_f))
        videos.append(VideoSample(f"synthetic_{v:04d}", x, y))
    return videos


def synthetic_class_map(num_classes: int) -> ClassMap:
    return ClassMap([f"action_{c}" for c in range(num_classes)])
