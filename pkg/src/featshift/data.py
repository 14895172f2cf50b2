"""
Procedural multi-domain image benchmark

Each domain renders the same shape-classification task (disk, square,
triangle, cross) and then restyles the pixels: optional contrast inversion,
a per-channel affine, an additive sinusoidal texture and Gaussian noise.
Geometry is never touched by the style, so labels depend on shape alone.

Example:
    >>> manifest = default_manifest(n_per_class=100)
    >>> benchmark = build_benchmark(manifest)
    >>> split = leave_one_out(benchmark, held_out="sketch", seed=0)
    >>> len(split.train), len(split.test)
    (1200, 400)
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DatasetError, OutputExistsError
from .ndcore.tensor import Tensor
from .rng import STREAMS, Rng

logger = logging.getLogger(__name__)


GENERATOR_VERSION = "1"
SHAPE_CLASSES = ("disk", "square", "triangle", "cross")
MIN_IMAGE_SIZE = 16
MANIFEST_NAME = "manifest.json"
FILE_KEYS = ("images", "labels", "shape")

CORRUPTION_KINDS = ("gaussian_noise", "contrast", "brightness")
# Index 0 is the identity sentinel for every kind
SEVERITY_TABLES = {
    "gaussian_noise": (0.0, 0.08, 0.12, 0.18, 0.26, 0.38),
    "contrast": (1.0, 0.4, 0.3, 0.2, 0.1, 0.05),
    "brightness": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
}
MAX_SEVERITY = 5

PathLike = Union[str, Path]


@dataclass
class DomainSpec:
    """
    Pixel-space style of one domain

    Attributes:
        name: Domain name
        channel_shift: Per-channel additive mean offset
        channel_scale: Per-channel contrast scale about mid-grey
        texture_amp: Amplitude of the additive sinusoid
        texture_freq: Cycles of the sinusoid across the image
        noise_std: Standard deviation of Gaussian pixel noise
        seed: Generation seed of the domain
        invert: Invert contrast (1 - x) before the affine
    """

    name: str
    channel_shift: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    channel_scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    texture_amp: float = 0.0
    texture_freq: float = 1.0
    noise_std: float = 0.0
    seed: int = 0
    invert: bool = False

    def __post_init__(self) -> None:
        self.channel_shift = tuple(float(v) for v in self.channel_shift)
        self.channel_scale = tuple(float(v) for v in self.channel_scale)

    def validate(self) -> "DomainSpec":
        if not self.name:
            raise DatasetError("domain name must be non-empty")
        if len(self.channel_shift) != 3 or len(self.channel_scale) != 3:
            raise DatasetError(f"domain '{self.name}': shift and scale need 3 channels")
        if any(s <= 0 for s in self.channel_scale):
            raise DatasetError(f"domain '{self.name}': channel_scale must be positive")
        if self.texture_amp < 0 or self.texture_freq <= 0 or self.noise_std < 0:
            raise DatasetError(f"domain '{self.name}': invalid texture or noise parameters")
        return self

    @property
    def is_identity(self) -> bool:
        return (
            not self.invert
            and self.channel_shift == (0.0, 0.0, 0.0)
            and self.channel_scale == (1.0, 1.0, 1.0)
            and self.texture_amp == 0
            and self.noise_std == 0
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["channel_shift"] = list(self.channel_shift)
        data["channel_scale"] = list(self.channel_scale)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], prefix: str = "domains") -> "DomainSpec":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise DatasetError(f"{prefix}.{key}: unknown key")
        return cls(**data).validate()


def default_domains(seed: int = 0) -> List[DomainSpec]:
    """
    Four mutually distinct styles; "sketch" is the extreme one

    Styles are disjoint in (shift, scale) space. The sketch domain inverts
    contrast and adds strong high-frequency texture.
    """
    return [
        DomainSpec("photo", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0, 1.0, 0.02, seed + 101),
        DomainSpec("warm", (0.25, 0.05, -0.2), (0.8, 0.9, 0.6), 0.08, 3.0, 0.04, seed + 202),
        DomainSpec("cool", (-0.2, 0.1, 0.3), (0.6, 0.8, 1.2), 0.15, 6.0, 0.06, seed + 303),
        DomainSpec("sketch", (0.1, 0.1, 0.1), (1.4, 1.4, 1.4), 0.25, 10.0, 0.1, seed + 404, invert=True),
    ]


@dataclass
class DatasetManifest:
    """Everything needed to regenerate a benchmark bit-identically"""

    domains: List[DomainSpec]
    classes: List[str] = field(default_factory=lambda: list(SHAPE_CLASSES))
    n_per_class: int = 400
    image_size: int = 32
    global_seed: int = 0
    generator_version: str = GENERATOR_VERSION
    files: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    @property
    def counts(self) -> Dict[str, int]:
        return {d.name: self.n_per_class * len(self.classes) for d in self.domains}

    def validate(self) -> "DatasetManifest":
        if not self.domains:
            raise DatasetError("manifest.domains: at least one domain is required")
        names = self.domain_names
        if len(set(names)) != len(names):
            raise DatasetError(f"manifest.domains: duplicate names {names}")
        unknown = [c for c in self.classes if c not in SHAPE_CLASSES]
        if unknown or not self.classes:
            raise DatasetError(f"manifest.classes: unknown or empty classes {unknown}")
        if self.n_per_class < 1:
            raise DatasetError("manifest.n_per_class: must be >= 1")
        if self.image_size < MIN_IMAGE_SIZE:
            raise DatasetError(f"manifest.image_size: must be >= {MIN_IMAGE_SIZE}")
        if self.generator_version != GENERATOR_VERSION:
            raise DatasetError(
                f"manifest.generator_version: {self.generator_version} is not {GENERATOR_VERSION}"
            )
        for d in self.domains:
            d.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "generator_version": self.generator_version,
            "global_seed": self.global_seed,
            "image_size": self.image_size,
            "n_per_class": self.n_per_class,
            "classes": list(self.classes),
            "counts": self.counts,
            "domains": [d.to_dict() for d in self.domains],
            "files": self.files,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DatasetManifest":
        if not isinstance(data, Mapping):
            raise DatasetError("manifest: expected a JSON object")
        allowed = {f.name for f in fields(cls)} | {"counts"}
        for key in data:
            if key not in allowed:
                raise DatasetError(f"manifest.{key}: unknown key")
        if "domains" not in data:
            raise DatasetError("manifest.domains: missing")
        payload = {k: v for k, v in data.items() if k != "counts"}
        try:
            payload["domains"] = [
                DomainSpec.from_dict(d, prefix=f"manifest.domains.{i}") for i, d in enumerate(data["domains"])
            ]
            manifest = cls(**payload)
        except TypeError as exc:
            raise DatasetError(f"manifest: {exc}") from exc
        return manifest.validate()


def default_manifest(n_per_class: int = 400, image_size: int = 32, seed: int = 0) -> DatasetManifest:
    return DatasetManifest(
        domains=default_domains(seed), n_per_class=n_per_class, image_size=image_size, global_seed=seed
    ).validate()


# -----------------------------------------------------------------------------
# samples
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One image with its label and domain"""

    image: Tensor
    label: int
    domain: str


@dataclass
class SampleSet:
    """
    Array-backed sequence of samples

    Attributes:
        images: float32 [N, 3, H, W]
        labels: int64 [N]
        domains: domain name per sample [N]
    """

    images: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.images)
        if len(self.labels) != n or len(self.domains) != n:
            raise DatasetError(
                f"SampleSet arrays disagree: {n} images, {len(self.labels)} labels, {len(self.domains)} domains"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> Sample:
        return Sample(
            image=Tensor(self.images[index]),
            label=int(self.labels[index]),
            domain=str(self.domains[index]),
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def domain_names(self) -> List[str]:
        return sorted(set(str(d) for d in self.domains))

    def subset(self, indices: Sequence[int]) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SampleSet(self.images[idx], self.labels[idx], self.domains[idx])

    def batch(self, indices: Sequence[int]) -> Tuple[Tensor, np.ndarray]:
        """Images as one Tensor plus their labels"""
        idx = np.asarray(indices, dtype=np.int64)
        return Tensor(self.images[idx]), self.labels[idx]

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    @classmethod
    def concat(cls, sets: Sequence["SampleSet"]) -> "SampleSet":
        if not sets:
            raise DatasetError("Cannot concatenate zero sample sets")
        return cls(
            images=np.concatenate([s.images for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            domains=np.concatenate([s.domains for s in sets]),
        )


# -----------------------------------------------------------------------------
# rendering
# -----------------------------------------------------------------------------


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if kind == "disk":
        return u * u + v * v <= 1.0
    if kind == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.8
    if kind == "triangle":
        return (v >= -0.5) & (v <= 1.0 - np.sqrt(3.0) * np.abs(u))
    if kind == "cross":
        return ((np.abs(u) <= 0.3) & (np.abs(v) <= 0.9)) | ((np.abs(v) <= 0.3) & (np.abs(u) <= 0.9))
    raise DatasetError(f"Unknown shape class '{kind}'")


def _resolve_classes(classes: Union[int, Sequence[str]]) -> List[str]:
    if isinstance(classes, int):
        if not 1 <= classes <= len(SHAPE_CLASSES):
            raise DatasetError(f"K must lie in 1..{len(SHAPE_CLASSES)}, got {classes}")
        return list(SHAPE_CLASSES[:classes])
    names = list(classes)
    if not names or any(c not in SHAPE_CLASSES for c in names):
        raise DatasetError(f"Classes must be a non-empty subset of {SHAPE_CLASSES}, got {names}")
    return names


def render_shapes(
    classes: Union[int, Sequence[str]], n_per_class: int, size: int, rng: Rng
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Raw renders in [0, 1], class-major order

    Each image is a filled shape at a random centre, scale and rotation with
    random foreground and background colours.

    Returns:
        (images float32 [K*n, 3, size, size], labels int64 [K*n])
    """
    names = _resolve_classes(classes)
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < MIN_IMAGE_SIZE:
        raise DatasetError(f"size must be >= {MIN_IMAGE_SIZE}, got {size}")

    grid = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    ys, xs = np.meshgrid(grid, grid, indexing="ij")
    total = len(names) * n_per_class
    images = np.empty((total, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(len(names)), n_per_class).astype(np.int64)

    for i, label in enumerate(labels):
        cx, cy = rng.uniform_array(-0.3, 0.3, 2)
        radius = rng.uniform_array(0.35, 0.6, 1)[0]
        theta = rng.uniform_array(0.0, 2.0 * np.pi, 1)[0]
        fg = rng.uniform_array(0.55, 1.0, 3)
        bg = rng.uniform_array(0.0, 0.45, 3)
        dx, dy = xs - cx, ys - cy
        u = (np.cos(theta) * dx + np.sin(theta) * dy) / radius
        v = (-np.sin(theta) * dx + np.cos(theta) * dy) / radius
        mask = _shape_mask(names[label], u, v)
        images[i] = (bg[:, None, None] + mask[None] * (fg - bg)[:, None, None]).astype(np.float32)
    return images, labels


def apply_style(images: np.ndarray, spec: DomainSpec, rng: Rng, clip: bool = True) -> np.ndarray:
    """
    Restyle raw renders in pixel space

    Order: inversion, per-channel affine about mid-grey, additive sinusoid
    (random orientation and phase per image), Gaussian noise, clip to [0, 1].
    Parameters left at their identity values leave the pixels untouched.
    """
    x = images.astype(np.float64)
    if spec.invert:
        x = 1.0 - x
    scale = np.asarray(spec.channel_scale)[None, :, None, None]
    offset = (0.5 * (1.0 - np.asarray(spec.channel_scale)) + np.asarray(spec.channel_shift))[None, :, None, None]
    x = x * scale + offset

    n, _, h, w = x.shape
    if spec.texture_amp > 0:
        angle = rng.uniform_array(0.0, np.pi, n)
        phase = rng.uniform_array(0.0, 2.0 * np.pi, n)
        ys, xs = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
        wave = np.sin(
            2.0 * np.pi * spec.texture_freq * (xs[None] * np.cos(angle)[:, None, None] + ys[None] * np.sin(angle)[:, None, None])
            + phase[:, None, None]
        )
        x = x + spec.texture_amp * wave[:, None]
    if spec.noise_std > 0:
        x = x + spec.noise_std * rng.normal(x.shape)
    if clip:
        x = np.clip(x, 0.0, 1.0)
    return x.astype(np.float32)


def _domain_streams(spec: DomainSpec) -> Tuple[Rng, Rng]:
    render_rng, style_rng = Rng(spec.seed).spawn(2)
    return render_rng, style_rng


def raw_renders(
    spec: DomainSpec, classes: Union[int, Sequence[str]], n_per_class: int, size: int
) -> Tuple[np.ndarray, np.ndarray]:
    """The unstyled renders generate_domain starts from"""
    render_rng, _ = _domain_streams(spec)
    return render_shapes(classes, n_per_class, size, render_rng)


def generate_domain(
    spec: DomainSpec,
    classes: Union[int, Sequence[str]] = SHAPE_CLASSES,
    n_per_class: int = 400,
    size: int = 32,
) -> SampleSet:
    """
    Render one domain

    Args:
        spec: Domain style
        classes: Number of classes K or their names
        n_per_class: Samples per class (>= 1)
        size: Image height and width (>= 16)

    Returns:
        SampleSet with exactly n_per_class samples per class

    Raises:
        DatasetError: On invalid K, n_per_class or size
    """
    spec.validate()
    render_rng, style_rng = _domain_streams(spec)
    images, labels = render_shapes(classes, n_per_class, size, render_rng)
    styled = apply_style(images, spec, style_rng)
    domains = np.full(len(labels), spec.name, dtype=object)
    logger.debug(f"[Data] Generated domain '{spec.name}': {len(labels)} samples")
    return SampleSet(images=styled, labels=labels, domains=domains)


def build_benchmark(manifest: DatasetManifest) -> Dict[str, SampleSet]:
    """Generate every domain of a manifest, keyed by name"""
    manifest.validate()
    return {
        d.name: generate_domain(d, manifest.classes, manifest.n_per_class, manifest.image_size)
        for d in manifest.domains
    }


def regenerate(manifest: DatasetManifest) -> Dict[str, SampleSet]:
    """Rebuild a benchmark from its manifest (bit-identical to the original)"""
    return build_benchmark(manifest)


# -----------------------------------------------------------------------------
# splits
# -----------------------------------------------------------------------------


@dataclass
class DomainSplit:
    """Leave-one-domain-out partition"""

    train: SampleSet
    test: SampleSet
    held_out: str


def leave_one_out(
    domains: Mapping[str, SampleSet], held_out: str, seed: int = 0
) -> DomainSplit:
    """
    Train on every domain but one, test on the held-out one

    Args:
        domains: SampleSet per domain name
        held_out: Name of the test domain
        seed: Shuffle seed for the training union

    Raises:
        DatasetError: If held_out is not among the domains
    """
    if held_out not in domains:
        raise DatasetError(f"Unknown domain '{held_out}', expected one of {list(domains)}")
    sources = [s for name, s in domains.items() if name != held_out]
    if not sources:
        raise DatasetError("Leave-one-out needs at least two domains")
    train = SampleSet.concat(sources)
    order = Rng.stream(seed, "split").permutation(len(train))
    return DomainSplit(train=train.subset(order), test=domains[held_out], held_out=held_out)


def split_holdin(samples: SampleSet, fraction: float, seed: int = 0) -> Tuple[SampleSet, SampleSet]:
    """
    Carve a held-in validation split out of the training domains

    Returns:
        (fit, validation); validation holds round(fraction * N) samples and
        may be empty
    """
    if not 0.0 <= fraction < 1.0:
        raise DatasetError(f"Validation fraction must lie in [0, 1), got {fraction}")
    order = Rng(seed, spawn_key=(STREAMS["split"], 1)).permutation(len(samples))
    n_val = int(round(fraction * len(samples)))
    return samples.subset(order[n_val:]), samples.subset(order[:n_val])


# -----------------------------------------------------------------------------
# corruptions
# -----------------------------------------------------------------------------


def corrupt(samples: SampleSet, kind: str, severity: int, seed: int = 0) -> SampleSet:
    """
    Pixel-level corruption at a calibrated severity

    gaussian_noise adds N(0, std) noise, contrast shrinks pixels towards each
    image's mean, brightness adds an offset; results are clipped to [0, 1].
    Severity 0 is the identity for every kind. Noise draws do not depend on
    severity, so the mean squared pixel change grows with it.

    Raises:
        DatasetError: On an unknown kind or a severity outside 0..5
    """
    if kind not in CORRUPTION_KINDS:
        raise DatasetError(f"Unknown corruption '{kind}', expected one of {CORRUPTION_KINDS}")
    if isinstance(severity, bool) or not isinstance(severity, (int, np.integer)) or not 0 <= severity <= MAX_SEVERITY:
        raise DatasetError(f"Severity must be an integer in 0..{MAX_SEVERITY}, got {severity!r}")
    level = SEVERITY_TABLES[kind][severity]
    if severity == 0:
        return SampleSet(samples.images.copy(), samples.labels.copy(), samples.domains.copy())

    x = samples.images.astype(np.float64)
    if kind == "gaussian_noise":
        rng = Rng(seed, spawn_key=(STREAMS["corrupt"], CORRUPTION_KINDS.index(kind)))
        x = x + level * rng.normal(x.shape)
    elif kind == "contrast":
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        x = mean + (x - mean) * level
    else:
        x = x + level
    images = np.clip(x, 0.0, 1.0).astype(np.float32)
    return SampleSet(images, samples.labels.copy(), samples.domains.copy())


# -----------------------------------------------------------------------------
# export / import
# -----------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def export_dataset(
    benchmark: Mapping[str, SampleSet],
    manifest: DatasetManifest,
    out_dir: PathLike,
    force: bool = False,
) -> Path:
    """
    Write one image binary (float32 [N,3,H,W]) and one label binary (int32 [N])
    per domain plus manifest.json

    Raises:
        OutputExistsError: If a manifest already exists and force is False
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise OutputExistsError(f"{manifest_path} exists; pass force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)

    files: Dict[str, Dict[str, Any]] = {}
    for spec in manifest.domains:
        samples = benchmark[spec.name]
        image_path = out_dir / f"{spec.name}.images.f32"
        label_path = out_dir / f"{spec.name}.labels.i32"
        image_path.write_bytes(samples.images.astype("<f4").tobytes(order="C"))
        label_path.write_bytes(samples.labels.astype("<i4").tobytes(order="C"))
        files[spec.name] = {
            "images": image_path.name,
            "labels": label_path.name,
            "shape": list(samples.images.shape),
            "images_sha256": _sha256(image_path),
            "labels_sha256": _sha256(label_path),
        }
    manifest.files = files
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    logger.info(f"[Data] Exported {len(files)} domains to {out_dir}")
    return manifest_path


def read_manifest(path: PathLike) -> DatasetManifest:
    """Parse manifest.json (a directory or the file itself)"""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest: invalid JSON in {path}: {exc}") from exc
    return DatasetManifest.from_dict(data)


def _read_binary(root: Path, entry: Dict[str, Any], field_name: str, prefix: str) -> bytes:
    path = root / entry[field_name]
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{prefix}.{field_name}: cannot read {path}: {exc}") from exc
    recorded = entry.get(f"{field_name}_sha256")
    if recorded is not None and hashlib.sha256(payload).hexdigest() != recorded:
        raise DatasetError(f"{prefix}.{field_name}_sha256: {path.name} does not match its recorded digest")
    return payload


def load_dataset(path: PathLike) -> Tuple[DatasetManifest, Dict[str, SampleSet]]:
    """
    Read a dataset written by export_dataset

    Every binary is checked against the sha256 digest recorded next to it.

    Raises:
        DatasetError: On a malformed manifest, a missing file entry key, or
            binaries that do not match their digest or shape
    """
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    benchmark: Dict[str, SampleSet] = {}
    for spec in manifest.domains:
        prefix = f"manifest.files.{spec.name}"
        entry = manifest.files.get(spec.name)
        if entry is None:
            raise DatasetError(f"{prefix}: missing")
        for key in FILE_KEYS:
            if key not in entry:
                raise DatasetError(f"{prefix}.{key}: missing")
        shape = tuple(int(v) for v in entry["shape"])
        if len(shape) != 4:
            raise DatasetError(f"{prefix}.shape: expected [N, C, H, W], got {list(shape)}")
        images = np.frombuffer(_read_binary(root, entry, "images", prefix), dtype="<f4")
        labels = np.frombuffer(_read_binary(root, entry, "labels", prefix), dtype="<i4")
        if images.size != int(np.prod(shape)) or labels.size != shape[0]:
            raise DatasetError(f"{prefix}: binaries do not match shape {list(shape)}")
        benchmark[spec.name] = SampleSet(
            images=images.reshape(shape).astype(np.float32),
            labels=labels.astype(np.int64),
            domains=np.full(shape[0], spec.name, dtype=object),
        )
    logger.info(f"[Data] Loaded {len(benchmark)} domains from {root}")
    return manifest, benchmark
