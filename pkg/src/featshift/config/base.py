"""
Run configuration

A RunConfig is the strict in-memory form of a run-config file with the
sections dataset, network, augmentor, training, sweep and output_dir. Unknown
keys anywhere are rejected with their dotted path.
"""

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Tuple

from ..augment import AUGMENTOR_KINDS, AugmentorConfig
from ..data import DatasetManifest, DomainSpec, SHAPE_CLASSES, default_domains, read_manifest
from ..errors import ConfigValidationError, DatasetError
from ..net import ALL_SLOTS, LayerSpec, NetworkSpec, default_spec

logger = logging.getLogger(__name__)


SCHEMA_VERSION = "1"
SWEEP_NAMES = ("p", "positions", "batch", "method")

DEFAULT_SWEEP_VALUES: Dict[str, List[Any]] = {
    "p": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "positions": [[], [0], [1], [2], [3], [4], [5], [0, 1, 2], [3, 4, 5], list(ALL_SLOTS)],
    "batch": [8, 16, 32],
    "method": list(AUGMENTOR_KINDS),
}


def _strict(cls, data: Any, section: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigValidationError("expected a mapping", key=section)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigValidationError("unknown key", key=f"{section}.{key}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigValidationError(str(exc), key=section) from exc


@dataclass
class DatasetSection:
    """Where the benchmark comes from: an exported manifest or inline generation"""

    manifest: Optional[str] = None
    n_per_class: int = 400
    image_size: int = 32
    seed: int = 0
    classes: List[str] = field(default_factory=lambda: list(SHAPE_CLASSES))
    domains: Optional[List[Dict[str, Any]]] = None

    def validate(self) -> None:
        if self.n_per_class < 1:
            raise ConfigValidationError("must be >= 1", key="dataset.n_per_class")
        if self.image_size < 16:
            raise ConfigValidationError("must be >= 16", key="dataset.image_size")
        try:
            if self.manifest is None:
                self.to_manifest()
        except DatasetError as exc:
            raise ConfigValidationError(str(exc), key="dataset") from exc

    def to_manifest(self) -> DatasetManifest:
        if self.manifest is not None:
            return read_manifest(self.manifest)
        domains = (
            [DomainSpec.from_dict(d, prefix=f"dataset.domains.{i}") for i, d in enumerate(self.domains)]
            if self.domains is not None
            else default_domains(self.seed)
        )
        return DatasetManifest(
            domains=domains,
            classes=list(self.classes),
            n_per_class=self.n_per_class,
            image_size=self.image_size,
            global_seed=self.seed,
        ).validate()


@dataclass
class NetworkSection:
    """Default backbone options, or an explicit layer list"""

    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64])
    stem_channels: int = 16
    activation: str = "relu"
    batch_norm: bool = False
    insert_positions: List[int] = field(default_factory=lambda: list(ALL_SLOTS))
    dtype: str = "float32"
    layers: Optional[List[Dict[str, Any]]] = None

    def to_spec(self, num_classes: int, input_size: int) -> NetworkSpec:
        if self.layers is not None:
            return NetworkSpec(
                layers=[LayerSpec.from_dict(l, prefix=f"network.layers.{i}") for i, l in enumerate(self.layers)],
                insert_positions=tuple(self.insert_positions),
                num_classes=num_classes,
                input_size=input_size,
                dtype=self.dtype,
            ).validate()
        return default_spec(
            channels=self.channels,
            stem_channels=self.stem_channels,
            num_classes=num_classes,
            input_size=input_size,
            insert_positions=self.insert_positions,
            activation=self.activation,
            batch_norm=self.batch_norm,
            dtype=self.dtype,
        )


@dataclass
class TrainingSection:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    held_out: str = "sketch"
    val_fraction: float = 0.1
    corruptions: List[Tuple[str, int]] = field(default_factory=list)
    eval_batch_size: int = 256


@dataclass
class SweepSection:
    """
    Ablation schedule

    Attributes:
        name: One of "p", "positions", "batch", "method"
        values: Sweep values (defaults per name when None)
        seeds: Seeds to average over (defaults to [training.seed])
        held_outs: Held-out domains (defaults to [training.held_out])
        jobs: Parallel runs
    """

    name: str = "p"
    values: Optional[List[Any]] = None
    seeds: Optional[List[int]] = None
    held_outs: Optional[List[str]] = None
    jobs: int = 1

    def validate(self) -> None:
        if self.name not in SWEEP_NAMES:
            raise ConfigValidationError(f"unknown sweep '{self.name}', expected one of {SWEEP_NAMES}", key="sweep.name")
        if self.jobs < 1:
            raise ConfigValidationError("must be >= 1", key="sweep.jobs")

    def resolved_values(self) -> List[Any]:
        return list(self.values) if self.values is not None else copy.deepcopy(DEFAULT_SWEEP_VALUES[self.name])


@dataclass
class RunConfig:
    """
    Complete configuration of a command

    Example:
        >>> config = RunConfig.from_dict({"augmentor": {"kind": "DSU", "p": 0.5}})
        >>> config = config.apply_overrides({"training.seed": 7})
        >>> cfg = config.to_train_config()
    """

    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    augmentor: AugmentorConfig = field(default_factory=AugmentorConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output_dir: str = "runs"
    schema_version: str = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """
        Parse and validate a run-config document

        Raises:
            ConfigValidationError: On unknown keys, wrong schema version or
                out-of-range values; the error names the dotted key
        """
        if not isinstance(data, Mapping):
            raise ConfigValidationError("run config must be a mapping", key="<root>")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigValidationError("unknown key", key=key)
        version = str(data.get("schema_version", SCHEMA_VERSION))
        if version != SCHEMA_VERSION:
            raise ConfigValidationError(f"unsupported version {version}, expected {SCHEMA_VERSION}", key="schema_version")
        augmentor = data.get("augmentor") or {}
        if not isinstance(augmentor, Mapping):
            raise ConfigValidationError("expected a mapping", key="augmentor")
        config = cls(
            dataset=_strict(DatasetSection, data.get("dataset"), "dataset"),
            network=_strict(NetworkSection, data.get("network"), "network"),
            augmentor=AugmentorConfig.from_dict(dict(augmentor)),
            training=_strict(TrainingSection, data.get("training"), "training"),
            sweep=_strict(SweepSection, data.get("sweep"), "sweep"),
            output_dir=str(data.get("output_dir", "runs")),
            schema_version=version,
        )
        return config.validate()

    def validate(self) -> "RunConfig":
        self.dataset.validate()
        self.augmentor.validate()
        self.sweep.validate()
        self.to_train_config().validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible form (tuples become lists)"""
        data = {
            "schema_version": self.schema_version,
            "dataset": asdict(self.dataset),
            "network": asdict(self.network),
            "augmentor": self.augmentor.to_dict(),
            "training": {**asdict(self.training), "corruptions": [list(c) for c in self.training.corruptions]},
            "sweep": asdict(self.sweep),
            "output_dir": self.output_dir,
        }
        return json.loads(json.dumps(data))

    def config_hash(self) -> str:
        """Stable hex digest of the canonical JSON form"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def apply_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """
        New config with dotted-path overrides applied

        Args:
            overrides: e.g. {"augmentor.p": 0.3, "training.seed": 7}

        Raises:
            ConfigValidationError: If a path does not exist or the result is invalid
        """
        data = self.to_dict()
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            node = data
            for part in parts[:-1]:
                if not isinstance(node, dict) or part not in node:
                    raise ConfigValidationError("unknown key", key=dotted)
                if node[part] is None:
                    node[part] = {}
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigValidationError("unknown key", key=dotted)
            node[parts[-1]] = value
            logger.debug(f"[Config] {dotted} = {value!r}")
        return RunConfig.from_dict(data)

    def to_manifest(self) -> DatasetManifest:
        return self.dataset.to_manifest()

    def to_train_config(self):
        """TrainConfig for the train module"""
        from ..train import TrainConfig

        manifest = self.to_manifest()
        dataset: Any = self.dataset.manifest if self.dataset.manifest is not None else manifest
        t = self.training
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            lr=t.lr,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            seed=t.seed,
            aug=self.augmentor,
            net=self.network.to_spec(len(manifest.classes), manifest.image_size),
            dataset=dataset,
            held_out=t.held_out,
            val_fraction=t.val_fraction,
            corruptions=[(str(k), int(s)) for k, s in t.corruptions],
            eval_batch_size=t.eval_batch_size,
        )
