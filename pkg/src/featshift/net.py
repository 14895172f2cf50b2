"""
Small CNN classifier with augmentation slots

A NetworkSpec is an ordered list of layers. Layers of kind "slot" are the
named insertion points 0..5 where the augmentation module may run; the
default backbone places them after the stem convolution, after each of the
four stride-2 blocks and after global pooling (right before the head).

Example:
    >>> spec = default_spec()
    >>> params = build(spec, seed=0)
    >>> logits = forward(params, images, mode="train", aug=AugmentorConfig(), rng=Rng(0))
"""

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import augment
from .augment import AugmentorConfig, AugmentTracker, UncertaintyReplay
from .errors import ConfigValidationError, DtypeMismatchError, ShapeMismatchError
from .ndcore import ops
from .ndcore.io import sidecar_path, tensor_from_bytes, tensor_to_bytes
from .ndcore.tensor import Tensor
from .rng import Rng

logger = logging.getLogger(__name__)


LAYER_KINDS = ("conv", "relu", "tanh", "bn", "pool", "flatten", "linear", "slot")
ALL_SLOTS = (0, 1, 2, 3, 4, 5)
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
CHECKPOINT_FORMAT = "featshift-checkpoint"


@dataclass
class LayerSpec:
    """
    One layer of the backbone

    Only the fields relevant to `kind` are used: conv reads out_channels,
    kernel, stride and pad; linear reads out_features; slot reads index.
    """

    kind: str
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    out_features: int = 0
    index: int = -1

    def to_dict(self) -> Dict[str, Any]:
        keep = {
            "conv": ("out_channels", "kernel", "stride", "pad"),
            "linear": ("out_features",),
            "slot": ("index",),
        }.get(self.kind, ())
        data = {"kind": self.kind}
        data.update({k: getattr(self, k) for k in keep})
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str = "network.layers") -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigValidationError("unknown key", key=f"{prefix}.{key}")
        return cls(**data)


def conv(out_channels: int, kernel: int = 3, stride: int = 1, pad: int = 1) -> LayerSpec:
    return LayerSpec("conv", out_channels=out_channels, kernel=kernel, stride=stride, pad=pad)


def linear(out_features: int) -> LayerSpec:
    return LayerSpec("linear", out_features=out_features)


def slot(index: int) -> LayerSpec:
    return LayerSpec("slot", index=index)


def layer(kind: str) -> LayerSpec:
    return LayerSpec(kind)


@dataclass
class NetworkSpec:
    """
    Backbone description

    Attributes:
        layers: Ordered layers, slots included
        insert_positions: Slots where the augmentation module runs
        num_classes: Output dimension of the head
        in_channels: Image channels
        input_size: Expected square spatial size of the input
        dtype: Parameter dtype
    """

    layers: List[LayerSpec]
    insert_positions: Tuple[int, ...] = ALL_SLOTS
    num_classes: int = 4
    in_channels: int = 3
    input_size: int = 32
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.insert_positions = tuple(sorted(set(int(s) for s in self.insert_positions)))

    @property
    def slots(self) -> Tuple[int, ...]:
        return tuple(l.index for l in self.layers if l.kind == "slot")

    @property
    def batch_norm(self) -> bool:
        return any(l.kind == "bn" for l in self.layers)

    def validate(self) -> "NetworkSpec":
        """
        Check the layer stack and return self

        Raises:
            ConfigValidationError: On unknown layer kinds, missing slots,
                a head that does not emit num_classes, or layers applied to
                a tensor of the wrong rank
        """
        if self.num_classes < 1:
            raise ConfigValidationError("num_classes must be positive", key="network.num_classes")
        if self.dtype not in ("float32", "float64"):
            raise ConfigValidationError(f"unsupported dtype {self.dtype}", key="network.dtype")
        for l in self.layers:
            if l.kind not in LAYER_KINDS:
                raise ConfigValidationError(f"unknown layer kind '{l.kind}'", key="network.layers")
        slots = self.slots
        if len(set(slots)) != len(slots):
            raise ConfigValidationError(f"duplicate slot indices {slots}", key="network.layers")
        missing = [s for s in self.insert_positions if s not in slots]
        if missing:
            raise ConfigValidationError(
                f"insert_positions {missing} do not exist (slots: {list(slots)})",
                key="network.insert_positions",
            )
        if not self.layers or self.layers[-1].kind != "linear":
            raise ConfigValidationError("the last layer must be linear", key="network.layers")
        if self.layers[-1].out_features != self.num_classes:
            raise ConfigValidationError(
                f"head emits {self.layers[-1].out_features} features, num_classes={self.num_classes}",
                key="network.num_classes",
            )
        self.param_shapes()
        return self

    def param_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Names and shapes of every parameter, in layer order"""
        shapes: List[Tuple[str, Tuple[int, ...]]] = []
        channels, size, flat = self.in_channels, self.input_size, None
        for i, l in enumerate(self.layers):
            if l.kind == "conv":
                if flat is not None:
                    raise ConfigValidationError(f"conv at layer {i} follows flatten", key="network.layers")
                if l.out_channels < 1 or l.kernel < 1 or l.stride < 1 or l.pad < 0:
                    raise ConfigValidationError(f"invalid conv at layer {i}", key="network.layers")
                if l.kernel > size + 2 * l.pad:
                    raise ConfigValidationError(f"kernel of layer {i} exceeds its input", key="network.layers")
                shapes.append((f"conv{i}.weight", (l.out_channels, channels, l.kernel, l.kernel)))
                shapes.append((f"conv{i}.bias", (l.out_channels,)))
                channels = l.out_channels
                size = ops.conv_output_size(size, l.kernel, l.stride, l.pad)
            elif l.kind == "bn":
                shapes.append((f"bn{i}.gamma", (channels,)))
                shapes.append((f"bn{i}.beta", (channels,)))
            elif l.kind == "pool":
                size = 1
            elif l.kind == "flatten":
                flat = channels * size * size
            elif l.kind == "linear":
                if flat is None:
                    raise ConfigValidationError(f"linear at layer {i} needs a flatten first", key="network.layers")
                if l.out_features < 1:
                    raise ConfigValidationError(f"invalid linear at layer {i}", key="network.layers")
                shapes.append((f"linear{i}.weight", (l.out_features, flat)))
                shapes.append((f"linear{i}.bias", (l.out_features,)))
                flat = l.out_features
            elif l.kind == "slot" and flat is not None:
                raise ConfigValidationError(f"slot {l.index} must sit on a [B,C,H,W] activation", key="network.layers")
        return shapes

    def buffer_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Running statistics kept by batch-norm layers"""
        out = []
        for name, shape in self.param_shapes():
            if name.endswith(".gamma"):
                base = name[: -len(".gamma")]
                out += [(f"{base}.running_mean", shape), (f"{base}.running_var", shape)]
        return out

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.param_shapes()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "insert_positions": list(self.insert_positions),
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "input_size": self.input_size,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigValidationError("unknown key", key=f"network.{key}")
        data = dict(data)
        data["layers"] = [
            LayerSpec.from_dict(l, prefix=f"network.layers.{i}") for i, l in enumerate(data.get("layers", []))
        ]
        return cls(**data).validate()


def default_spec(
    channels: Sequence[int] = (16, 32, 64, 64),
    stem_channels: int = 16,
    num_classes: int = 4,
    input_size: int = 32,
    insert_positions: Iterable[int] = ALL_SLOTS,
    activation: str = "relu",
    batch_norm: bool = False,
    dtype: str = "float32",
) -> NetworkSpec:
    """
    Stem conv + stride-2 blocks + global pooling + linear head

    Slot 0 follows the stem, slot k follows block k, and the last slot
    follows global pooling. With the default four blocks that is 0..5.

    Example:
        >>> default_spec().parameter_count()
        60772
    """
    if activation not in ("relu", "tanh"):
        raise ConfigValidationError(f"unknown activation '{activation}'", key="network.activation")

    def block(out_channels: int, stride: int) -> List[LayerSpec]:
        stack = [conv(out_channels, 3, stride, 1)]
        if batch_norm:
            stack.append(layer("bn"))
        stack.append(layer(activation))
        return stack

    layers = block(stem_channels, 1) + [slot(0)]
    for k, out_channels in enumerate(channels, start=1):
        layers += block(out_channels, 2) + [slot(k)]
    layers += [layer("pool"), slot(len(channels) + 1), layer("flatten"), linear(num_classes)]
    return NetworkSpec(
        layers=layers,
        insert_positions=tuple(insert_positions),
        num_classes=num_classes,
        input_size=input_size,
        dtype=dtype,
    ).validate()


@dataclass
class Params:
    """
    Network parameters

    Attributes:
        spec: The NetworkSpec these parameters belong to
        tensors: Parameter tensors by name, in layer order
        init_seed: Seed used by build()
        buffers: Non-trainable running statistics (batch-norm only)
    """

    spec: NetworkSpec
    tensors: Dict[str, Tensor]
    init_seed: int
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    def leaves(self) -> List[Tensor]:
        return list(self.tensors.values())

    def with_tensors(
        self, tensors: Sequence[Tensor], buffers: Optional[Dict[str, np.ndarray]] = None
    ) -> "Params":
        """New Params with the given tensors (same order as names)"""
        if len(tensors) != len(self.tensors):
            raise ShapeMismatchError(
                f"Expected {len(self.tensors)} tensors, got {len(tensors)}", []
            )
        mapping = {}
        for name, old, new in zip(self.names, self.leaves(), tensors):
            if old.shape != new.shape:
                raise ShapeMismatchError(f"Parameter {name} changed shape", [old.shape, new.shape])
            mapping[name] = new
        return replace(self, tensors=mapping, buffers=dict(buffers if buffers is not None else self.buffers))

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def fingerprint(self) -> str:
        """Hex digest over every parameter buffer (equality check for tests and logs)"""
        import hashlib

        digest = hashlib.sha256()
        for name, tensor in self.tensors.items():
            digest.update(name.encode())
            digest.update(tensor_to_bytes(tensor))
        return digest.hexdigest()


def build(spec: NetworkSpec, seed: int) -> Params:
    """
    Deterministically initialize parameters

    Conv and linear weights are drawn from N(0, gain / fan_in) with gain 2
    ahead of ReLU and 1 otherwise; biases start at zero, batch-norm scales at
    one and shifts at zero.

    Args:
        spec: Validated network spec
        seed: 64-bit integer seed

    Returns:
        Params with requires_grad leaves
    """
    spec.validate()
    rng = Rng.stream(seed, "init")
    gain = 2.0 if any(l.kind == "relu" for l in spec.layers) else 1.0
    tensors: Dict[str, Tensor] = {}
    for name, shape in spec.param_shapes():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            layer_gain = 1.0 if name.startswith("linear") else gain
            values = rng.normal(shape) * np.sqrt(layer_gain / fan_in)
        elif name.endswith(".gamma"):
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        tensors[name] = Tensor(values, dtype=spec.dtype, requires_grad=True, name=name)
    buffers = {
        name: (np.ones(shape) if name.endswith("running_var") else np.zeros(shape)).astype(spec.dtype)
        for name, shape in spec.buffer_shapes()
    }
    logger.debug(f"[Net] Built {spec.parameter_count()} parameters with seed {seed}")
    return Params(spec=spec, tensors=tensors, init_seed=int(seed), buffers=buffers)


def _batch_norm(
    h: Tensor,
    params: Params,
    base: str,
    mode: str,
    buffer_updates: Optional[Dict[str, np.ndarray]],
) -> Tensor:
    gamma = params.tensors[f"{base}.gamma"]
    beta = params.tensors[f"{base}.beta"]
    if mode == "train":
        axes = (0, 2, 3)
        mean = ops.reduce("mean", h, axes)
        var = ops.reduce("variance", h, axes)
        if buffer_updates is not None:
            count = h.shape[0] * h.shape[2] * h.shape[3]
            unbiased = var.data * count / max(count - 1, 1)
            rm, rv = params.buffers[f"{base}.running_mean"], params.buffers[f"{base}.running_var"]
            buffer_updates[f"{base}.running_mean"] = ((1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean.data).astype(rm.dtype)
            buffer_updates[f"{base}.running_var"] = ((1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased).astype(rv.dtype)
    else:
        mean = Tensor(params.buffers[f"{base}.running_mean"], dtype=h.dtype)
        var = Tensor(params.buffers[f"{base}.running_var"], dtype=h.dtype)
    std = ops.sqrt(ops.add(var, BN_EPS))
    return ops.add(ops.mul(ops.div(ops.sub(h, mean), std), gamma), beta)


def forward(
    params: Params,
    x: Tensor,
    mode: str,
    aug: AugmentorConfig,
    rng: Rng,
    tracker: Optional[AugmentTracker] = None,
    capture: Optional[Dict[int, Tensor]] = None,
    buffer_updates: Optional[Dict[str, np.ndarray]] = None,
    replay: Optional[UncertaintyReplay] = None,
) -> Tensor:
    """
    Logits for a batch of images

    The augmentation module runs at every slot in spec.insert_positions and is
    the identity in eval mode. Batch-norm layers use batch statistics in train
    mode and running statistics in eval mode; new running statistics are
    written to `buffer_updates` when given, never into params.

    Args:
        params: Network parameters
        x: Images [B, in_channels, input_size, input_size]
        mode: "train" or "eval"
        aug: Augmentor configuration for the slots
        rng: Augmentation stream
        tracker: Optional augmentation draw accumulator
        capture: Optional dict receiving the activation after each slot
        buffer_updates: Optional dict receiving new batch-norm running statistics
        replay: Optional record/replay of the slots' batch uncertainty

    Returns:
        Logits [B, num_classes]

    Raises:
        ShapeMismatchError: If x does not match the network input shape
        DtypeMismatchError: If x and the parameters have different dtypes
    """
    spec = params.spec
    expected = (spec.in_channels, spec.input_size, spec.input_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatchError("Input does not match the network", [x.shape, (-1,) + expected])
    dtype = next(iter(params.tensors.values())).dtype
    if x.dtype != dtype:
        raise DtypeMismatchError(f"Input is {x.dtype} but the parameters are {dtype}; cast explicitly")

    h = x
    for i, l in enumerate(spec.layers):
        if l.kind == "conv":
            h = ops.conv2d(
                h, params.tensors[f"conv{i}.weight"], params.tensors[f"conv{i}.bias"], stride=l.stride, pad=l.pad
            )
        elif l.kind == "relu":
            h = ops.relu(h)
        elif l.kind == "tanh":
            h = ops.tanh(h)
        elif l.kind == "bn":
            h = _batch_norm(h, params, f"bn{i}", mode, buffer_updates)
        elif l.kind == "pool":
            h = ops.global_avg_pool(h)
        elif l.kind == "flatten":
            h = ops.flatten(h)
        elif l.kind == "linear":
            h = ops.linear(h, params.tensors[f"linear{i}.weight"], params.tensors[f"linear{i}.bias"])
        elif l.kind == "slot":
            if l.index in spec.insert_positions:
                h = augment.apply(h, aug, mode, rng, tracker, replay)
            if capture is not None:
                capture[l.index] = h
    return h


def predict(params: Params, x: Tensor, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class predictions, computed in chunks"""
    identity = AugmentorConfig(kind="Identity")
    rng = Rng(0)
    preds = []
    for start in range(0, x.shape[0], batch_size):
        chunk = Tensor._wrap(x.data[start : start + batch_size])
        logits = forward(params, chunk, "eval", identity, rng)
        preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds)


# -----------------------------------------------------------------------------
# checkpoints
# -----------------------------------------------------------------------------


def save_checkpoint(params: Params, path: Union[str, Path]) -> Path:
    """
    Write parameters as one concatenated little-endian binary plus a manifest

    The manifest (<path>.json) lists every tensor's name, shape, dtype and
    byte offset, along with the network spec and init seed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    items = [(n, t, "param") for n, t in params.tensors.items()]
    items += [(n, Tensor(b), "buffer") for n, b in params.buffers.items()]
    for name, tensor, role in items:
        payload = tensor_to_bytes(tensor)
        entries.append(
            {
                "name": name,
                "role": role,
                "shape": list(tensor.shape),
                "dtype": tensor.dtype,
                "offset": offset,
                "nbytes": len(payload),
            }
        )
        chunks.append(payload)
        offset += len(payload)
    path.write_bytes(b"".join(chunks))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "byte_order": "little",
        "init_seed": params.init_seed,
        "spec": params.spec.to_dict(),
        "tensors": entries,
    }
    sidecar_path(path).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info(f"[Net] Saved {len(entries)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Params:
    """Read parameters written by save_checkpoint"""
    path = Path(path)
    manifest = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigValidationError(f"not a checkpoint manifest: {path}", key="format")
    payload = path.read_bytes()
    spec = NetworkSpec.from_dict(manifest["spec"])
    tensors: Dict[str, Tensor] = {}
    buffers: Dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensor = tensor_from_bytes(chunk, tuple(entry["shape"]), entry["dtype"])
        if entry.get("role") == "buffer":
            buffers[entry["name"]] = tensor.numpy()
        else:
            tensors[entry["name"]] = Tensor(tensor, requires_grad=True, name=entry["name"])
    expected = [name for name, _ in spec.param_shapes()]
    if list(tensors) != expected:
        raise ConfigValidationError("checkpoint tensors do not match its spec", key="tensors")
    return Params(spec=spec, tensors=tensors, init_seed=int(manifest["init_seed"]), buffers=buffers)
