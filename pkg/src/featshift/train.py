"""
Training loop and ablation sweeps

train_run trains one network under the leave-one-domain-out protocol and
returns a RunReport; the sweep_* functions schedule families of runs over
seeds and held-out domains and collect them into a SweepResult.

Example:
    >>> cfg = TrainConfig(epochs=5, aug=AugmentorConfig(kind="DSU", p=0.5))
    >>> report = train_run(cfg)
    >>> report.out_of_domain_accuracy
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .augment import AUGMENTOR_KINDS, AugmentorConfig, AugmentTracker
from .data import (
    DatasetManifest,
    SampleSet,
    build_benchmark,
    corrupt,
    default_manifest,
    leave_one_out,
    load_dataset,
    split_holdin,
)
from .errors import ConfigValidationError
from .ndcore import ops
from .ndcore.tensor import Graph, Tensor
from .net import NetworkSpec, Params, build, default_spec, forward, predict
from .results import SweepEntry, SweepResult
from .rng import Rng

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """
    One training run

    Attributes:
        epochs: Passes over the training split
        batch_size: Mini-batch size
        lr: Initial learning rate (cosine-decayed per epoch)
        momentum: SGD momentum
        weight_decay: L2 penalty added to every gradient
        seed: Run seed (init, data order, augmentation draws)
        aug: Augmentor at the insertion slots
        net: Network spec
        dataset: Manifest, or a path to an exported dataset
        held_out: Test domain
        val_fraction: Share of the training domains kept for held-in validation
        corruptions: (kind, severity) pairs evaluated on the held-out domain
        eval_batch_size: Chunk size for evaluation forwards
    """

    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    aug: AugmentorConfig = field(default_factory=AugmentorConfig)
    net: NetworkSpec = field(default_factory=default_spec)
    dataset: Union[DatasetManifest, str] = field(default_factory=default_manifest)
    held_out: str = "sketch"
    val_fraction: float = 0.1
    corruptions: List[Tuple[str, int]] = field(default_factory=list)
    eval_batch_size: int = 256

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigValidationError(f"batch_size must be >= 1, got {self.batch_size}", key="training.batch_size")
        if self.epochs < 1:
            raise ConfigValidationError(f"epochs must be >= 1, got {self.epochs}", key="training.epochs")
        if not self.lr > 0:
            raise ConfigValidationError(f"lr must be positive, got {self.lr}", key="training.lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigValidationError(f"momentum must lie in [0, 1), got {self.momentum}", key="training.momentum")
        if self.weight_decay < 0:
            raise ConfigValidationError("weight_decay must be >= 0", key="training.weight_decay")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigValidationError("val_fraction must lie in [0, 1)", key="training.val_fraction")
        if self.eval_batch_size < 1:
            raise ConfigValidationError(
                f"eval_batch_size must be >= 1, got {self.eval_batch_size}", key="training.eval_batch_size"
            )
        self.aug.validate()
        self.net.validate()
        if isinstance(self.dataset, DatasetManifest):
            if self.held_out not in self.dataset.domain_names:
                raise ConfigValidationError(
                    f"unknown domain '{self.held_out}', expected one of {self.dataset.domain_names}",
                    key="training.held_out",
                )
            if self.net.num_classes != len(self.dataset.classes):
                raise ConfigValidationError(
                    f"network has {self.net.num_classes} classes, dataset {len(self.dataset.classes)}",
                    key="network.num_classes",
                )
        return self

    @property
    def degenerate_batch(self) -> bool:
        """Batch-statistics augmentor with batches too small to vary"""
        return self.aug.needs_batch_stats and self.aug.p > 0 and self.batch_size < 2

    def to_dict(self) -> Dict[str, Any]:
        dataset = self.dataset.to_dict() if isinstance(self.dataset, DatasetManifest) else str(self.dataset)
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "aug": self.aug.to_dict(),
            "net": self.net.to_dict(),
            "dataset": dataset,
            "held_out": self.held_out,
            "val_fraction": self.val_fraction,
            "corruptions": [list(c) for c in self.corruptions],
            "eval_batch_size": self.eval_batch_size,
        }


@dataclass
class RunReport:
    """
    Outcome of one training run

    The config echo and seed fully determine a reproduction; metrics() holds
    everything except wall-clock time.
    """

    config: Dict[str, Any]
    seed: int
    held_out: str
    epochs: List[Dict[str, float]]
    in_domain_accuracy: Optional[float]
    out_of_domain_accuracy: float
    corrupted_accuracy: Dict[str, float] = field(default_factory=dict)
    augment: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    parameter_count: int = 0
    params_fingerprint: str = ""
    wall_clock_seconds: float = 0.0

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1]["train_loss"] if self.epochs else float("nan")

    def metrics(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "held_out": self.held_out,
            "epochs": self.epochs,
            "in_domain_accuracy": self.in_domain_accuracy,
            "out_of_domain_accuracy": self.out_of_domain_accuracy,
            "corrupted_accuracy": dict(self.corrupted_accuracy),
            "final_train_loss": self.final_train_loss,
            "augment": self.augment,
            "warnings": list(self.warnings),
            "params_fingerprint": self.params_fingerprint,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.metrics()
        data["config"] = self.config
        data["parameter_count"] = self.parameter_count
        data["wall_clock_seconds"] = self.wall_clock_seconds
        return data

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
            logger.info(f"[Train] Wrote report to {path}")
        return text


# -----------------------------------------------------------------------------
# data resolution
# -----------------------------------------------------------------------------


@lru_cache(maxsize=4)
def _benchmark_from_manifest(manifest_json: str) -> Dict[str, SampleSet]:
    return build_benchmark(DatasetManifest.from_dict(json.loads(manifest_json)))


@lru_cache(maxsize=4)
def _benchmark_from_path(path: str) -> Tuple[DatasetManifest, Dict[str, SampleSet]]:
    return load_dataset(path)


def resolve_dataset(dataset: Union[DatasetManifest, str]) -> Tuple[DatasetManifest, Dict[str, SampleSet]]:
    """Manifest and generated (or loaded) domains; cached per process"""
    if isinstance(dataset, DatasetManifest):
        manifest = replace(dataset, files={})
        return dataset, _benchmark_from_manifest(json.dumps(manifest.to_dict(), sort_keys=True))
    return _benchmark_from_path(str(dataset))


# -----------------------------------------------------------------------------
# training
# -----------------------------------------------------------------------------


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Learning rate at the start of an epoch, decayed from base_lr towards 0"""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def sgd_step(
    params: Params,
    grads: Dict[Tensor, np.ndarray],
    velocity: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Params:
    """
    Momentum SGD: v = momentum * v + (g + weight_decay * w); w = w - lr * v

    velocity is updated in place; a new Params is returned.
    """
    updated = []
    for name, w in params.tensors.items():
        g = grads.get(w)
        g = np.zeros(w.shape, dtype=w.dtype) if g is None else g
        v = momentum * velocity[name] + (g + weight_decay * w.data)
        velocity[name] = v.astype(w.dtype)
        updated.append(Tensor(w.data - lr * velocity[name], dtype=w.dtype, requires_grad=True, name=name))
    return params.with_tensors(updated)


def evaluate(params: Params, samples: SampleSet, batch_size: int = 256) -> float:
    """Eval-mode accuracy in [0, 1]"""
    if len(samples) == 0:
        raise ConfigValidationError("cannot evaluate on an empty split", key="training.val_fraction")
    x = Tensor(samples.images, dtype=params.spec.dtype)
    return float(np.mean(predict(params, x, batch_size) == samples.labels))


def train_model(
    cfg: TrainConfig, progress: Optional[Callable[[Dict[str, float]], None]] = None
) -> Tuple[Params, RunReport]:
    """
    Train one network and evaluate it in and out of domain

    Augmentation is active only in the training forwards; every evaluation
    runs in eval mode where the slots are identities. Given the same config
    and seed, two runs produce identical metrics.

    Args:
        cfg: Training configuration
        progress: Optional callback receiving each epoch record

    Returns:
        (trained Params, RunReport)

    Raises:
        ConfigValidationError: On an invalid config (batch_size < 1 included)
    """
    started = time.perf_counter()
    cfg.validate()
    manifest, benchmark = resolve_dataset(cfg.dataset)
    if cfg.held_out not in benchmark:
        raise ConfigValidationError(f"unknown domain '{cfg.held_out}'", key="training.held_out")

    warnings: List[str] = []
    if cfg.degenerate_batch:
        message = (
            f"{cfg.aug.kind} with batch_size={cfg.batch_size}: batch statistics do not vary, "
            "the augmentor degenerates to the identity"
        )
        logger.warning(f"[Train] {message}")
        warnings.append(message)

    split = leave_one_out(benchmark, cfg.held_out, cfg.seed)
    fit, val = split_holdin(split.train, cfg.val_fraction, cfg.seed)
    params = build(cfg.net, cfg.seed)
    velocity = {name: np.zeros(t.shape, dtype=t.dtype) for name, t in params.tensors.items()}
    data_rng = Rng.stream(cfg.seed, "data")
    aug_rng = Rng.stream(cfg.seed, "augment")
    tracker = AugmentTracker()

    logger.info(
        f"[Train] aug={cfg.aug.kind} p={cfg.aug.p} held_out={cfg.held_out} seed={cfg.seed} "
        f"fit={len(fit)} val={len(val)} test={len(split.test)}"
    )

    history: List[Dict[str, float]] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        order = data_rng.permutation(len(fit))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(fit), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            images, labels = fit.batch(idx)
            images = images.astype(cfg.net.dtype)
            updates: Dict[str, np.ndarray] = {}
            with Graph() as graph:
                logits = forward(params, images, "train", cfg.aug, aug_rng, tracker, buffer_updates=updates)
                loss = ops.cross_entropy(logits, labels)
            grads = graph.backward(loss)
            params = sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            if updates:
                params.buffers.update(updates)
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(logits.data.argmax(axis=1) == labels))
            logger.debug(f"[Train] epoch {epoch} batch {start // cfg.batch_size} loss={loss.item():.4f}")

        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / len(fit),
            "train_accuracy": correct / len(fit),
        }
        history.append(record)
        logger.info(
            f"[Train] epoch {epoch + 1}/{cfg.epochs} lr={lr:.4f} "
            f"loss={record['train_loss']:.4f} acc={record['train_accuracy']:.3f}"
        )
        if progress is not None:
            progress(record)

    in_domain = evaluate(params, val, cfg.eval_batch_size) if len(val) else None
    out_of_domain = evaluate(params, split.test, cfg.eval_batch_size)
    corrupted = {
        f"{kind}@{severity}": evaluate(params, corrupt(split.test, kind, severity, cfg.seed), cfg.eval_batch_size)
        for kind, severity in cfg.corruptions
    }
    report = RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        held_out=cfg.held_out,
        epochs=history,
        in_domain_accuracy=in_domain,
        out_of_domain_accuracy=out_of_domain,
        corrupted_accuracy=corrupted,
        augment=tracker.summary(),
        warnings=warnings,
        parameter_count=params.parameter_count(),
        params_fingerprint=params.fingerprint(),
        wall_clock_seconds=time.perf_counter() - started,
    )
    logger.info(
        f"[Train] done: in-domain={in_domain if in_domain is None else round(in_domain, 4)} "
        f"out-of-domain={out_of_domain:.4f} ({report.wall_clock_seconds:.1f}s)"
    )
    return params, report


def train_run(cfg: TrainConfig, progress: Optional[Callable[[Dict[str, float]], None]] = None) -> RunReport:
    """
    Train one network and report in-domain and out-of-domain accuracy

    Example:
        >>> report = train_run(TrainConfig(aug=AugmentorConfig(kind="Identity"), seed=7))
        >>> report.to_json("report.json")
    """
    return train_model(cfg, progress)[1]


# -----------------------------------------------------------------------------
# sweeps
# -----------------------------------------------------------------------------


def format_slots(slots: Iterable[int]) -> str:
    """Slot set as a stable tag value, e.g. "{0,1,2}" or "{}" """
    return "{" + ",".join(str(s) for s in sorted(slots)) + "}"


def _schedule(
    base: TrainConfig,
    variants: Sequence[Tuple[Dict[str, Any], TrainConfig]],
    seeds: Optional[Sequence[int]],
    held_outs: Optional[Sequence[str]],
) -> List[Tuple[Dict[str, Any], TrainConfig]]:
    runs = []
    for held_out in held_outs or [base.held_out]:
        for seed in seeds or [base.seed]:
            for tags, cfg in variants:
                run_tags = dict(tags, seed=seed, held_out=held_out)
                runs.append((run_tags, replace(cfg, seed=seed, held_out=held_out)))
    return runs


def _run_entry(tags: Dict[str, Any], cfg: TrainConfig) -> SweepEntry:
    try:
        return SweepEntry(tags=tags, report=train_run(cfg))
    except Exception as exc:
        logger.warning(f"[Sweep] Run {tags} failed: {exc}")
        return SweepEntry(tags=tags, error=f"{type(exc).__name__}: {exc}")


def run_sweep(
    name: str,
    runs: Sequence[Tuple[Dict[str, Any], TrainConfig]],
    jobs: int = 1,
) -> SweepResult:
    """
    Execute scheduled runs, sequentially or in a process pool

    A failing run is recorded with its error; the rest of the sweep goes on.
    Entries keep schedule order regardless of jobs.
    """
    if jobs < 1:
        raise ConfigValidationError(f"jobs must be >= 1, got {jobs}", key="sweep.jobs")
    for _, cfg in runs:
        cfg.validate()
    logger.info(f"[Sweep] {name}: {len(runs)} runs, jobs={jobs}")
    if jobs == 1 or len(runs) <= 1:
        entries = [_run_entry(tags, cfg) for tags, cfg in runs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_entry, tags, cfg) for tags, cfg in runs]
            entries = [f.result() for f in futures]
    result = SweepResult(name=name, entries=entries)
    failed = len(result.filter_failed())
    if failed:
        logger.warning(f"[Sweep] {name}: {failed}/{len(result)} runs failed")
    return result


def sweep_p(
    base: TrainConfig,
    values: Sequence[float],
    seeds: Optional[Sequence[int]] = None,
    held_outs: Optional[Sequence[str]] = None,
    jobs: int = 1,
) -> SweepResult:
    """
    One run per gate probability (per seed and held-out domain)

    p=0 reproduces the Identity baseline exactly: the gate draws come from
    the augmentation stream only.
    """
    for p in values:
        if not 0.0 <= p <= 1.0:
            raise ConfigValidationError(f"p must lie in [0, 1], got {p}", key="sweep.values")
    variants = [({"method": base.aug.kind, "p": float(p)}, replace(base, aug=replace(base.aug, p=float(p)))) for p in values]
    return run_sweep("p", _schedule(base, variants, seeds, held_outs), jobs)


def sweep_positions(
    base: TrainConfig,
    slot_sets: Sequence[Iterable[int]],
    seeds: Optional[Sequence[int]] = None,
    held_outs: Optional[Sequence[str]] = None,
    jobs: int = 1,
) -> SweepResult:
    """One run per set of insertion slots; the empty set is the baseline"""
    variants = []
    for slots in slot_sets:
        slots = tuple(sorted(set(int(s) for s in slots)))
        net = replace(base.net, insert_positions=slots).validate()
        variants.append(({"method": base.aug.kind, "positions": format_slots(slots)}, replace(base, net=net)))
    return run_sweep("positions", _schedule(base, variants, seeds, held_outs), jobs)


def sweep_batch(
    base: TrainConfig,
    sizes: Sequence[int],
    seeds: Optional[Sequence[int]] = None,
    held_outs: Optional[Sequence[str]] = None,
    jobs: int = 1,
) -> SweepResult:
    """
    Paired (augmentor, Identity) runs per batch size

    The augmentor is base.aug, or DSU when base.aug is the Identity.
    """
    for size in sizes:
        if size < 2:
            raise ConfigValidationError(f"batch sizes must be >= 2, got {size}", key="sweep.values")
    method = base.aug if base.aug.kind != "Identity" else replace(base.aug, kind="DSU")
    identity = replace(base.aug, kind="Identity")
    variants = []
    for size in sizes:
        for aug in (method, identity):
            variants.append(({"method": aug.kind, "batch_size": int(size)}, replace(base, aug=aug, batch_size=int(size))))
    return run_sweep("batch", _schedule(base, variants, seeds, held_outs), jobs)


def sweep_method(
    base: TrainConfig,
    kinds: Sequence[str] = AUGMENTOR_KINDS,
    seeds: Optional[Sequence[int]] = None,
    held_outs: Optional[Sequence[str]] = None,
    jobs: int = 1,
) -> SweepResult:
    """One run per augmentor kind with the other augmentor settings of base"""
    variants = []
    for kind in kinds:
        aug = AugmentorConfig.from_dict(dict(base.aug.to_dict(), kind=kind))
        variants.append(({"method": aug.kind}, replace(base, aug=aug)))
    return run_sweep("method", _schedule(base, variants, seeds, held_outs), jobs)


def paired_gap(result: SweepResult, metric: str = "out_of_domain_accuracy", baseline: str = "Identity") -> Dict[str, float]:
    """
    Mean metric difference of every method against the baseline

    Returns:
        {method: mean(method) - mean(baseline)} over all runs of each method
    """
    df = result.filter_successful().to_dataframe()
    if df.empty or baseline not in set(df["method"]):
        return {}
    means = df.groupby("method")[metric].mean()
    return {m: float(means[m] - means[baseline]) for m in means.index if m != baseline}
