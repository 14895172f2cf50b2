"""
Feature-statistics augmentors

Every augmentor rewrites activations x as gamma * (x - mu) / sigma + beta,
where (mu, sigma) are the instance statistics of x and (beta, gamma) are new
statistics:

    DSU              beta ~ N(mu, sigma_mu^2), gamma ~ N(sigma, sigma_sigma^2)
    ChannelShareDSU  as DSU with the spreads averaged over channels
    UniformShift     beta = mu + U(-sigma_mu, sigma_mu), likewise gamma
    RandomFixed      beta = mu + s * N(0, 1), gamma = sigma + s * N(0, 1)
    MixStyle         convex mix with the statistics of a shuffled batch
    PAdaIN           statistics of a shuffled batch
    Identity         no-op

apply() is the module as inserted into a network: it is active only in train
mode and only when a single U(0,1) gate draw falls below p.

Example:
    >>> cfg = AugmentorConfig(kind="DSU", p=0.5)
    >>> out = apply(features, cfg, mode="train", rng=Rng.stream(0, "augment"))
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigValidationError, ShapeMismatchError
from .featstats import DEFAULT_EPS, BatchUncertainty, InstanceStats, batch_uncertainty, instance_stats
from .ndcore import ops
from .ndcore.tensor import Tensor
from .rng import Rng

logger = logging.getLogger(__name__)


AUGMENTOR_KINDS = (
    "Identity",
    "DSU",
    "MixStyle",
    "PAdaIN",
    "RandomFixed",
    "UniformShift",
    "ChannelShareDSU",
)

# Kinds whose statistics depend on the rest of the batch
BATCH_STAT_KINDS = frozenset({"DSU", "MixStyle", "PAdaIN", "UniformShift", "ChannelShareDSU"})

DRAW_LAYOUTS = ("instance_channel", "instance")
LAMBDA_LAWS = ("beta", "uniform")
MODES = ("train", "eval")


def parse_kind(name: str) -> str:
    """Canonical augmentor kind from a case-insensitive name ("dsu" -> "DSU")"""
    lookup = {kind.lower(): kind for kind in AUGMENTOR_KINDS}
    lookup.update({"padain": "PAdaIN", "mixstyle": "MixStyle", "none": "Identity", "baseline": "Identity"})
    key = str(name).replace("-", "").replace("_", "").lower()
    if key not in lookup:
        raise ConfigValidationError(
            f"unknown augmentor '{name}', expected one of {list(AUGMENTOR_KINDS)}", key="augmentor.kind"
        )
    return lookup[key]


@dataclass
class AugmentorConfig:
    """
    Which augmentor runs at the insertion slots and how

    Attributes:
        kind: One of AUGMENTOR_KINDS
        p: Probability that the module fires on a training forward
        eps: Added to the variance inside sigma
        fixed_scale: Standard deviation s of the RandomFixed shifts
        mix_lambda_law: Law of the MixStyle weight ("beta" or "uniform")
        mix_alpha: Beta(alpha, alpha) parameter for MixStyle
        clamp_gamma: Clamp sampled standard deviations to be non-negative
        draw_layout: "instance_channel" ([B,C] draws) or "instance" (one draw per instance)
    """

    kind: str = "DSU"
    p: float = 0.5
    eps: float = DEFAULT_EPS
    fixed_scale: float = 1.0
    mix_lambda_law: str = "beta"
    mix_alpha: float = 0.1
    clamp_gamma: bool = False
    draw_layout: str = "instance_channel"

    def __post_init__(self) -> None:
        self.kind = parse_kind(self.kind)

    def validate(self) -> "AugmentorConfig":
        if not 0.0 <= self.p <= 1.0:
            raise ConfigValidationError(f"p must lie in [0, 1], got {self.p}", key="augmentor.p")
        if not self.eps > 0:
            raise ConfigValidationError(f"eps must be positive, got {self.eps}", key="augmentor.eps")
        if self.fixed_scale < 0:
            raise ConfigValidationError(
                f"fixed_scale must be >= 0, got {self.fixed_scale}", key="augmentor.fixed_scale"
            )
        if self.mix_lambda_law not in LAMBDA_LAWS:
            raise ConfigValidationError(
                f"mix_lambda_law must be one of {LAMBDA_LAWS}", key="augmentor.mix_lambda_law"
            )
        if not self.mix_alpha > 0:
            raise ConfigValidationError("mix_alpha must be positive", key="augmentor.mix_alpha")
        if self.draw_layout not in DRAW_LAYOUTS:
            raise ConfigValidationError(
                f"draw_layout must be one of {DRAW_LAYOUTS}", key="augmentor.draw_layout"
            )
        return self

    @property
    def needs_batch_stats(self) -> bool:
        return self.kind in BATCH_STAT_KINDS

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str = "augmentor") -> "AugmentorConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigValidationError("unknown key", key=f"{prefix}.{key}")
        return cls(**data).validate()


@dataclass
class DrawnShift:
    """
    New statistics drawn for one invocation

    Attributes:
        beta: Sampled mean [B, C]
        gamma: Sampled standard deviation [B, C]
        eps_mu: Standardized draw behind beta [B, C]
        eps_sigma: Standardized draw behind gamma [B, C]
    """

    beta: Tensor
    gamma: Tensor
    eps_mu: Tensor
    eps_sigma: Tensor


@dataclass
class AugmentTracker:
    """Running summary of what the augmentation layers did during training"""

    invocations: int = 0
    fired: int = 0
    per_kind: Dict[str, int] = field(default_factory=dict)
    sigma_mu_sum: float = 0.0
    sigma_sigma_sum: float = 0.0
    uncertainty_samples: int = 0
    negative_gamma: int = 0
    gamma_draws: int = 0

    def record_gate(self, fired: bool) -> None:
        self.invocations += 1
        self.fired += int(fired)

    def record_fire(
        self, kind: str, unc: Optional[BatchUncertainty], shift: Optional[DrawnShift]
    ) -> None:
        self.per_kind[kind] = self.per_kind.get(kind, 0) + 1
        if unc is not None:
            self.sigma_mu_sum += float(unc.sigma_mu.data.mean())
            self.sigma_sigma_sum += float(unc.sigma_sigma.data.mean())
            self.uncertainty_samples += 1
        if shift is not None:
            self.negative_gamma += int((shift.gamma.data < 0).sum())
            self.gamma_draws += shift.gamma.size

    def summary(self) -> Dict[str, Any]:
        n = max(self.uncertainty_samples, 1)
        return {
            "invocations": self.invocations,
            "fired": self.fired,
            "fire_rate": self.fired / self.invocations if self.invocations else 0.0,
            "per_kind": dict(self.per_kind),
            "mean_sigma_mu": self.sigma_mu_sum / n,
            "mean_sigma_sigma": self.sigma_sigma_sum / n,
            "negative_gamma_fraction": (
                self.negative_gamma / self.gamma_draws if self.gamma_draws else 0.0
            ),
        }


@dataclass
class UncertaintyReplay:
    """
    Records the batch uncertainty of each fired invocation, then replays it

    The first forward after rewind() computes and records; later forwards
    reuse the recorded values in invocation order. With a reseeded Rng
    this freezes every random and batch-dependent quantity of the
    augmentation across repeated forwards.
    """

    recorded: List[BatchUncertainty] = field(default_factory=list)
    cursor: int = 0

    def rewind(self) -> None:
        self.cursor = 0

    def uncertainty(self, stats: InstanceStats) -> BatchUncertainty:
        if self.cursor < len(self.recorded):
            unc = self.recorded[self.cursor]
            if unc.sigma_mu.dtype != stats.mu.dtype:
                unc = BatchUncertainty(unc.sigma_mu.astype(stats.mu.dtype), unc.sigma_sigma.astype(stats.mu.dtype))
        else:
            unc = batch_uncertainty(stats)
            self.recorded.append(unc)
        self.cursor += 1
        return unc


# -----------------------------------------------------------------------------
# building blocks
# -----------------------------------------------------------------------------


def renormalize(x: Tensor, stats: InstanceStats, beta: Tensor, gamma: Tensor) -> Tensor:
    """gamma * (x - mu) / sigma + beta, broadcasting [B,C] over the spatial axes"""
    normalized = ops.div(ops.sub(x, stats.mu), stats.sigma)
    return ops.add(ops.mul(normalized, gamma), beta)


def _draw(
    sampler, stats: InstanceStats, layout: str, dtype: str
) -> Tensor:
    batch, channels = stats.mu.shape
    if layout == "instance":
        values = np.repeat(sampler((batch, 1)), channels, axis=1)
    else:
        values = sampler((batch, channels))
    return Tensor(values, dtype=dtype)


def _as_draw(value: Any, stats: InstanceStats, dtype: str) -> Tensor:
    array = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=dtype)
    array = np.broadcast_to(array, stats.mu.shape)
    return Tensor(array, dtype=dtype)


def _check_perm(perm: Sequence[int], batch: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (batch,) or not np.array_equal(np.sort(perm), np.arange(batch)):
        raise ValueError(f"perm must be a permutation of 0..{batch - 1}, got {perm.tolist()}")
    return perm


def _check_stats(x: Tensor, stats: InstanceStats) -> None:
    if x.ndim != 4 or stats.mu.shape != x.shape[:2]:
        raise ShapeMismatchError("Statistics do not match the activations", [x.shape, stats.mu.shape])


# -----------------------------------------------------------------------------
# augmentors
# -----------------------------------------------------------------------------


def dsu(
    x: Tensor,
    stats: InstanceStats,
    unc: BatchUncertainty,
    rng: Rng,
    draws: Optional[Tuple[Any, Any]] = None,
    clamp_gamma: bool = False,
    draw_layout: str = "instance_channel",
) -> Tuple[Tensor, DrawnShift]:
    """
    Resample feature statistics from Gaussians centred on the originals

    beta = mu + eps_mu * sigma_mu and gamma = sigma + eps_sigma * sigma_sigma,
    with eps ~ N(0, 1) drawn eps_mu first, then eps_sigma.

    Args:
        x: Activations [B, C, H, W]
        stats: Instance statistics of x
        unc: Uncertainty scope (treated as constant)
        rng: Source of the eps draws
        draws: Optional frozen (eps_mu, eps_sigma), each broadcastable to [B, C]
        clamp_gamma: Clamp gamma at zero
        draw_layout: "instance_channel" or "instance"

    Returns:
        (augmented activations, DrawnShift)
    """
    _check_stats(x, stats)
    if unc.channels != stats.channels:
        raise ShapeMismatchError("Uncertainty does not match the channels", [unc.sigma_mu.shape, stats.mu.shape])
    if draws is None:
        eps_mu = _draw(rng.normal, stats, draw_layout, x.dtype)
        eps_sigma = _draw(rng.normal, stats, draw_layout, x.dtype)
    else:
        eps_mu = _as_draw(draws[0], stats, x.dtype)
        eps_sigma = _as_draw(draws[1], stats, x.dtype)

    scope_mu = ops.stop_gradient(unc.sigma_mu)
    scope_sigma = ops.stop_gradient(unc.sigma_sigma)
    beta = ops.add(stats.mu, ops.mul(eps_mu, scope_mu))
    gamma = ops.add(stats.sigma, ops.mul(eps_sigma, scope_sigma))
    if clamp_gamma:
        gamma = ops.relu(gamma)

    out = renormalize(x, stats, beta, gamma)
    return out, DrawnShift(beta=beta, gamma=gamma, eps_mu=eps_mu, eps_sigma=eps_sigma)


def channel_share_dsu(
    x: Tensor,
    stats: InstanceStats,
    unc: BatchUncertainty,
    rng: Rng,
    draws: Optional[Tuple[Any, Any]] = None,
    clamp_gamma: bool = False,
    draw_layout: str = "instance_channel",
    return_shift: bool = False,
) -> Union[Tensor, Tuple[Tensor, DrawnShift]]:
    """DSU with every channel sharing the channel-averaged uncertainty"""
    out, shift = dsu(
        x, stats, unc.channel_shared(), rng, draws=draws, clamp_gamma=clamp_gamma, draw_layout=draw_layout
    )
    return (out, shift) if return_shift else out


def random_fixed(
    x: Tensor,
    stats: InstanceStats,
    s: float,
    rng: Rng,
    draws: Optional[Tuple[Any, Any]] = None,
    clamp_gamma: bool = False,
    draw_layout: str = "instance_channel",
    return_shift: bool = False,
) -> Union[Tensor, Tuple[Tensor, DrawnShift]]:
    """Shifts from a fixed N(0, s^2) instead of the batch uncertainty"""
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    scope = Tensor(np.full(stats.channels, float(s)), dtype=x.dtype)
    fixed = BatchUncertainty(sigma_mu=scope, sigma_sigma=scope)
    out, shift = dsu(x, stats, fixed, rng, draws=draws, clamp_gamma=clamp_gamma, draw_layout=draw_layout)
    return (out, shift) if return_shift else out


def uniform_shift(
    x: Tensor,
    stats: InstanceStats,
    unc: BatchUncertainty,
    rng: Rng,
    draws: Optional[Tuple[Any, Any]] = None,
    clamp_gamma: bool = False,
    draw_layout: str = "instance_channel",
    return_shift: bool = False,
) -> Union[Tensor, Tuple[Tensor, DrawnShift]]:
    """
    Shifts drawn from U(-sigma_mu, sigma_mu) and U(-sigma_sigma, sigma_sigma)

    The interval is per channel; each (instance, channel) gets its own draw.
    DrawnShift.eps_* hold the U(-1, 1) draws that scale the intervals.
    """
    if draws is None:
        sampler = lambda shape: rng.uniform_array(-1.0, 1.0, shape)  # noqa: E731
        u_mu = _draw(sampler, stats, draw_layout, x.dtype)
        u_sigma = _draw(sampler, stats, draw_layout, x.dtype)
        draws = (u_mu, u_sigma)
    out, shift = dsu(x, stats, unc, rng, draws=draws, clamp_gamma=clamp_gamma, draw_layout=draw_layout)
    return (out, shift) if return_shift else out


def mix_style(
    x: Tensor,
    stats: InstanceStats,
    perm: Sequence[int],
    lam: Union[float, Sequence[float], np.ndarray],
    return_shift: bool = False,
) -> Union[Tensor, Tuple[Tensor, DrawnShift]]:
    """
    Interpolate each instance's statistics with those of x[perm]

    beta = lam * mu + (1 - lam) * mu[perm], gamma likewise with sigma.

    Args:
        x: Activations [B, C, H, W]
        stats: Instance statistics of x
        perm: Permutation of 0..B-1
        lam: Interpolation weight, a scalar or one weight per instance
    """
    _check_stats(x, stats)
    batch, channels = stats.mu.shape
    perm = _check_perm(perm, batch)
    weights = np.asarray(lam, dtype=np.float64)
    if weights.ndim == 1:
        if weights.shape != (batch,):
            raise ShapeMismatchError("Per-instance lambda must have length B", [weights.shape, stats.mu.shape])
        weights = weights[:, None]
    if np.any(weights < 0) or np.any(weights > 1):
        raise ValueError("lambda must lie in [0, 1]")
    lam_t = Tensor(np.broadcast_to(weights, (batch, channels)), dtype=x.dtype)
    rest_t = Tensor(np.broadcast_to(1.0 - weights, (batch, channels)), dtype=x.dtype)

    mu_hat = ops.index_select(stats.mu, perm)
    sigma_hat = ops.index_select(stats.sigma, perm)
    beta = ops.add(ops.mul(lam_t, stats.mu), ops.mul(rest_t, mu_hat))
    gamma = ops.add(ops.mul(lam_t, stats.sigma), ops.mul(rest_t, sigma_hat))
    out = renormalize(x, stats, beta, gamma)
    if return_shift:
        zeros = Tensor(np.zeros((batch, channels)), dtype=x.dtype)
        return out, DrawnShift(beta=beta, gamma=gamma, eps_mu=zeros, eps_sigma=zeros)
    return out


def p_ada_in(
    x: Tensor, stats: InstanceStats, perm: Sequence[int], return_shift: bool = False
) -> Union[Tensor, Tuple[Tensor, DrawnShift]]:
    """Swap in the statistics of x[perm]"""
    _check_stats(x, stats)
    batch, channels = stats.mu.shape
    perm = _check_perm(perm, batch)
    beta = ops.index_select(stats.mu, perm)
    gamma = ops.index_select(stats.sigma, perm)
    out = renormalize(x, stats, beta, gamma)
    if return_shift:
        zeros = Tensor(np.zeros((batch, channels)), dtype=x.dtype)
        return out, DrawnShift(beta=beta, gamma=gamma, eps_mu=zeros, eps_sigma=zeros)
    return out


def draw_lambda(cfg: AugmentorConfig, rng: Rng, batch: int) -> np.ndarray:
    """Per-instance MixStyle weights under the configured law"""
    if cfg.mix_lambda_law == "uniform":
        return rng.uniform_array(0.0, 1.0, batch)
    return rng.beta(cfg.mix_alpha, cfg.mix_alpha, batch)


def apply(
    x: Tensor,
    cfg: AugmentorConfig,
    mode: str,
    rng: Rng,
    tracker: Optional[AugmentTracker] = None,
    replay: Optional[UncertaintyReplay] = None,
) -> Tensor:
    """
    The augmentation module as inserted into a network

    In eval mode, or for the Identity kind, x is returned unchanged and no
    random draws are consumed. In train mode one gate p0 ~ U(0, 1) is drawn;
    the configured augmentor runs only when p0 < p.

    Args:
        x: Activations [B, C, H, W]
        cfg: Augmentor configuration
        mode: "train" or "eval"
        rng: Augmentation stream of the run
        tracker: Optional accumulator of draw statistics
        replay: Optional record/replay of the batch uncertainty

    Returns:
        Tensor with the shape of x
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "eval" or cfg.kind == "Identity":
        return x

    fired = rng.uniform() < cfg.p
    if tracker is not None:
        tracker.record_gate(fired)
    if not fired:
        return x

    stats = instance_stats(x, cfg.eps)
    batch = x.shape[0]
    unc: Optional[BatchUncertainty] = None
    options = {"clamp_gamma": cfg.clamp_gamma, "draw_layout": cfg.draw_layout}
    if cfg.kind in ("DSU", "ChannelShareDSU", "UniformShift"):
        unc = replay.uncertainty(stats) if replay is not None else batch_uncertainty(stats)

    if cfg.kind == "DSU":
        out, shift = dsu(x, stats, unc, rng, **options)
    elif cfg.kind == "ChannelShareDSU":
        out, shift = channel_share_dsu(x, stats, unc, rng, return_shift=True, **options)
    elif cfg.kind == "UniformShift":
        out, shift = uniform_shift(x, stats, unc, rng, return_shift=True, **options)
    elif cfg.kind == "RandomFixed":
        out, shift = random_fixed(x, stats, cfg.fixed_scale, rng, return_shift=True, **options)
    elif cfg.kind == "MixStyle":
        perm = rng.permutation(batch)
        out, shift = mix_style(x, stats, perm, draw_lambda(cfg, rng, batch), return_shift=True)
    elif cfg.kind == "PAdaIN":
        out, shift = p_ada_in(x, stats, rng.permutation(batch), return_shift=True)
    else:
        raise ConfigValidationError(f"unhandled augmentor '{cfg.kind}'", key="augmentor.kind")

    if tracker is not None:
        tracker.record_fire(cfg.kind, unc, shift)
    return out
