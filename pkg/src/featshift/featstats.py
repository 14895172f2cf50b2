"""
Feature statistics

Per-instance channel statistics of activation maps, the batch-level spread of
those statistics, and distances between statistics of two sample groups.

Example:
    >>> stats = instance_stats(features, eps=1e-6)
    >>> unc = batch_uncertainty(stats)
    >>> stats.mu.shape, unc.sigma_mu.shape
    ((64, 16), (16,))
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from .errors import EmptyReductionError, ShapeMismatchError
from .ndcore import ops
from .ndcore.tensor import Tensor

logger = logging.getLogger(__name__)


DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class InstanceStats:
    """
    Channel-wise mean and standard deviation of each instance

    Attributes:
        mu: Feature mean per (instance, channel), shape [B, C]
        sigma: Feature standard deviation per (instance, channel), shape [B, C]
    """

    mu: Tensor
    sigma: Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise ShapeMismatchError("InstanceStats needs mu and sigma of equal [B,C] shape", [self.mu.shape, self.sigma.shape])

    @property
    def batch_size(self) -> int:
        return self.mu.shape[0]

    @property
    def channels(self) -> int:
        return self.mu.shape[1]

    def detached(self) -> "InstanceStats":
        return InstanceStats(mu=self.mu.detach(), sigma=self.sigma.detach())

    def concat(self, other: "InstanceStats") -> "InstanceStats":
        """Stack two sets of instances (constants, no graph)"""
        if other.channels != self.channels:
            raise ShapeMismatchError("Channel count mismatch", [self.mu.shape, other.mu.shape])
        return InstanceStats(
            mu=Tensor(np.concatenate([self.mu.data, other.mu.data])),
            sigma=Tensor(np.concatenate([self.sigma.data, other.sigma.data])),
        )

    def batch_mean(self) -> Dict[str, np.ndarray]:
        """Batch-averaged mu and sigma vectors, each of length C"""
        return {"mu": self.mu.data.mean(axis=0), "sigma": self.sigma.data.mean(axis=0)}


@dataclass(frozen=True)
class BatchUncertainty:
    """
    Per-channel spread of the batch's instance statistics

    Both vectors are constants: gradients never flow through them.

    Attributes:
        sigma_mu: Standard deviation over the batch of the instance means, [C]
        sigma_sigma: Standard deviation over the batch of the instance stds, [C]
    """

    sigma_mu: Tensor
    sigma_sigma: Tensor

    @property
    def channels(self) -> int:
        return self.sigma_mu.shape[0]

    def channel_shared(self) -> "BatchUncertainty":
        """Replace each vector by its mean over channels"""
        c = self.channels
        return BatchUncertainty(
            sigma_mu=Tensor(np.full(c, self.sigma_mu.data.mean()), dtype=self.sigma_mu.dtype),
            sigma_sigma=Tensor(np.full(c, self.sigma_sigma.data.mean()), dtype=self.sigma_sigma.dtype),
        )


@dataclass(frozen=True)
class StatsDistance:
    """Euclidean distances between batch-averaged statistic vectors"""

    mu_dist: float
    sigma_dist: float

    @property
    def total(self) -> float:
        return self.mu_dist + self.sigma_dist

    def to_dict(self) -> Dict[str, Any]:
        return {"mu_dist": self.mu_dist, "sigma_dist": self.sigma_dist}


def instance_stats(x: Tensor, eps: float = DEFAULT_EPS) -> InstanceStats:
    """
    Channel-wise mean and standard deviation of each instance

    mu[b,c] is the spatial mean; sigma[b,c] = sqrt(spatial variance + eps), with
    the population divisor H*W. Both are differentiable with respect to x.

    Args:
        x: Activations [B, C, H, W]
        eps: Added to the variance inside the square root (>= 0)

    Returns:
        InstanceStats with mu and sigma of shape [B, C]

    Raises:
        ShapeMismatchError: If x is not 4-D
        EmptyReductionError: If the spatial extent is empty
    """
    if x.ndim != 4:
        raise ShapeMismatchError("instance_stats expects [B,C,H,W]", [x.shape])
    if x.shape[2] * x.shape[3] < 1:
        raise EmptyReductionError("instance_stats over an empty spatial extent")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    mu = ops.reduce("mean", x, ops.SPATIAL_AXES)
    var = ops.reduce("variance", x, ops.SPATIAL_AXES, divisor="N")
    sigma = ops.sqrt(ops.elementwise("add", var, eps) if eps else var)
    return InstanceStats(mu=mu, sigma=sigma)


def batch_uncertainty(stats: InstanceStats) -> BatchUncertainty:
    """
    Uncertainty scope of the statistics from the batch itself

    sigma_mu[c] = sqrt(mean_b (mu[b,c] - mean_b mu[.,c])^2), likewise for
    sigma_sigma. Computed on detached statistics.

    Args:
        stats: Instance statistics of one mini-batch (B >= 1)

    Returns:
        BatchUncertainty with vectors of length C
    """
    detached = stats.detached()
    var_mu = ops.reduce("variance", detached.mu, ops.BATCH_AXIS, divisor="N")
    var_sigma = ops.reduce("variance", detached.sigma, ops.BATCH_AXIS, divisor="N")
    return BatchUncertainty(sigma_mu=ops.sqrt(var_mu), sigma_sigma=ops.sqrt(var_sigma))


def stats_distance(a: InstanceStats, b: InstanceStats) -> StatsDistance:
    """
    Distance between two groups' average statistics

    Each group is averaged over its batch first, so a and b may hold
    different numbers of instances.

    Raises:
        ShapeMismatchError: If the channel counts differ
    """
    if a.channels != b.channels:
        raise ShapeMismatchError("stats_distance channel mismatch", [a.mu.shape, b.mu.shape])
    mean_a, mean_b = a.batch_mean(), b.batch_mean()
    return StatsDistance(
        mu_dist=float(np.linalg.norm(mean_a["mu"] - mean_b["mu"])),
        sigma_dist=float(np.linalg.norm(mean_a["sigma"] - mean_b["sigma"])),
    )
