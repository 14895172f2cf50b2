"""
Seeded random streams

Rng wraps numpy's Generator over the PCG64 bit generator, seeded through a
SeedSequence. Normal draws use numpy's standard_normal (ziggurat), uniform
draws use Generator.random. Named streams derived from one run seed keep data
order, initialization and augmentation draws independent of each other.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


# Stable integer keys for named sub-streams of a run seed
STREAMS = {
    "init": 1,
    "data": 2,
    "augment": 3,
    "split": 4,
    "corrupt": 5,
}

Shape = Union[int, Tuple[int, ...]]


class Rng:
    """
    Deterministic random stream

    Args:
        seed: Non-negative 64-bit integer seed
        spawn_key: Sub-stream path below the seed (used by stream()/spawn())

    Example:
        >>> rng = Rng(7)
        >>> eps = rng.normal((4, 16))
        >>> aug_rng = Rng.stream(7, "augment")
    """

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit non-negative integer, got {seed}")
        self.seed = seed
        self.spawn_key = tuple(int(k) for k in spawn_key)
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    @classmethod
    def stream(cls, seed: int, name: str) -> "Rng":
        """Named independent stream of a run seed ("init", "data", "augment", ...)"""
        if name not in STREAMS:
            raise ValueError(f"Unknown stream '{name}', expected one of {sorted(STREAMS)}")
        return cls(seed, spawn_key=(STREAMS[name],))

    def spawn(self, n: int) -> List["Rng"]:
        """n child streams, independent of this one and of each other"""
        return [Rng(self.seed, spawn_key=self.spawn_key + (1000 + i,)) for i in range(n)]

    def uniform(self) -> float:
        """One draw from U(0, 1)"""
        return float(self._generator.random())

    def uniform_array(self, low: float, high: float, shape: Shape) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape)

    def normal(self, shape: Shape) -> np.ndarray:
        """Standard-normal draws (float64)"""
        return self._generator.standard_normal(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def beta(self, a: float, b: float, size: Shape) -> np.ndarray:
        return self._generator.beta(a, b, size=size)

    def integers(self, low: int, high: int, size: Optional[Shape] = None) -> np.ndarray:
        return self._generator.integers(low, high, size=size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, spawn_key={self.spawn_key})"


class FixedRng(Rng):
    """
    Replays constant draws

    Used to pin augmentors to degenerate configurations: every normal draw
    returns `normal_value`, every uniform draw `uniform_value`, permutations
    are the identity and interpolation weights equal `lam`.
    """

    def __init__(self, normal_value: float = 0.0, uniform_value: float = 0.0, lam: float = 1.0):
        super().__init__(0)
        self.normal_value = normal_value
        self.uniform_value = uniform_value
        self.lam = lam

    def uniform(self) -> float:
        return float(self.uniform_value)

    def uniform_array(self, low: float, high: float, shape: Shape) -> np.ndarray:
        return np.full(shape, float(self.uniform_value))

    def normal(self, shape: Shape) -> np.ndarray:
        return np.full(shape, float(self.normal_value))

    def permutation(self, n: int) -> np.ndarray:
        return np.arange(n)

    def beta(self, a: float, b: float, size: Shape) -> np.ndarray:
        return np.full(size, float(self.lam))

    def __repr__(self) -> str:
        return (
            f"FixedRng(normal={self.normal_value}, uniform={self.uniform_value}, lam={self.lam})"
        )
