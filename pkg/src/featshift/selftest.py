"""
Property self-test

run_selftest() checks the exact properties of the numerics and augmentors
against independent oracles:

    stats_oracle     instance statistics and batch uncertainty vs naive loops
    identity_chain   every augmentor's degenerate configuration returns its input
    renormalization  output statistics of an augmentor equal (beta, |gamma|)
    expectation      Monte-Carlo mean of DSU outputs converges to the input
    gradients        analytic gradients vs central differences

Setting FEATSHIFT_SELFTEST_FAULT=1 perturbs the identity-chain outputs, so the
harness itself can be shown to fail.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from . import augment
from .augment import AugmentorConfig, UncertaintyReplay
from .featstats import BatchUncertainty, batch_uncertainty, instance_stats
from .ndcore import ops
from .ndcore.gradcheck import finite_diff_check
from .ndcore.tensor import Tensor
from .net import NetworkSpec, build, conv, forward, layer, linear, slot
from .rng import FixedRng, Rng

logger = logging.getLogger(__name__)


FAULT_ENV = "FEATSHIFT_SELFTEST_FAULT"
FAULT_OFFSET = 1e-3

STATS_ATOL = 1e-10
IDENTITY_ATOL = 1e-5
RENORM_ATOL = 1e-4
EXPECTATION_SE = 4.0
GRAD_RTOL = {"float32": 1e-4, "float64": 1e-7}


@dataclass
class CheckResult:
    """Outcome of one check"""

    name: str
    passed: bool
    error: float
    tolerance: float

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "error": self.error, "tolerance": self.tolerance}


@dataclass
class SelftestReport:
    """Checks grouped by suite"""

    suites: Dict[str, List[CheckResult]] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for checks in self.suites.values() for c in checks)

    def failures(self) -> List[str]:
        return [f"{suite}/{c.name}" for suite, checks in self.suites.items() for c in checks if not c.passed]

    def lines(self) -> List[str]:
        out = []
        for suite, checks in self.suites.items():
            ok = all(c.passed for c in checks)
            worst = max(checks, key=lambda c: c.error / c.tolerance if c.tolerance else c.error)
            out.append(
                f"{'PASS' if ok else 'FAIL'} {suite}: {sum(c.passed for c in checks)}/{len(checks)} "
                f"(worst {worst.name}: {worst.error:.3g} vs {worst.tolerance:.0e})"
            )
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "seconds": self.seconds,
            "suites": {name: [c.to_dict() for c in checks] for name, checks in self.suites.items()},
        }


def _check(name: str, error: float, tolerance: float) -> CheckResult:
    return CheckResult(name=name, passed=bool(error <= tolerance), error=float(error), tolerance=tolerance)


# -----------------------------------------------------------------------------
# naive oracles
# -----------------------------------------------------------------------------


def naive_instance_stats(x: np.ndarray, eps: float = 0.0):
    """Quadruple-loop mean and standard deviation per (instance, channel)"""
    b_n, c_n, h_n, w_n = x.shape
    mu = np.zeros((b_n, c_n))
    sigma = np.zeros((b_n, c_n))
    count = h_n * w_n
    for b in range(b_n):
        for c in range(c_n):
            total = 0.0
            for h in range(h_n):
                for w in range(w_n):
                    total += x[b, c, h, w]
            mean = total / count
            squares = 0.0
            for h in range(h_n):
                for w in range(w_n):
                    squares += (x[b, c, h, w] - mean) ** 2
            mu[b, c] = mean
            sigma[b, c] = np.sqrt(squares / count + eps)
    return mu, sigma


def naive_batch_std(values: np.ndarray) -> np.ndarray:
    """Population standard deviation over the batch axis, by loops"""
    b_n, c_n = values.shape
    out = np.zeros(c_n)
    for c in range(c_n):
        mean = sum(values[b, c] for b in range(b_n)) / b_n
        out[c] = np.sqrt(sum((values[b, c] - mean) ** 2 for b in range(b_n)) / b_n)
    return out


# -----------------------------------------------------------------------------
# suites
# -----------------------------------------------------------------------------


def suite_stats_oracle(rng: Rng, trials: int = 100) -> List[CheckResult]:
    worst = 0.0
    for _ in range(trials):
        shape = tuple(int(v) for v in rng.integers(1, 5, 2)) + tuple(int(v) for v in rng.integers(1, 6, 2))
        x = rng.normal(shape) * rng.uniform_array(0.5, 3.0, 1)[0] + rng.uniform_array(-2.0, 2.0, 1)[0]
        eps = 1e-6 if rng.uniform() < 0.5 else 0.0
        stats = instance_stats(Tensor(x), eps)
        unc = batch_uncertainty(stats)
        mu, sigma = naive_instance_stats(x, eps)
        worst = max(
            worst,
            float(np.abs(stats.mu.data - mu).max()),
            float(np.abs(stats.sigma.data - sigma).max()),
            float(np.abs(unc.sigma_mu.data - naive_batch_std(mu)).max()),
            float(np.abs(unc.sigma_sigma.data - naive_batch_std(sigma)).max()),
        )
    return [_check(f"{trials} random tensors", worst, STATS_ATOL)]


def suite_identity_chain(rng: Rng, fault: bool = False) -> List[CheckResult]:
    x = Tensor(rng.normal((4, 3, 5, 5)) * 2.0 + 0.5, dtype="float32")
    same = Tensor(np.repeat(rng.normal((1, 3, 5, 5)), 4, axis=0), dtype="float32")
    stats = instance_stats(x)
    same_stats = instance_stats(same)
    perm = rng.permutation(4)
    identity = np.arange(4)

    cases: Dict[str, Callable[[], Tensor]] = {
        "DSU eps=0": lambda: augment.dsu(x, stats, batch_uncertainty(stats), rng, draws=(0.0, 0.0))[0],
        "DSU Sigma=0": lambda: augment.dsu(same, same_stats, batch_uncertainty(same_stats), rng)[0],
        "MixStyle lambda=1": lambda: augment.mix_style(x, stats, perm, 1.0),
        "MixStyle identity perm": lambda: augment.mix_style(x, stats, identity, 0.3),
        "PAdaIN identity perm": lambda: augment.p_ada_in(x, stats, identity),
        "RandomFixed s=0": lambda: augment.random_fixed(x, stats, 0.0, rng),
        "UniformShift Sigma=0": lambda: augment.uniform_shift(same, same_stats, batch_uncertainty(same_stats), rng),
        "ChannelShareDSU Sigma=0": lambda: augment.channel_share_dsu(
            same, same_stats, batch_uncertainty(same_stats), rng
        ),
        "gate p=0": lambda: augment.apply(x, AugmentorConfig(kind="DSU", p=0.0), "train", rng),
        "eval mode": lambda: augment.apply(x, AugmentorConfig(kind="DSU", p=1.0), "eval", rng),
    }
    references = {"DSU Sigma=0": same, "UniformShift Sigma=0": same, "ChannelShareDSU Sigma=0": same}

    results = []
    for name, run in cases.items():
        out = run().data.astype(np.float64)
        if fault:
            out = out + FAULT_OFFSET
        reference = references.get(name, x).data.astype(np.float64)
        results.append(_check(name, float(np.abs(out - reference).max()), IDENTITY_ATOL))
    return results


def suite_renormalization(rng: Rng, trials: int = 100) -> List[CheckResult]:
    kinds = ("DSU", "ChannelShareDSU", "UniformShift", "RandomFixed", "MixStyle", "PAdaIN")
    worst = {k: 0.0 for k in kinds}
    for trial in range(trials):
        kind = kinds[trial % len(kinds)]
        x = Tensor(rng.normal((4, 3, 5, 5)) * rng.uniform_array(0.5, 2.0, (4, 3, 1, 1)) + rng.normal((4, 3, 1, 1)), dtype="float32")
        stats = instance_stats(x, eps=0.0)
        unc = batch_uncertainty(stats)
        if kind == "DSU":
            out, shift = augment.dsu(x, stats, unc, rng)
        elif kind == "ChannelShareDSU":
            out, shift = augment.channel_share_dsu(x, stats, unc, rng, return_shift=True)
        elif kind == "UniformShift":
            out, shift = augment.uniform_shift(x, stats, unc, rng, return_shift=True)
        elif kind == "RandomFixed":
            out, shift = augment.random_fixed(x, stats, 1.0, rng, return_shift=True)
        elif kind == "MixStyle":
            out, shift = augment.mix_style(x, stats, rng.permutation(4), rng.uniform_array(0.0, 1.0, 4), return_shift=True)
        else:
            out, shift = augment.p_ada_in(x, stats, rng.permutation(4), return_shift=True)
        recomputed = instance_stats(out, eps=0.0)
        error = max(
            float(np.abs(recomputed.mu.data - shift.beta.data).max()),
            float(np.abs(recomputed.sigma.data - np.abs(shift.gamma.data)).max()),
        )
        worst[kind] = max(worst[kind], error)
    return [_check(kind, err, RENORM_ATOL) for kind, err in worst.items()]


def suite_expectation(rng: Rng, draws: int = 10000) -> List[CheckResult]:
    x = Tensor(rng.normal((4, 3, 3, 3)) * rng.uniform_array(0.5, 2.0, (4, 3, 1, 1)) + rng.normal((4, 3, 1, 1)))
    stats = instance_stats(x)
    unc = batch_uncertainty(stats)
    total = np.zeros(x.shape)
    squares = np.zeros(x.shape)
    for _ in range(draws):
        out = augment.dsu(x, stats, unc, rng)[0].data
        total += out
        squares += out * out
    mean = total / draws
    std = np.sqrt(np.maximum(squares / draws - mean * mean, 0.0))
    standard_error = std / np.sqrt(draws)
    ratio = np.abs(mean - x.data) / np.maximum(standard_error, 1e-12)
    return [_check(f"{draws} draws, max |mean - x| / SE", float(ratio.max()), EXPECTATION_SE)]


def _gradient_cases(rng: Rng) -> Dict[str, Any]:
    def away_from_zero(shape, low=0.5, high=2.0):
        return rng.uniform_array(low, high, shape) * np.where(rng.uniform_array(0, 1, shape) < 0.5, -1.0, 1.0)

    x4 = rng.normal((2, 3, 4, 4))
    w4 = away_from_zero((2, 3, 4, 4))
    bc = away_from_zero((2, 3))
    vec = away_from_zero((3,))
    kernel = rng.normal((4, 3, 3, 3)) * 0.3
    bias = rng.normal((4,))
    feats = rng.normal((5, 6))
    weight = rng.normal((3, 6))
    labels = rng.integers(0, 3, 5)
    positive = rng.uniform_array(0.5, 2.0, (2, 3, 4, 4))
    eps_mu, eps_sigma = rng.normal((2, 3)), rng.normal((2, 3))
    picked = rng.normal((3, 3))

    def weighted(t: Tensor, weights: np.ndarray) -> Tensor:
        return ops.total(ops.mul(t, Tensor(weights, dtype=t.dtype)))

    uniforms = (rng.uniform_array(-1.0, 1.0, (2, 3)), rng.uniform_array(-1.0, 1.0, (2, 3)))
    lam = rng.uniform_array(0.2, 0.8, 2)
    swap = np.array([1, 0])

    def frozen_scope(t: Tensor) -> BatchUncertainty:
        return BatchUncertainty(Tensor(np.abs(vec), dtype=t.dtype), Tensor(np.abs(vec) * 0.5, dtype=t.dtype))

    def augmentor_loss(run: Callable[[Tensor, Any], Any]) -> Callable[[List[Tensor]], Tensor]:
        def loss(p: List[Tensor]) -> Tensor:
            out = run(p[0], instance_stats(p[0]))
            return weighted(out[0] if isinstance(out, tuple) else out, w4)

        return loss

    frozen = FixedRng()
    augmentor_cases = {
        "dsu": lambda x, s: augment.dsu(x, s, frozen_scope(x), frozen, draws=(eps_mu, eps_sigma)),
        "channel_share_dsu": lambda x, s: augment.channel_share_dsu(
            x, s, frozen_scope(x), frozen, draws=(eps_mu, eps_sigma)
        ),
        "uniform_shift": lambda x, s: augment.uniform_shift(x, s, frozen_scope(x), frozen, draws=uniforms),
        "random_fixed": lambda x, s: augment.random_fixed(x, s, 0.7, frozen, draws=(eps_mu, eps_sigma)),
        "mix_style": lambda x, s: augment.mix_style(x, s, swap, lam),
        "p_ada_in": lambda x, s: augment.p_ada_in(x, s, swap),
    }

    cases = {
        "add[B,C]": (lambda p: weighted(ops.add(p[0], p[1]), w4), [x4, bc]),
        "sub[C]": (lambda p: weighted(ops.sub(p[0], p[1]), w4), [x4, vec]),
        "mul[B,C]": (lambda p: weighted(ops.mul(p[0], p[1]), w4), [x4, bc]),
        "div[B,C]": (lambda p: weighted(ops.div(p[0], p[1]), w4), [x4, bc]),
        "sqrt": (lambda p: weighted(ops.sqrt(p[0]), w4), [positive]),
        "relu": (lambda p: weighted(ops.relu(p[0]), w4), [away_from_zero((2, 3, 4, 4))]),
        "tanh": (lambda p: weighted(ops.tanh(p[0]), w4), [x4]),
        "exp": (lambda p: weighted(ops.exp(p[0]), w4), [x4 * 0.5]),
        "log": (lambda p: weighted(ops.log(p[0]), w4), [positive]),
        "mean{H,W}": (lambda p: weighted(ops.reduce("mean", p[0], ("H", "W")), bc), [x4]),
        "variance{H,W}": (lambda p: weighted(ops.reduce("variance", p[0], ("H", "W")), bc), [x4]),
        "variance{B}/N-1": (lambda p: weighted(ops.reduce("variance", p[0], (0,), divisor="N-1"), vec), [bc]),
        "conv2d": (
            lambda p: ops.total(ops.tanh(ops.conv2d(p[0], p[1], p[2], stride=2, pad=1))),
            [x4, kernel, bias],
        ),
        "linear+cross_entropy": (
            lambda p: ops.cross_entropy(ops.linear(p[0], p[1], p[2]), labels),
            [feats, weight, rng.normal((3,))],
        ),
        "index_select": (lambda p: weighted(ops.index_select(p[0], [1, 0, 1]), picked), [bc]),
        "global_avg_pool": (lambda p: ops.total(ops.tanh(ops.global_avg_pool(p[0]))), [x4]),
        "instance_stats": (
            lambda p: ops.add(weighted(instance_stats(p[0]).mu, bc), weighted(instance_stats(p[0]).sigma, bc)),
            [x4],
        ),
    }
    cases.update({f"{name} (frozen draws)": (augmentor_loss(run), [x4]) for name, run in augmentor_cases.items()})
    return cases


def tiny_network_spec(dtype: str = "float32") -> NetworkSpec:
    """Two tanh conv blocks with augmentation slots 0 and 1 (for gradient checks)"""
    return NetworkSpec(
        layers=[
            conv(4, 3, 1, 1),
            layer("tanh"),
            slot(0),
            conv(4, 3, 2, 1),
            layer("tanh"),
            slot(1),
            layer("pool"),
            layer("flatten"),
            linear(3),
        ],
        insert_positions=(0, 1),
        num_classes=3,
        input_size=6,
        dtype=dtype,
    ).validate()


def network_gradient_error(seed: int = 0, kind: str = "DSU", h: float = 1e-5) -> float:
    """
    Finite-difference check of a 2-block network with augmentation slots

    The slots fire with p=1; the eps draws are frozen by reseeding the Rng on
    every evaluation and the batch uncertainty by an UncertaintyReplay.
    """
    spec = tiny_network_spec()
    params = build(spec, seed)
    data_rng = Rng(seed + 1)
    images = data_rng.uniform_array(0.0, 1.0, (3, 3, 6, 6))
    labels = data_rng.integers(0, 3, 3)
    aug = AugmentorConfig(kind=kind, p=1.0)
    replay = UncertaintyReplay()

    def loss(plist: List[Tensor]) -> Tensor:
        replay.rewind()
        net_params = params.with_tensors(plist)
        x = Tensor(images, dtype=plist[0].dtype)
        logits = forward(net_params, x, "train", aug, Rng(seed + 2), replay=replay)
        return ops.cross_entropy(logits, labels)

    return finite_diff_check(loss, params.leaves(), h=h)


def suite_gradients(rng: Rng) -> List[CheckResult]:
    results = []
    for name, (f, arrays) in _gradient_cases(rng).items():
        tensors = [Tensor(a) for a in arrays]
        results.append(_check(name, finite_diff_check(f, tensors, h=1e-3, richardson=True), GRAD_RTOL["float64"]))
    results.append(_check("2-block network with DSU slots", network_gradient_error(), GRAD_RTOL["float32"]))
    return results


def run_selftest(seed: int = 0, fault: Optional[bool] = None) -> SelftestReport:
    """
    Run every property suite

    Args:
        seed: Seed of the random test inputs
        fault: Force fault injection on or off (default: read FEATSHIFT_SELFTEST_FAULT)

    Returns:
        SelftestReport; report.passed is False when any check fails
    """
    if fault is None:
        fault = os.environ.get(FAULT_ENV, "") == "1"
    if fault:
        logger.warning(f"[Selftest] Fault injection enabled via {FAULT_ENV}")
    started = time.perf_counter()
    streams = Rng(seed).spawn(5)
    report = SelftestReport()
    report.suites["stats_oracle"] = suite_stats_oracle(streams[0])
    report.suites["identity_chain"] = suite_identity_chain(streams[1], fault=fault)
    report.suites["renormalization"] = suite_renormalization(streams[2])
    report.suites["expectation"] = suite_expectation(streams[3])
    report.suites["gradients"] = suite_gradients(streams[4])
    report.seconds = time.perf_counter() - started
    for line in report.lines():
        logger.info(f"[Selftest] {line}")
    return report
