"""
Central-difference gradient checking

finite_diff_check compares the gradients produced by Graph.backward with
central differences (f(p + h) - f(p - h)) / 2h, element by element.
"""

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Graph, Tensor

logger = logging.getLogger(__name__)


LossFunction = Callable[[List[Tensor]], Tensor]


def finite_diff_check(
    f: LossFunction,
    params: Sequence[Tensor],
    h: float = 1e-3,
    eps: float = 1e-6,
    promote: bool = True,
    richardson: bool = False,
) -> float:
    """
    Maximum relative error between analytic and numeric gradients

    The relative error of one element is
    |analytic - numeric| / max(|analytic|, |numeric|, eps).

    Args:
        f: Deterministic scalar function of the parameter list. It must build
            its constants with the dtype of the parameters it receives.
        params: Parameter tensors to differentiate with respect to
        h: Central-difference step
        eps: Floor of the relative-error denominator
        promote: Evaluate float32 parameters in float64 for both passes, so
            the comparison measures backward rules rather than float32 rounding
        richardson: Combine central differences at h and h/2 as
            (4 D(h/2) - D(h)) / 3, which cancels the h^2 error term

    Returns:
        Max relative error over every element of every parameter

    Example:
        >>> w = Tensor(np.random.randn(3))
        >>> finite_diff_check(lambda p: (p[0] * p[0]).sum(), [w])  # doctest: +SKIP
        1.1e-11
    """
    dtype = "float64" if promote else None
    base = [Tensor(p.data, dtype=dtype or p.dtype, requires_grad=True) for p in params]

    with Graph() as graph:
        loss = f(base)
    grads = graph.backward(loss)

    worst = 0.0
    for position, param in enumerate(base):
        analytic = grads.get(param, np.zeros(param.shape, dtype=param.dtype))
        numeric = np.zeros(param.shape, dtype=np.float64)
        values = param.numpy()
        for index in np.ndindex(*param.shape):
            coarse = _central(f, base, position, values, index, h)
            if richardson:
                fine = _central(f, base, position, values, index, h / 2.0)
                numeric[index] = (4.0 * fine - coarse) / 3.0
            else:
                numeric[index] = coarse

        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), eps)
        errors = np.abs(analytic - numeric) / denom
        if errors.size and float(errors.max()) > worst:
            worst = float(errors.max())
            logger.debug(
                f"[GradCheck] param {position} worst element "
                f"{np.unravel_index(int(errors.argmax()), errors.shape)}: "
                f"analytic={analytic.reshape(-1)[errors.argmax()]:.6g} "
                f"numeric={numeric.reshape(-1)[errors.argmax()]:.6g}"
            )
    return worst


def _central(f: LossFunction, base: List[Tensor], position: int, values: np.ndarray, index, h: float) -> float:
    original = values[index]
    values[index] = original + h
    f_plus = _evaluate(f, base, position, values)
    values[index] = original - h
    f_minus = _evaluate(f, base, position, values)
    values[index] = original
    return (f_plus - f_minus) / (2.0 * h)


def _evaluate(f: LossFunction, base: List[Tensor], position: int, values: np.ndarray) -> float:
    args = list(base)
    args[position] = Tensor(values, dtype=base[position].dtype)
    return f(args).item()


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, eps: float = 1e-6) -> float:
    """Same error measure as finite_diff_check, for precomputed gradient pairs"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), eps)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))
