"""
Feature-statistics shift analysis and plot data

measure_shift captures eval-mode activations at one slot for the training
and held-out domains and compares their per-class average statistics.
emit_plot_data / emit_shift_data write CSV series for external plotting; each
file starts with a "# schema:" comment row describing its columns.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from .augment import AugmentorConfig
from .data import SampleSet
from .errors import ConfigValidationError, DatasetError
from .featstats import InstanceStats, StatsDistance, instance_stats, stats_distance
from .ndcore.tensor import Tensor
from .net import Params, forward
from .results import SweepResult
from .rng import Rng

logger = logging.getLogger(__name__)

DEFAULT_SLOT = 2
FLOAT_FORMAT = "%.9g"


@dataclass
class ShiftReport:
    """
    Statistics shift between training and test domains at one slot

    Attributes:
        slot: Slot the activations were captured at
        model_tag: Label of the model (e.g. "baseline", "DSU")
        seed: Seed of the model's training run
        per_class: Distance per class name
    """

    slot: int
    model_tag: str
    seed: int
    per_class: Dict[str, StatsDistance] = field(default_factory=dict)

    @property
    def mu_dist(self) -> float:
        return float(np.mean([d.mu_dist for d in self.per_class.values()]))

    @property
    def sigma_dist(self) -> float:
        return float(np.mean([d.sigma_dist for d in self.per_class.values()]))

    @property
    def total(self) -> float:
        """Class-averaged mu_dist + sigma_dist"""
        return self.mu_dist + self.sigma_dist

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slot": self.slot,
            "model_tag": self.model_tag,
            "seed": self.seed,
            "per_class": {name: d.to_dict() for name, d in self.per_class.items()},
            "mu_dist": self.mu_dist,
            "sigma_dist": self.sigma_dist,
            "total": self.total,
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
            logger.info(f"[Shift] Wrote shift report to {path}")
        return text


def capture_stats(params: Params, samples: SampleSet, slot: int, batch_size: int = 256) -> InstanceStats:
    """Instance statistics of the eval-mode activations at a slot, for every sample"""
    if slot not in params.spec.slots:
        raise ConfigValidationError(
            f"slot {slot} does not exist (slots: {list(params.spec.slots)})", key="analyze.slot"
        )
    identity = AugmentorConfig(kind="Identity")
    rng = Rng(0)
    mus, sigmas = [], []
    for start in range(0, len(samples), batch_size):
        x = Tensor(samples.images[start : start + batch_size], dtype=params.spec.dtype)
        captured: Dict[int, Tensor] = {}
        forward(params, x, "eval", identity, rng, capture=captured)
        stats = instance_stats(captured[slot])
        mus.append(stats.mu.data)
        sigmas.append(stats.sigma.data)
    return InstanceStats(mu=Tensor(np.concatenate(mus)), sigma=Tensor(np.concatenate(sigmas)))


def _rows(stats: InstanceStats, mask: np.ndarray) -> InstanceStats:
    return InstanceStats(mu=Tensor(stats.mu.data[mask]), sigma=Tensor(stats.sigma.data[mask]))


def measure_shift(
    params: Params,
    train: SampleSet,
    test: SampleSet,
    slot: int = DEFAULT_SLOT,
    class_filter: Optional[Sequence[int]] = None,
    model_tag: str = "",
    seed: int = 0,
    class_names: Optional[Sequence[str]] = None,
    batch_size: int = 256,
) -> ShiftReport:
    """
    Per-class shift of feature statistics between two sample sets

    Args:
        params: Trained network
        train: Samples from the training domains
        test: Samples from the held-out domain
        slot: Slot to capture (default: after the second block)
        class_filter: Class indices to include (default: all present in both)
        model_tag: Label stored in the report
        seed: Seed stored in the report
        class_names: Names used as per_class keys (default: class indices)

    Returns:
        ShiftReport

    Raises:
        DatasetError: If no class is present in both sets after filtering
    """
    train_stats = capture_stats(params, train, slot, batch_size)
    test_stats = capture_stats(params, test, slot, batch_size)

    present = sorted(set(train.labels.tolist()) & set(test.labels.tolist()))
    chosen = [c for c in present if class_filter is None or c in set(class_filter)]
    if not chosen:
        raise DatasetError(f"No class left to compare (filter={class_filter}, present={present})")

    per_class: Dict[str, StatsDistance] = {}
    for c in chosen:
        name = class_names[c] if class_names is not None else str(c)
        per_class[name] = stats_distance(
            _rows(train_stats, train.labels == c), _rows(test_stats, test.labels == c)
        )
    report = ShiftReport(slot=slot, model_tag=model_tag, seed=seed, per_class=per_class)
    logger.info(
        f"[Shift] {model_tag or 'model'} slot={slot}: mu_dist={report.mu_dist:.4f} sigma_dist={report.sigma_dist:.4f}"
    )
    return report


# -----------------------------------------------------------------------------
# CSV emission
# -----------------------------------------------------------------------------


def _write_csv(df, path: Union[str, Path], schema: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# schema: {schema}\n")
        df.to_csv(handle, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"[Shift] Wrote {len(df)} rows to {path}")
    return path


def read_plot_data(path: Union[str, Path]):
    """Parse a CSV written by emit_plot_data or emit_shift_data"""
    import pandas as pd

    return pd.read_csv(path, comment="#")


def emit_plot_data(
    results: Union[SweepResult, Sequence[SweepResult]],
    path: Union[str, Path],
    x: str,
    metric: str = "out_of_domain_accuracy",
    group: str = "method",
) -> Path:
    """
    Plot-ready series: one row per (group, x) with mean, std and count

    Standard deviations are population values (0 for a single run). Numbers
    are written with 9 significant digits.

    Args:
        results: Sweep result(s)
        path: Output CSV path
        x: Tag column used as the sweep variable (e.g. "p")
        metric: Metric column used as y
        group: Tag column separating series

    Raises:
        ValueError: If there is no successful run to plot
        OSError: If the path cannot be written
    """
    import pandas as pd

    if isinstance(results, SweepResult):
        results = [results]
    frames = [r.filter_successful().to_dataframe() for r in results]
    frames = [f for f in frames if not f.empty]
    if not frames:
        raise ValueError("emit_plot_data needs at least one successful run")
    df = pd.concat(frames, ignore_index=True)
    for column in (x, metric, group):
        if column not in df.columns:
            raise ValueError(f"column '{column}' not found in sweep results")

    grouped = df.groupby([group, x], sort=True)[metric]
    table = pd.DataFrame(
        {
            "y_mean": grouped.mean(),
            "y_std": grouped.std(ddof=0),
            "n": grouped.size(),
        }
    ).reset_index()
    table = table.rename(columns={group: "group", x: "x"})
    schema = f"group={group} x={x} y={metric}; columns=group,x,y_mean,y_std,n"
    return _write_csv(table[["group", "x", "y_mean", "y_std", "n"]], path, schema)


def emit_shift_data(reports: Sequence[ShiftReport], path: Union[str, Path]) -> Path:
    """One row per (model, seed, slot, class) with both distances"""
    import pandas as pd

    if not reports:
        raise ValueError("emit_shift_data needs at least one report")
    rows = []
    for report in reports:
        for name, d in report.per_class.items():
            rows.append(
                {
                    "model_tag": report.model_tag,
                    "seed": report.seed,
                    "slot": report.slot,
                    "class": name,
                    "mu_dist": d.mu_dist,
                    "sigma_dist": d.sigma_dist,
                    "total": d.total,
                }
            )
    schema = "columns=model_tag,seed,slot,class,mu_dist,sigma_dist,total"
    return _write_csv(pd.DataFrame(rows), path, schema)


def compare_shift(reports: Sequence[ShiftReport]):
    """
    Class-averaged shift per model and slot

    Returns:
        pandas.DataFrame with mean mu_dist, sigma_dist and total per
        (model_tag, slot), plus the number of seeds
    """
    import pandas as pd

    if not reports:
        raise ValueError("compare_shift needs at least one report")
    df = pd.DataFrame(
        [
            {"model_tag": r.model_tag, "slot": r.slot, "seed": r.seed, "mu_dist": r.mu_dist, "sigma_dist": r.sigma_dist, "total": r.total}
            for r in reports
        ]
    )
    grouped = df.groupby(["model_tag", "slot"], sort=True)
    summary = grouped[["mu_dist", "sigma_dist", "total"]].mean()
    summary["seeds"] = grouped.size()
    return summary.reset_index()
