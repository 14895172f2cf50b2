"""
Sweep result containers

SweepResult collects the RunReports of a sweep together with the tags that
identify each run (method, p, slot set, batch size, seed, held-out domain),
and converts them to pandas tables for summaries and export.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("in_domain_accuracy", "out_of_domain_accuracy", "final_train_loss")


@dataclass
class SweepEntry:
    """
    One run of a sweep

    Attributes:
        tags: Sweep coordinates of the run (e.g. {"method": "DSU", "p": 0.5, "seed": 0})
        report: RunReport of the run, None if it failed
        error: Error message when the run failed
    """

    tags: Dict[str, Any]
    report: Optional[Any] = None
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.report is not None and self.error is None

    def row(self) -> Dict[str, Any]:
        """Flat record: tags followed by the run's headline metrics"""
        row = dict(self.tags)
        row["success"] = self.success
        if self.report is not None:
            metrics = self.report.metrics()
            for key in METRIC_COLUMNS:
                row[key] = metrics.get(key)
            for key, value in metrics.get("corrupted_accuracy", {}).items():
                row[f"corrupted:{key}"] = value
        else:
            row["error"] = self.error
        return row

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tags": self.tags,
            "success": self.success,
            "report": self.report.to_dict() if self.report is not None else None,
            "error": self.error,
        }


@dataclass
class SweepResult:
    """
    Result of a sweep over runs

    Example:
        >>> result = sweep_p(base, [0.0, 0.5, 1.0], seeds=[0, 1])
        >>> result.aggregate(["p"])
        >>> result.to_csv("sweep_p.csv")
    """

    name: str
    entries: List[SweepEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[SweepEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> SweepEntry:
        return self.entries[index]

    @property
    def reports(self) -> List[Any]:
        """RunReports of successful runs, in schedule order"""
        return [e.report for e in self.entries if e.success]

    def select(self, **tags: Any) -> "SweepResult":
        """Entries whose tags match every given value"""
        chosen = [e for e in self.entries if all(e.tags.get(k) == v for k, v in tags.items())]
        return SweepResult(name=self.name, entries=chosen)

    def filter_successful(self) -> "SweepResult":
        return SweepResult(name=self.name, entries=[e for e in self.entries if e.success])

    def filter_failed(self) -> "SweepResult":
        """
        Failed runs only

        Example:
            >>> for entry in result.filter_failed():
            ...     print(entry.tags, entry.error)
        """
        return SweepResult(name=self.name, entries=[e for e in self.entries if not e.success])

    def to_dataframe(self):
        """
        One row per run: tag columns, then metrics

        Returns:
            pandas.DataFrame
        """
        import pandas as pd

        return pd.DataFrame([e.row() for e in self.entries])

    def aggregate(
        self, by: Sequence[str], metrics: Sequence[str] = ("out_of_domain_accuracy", "in_domain_accuracy")
    ):
        """
        Mean, standard deviation and count of metrics per group of tags

        Failed runs are excluded.

        Args:
            by: Tag columns to group on (e.g. ["method"])
            metrics: Metric columns to summarise

        Returns:
            pandas.DataFrame with columns <metric>_mean, <metric>_std, n
        """
        import pandas as pd

        df = self.filter_successful().to_dataframe()
        if df.empty:
            return pd.DataFrame(columns=list(by) + ["n"])
        by = list(by)
        keyed = df.copy()
        for column in by:
            keyed[column] = keyed[column].map(_hashable)
        grouped = keyed.groupby(by, sort=False, dropna=False)
        summary = grouped[list(metrics)].agg(["mean", "std"])
        summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
        summary["n"] = grouped.size()
        return summary.reset_index()

    def to_csv(self, filepath: Union[str, Path], **kwargs) -> None:
        """
        Export one row per run to CSV

        Args:
            filepath: Output path
            **kwargs: Passed to pandas.DataFrame.to_csv()
        """
        df = self.to_dataframe()
        if "index" not in kwargs:
            kwargs["index"] = False
        if "float_format" not in kwargs:
            kwargs["float_format"] = "%.9g"
        df.to_csv(filepath, **kwargs)
        logger.info(f"[Sweep] Exported {len(df)} runs of '{self.name}' to {filepath}")

    def to_json(self, filepath: Union[str, Path]) -> None:
        """Export every entry, full reports included"""
        Path(filepath).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        logger.info(f"[Sweep] Exported {len(self.entries)} runs of '{self.name}' to {filepath}")

    def to_dict(self) -> Dict[str, Any]:
        return {"sweep": self.name, "runs": [e.to_dict() for e in self.entries]}

    def __repr__(self) -> str:
        ok = sum(1 for e in self.entries if e.success)
        return f"<SweepResult name={self.name!r} total={len(self.entries)} successful={ok}>"


def _hashable(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return "{" + ",".join(str(v) for v in value) + "}"
    return value
