"""
SVG plots of sweep metrics.

One line per strategy, x = fraction of neurons kept, y = mean error with a
symmetric standard-deviation error bar. Output is byte-stable for identical
records: the SVG hash salt is fixed and no date is embedded.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  pylint: disable=wrong-import-position
import pandas as pd  # noqa: E402  pylint: disable=wrong-import-position

from schemas.records import MetricsRecord  # noqa: E402  pylint: disable=wrong-import-position
from utils.errors import PreconditionError  # noqa: E402  pylint: disable=wrong-import-position
from utils.logging_config import get_logger  # noqa: E402  pylint: disable=wrong-import-position

logger = get_logger(__name__)  # pylint: disable=invalid-name

PathLike = Union[str, Path]
SVG_HASH_SALT = "divnet"


@dataclass(frozen=True)
class AxesSpec:
    """What goes on the axes of a sweep plot."""
    y: str = "test_error"
    x: str = "fraction"
    title: str = ""
    x_label: str = "fraction of neurons kept"
    y_label: Optional[str] = None
    series_order: Optional[Sequence[str]] = None


def aggregate(records: Sequence[MetricsRecord], column: str) -> pd.DataFrame:
    """
    Mean, sample standard deviation and count of ``column`` per strategy and fraction.

    Failed records (no value) are left out. A single observation has std 0.
    """
    frame = pd.DataFrame([r.model_dump() for r in records])
    frame = frame[frame[column].notna()]
    grouped = frame.groupby(["strategy", "fraction"], sort=True)[column]
    summary = grouped.agg(["mean", "std", "count"]).reset_index()
    summary["std"] = summary["std"].fillna(0.0)
    return summary


def _series_order(records: Sequence[MetricsRecord], axes: AxesSpec) -> List[str]:
    if axes.series_order is not None:
        return list(axes.series_order)
    order = []
    for record in records:
        if record.strategy not in order:
            order.append(record.strategy)
    return order


def emit_plot(records: Sequence[MetricsRecord], axes: AxesSpec, path: PathLike) -> Path:
    """
    Render records as a self-contained SVG line chart with error bars.

    Series appear in the legend in ``axes.series_order`` (default: first
    appearance in ``records``).

    Raises:
        PreconditionError: If there are no records with a value to plot.
    """
    if not records:
        raise PreconditionError("cannot plot an empty record list")
    summary = aggregate(records, axes.y)
    if summary.empty:
        raise PreconditionError(f"no record has a value for {axes.y}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            for name in _series_order(records, axes):
                series = summary[summary["strategy"] == name].sort_values("fraction")
                if series.empty:
                    continue
                ax.errorbar(series["fraction"], series["mean"], yerr=series["std"],
                            marker="o", capsize=3, elinewidth=1, label=name)
            ax.set_xlabel(axes.x_label)
            ax.set_ylabel(axes.y_label or axes.y.replace("_", " "))
            if axes.title:
                ax.set_title(axes.title)
            ax.grid(True)
            ax.legend(loc="best")
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.info("Wrote plot %s", path)
    return path
