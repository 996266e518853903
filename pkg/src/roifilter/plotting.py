"""Grouped bar charts of scoring aggregates, one SVG per metric."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

METRICS = ("mae", "rmse", "pearson")
TITLES = {"mae": "Mean Absolute Error", "rmse": "Root Mean Squared Error", "pearson": "Pearson Correlation"}
VARIANT_COLOURS = {"pretrained": "#8c8c8c", "filtered": "#2b7bba"}

# Fixed salt and no timestamps keep repeated renders byte-identical.
_RC = {"svg.hashsalt": "roifilter", "svg.fonttype": "path", "path.simplify": False}


class AggregatesFormatError(ValueError):
    pass


def check_aggregates(data) -> dict[str, dict[str, dict]]:
    """Validate an aggregates document and return its provider table."""
    if not isinstance(data, dict) or not isinstance(data.get("providers"), dict):
        raise AggregatesFormatError("aggregates must be an object with a 'providers' object")
    providers = data["providers"]
    if not providers:
        raise AggregatesFormatError("aggregates contain no providers")
    for provider, variants in providers.items():
        if not isinstance(variants, dict) or not variants:
            raise AggregatesFormatError(f"provider {provider!r}: expected a non-empty object of variants")
        for variant, cell in variants.items():
            if not isinstance(cell, dict):
                raise AggregatesFormatError(f"{provider}/{variant}: cell is not an object")
            for metric in METRICS:
                value = cell.get(metric, "missing")
                allowed_none = metric == "pearson"
                if value is None and allowed_none:
                    continue
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise AggregatesFormatError(f"{provider}/{variant}: {metric} must be a number")
    return providers


def plot_metric(providers: dict, metric: str, path: Path) -> None:
    names = sorted(providers)
    variants = [v for v in VARIANT_COLOURS if any(v in providers[p] for p in names)]
    variants += sorted({v for p in names for v in providers[p]} - set(variants))
    width = 0.8 / len(variants)

    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(max(4.0, 1.6 * len(names) + 1.5), 3.6))
        ax = fig.add_subplot()
        handles = []
        undefined = False
        for j, variant in enumerate(variants):
            colour = VARIANT_COLOURS.get(variant, f"C{j}")
            handles.append(Patch(facecolor=colour, label=variant))
            for i, provider in enumerate(names):
                x = i - 0.4 + width * (j + 0.5)
                cell = providers[provider].get(variant)
                value = None if cell is None else cell.get(metric)
                if value is None:
                    undefined = True
                    ax.bar(x, 0.05, width, facecolor="none", edgecolor=colour, hatch="///")
                    ax.text(x, 0.06, "n/a", ha="center", va="bottom", fontsize=7)
                else:
                    ax.bar(x, value, width, color=colour)
        if undefined:
            handles.append(Patch(facecolor="none", edgecolor="black", hatch="///", label="undefined (zero variance)"))
        ax.set_xticks(range(len(names)), names, rotation=15, ha="right", fontsize=8)
        ax.set_title(TITLES.get(metric, metric))
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.legend(handles=handles, fontsize=8, frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_aggregates(data: dict, out_dir: Path) -> list[Path]:
    providers = check_aggregates(data)
    out_dir = Path(out_dir)
    paths = []
    for metric in METRICS:
        path = out_dir / f"{metric}.svg"
        plot_metric(providers, metric, path)
        paths.append(path)
    return paths
