"""Static SVG figures: mean curve with a +/-1 std band across seeds.

Smoothing is cosmetic (a trailing moving average applied at render time);
stored series are never smoothed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRIC_FILES = {
    "success": "success_rate.svg",
    "steps": "steps_per_episode.svg",
    "env_return": "env_return.svg",
    "total_return": "total_return.svg",
}

METRIC_LABELS = {
    "success": "success rate",
    "steps": "steps per episode",
    "env_return": "mean per-agent env return",
    "total_return": "mean per-agent total return",
}


def smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average with a growing head window."""
    if window <= 1:
        return series
    csum = np.concatenate([[0.0], np.cumsum(series)])
    out = np.empty_like(series, dtype=np.float64)
    for i in range(len(series)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def metric_series(per_seed: dict[int, dict[str, np.ndarray]], metric: str) -> np.ndarray:
    """(n_seeds, episodes) matrix for one metric; agent metrics are averaged."""
    rows = []
    for seed in sorted(per_seed):
        data = per_seed[seed]
        if metric == "success":
            rows.append(data["success"])
        elif metric == "steps":
            rows.append(data["steps"])
        elif metric == "env_return":
            rows.append(data["env_returns"].mean(axis=1))
        elif metric == "total_return":
            rows.append(data["total_returns"].mean(axis=1))
        else:
            raise KeyError(metric)
    return np.stack(rows)


def plot_metric(
    series_by_label: dict[str, np.ndarray],
    metric: str,
    out_path: Path,
    smoothing_window: int = 1,
) -> Path:
    """One SVG with a mean +/- std band per labelled series matrix."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, matrix in series_by_label.items():
        mean = smooth(matrix.mean(axis=0), smoothing_window)
        std = smooth(matrix.std(axis=0), smoothing_window)
        x = np.arange(matrix.shape[1])
        ax.plot(x, mean, label=label)
        ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("episode")
    ax.set_ylabel(METRIC_LABELS[metric])
    if len(series_by_label) > 1 or next(iter(series_by_label)) != "run":
        ax.legend()
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
