"""Figure rendering for experiment reports.

Only the ``report`` command draws. Figures are a convenience next to the
tab-separated data files: any failure is logged and swallowed.
"""

import logging
from pathlib import Path

log = logging.getLogger(__name__)

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "svg.hashsalt": "empadetox",
}
MARKERS = "osD^vP*Xh"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date metadata, so reruns give identical bytes
    fig.savefig(path, metadata={"Software": None})


def plot_toxicity_vs_size(rows, baselines, attributes, path):
    """One panel per attribute: toxicity probability against subset size, a line per selection type.

    ``rows`` are ``(type, size, attribute, probability)``; ``baselines`` maps a
    label to ``{attribute: probability}`` and is drawn as dashed horizontal lines.
    """
    plt = _pyplot()
    with plt.rc_context(RC):
        ncols = 4
        nrows = -(-len(attributes) // ncols)
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.6 * ncols, 2.2 * nrows), squeeze=False, sharex=True)
        types = sorted({r[0] for r in rows})
        for ax, attr in zip(axes.flat, attributes):
            for k, t in enumerate(types):
                pts = sorted((r[1], r[3]) for r in rows if r[0] == t and r[2] == attr)
                if pts:
                    ax.plot(*zip(*pts), marker=MARKERS[k % len(MARKERS)], label=t)
            for k, (label, probs) in enumerate(sorted(baselines.items())):
                ax.axhline(probs[attr], linestyle="--", color=f"{0.2 + 0.3 * k:.1f}", linewidth=1, label=label)
            ax.set_title(attr.replace("_", " "))
        for ax in axes.flat[len(attributes):]:
            ax.set_visible(False)
        for ax in axes[-1]:
            ax.set_xlabel("fine-tuning subset size")
        for ax in axes[:, 0]:
            ax.set_ylabel("toxicity probability")
        handles, labels = axes.flat[0].get_legend_handles_labels()
        fig.legend(handles, labels, loc="lower center", ncol=min(len(labels), 7), frameon=False)
        fig.tight_layout(rect=(0, 0.08, 1, 1))
        _save(fig, path)
        plt.close(fig)


def plot_toxicity_vs_length(series, path, max_length=None):
    """``series`` maps a run label to ``[(length, mean_toxicity), ...]``; empty buckets omitted."""
    plt = _pyplot()
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for k, (label, pts) in enumerate(series.items()):
            if pts:
                ax.plot(*zip(*pts), marker=MARKERS[k % len(MARKERS)], label=label)
        ax.set_xlabel("length of continuation (tokens)")
        ax.set_ylabel("average toxicity")
        ax.set_title("Toxicity across generation lengths")
        if max_length:
            ax.set_xlim(1, max_length)
        ax.legend(loc="best")
        fig.tight_layout()
        _save(fig, path)
        plt.close(fig)


def render_safely(fn, *args, **kwargs) -> bool:
    try:
        fn(*args, **kwargs)
        return True
    except Exception as e:  # noqa: BLE001 - rendering never fails a run
        log.warning("figure rendering failed (%s: %s); data files were still written", type(e).__name__, e)
        return False
