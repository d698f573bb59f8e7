"""
Optional plots for sweep reports and training curves.

Requires matplotlib: pip install matplotlib (or the `plots` extra).
"""

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    MATPLOTLIB_AVAILABLE = True
except ImportError:
    MATPLOTLIB_AVAILABLE = False

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from loguru import logger

from vecplan.eval_harness import ExperimentRow


def plot_sweep(rows: Sequence[ExperimentRow], save_path: Union[str, Path], title: Optional[str] = None) -> bool:
    """
    Precision, recall and instances solved against observation percentage.

    Parameters
    ----------
    rows : Sequence[ExperimentRow]
        Report rows, in any order.
    save_path : str or Path
        Image file to write.

    Returns
    -------
    bool
        False when matplotlib is missing and nothing was written.
    """
    if not MATPLOTLIB_AVAILABLE:
        logger.warning("matplotlib is required for plots; skipping sweep figure")
        return False

    rows = sorted(rows, key=lambda r: r.observation_pct)
    pct = [r.observation_pct for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(pct, [r.precision for r in rows], "o-", label="Precision")
    ax.plot(pct, [r.recall for r in rows], "s-", label="Recall")
    ax.plot(pct, [r.instances_solved for r in rows], "^-", label="Instances solved")
    ax.set_xlabel("Observed propositions (%)")
    ax.set_ylabel("Rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(pct)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    if title:
        ax.set_title(title)
    plt.tight_layout()
    plt.savefig(save_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return True


def plot_loss_curves(curves: Dict[int, List[float]], save_path: Union[str, Path]) -> bool:
    """Per-epoch learner loss, one line per observation percentage, log scale."""
    if not MATPLOTLIB_AVAILABLE:
        logger.warning("matplotlib is required for plots; skipping loss figure")
        return False

    fig, ax = plt.subplots(figsize=(8, 5))
    for pct, curve in sorted(curves.items()):
        if curve:
            ax.plot(range(1, len(curve) + 1), curve, label=f"{pct}%")
    ax.set_yscale("log")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean trace loss")
    ax.grid(True, alpha=0.3)
    ax.legend(title="Observed")
    plt.tight_layout()
    plt.savefig(save_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return True
