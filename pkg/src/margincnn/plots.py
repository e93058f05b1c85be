"""Training-curve rendering.  Import is deferred to call time elsewhere so
headless metric writing never needs a display; the Agg backend is forced
here for the same reason."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams["svg.fonttype"] = "path"


def render_curves(records: Sequence["MetricRecord"], out_dir: str | Path) -> list[Path]:
    """Accuracy and loss vs step, as self-contained curves.svg and curves.png."""
    steps = [r.step for r in records]
    acc = [r.train_accuracy for r in records]
    total = [r.loss_total for r in records]
    datas = [r.loss_data for r in records]

    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_acc.plot(steps, acc, color="tab:blue", lw=1.2)
    ax_acc.set_xlabel("step")
    ax_acc.set_ylabel("train accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.grid(True, alpha=0.3)
    ax_loss.plot(steps, total, color="tab:red", lw=1.2, label="total")
    ax_loss.plot(steps, datas, color="tab:orange", lw=0.9, ls="--", label="data term")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("train loss")
    ax_loss.grid(True, alpha=0.3)
    ax_loss.legend(frameon=False)
    fig.tight_layout()

    out = Path(out_dir)
    written = []
    for name in ("curves.svg", "curves.png"):
        path = out / name
        # Date metadata is dropped so identical runs render identical files.
        fig.savefig(path, metadata={"Date": None} if name.endswith("svg") else None)
        written.append(path)
    plt.close(fig)
    return written
