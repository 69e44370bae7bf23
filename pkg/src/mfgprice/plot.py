"""SVG figures: supply and price paths against time, one curve per alpha."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so repeated runs give identical files
matplotlib.rcParams["svg.hashsalt"] = "mfgprice"
_META = {"Date": None}


def plot_overlay(result, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    first = result.runs[0].ensemble
    ax.plot(first.times, first.Q, color="black", lw=1.4, label="supply $Q_t$")
    for r in result.runs:
        ax.plot(r.ensemble.times, r.ensemble.price, lw=1.0, label=rf"price, $\alpha={r.alpha:g}$")
    ax.set_xlabel("t")
    ax.set_title("Supply vs. price")
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_panels(result, path):
    n = len(result.runs)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), sharex=True, squeeze=False)
    for ax, r in zip(axes[:, 0], result.runs):
        e = r.ensemble
        ax.plot(e.times, e.Q, color="black", lw=1.2, label="supply")
        ax.plot(e.times, e.price, color="tab:red", lw=1.0, label="price")
        ax.set_ylabel(rf"$\alpha={r.alpha:g}$")
        ax.legend(fontsize=7, loc="best")
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path
