# SPDX-License-Identifier: Apache-2.0
"""Plot accuracy and perf_gap against sparsity from a `bifp sweep` CSV.

    bifp sweep --config configs/synthetic.json --out sweep.csv
    python docs/plot_sweep.py sweep.csv sweep.png
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("png")
    args = ap.parse_args()

    df = pd.read_csv(args.csv)
    df = df[df["error"].isna()]
    stats = df.groupby(["method", "sparsity"])[["acc_overall", "perf_gap"]].agg(["mean", "std"]).reset_index()

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric in zip(axes, ["acc_overall", "perf_gap"]):
        for method, g in stats.groupby("method"):
            ax.errorbar(g["sparsity"], g[(metric, "mean")], yerr=g[(metric, "std")], label=method, capsize=2)
        ax.set_xlabel("sparsity")
        ax.set_ylabel(metric)
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.png, dpi=150)


if __name__ == "__main__":
    main()
