"""Plot mean train/test MAE from a `mmprompt sweep` CSV.

    python3 tools/plot_sweep.py runs/small_train/sweep_prompt_depth.csv sweep.png
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main(argv):
    if len(argv) != 3:
        sys.exit(__doc__)
    df = pd.read_csv(argv[1])
    param = df.columns[0]
    mean = df.groupby([param, "split"])["MAE"].agg(["mean", "std"]).reset_index()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for split, part in mean.groupby("split"):
        ax.errorbar(part[param], part["mean"], yerr=part["std"], marker="o", capsize=3, label=split)
    ax.set_xlabel(param)
    ax.set_ylabel("MAE (mean over seeds)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(argv[2], dpi=150)


if __name__ == "__main__":
    main(sys.argv)
