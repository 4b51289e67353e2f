"""Plot a sweep CSV (param,mean_mcd_db,std_mcd_db,n) as MCD with error bars.

usage: python3 scripts/plot_sweep.py sweep_gamma.csv [out.png]
"""
import csv
import sys

import matplotlib.pyplot as plt


def main():
    path = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else path.rsplit(".", 1)[0] + ".png"
    with open(path, newline="") as f:
        rows = [r for r in csv.DictReader(f) if int(r["n"]) > 0]
    labels = [r["param"] for r in rows]
    means = [float(r["mean_mcd_db"]) for r in rows]
    stds = [float(r["std_mcd_db"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(range(len(rows)), means, yerr=stds, fmt="o-", capsize=4)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("MCD (dB)")
    ax.set_title(path)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
