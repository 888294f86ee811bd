"""Bar chart of median timed seconds per configuration from a bench CSV.

    python scripts/plot_bench.py bench.csv bench.pdf
"""

import argparse
import csv
import statistics
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CONFIG_COLUMNS = ("culling", "traversal", "warm_start", "leaf_size", "precision")

plt.rcParams["font.size"] = 9
plt.rcParams["font.family"] = "serif"
plt.rcParams["figure.figsize"] = [6.0, 3.2]


def load_medians(path) -> dict[tuple, float | None]:
    """Median seconds over completed timed runs, keyed by configuration; None if it never finished."""
    runs: dict[tuple, list[float]] = defaultdict(list)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = tuple(row[c] for c in CONFIG_COLUMNS)
            runs.setdefault(key, [])
            if row["phase"] == "timed" and row["status"] == "ok":
                runs[key].append(float(row["seconds"]))
    return {k: statistics.median(v) if v else None for k, v in runs.items()}


def label(key: tuple) -> str:
    culling, traversal, warm_start, leaf_size, precision = key
    text = f"{culling}\n{traversal}\nleaf {leaf_size}"
    if warm_start in ("True", "true", "1"):
        text += "\nwarm"
    if precision != "double":
        text += f"\n{precision}"
    return text


def plot(medians: dict[tuple, float | None], out: str):
    keys = list(medians)
    heights = [medians[k] or 0.0 for k in keys]
    fig = plt.figure()
    ax = fig.add_subplot(1, 1, 1)
    bars = ax.bar(range(len(keys)), heights, color="#4c72b0")
    for bar, k in zip(bars, keys):
        if medians[k] is None:
            ax.annotate("DNF", (bar.get_x() + bar.get_width() / 2, 0), ha="center", va="bottom")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([label(k) for k in keys], fontsize=7)
    ax.set_ylabel("median seconds")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv")
    parser.add_argument("out")
    args = parser.parse_args(argv)
    medians = load_medians(args.csv)
    if not medians:
        print(f"{args.csv}: no runs", file=sys.stderr)
        return 2
    plot(medians, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
