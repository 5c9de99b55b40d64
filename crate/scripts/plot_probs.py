"""Plot regime probabilities and rolling log-likelihoods written by `msvine`.

    python scripts/plot_probs.py report/ --regime 2 --out probs.png
    python scripts/plot_probs.py --rolling roll/rolling.csv --out rolling.png

A report directory holds smoothed.csv and smoothed_ma.csv; a fit-bayes
directory holds probs.csv. Whichever files exist are drawn.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_probabilities(directory: Path, regime: int, ax) -> None:
    col = f"prob_regime_{regime}"
    styles = {
        "smoothed.csv": dict(color="0.7", lw=0.8, label="smoothed"),
        "smoothed_ma.csv": dict(color="C0", lw=1.4, label="moving average"),
        "probs.csv": dict(color="C3", lw=1.0, label="posterior"),
    }
    drawn = False
    for name, style in styles.items():
        path = directory / name
        if path.exists():
            df = pd.read_csv(path)
            ax.plot(df["t"], df[col], **style)
            drawn = True
    if not drawn:
        raise SystemExit(f"no probability files in {directory}")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("t")
    ax.set_ylabel(f"P(regime {regime})")
    ax.legend(loc="best", frameon=True)


def plot_rolling(path: Path, ax) -> None:
    df = pd.read_csv(path)
    for name, part in df.groupby("candidate_id", sort=False):
        ax.plot(part["window_start"], part["loglik"], lw=1.0, label=str(name))
    ax.set_xlabel("window start")
    ax.set_ylabel("log-likelihood")
    ax.legend(frameon=False)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("directory", nargs="?", type=Path)
    ap.add_argument("--regime", type=int, default=2)
    ap.add_argument("--rolling", type=Path)
    ap.add_argument("--out", type=Path, default=Path("plot.png"))
    args = ap.parse_args()
    panels = [p for p in (args.directory, args.rolling) if p is not None]
    if not panels:
        ap.error("give a result directory, --rolling, or both")
    fig, axes = plt.subplots(len(panels), 1, figsize=(9, 3 * len(panels)), squeeze=False)
    row = 0
    if args.directory is not None:
        plot_probabilities(args.directory, args.regime, axes[row][0])
        row += 1
    if args.rolling is not None:
        plot_rolling(args.rolling, axes[row][0])
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
