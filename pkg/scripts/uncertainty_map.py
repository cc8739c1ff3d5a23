"""Print the ensemble uncertainty of a finished run as a grid, with the AUC of
u separating never-visited from visited cells.

    python scripts/uncertainty_map.py runs/hard-pessorl
"""

import argparse
import csv
from pathlib import Path

import numpy as np

SHADES = " .:-=+*#%@"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run_dir")
    args = p.parse_args()
    with open(Path(args.run_dir) / "uncertainty_map.csv") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([int(r["x"]) for r in rows])
    y = np.array([int(r["y"]) for r in rows])
    u = np.array([float(r["u"]) for r in rows])
    visited = np.array([r["in_support"] == "1" for r in rows])
    if x.min() < 0:
        raise SystemExit("run has no grid coordinates (random MDP)")

    level = np.clip((u / u.max() * (len(SHADES) - 1)).round().astype(int), 0, len(SHADES) - 1)
    grid = [["#"] * (x.max() + 1) for _ in range(y.max() + 1)]
    for xi, yi, li in zip(x, y, level):
        grid[yi][xi] = SHADES[li]
    print("uncertainty (darker = higher, # = wall)")
    print("\n".join("".join(row) for row in grid))

    pos, neg = u[~visited][:, None], u[visited][None, :]
    auc = np.mean((pos > neg) + 0.5 * (pos == neg)) if pos.size and neg.size else float("nan")
    print(f"\nAUC (unvisited above visited): {auc:.3f}  "
          f"[{(~visited).sum()} unvisited, {visited.sum()} visited]")


if __name__ == "__main__":
    main()
