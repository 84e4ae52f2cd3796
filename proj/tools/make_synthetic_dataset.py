"""Writes the bundled 1k-cell synthetic dataset used by the golden pipeline test.

Cells sit in a 1000 x 1000 micron field. A tumor nest occupies the left
third, a lymphoid follicle (B cells around follicular dendritic cells) sits
top right, and T cells are scattered through the stroma. Marker intensities
are raw counts: positive markers draw from a gamma around 60, negative ones
around 2.
"""

import csv
import sys

import numpy as np

MARKERS = ["CD3D", "CD4", "CD8A", "FOXP3", "CD20", "CD21", "PanCK"]

# name, count, positive markers, placement
TYPES = [
    ("tumor", 350, {"PanCK"}, "nest"),
    ("helper_t", 150, {"CD3D", "CD4"}, "stroma"),
    ("treg", 50, {"CD3D", "CD4", "FOXP3"}, "stroma"),
    ("ctl", 150, {"CD3D", "CD8A"}, "stroma"),
    ("b_cell", 150, {"CD20"}, "follicle"),
    ("fdc", 50, {"CD21"}, "follicle_core"),
    ("other", 100, set(), "anywhere"),
]


def place(rng, where, n):
    if where == "nest":
        return rng.uniform(20, 330, n), rng.uniform(20, 980, n)
    if where == "follicle":
        r = 150 * np.sqrt(rng.uniform(0, 1, n))
        t = rng.uniform(0, 2 * np.pi, n)
        return 700 + r * np.cos(t), 700 + r * np.sin(t)
    if where == "follicle_core":
        r = 60 * np.sqrt(rng.uniform(0, 1, n))
        t = rng.uniform(0, 2 * np.pi, n)
        return 700 + r * np.cos(t), 700 + r * np.sin(t)
    if where == "stroma":
        return rng.uniform(350, 990, n), rng.uniform(10, 990, n)
    return rng.uniform(0, 1000, n), rng.uniform(0, 1000, n)


def main(path):
    rng = np.random.default_rng(20240611)
    rows = []
    for name, n, positive, where in TYPES:
        x, y = place(rng, where, n)
        for i in range(n):
            values = {}
            for m in MARKERS:
                mean = 60.0 if m in positive else 2.0
                values[m] = rng.gamma(4.0, mean / 4.0)
            region = "tumor" if x[i] < 340 else "stroma"
            half = rng.uniform(3, 6)
            rows.append((x[i], y[i], half, values, region, name))
    order = rng.permutation(len(rows))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["CellID", "XMin", "XMax", "YMin", "YMax", *MARKERS, "Region", "TrueType"])
        for k, idx in enumerate(order):
            x, y, half, values, region, name = rows[idx]
            w.writerow([f"cell_{k:04d}", f"{x - half:.2f}", f"{x + half:.2f}", f"{y - half:.2f}",
                        f"{y + half:.2f}", *[f"{values[m]:.3f}" for m in MARKERS], region, name])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "synthetic_1k.csv")
