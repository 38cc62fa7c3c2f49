#!/usr/bin/env python3
"""Generates the surrogate benchmark CSVs in this directory.

The canonical UCI files are not redistributed here; these surrogates are
drawn from class-conditional Gaussian copulas fitted to the published
summary statistics (class priors, per-class feature means/stds, and the
dominant within-class correlations) of the corresponding tasks, so
median-binarized rule behavior is comparable. Regenerate with:

    python3 make_surrogates.py
"""

import numpy as np


def copula_samples(rng, n, means, stds, corr):
    dim = len(means)
    cov = np.outer(stds, stds) * corr
    # Nearest PSD via eigenvalue clipping.
    w, v = np.linalg.eigh(cov)
    cov = (v * np.clip(w, 1e-6, None)) @ v.T
    return rng.multivariate_normal(means, cov, size=n)


def make_diabetes(rng):
    cols = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age"]
    corr = np.array([
        # preg  plas  pres  skin  insu  mass  pedi  age
        [1.00, 0.10, 0.14, 0.08, 0.05, 0.02, -0.03, 0.54],
        [0.10, 1.00, 0.15, 0.06, 0.33, 0.14, 0.10, 0.26],
        [0.14, 0.15, 1.00, 0.21, 0.09, 0.28, 0.04, 0.24],
        [0.08, 0.06, 0.21, 1.00, 0.44, 0.39, 0.18, 0.11],
        [0.05, 0.33, 0.09, 0.44, 1.00, 0.20, 0.19, 0.04],
        [0.02, 0.14, 0.28, 0.39, 0.20, 1.00, 0.14, 0.04],
        [-0.03, 0.10, 0.04, 0.18, 0.19, 0.14, 1.00, 0.03],
        [0.54, 0.26, 0.24, 0.11, 0.04, 0.04, 0.03, 1.00],
    ])
    neg_mean = [3.3, 110.0, 68.2, 19.7, 68.8, 30.3, 0.43, 31.2]
    neg_std = [3.0, 24.7, 18.0, 14.9, 98.9, 7.7, 0.30, 11.7]
    pos_mean = [4.9, 141.3, 70.8, 22.2, 100.3, 35.1, 0.55, 37.1]
    pos_std = [3.7, 31.9, 21.5, 17.7, 138.7, 7.3, 0.37, 11.0]

    neg = copula_samples(rng, 500, neg_mean, np.array(neg_std), corr)
    pos = copula_samples(rng, 268, pos_mean, np.array(pos_std), corr)
    rows = []
    for block, label in ((neg, 0), (pos, 1)):
        for r in block:
            preg = int(np.clip(round(r[0]), 0, 17))
            plas = int(np.clip(round(r[1]), 44, 199))
            pres = int(np.clip(round(r[2]), 24, 122))
            skin = int(np.clip(round(r[3]), 0, 99))
            insu = int(np.clip(round(r[4]), 0, 846))
            mass = float(np.clip(round(r[5], 1), 18.2, 67.1))
            pedi = float(np.clip(round(r[6], 3), 0.078, 2.42))
            age = int(np.clip(round(r[7]), 21, 81))
            rows.append([preg, plas, pres, skin, insu, mass, pedi, age, label])
    order = rng.permutation(len(rows))
    with open("diabetes_surrogate.csv", "w") as f:
        f.write(",".join(cols) + ",outcome\n")
        for i in order:
            f.write(",".join(str(v) for v in rows[i]) + "\n")
    return rows


def make_breast_cancer(rng):
    cols = [
        "clump_thickness", "cell_size_uniformity", "cell_shape_uniformity",
        "marginal_adhesion", "single_epi_cell_size", "bare_nuclei",
        "bland_chromatin", "normal_nucleoli", "mitoses",
    ]
    corr_b = np.full((9, 9), 0.35)
    np.fill_diagonal(corr_b, 1.0)
    corr_b[1, 2] = corr_b[2, 1] = 0.75
    corr_m = np.full((9, 9), 0.45)
    np.fill_diagonal(corr_m, 1.0)
    corr_m[1, 2] = corr_m[2, 1] = 0.80

    ben_mean = [2.96, 1.33, 1.44, 1.36, 2.12, 1.35, 2.10, 1.29, 1.06]
    ben_std = [1.67, 0.91, 1.00, 0.92, 0.92, 1.18, 1.08, 1.06, 0.50]
    mal_mean = [7.19, 6.57, 6.56, 5.55, 5.30, 7.63, 5.98, 5.86, 2.59]
    mal_std = [2.43, 2.72, 2.57, 3.21, 2.45, 3.10, 2.27, 3.35, 2.56]

    ben = copula_samples(rng, 458, ben_mean, np.array(ben_std), corr_b)
    mal = copula_samples(rng, 241, mal_mean, np.array(mal_std), corr_m)
    rows = []
    for block, label in ((ben, "benign"), (mal, "malignant")):
        for r in block:
            vals = [int(np.clip(round(v), 1, 10)) for v in r]
            rows.append(vals + [label])
    order = rng.permutation(len(rows))
    # A handful of missing bare_nuclei cells, as in the canonical file.
    missing = set(rng.choice(len(rows), size=16, replace=False).tolist())
    with open("breast_cancer_surrogate.csv", "w") as f:
        f.write(",".join(cols) + ",class\n")
        for rank, i in enumerate(order):
            row = [str(v) for v in rows[i]]
            if i in missing:
                row[5] = "?"
            f.write(",".join(row) + "\n")
    return rows


def main():
    rng = np.random.default_rng(20250809)
    dia = make_diabetes(rng)
    bc = make_breast_cancer(rng)

    # Quick sanity: majority rates and the headline median rules.
    dia = np.array(dia, dtype=float)
    y = dia[:, 8]
    plas, age = dia[:, 1], dia[:, 7]
    rule = (plas > np.median(plas)) & (age > np.median(age))
    acc = np.mean(rule == (y == 1))
    print(f"diabetes: majority={max(y.mean(), 1 - y.mean()):.3f} "
          f"plas&age rule acc={acc:.3f}")

    labels = np.array([r[9] == "malignant" for r in bc])
    size = np.array([r[1] for r in bc], dtype=float)
    shape = np.array([r[2] for r in bc], dtype=float)
    bare = np.array([r[5] for r in bc], dtype=float)
    rule = (size > np.median(size)) & (shape > np.median(shape)) & (bare > np.median(bare))
    acc = np.mean(rule == labels)
    print(f"breast-cancer: majority={max(labels.mean(), 1 - labels.mean()):.3f} "
          f"size&shape&bare rule acc={acc:.3f}")


if __name__ == "__main__":
    main()
