"""Walkthrough: dimensionality reductions and the classical baselines.

Reduces a synthetic scene with PCA and with band-window averaging (S-MSI),
clusters the full and reduced pixel spectra with k-means and a Gaussian
mixture, and prints the comparison the way the experiment harness does.
"""

from hsiseg import (evaluate_labelings, generate_cube, gmm_em, kmeans,
                    normalize, pca_reduce, smsi_reduce)

cube = normalize(generate_cube(width=28, height=28, bands=100, classes=4,
                               seed=13, noise=0.04))
truth = cube.labels
print(f"scene: {cube.width}x{cube.height}x{cube.bands}, 4 classes\n")

variants = {
    "full spectrum": cube,
    "PCA-25": pca_reduce(cube, dims=25),
    "S-MSI-25": smsi_reduce(cube, target_bands=25),
}

print(f"{'variant':<16} {'bands':>5} {'method':<8} {'NMI':>6} {'ARS':>6}")
for name, variant in variants.items():
    points = variant.pixel_matrix()
    for method, fit in (("k-means", lambda p: kmeans(p, 4, seed=0)[1]),
                        ("GMM", lambda p: gmm_em(p, 4, seed=0)[1])):
        labels = fit(points).reshape(truth.shape) + 1
        scores = evaluate_labelings(labels, truth)
        print(f"{name:<16} {variant.bands:>5} {method:<8} "
              f"{scores['nmi']:>6.3f} {scores['ars']:>6.3f}")

# S-MSI window bookkeeping: 100 bands -> 25 windows of width 4
from hsiseg import smsi_windows
bounds = smsi_windows(100, 25)
widths = sorted({hi - lo for lo, hi in bounds})
print(f"\nS-MSI windows for 100 -> 25 bands: {len(bounds)} windows, widths {widths}")
bounds = smsi_windows(103, 25)
print(f"for 103 bands the last window absorbs the leftovers: "
      f"widths {[hi - lo for lo, hi in bounds[:3]]}... last={bounds[-1][1] - bounds[-1][0]}")
