# Homography estimation: exact DLT recovery, then RANSAC digging a planted
# transform out of 50% outliers, scored by corner-transfer error.

import numpy as np

import matchbench as mb
from matchbench.geometry import apply_homography_array

planted = mb.Homography.from_matrix(
    [[0.98, -0.12, 40.0], [0.12, 0.98, -25.0], [1.5e-4, -1e-4, 1.0]]
)
print("Planted homography:")
print(np.round(planted.matrix, 6))

rng = np.random.RandomState(0)
ref = rng.uniform([0, 0], [640, 480], size=(100, 2))
tgt = apply_homography_array(planted, ref)

print("\nDLT on 8 exact correspondences:")
h = mb.dlt_homography(ref[:8], tgt[:8])
err = mb.reprojection_errors(h, ref, tgt)
print(f"  max reprojection error over all 100 points: {err.max():.2e} px")

print("\nNow with noise (sigma 0.5 px) and 100 uniform outliers:")
noisy_tgt = tgt + rng.normal(0, 0.5, tgt.shape)
out_ref = rng.uniform([0, 0], [640, 480], size=(100, 2))
out_tgt = rng.uniform([0, 0], [640, 480], size=(100, 2))
all_ref = np.vstack([ref, out_ref])
all_tgt = np.vstack([noisy_tgt, out_tgt])

res = mb.ransac_homography(all_ref, all_tgt, mb.RansacConfig(seed=7))
print(f"  RANSAC kept {res.inlier_count}/200 correspondences in {res.iterations_run} iterations")
cte = mb.corner_transfer_error(res.homography, planted, (640, 480))
print(f"  corner-transfer error vs planted homography: {cte:.3f} px")

print("\nCorner-transfer error has a clean closed form for simple motions:")
scale = mb.Homography.from_matrix([[1.1, 0, 0], [0, 1.1, 0], [0, 0, 1]])
cte = mb.corner_transfer_error(scale, mb.Homography.identity(), (100, 100))
print(f"  1.1x scale on a 100x100 image: {cte:.4f} px  (= mean of 0, 9.9, 9.9, 9.9*sqrt(2))")
