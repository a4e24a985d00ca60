# Mechanics of mutual nearest neighbor matching with the bidirectional
# ratio test, shown on tiny hand-made descriptor sets.

import numpy as np

from matchbench.features import DescriptorMatrix, Metric, distance
from matchbench.matching import MethodKind, effective_thresholds, match_mnns_brt, nearest_two

print("Two tiny float descriptor sets:")
a = DescriptorMatrix.float32(np.array([[0, 0], [10, 0]], np.float32))
b = DescriptorMatrix.float32(np.array([[0, 1], [10, 1], [0, 2]], np.float32))
print("  A rows:", a.data.tolist())
print("  B rows:", b.data.tolist())

print("\nNearest-two search for A[0] against B:")
idx, d1, d2 = nearest_two(a.row(0), b, Metric.L2)
print(f"  nearest index {idx}, distance {d1}, second distance {d2}, ratio {d1 / d2}")

print("\nMatch sets as the ratio threshold tightens:")
for r in (1.0, 0.5, 0.4):
    ms = match_mnns_brt(a, b, r, Metric.L2)
    print(f"  r={r}: pairs {ms.pairs()}")
print("  (A[0]'s ratio is exactly 0.5, so it survives r=0.5 but not r=0.4)")

print("\nHamming distance over packed binary rows:")
pa = DescriptorMatrix.packed_binary(np.array([[0xFF, 0x00]], np.uint8), 16)
pb = DescriptorMatrix.packed_binary(np.array([[0x0F, 0x00]], np.uint8), 16)
print("  popcount(0xFF ^ 0x0F) =", distance(pa.row(0), pb.row(0), Metric.HAMMING))

print("\nPer-method sweep-threshold semantics:")
for t in (0.1, 0.3, 0.5, 1.0):
    ratio = effective_thresholds(MethodKind.RATIO_TEST, t)
    conf = effective_thresholds(MethodKind.CONFIDENCE_FILTER, t)
    dfm = effective_thresholds(MethodKind.DFM_SCHEDULE, t)
    print(
        f"  t={t:3.1f}: ratio={ratio.ratio:4.2f}  confidence cutoff={conf.confidence_cutoff:4.2f}"
        f"  layer schedule={list(dfm.schedule)}"
    )
