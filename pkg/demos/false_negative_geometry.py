"""How far do false negatives tilt the anchor's update direction?

The deviation angle phi shrinks as the number eta of false negatives grows,
and with a centroid ten noise widths from the origin it never exceeds a
right angle.

Run: python3 demos/false_negative_geometry.py
"""

from miolab.fn_geometry import GeometryConfig, monte_carlo_phi, symmetric_fn_probability
from miolab.numerics import Rng

print(f"P(symmetric false-negative draw), batch 4, 2 classes of 4: {symmetric_fn_probability(4, 2, 4)}")
print(f"P(symmetric false-negative draw), batch 120, 10 classes of 5000: {symmetric_fn_probability(120, 10, 5000):.3g}")

root = Rng(0)
for eta in (4, 8, 16, 32):
    stats = monte_carlo_phi(GeometryConfig(centroid=(10.0, 0.0), sigma=1.0, eta=eta), 20_000, root.substream(eta))
    print(f"eta={eta:2d}: mean|phi|={stats.mean_abs_phi:.4f} max|phi|={stats.max_abs_phi:.4f} "
          f"cos(phi)>0 in {stats.frac_cos_positive:.2%}")
