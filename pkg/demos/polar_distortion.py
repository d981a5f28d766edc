"""
How much do polar coordinates distort distances?
================================================

Pairwise distances measured in (r, theta, z) differ from the Cartesian ones.
The gap is summarised per plane as the spread of the distance ratio.
"""

from polarscan.analysis import annulus_cloud, delta_l2_distortion, plane_distortion
from polarscan.core import GridSpec

###############################################################################
# Points uniform over an annulus, like one ground sweep.

pts = annulus_cloud(20000, 2.0, 50.0, -2.0, 4.0, seed=0)
print("mean |d_cart - d_polar| =", round(delta_l2_distortion(pts, 1000), 3))

###############################################################################
# In voxel index units every voxel measures one unit along each axis.

g = GridSpec.waymo()
rep = plane_distortion(pts, 1000, seed=0, units=(g.dr, g.dtheta, g.dz))
for row in rep.rows():
    print(f"{row['plane']:>8}: std {row['std']:10.4g}  share {row['percent']:5.1f}%")

###############################################################################
# Raw metres and radians instead.

rep = plane_distortion(pts, 1000, seed=0)
for row in rep.rows():
    print(f"{row['plane']:>8}: std {row['std']:10.4g}  share {row['percent']:5.1f}%")
