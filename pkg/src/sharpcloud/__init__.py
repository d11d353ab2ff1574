"""Edge-aware point cloud consolidation.

Scan meshes into noisy point clouds, train a patch-based consolidation
network with an edge-aware joint loss, and use it to densify point clouds
while flagging and sharpening points near annotated edges.
"""

__version__ = "0.1.0"
