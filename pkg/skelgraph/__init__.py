"""skelgraph - sparse topological skeleton graphs of 3D free space for global planning."""

__version__ = "0.3.0"
__author__ = "oduvan"
__email__ = "a.lyabah@checkio.org"
__description__ = "Frontier-driven skeleton graph generation over point clouds and occupancy grids, with A* planning"
