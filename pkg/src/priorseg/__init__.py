"""Coarse-to-fine multi-organ 3D segmentation with single-model patch refinement.

Submodules are imported explicitly (`from priorseg import volume, unet, ...`)
so the CLI can configure BLAS threading before numpy loads.
"""

__version__ = "0.1.0"
