"""Wall-shear-stress reconstruction from synthetic MRI: direct voxel
postprocessing versus simulation-based imaging."""

__version__ = "0.1.0"
