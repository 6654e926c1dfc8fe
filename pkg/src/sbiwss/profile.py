"""Wall-shear-stress profiles along a wall curve."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Method(str, Enum):
    TRUTH = "truth"
    MRI = "mri"
    SBI = "sbi"


@dataclass
class WssProfile:
    """WSS samples (Pa) at arc-length positions ``s`` (cm) along a wall curve.

    ``flags`` marks samples whose value came from a fallback path (for the
    MRI estimator, probes without any valid voxel data).
    """

    s: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    wss: np.ndarray
    method: Method
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.wss = np.asarray(self.wss, dtype=float)
        if self.flags is None:
            self.flags = np.zeros(len(self.s), dtype=bool)
        if np.any(self.wss < 0):
            raise ValueError("wall shear stress magnitudes must be non-negative")
        if len(self.s) > 1 and np.any(np.diff(self.s) <= 0):
            raise ValueError("arc lengths must be strictly increasing")
        self.method = Method(self.method)

    def __len__(self):
        return len(self.s)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("s,x,y,nx,ny,wss,method\n")
            for s, (x, y), (nx, ny), w in zip(self.s, self.points, self.normals, self.wss):
                fh.write(f"{s:.17g},{x:.17g},{y:.17g},{nx:.17g},{ny:.17g},{w:.17g},{self.method.value}\n")

    @classmethod
    def read_csv(cls, path):
        rows = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1, usecols=range(6)))
        with open(path) as fh:
            fh.readline()
            method = fh.readline().strip().split(",")[-1]
        return cls(rows[:, 0], rows[:, 1:3], rows[:, 3:5], rows[:, 5], Method(method))


@dataclass(frozen=True)
class WallSamples:
    """Points on the wall with their unit normals and arc-length coordinate."""

    s: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    side: str = "top"

    def __len__(self):
        return len(self.s)
