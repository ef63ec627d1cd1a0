"""MAP segmentation of SAR-like intensity images.

Gamma-mixture class densities, an isotropic Potts prior on the 8-connected
grid, exact binary min-cut and alpha-expansion solvers, and three estimators
of the prior's smoothness parameter (least-squares fit, coding method, and
EM with loopy belief propagation).
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
