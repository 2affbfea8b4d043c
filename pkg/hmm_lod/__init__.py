"""Two-level multiscale (HMM/LOD) finite element solver and study harness."""

__version__ = "0.1.0"
