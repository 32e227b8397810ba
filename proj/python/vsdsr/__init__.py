"""Diffusion-guided NeRF super-resolution: python surface over the C++ core."""

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
except ImportError:  # build-tree layout: _core sits next to the package on sys.path
    from _core import *  # noqa: F401,F403
