"""Numerical workbench for capillary convex bodies with prescribed W_k curvature.

Submodules: ``symfun`` (symmetric functions), ``capdomain`` (cap grid and
operators), ``solver`` (Newton and continuation), ``reconstruct`` (embedding
and radii), ``counterex`` (the non-even obstruction), ``cli``.
"""

__version__ = "0.1.0"
