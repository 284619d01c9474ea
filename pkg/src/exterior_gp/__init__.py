"""Exterior sound field interpolation with a spherical-wave kernel.

The kernel sums outgoing spherical wave functions weighted by a trainable
radial attenuation; see :mod:`exterior_gp.kernel_gpr`. Baselines, scene
simulation, metrics and the experiment driver live in sibling modules.
"""

__version__ = "0.1.0"
