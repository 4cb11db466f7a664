"""Constraint-steerable trajectory prediction.

A pairwise-preference scorer maps (history, future) pairs to a conformity
score in (0,1); a conditional denoising diffusion model generates future
trajectories steered by that score.  Pure numpy, desk scale.
"""

__version__ = "0.1.0"
