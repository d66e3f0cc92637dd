"""Two-stage GAN pipeline for thick-cloud removal in satellite imagery.

Stage 1 translates single-channel SAR patches to RGB optical patches; stage 2
removes synthetic thick clouds from optical patches conditioned on the stage-1
translation.  Everything runs on plain numpy with explicit, seedable RNG.
"""

__version__ = "0.1.0"
