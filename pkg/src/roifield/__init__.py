"""Radiance-field ROI editing engine.

Renders implicit 3D scenes, restricts synthesis to a user-placed box,
optimizes a cloned field against an image-text scorer, and blends the
original and generated fields volumetrically.
"""

__version__ = "0.1.0"
