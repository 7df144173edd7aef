"""Multi-view region-based 6DOF object pose tracking.

A template-based tracker that optimizes a single pose increment in an
object-centered frame over the contour bands of any number of calibrated
views, plus a synthetic rig simulator and benchmark metrics around it.
"""

__version__ = "0.1.0"
