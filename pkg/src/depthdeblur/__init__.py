"""Joint depth-map completion and multi-frame deblurring.

The scene is modeled as superpixels carrying 3D planes grouped into a
small number of rigidly moving objects; an alternating minimizer couples
a discrete-continuous scene solver with a primal-dual image restorer.
"""

__version__ = "0.1.0"
