import numpy as np
import pytest

from depthdeblur.superpixels import SuperpixelMap


def superpixels_from_labels(labels: np.ndarray) -> SuperpixelMap:
    """Build a SuperpixelMap directly from a label array (test scaffolding)."""
    labels = np.asarray(labels, dtype=np.int32)
    n = labels.max() + 1
    regions = [np.nonzero(labels == i) for i in range(n)]
    centroids = np.array(
        [[r[1].mean() + 0.5, r[0].mean() + 0.5] for r in regions]
    )
    return SuperpixelMap(labels, regions, centroids)


@pytest.fixture
def make_superpixels():
    return superpixels_from_labels
