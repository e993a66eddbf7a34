"""SLIC superpixels and the boundary/adjacency structure of the label map."""

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SuperpixelMap:
    """Connected label regions partitioning the image."""

    labels: np.ndarray  # (H, W) int32
    regions: list  # per label: (rows, cols) index arrays
    centroids: np.ndarray  # (S, 2) centered (x, y) coordinates
    energies: list = field(default_factory=list)  # clustering energy per iteration

    @property
    def n_labels(self) -> int:
        return len(self.regions)

    @property
    def shape(self):
        return self.labels.shape


@dataclass
class BoundarySet:
    """Boundary pixels between each 4-adjacent superpixel pair.

    pairs maps (i, j) with i < j to (rows, cols) of every pixel that has a
    4-neighbor across the boundary (both sides recorded).
    """

    pairs: dict
    neighbors: list  # per label: sorted list of adjacent labels

    def boundary_length(self, i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        return len(self.pairs[key][0]) if key in self.pairs else 0


def _to_lab(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return cv2.cvtColor(img.astype(np.float32), cv2.COLOR_RGB2LAB).astype(np.float64)


def _init_centers(lab: np.ndarray, target: int):
    h, w = lab.shape[:2]
    nx0 = np.sqrt(target * w / h)
    best = None
    for nx in {max(1, int(np.floor(nx0))), max(1, int(np.ceil(nx0)))}:
        ny = max(1, int(round(target / nx)))
        score = (abs(nx * ny - target), -nx)  # tie-break toward column splits
        if best is None or score < best[0]:
            best = (score, nx, ny)
    nx, ny = best[1], best[2]
    cx = (np.arange(nx) + 0.5) * w / nx
    cy = (np.arange(ny) + 0.5) * h / ny
    gx, gy = np.meshgrid(cx, cy)
    centers_xy = np.stack([gx.ravel(), gy.ravel()], axis=1)

    # move each seed to the lowest-gradient position in its 3x3 neighborhood
    gmag = np.abs(np.gradient(lab[:, :, 0], axis=0)) + np.abs(
        np.gradient(lab[:, :, 0], axis=1)
    )
    moved = []
    for x, y in centers_xy:
        c = int(np.clip(round(x - 0.5), 1, w - 2)) if w > 2 else int(np.clip(round(x - 0.5), 0, w - 1))
        r = int(np.clip(round(y - 0.5), 1, h - 2)) if h > 2 else int(np.clip(round(y - 0.5), 0, h - 1))
        if 0 < r < h - 1 and 0 < c < w - 1:
            patch = gmag[r - 1 : r + 2, c - 1 : c + 2]
            dr, dc = np.unravel_index(np.argmin(patch), patch.shape)
            r, c = r + dr - 1, c + dc - 1
        moved.append((c + 0.5, r + 0.5))
    return np.array(moved)


def slic_segment(
    img: np.ndarray,
    target_count: int,
    compactness: float = 10.0,
    iters: int = 10,
) -> SuperpixelMap:
    """Cluster pixels in (L, a, b, x, y) with spacing-normalized distance.

    The squared distance is d_lab^2 + (compactness / S)^2 * d_xy^2 with
    S = sqrt(W*H / target_count).  Every pixel's current cluster stays a
    candidate in the assignment step, so the tracked clustering energy is
    non-increasing across iterations.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    lab = _to_lab(img)
    h, w = lab.shape[:2]
    spacing = np.sqrt(w * h / target_count)
    ratio2 = (compactness / spacing) ** 2

    centers_xy = _init_centers(lab, target_count)
    k = len(centers_xy)
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)

    # initial centers' lab values sampled at the seed pixel
    rows = (centers_xy[:, 1] - 0.5).astype(int)
    cols = (centers_xy[:, 0] - 0.5).astype(int)
    centers_lab = lab[rows, cols].copy()

    labels = np.zeros((h, w), dtype=np.int32)
    dist = np.full((h, w), np.inf)
    first = True
    energies = []
    for _ in range(iters):
        if first:
            dist.fill(np.inf)
        else:
            # keep the current assignment as a candidate for monotonicity
            dlab = lab - centers_lab[labels]
            dx = xs - centers_xy[labels, 0]
            dy = ys - centers_xy[labels, 1]
            dist = np.einsum("ijk,ijk->ij", dlab, dlab) + ratio2 * (dx * dx + dy * dy)
        for c in range(k):
            x0 = int(max(0, np.floor(centers_xy[c, 0] - spacing)))
            x1 = int(min(w, np.ceil(centers_xy[c, 0] + spacing)))
            y0 = int(max(0, np.floor(centers_xy[c, 1] - spacing)))
            y1 = int(min(h, np.ceil(centers_xy[c, 1] + spacing)))
            if first:
                x0, x1, y0, y1 = 0, w, 0, h
            dlab = lab[y0:y1, x0:x1] - centers_lab[c]
            d = (
                np.einsum("ijk,ijk->ij", dlab, dlab)
                + ratio2
                * ((xs[y0:y1, x0:x1] - centers_xy[c, 0]) ** 2 + (ys[y0:y1, x0:x1] - centers_xy[c, 1]) ** 2)
            )
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            labels[y0:y1, x0:x1][better] = c
        first = False
        energies.append(float(dist.sum()))

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(float)
        nonzero = counts > 0
        for comp in range(3):
            sums = np.bincount(flat, weights=lab[:, :, comp].ravel(), minlength=k)
            centers_lab[nonzero, comp] = sums[nonzero] / counts[nonzero]
        sx = np.bincount(flat, weights=xs.ravel(), minlength=k)
        sy = np.bincount(flat, weights=ys.ravel(), minlength=k)
        centers_xy[nonzero, 0] = sx[nonzero] / counts[nonzero]
        centers_xy[nonzero, 1] = sy[nonzero] / counts[nonzero]

    labels = _enforce_connectivity(labels, k)
    labels = _merge_fragments(labels, min_size=max(9, int(spacing * spacing / 8)))
    return _finalize(labels, energies)


def _enforce_connectivity(labels: np.ndarray, k: int) -> np.ndarray:
    """Keep each label's largest component; relabel orphans to the dominant neighbor."""
    h, w = labels.shape
    comp_map = np.full((h, w), -1, dtype=np.int64)
    final = []  # True if the component keeps its identity
    n_comp = 0
    for c in range(k):
        mask = labels == c
        if not mask.any():
            continue
        comps, n = ndimage.label(mask, structure=FOUR_CONN)
        sizes = np.bincount(comps.ravel())[1:]
        largest = int(np.argmax(sizes)) + 1
        for ci in range(1, n + 1):
            comp_map[comps == ci] = n_comp
            final.append(ci == largest)
            n_comp += 1
    out = labels.copy()
    pending = [ci for ci in range(n_comp) if not final[ci]]
    while pending:
        still = []
        for ci in pending:
            mask = comp_map == ci
            grown = ndimage.binary_dilation(mask, structure=FOUR_CONN) & ~mask
            # vote among neighbor pixels belonging to finalized components
            ok = np.array([final[c2] for c2 in comp_map[grown]], dtype=bool)
            if ok.any():
                vals, counts = np.unique(out[grown][ok], return_counts=True)
                out[mask] = vals[np.argmax(counts)]
                final[ci] = True
            else:
                still.append(ci)
        if still and len(still) == len(pending):  # ring of orphans; absorb one
            ci = still.pop(0)
            mask = comp_map == ci
            grown = ndimage.binary_dilation(mask, structure=FOUR_CONN) & ~mask
            vals, counts = np.unique(out[grown], return_counts=True)
            out[mask] = vals[np.argmax(counts)]
            final[ci] = True
        pending = still
    return out


def _merge_fragments(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge regions smaller than min_size into the neighbor they touch most."""
    out = labels.copy()
    while True:
        vals, counts = np.unique(out, return_counts=True)
        if len(vals) <= 1:
            break
        small = vals[counts < min_size]
        if len(small) == 0:
            break
        c = small[0]
        mask = out == c
        grown = ndimage.binary_dilation(mask, structure=FOUR_CONN) & ~mask
        nvals, ncounts = np.unique(out[grown], return_counts=True)
        keep = nvals != c
        out[mask] = nvals[keep][np.argmax(ncounts[keep])]
    return out


def _finalize(labels: np.ndarray, energies) -> SuperpixelMap:
    vals = np.unique(labels)
    remap = np.zeros(vals.max() + 1, dtype=np.int32)
    remap[vals] = np.arange(len(vals), dtype=np.int32)
    labels = remap[labels]
    h, w = labels.shape
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    regions = []
    centroids = np.zeros((len(vals), 2))
    order = np.argsort(labels.ravel(), kind="stable")
    flat = labels.ravel()[order]
    rows_all, cols_all = np.unravel_index(order, labels.shape)
    bounds = np.searchsorted(flat, np.arange(len(vals) + 1))
    for i in range(len(vals)):
        rows = rows_all[bounds[i] : bounds[i + 1]]
        cols = cols_all[bounds[i] : bounds[i + 1]]
        regions.append((rows, cols))
        centroids[i] = [cols.mean() + 0.5, rows.mean() + 0.5]
    return SuperpixelMap(labels, regions, centroids, list(energies))


def extract_boundaries(sp: SuperpixelMap) -> BoundarySet:
    """Collect pixels whose 4-neighbor carries a different label."""
    labels = sp.labels
    h, w = labels.shape
    pair_pixels = {}

    # horizontal neighbors
    rows_list = []
    cols_list = []
    a_list = []
    b_list = []
    la, lb = labels[:, :-1], labels[:, 1:]
    diff = la != lb
    r, c = np.nonzero(diff)
    rows_list += [r, r]
    cols_list += [c, c + 1]
    a_list += [la[diff], la[diff]]
    b_list += [lb[diff], lb[diff]]
    # vertical neighbors
    la, lb = labels[:-1, :], labels[1:, :]
    diff = la != lb
    r, c = np.nonzero(diff)
    rows_list += [r, r + 1]
    cols_list += [c, c]
    a_list += [la[diff], la[diff]]
    b_list += [lb[diff], lb[diff]]

    if rows_list:
        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        a = np.concatenate(a_list)
        b = np.concatenate(b_list)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        # deduplicate (pair, pixel) triplets: a pixel enters a pair once
        key = ((lo.astype(np.int64) * sp.n_labels + hi) * h + rows) * w + cols
        _, idx = np.unique(key, return_index=True)
        for i in idx:
            pair_pixels.setdefault((int(lo[i]), int(hi[i])), ([], []))
            pair_pixels[(int(lo[i]), int(hi[i]))][0].append(int(rows[i]))
            pair_pixels[(int(lo[i]), int(hi[i]))][1].append(int(cols[i]))

    pairs = {
        k: (np.array(v[0]), np.array(v[1])) for k, v in sorted(pair_pixels.items())
    }
    neighbors = [[] for _ in range(sp.n_labels)]
    for i, j in pairs:
        neighbors[i].append(j)
        neighbors[j].append(i)
    return BoundarySet(pairs, [sorted(n) for n in neighbors])
