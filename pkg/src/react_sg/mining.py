import numpy as np


def pairwise_sq_distances(embeddings: np.ndarray) -> np.ndarray:
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def mine_semi_hard(
    embeddings: object,
    labels: list[str] | list[int],
    alpha: float,
) -> list[tuple[int, int, int]]:
    """Online triplet mining over one batch.

    Every anchor-positive pair takes the hardest semi-hard negative, i.e.
    the nearest negative with d(a,p) < d(a,n) < d(a,p) + alpha on squared
    distances. Pairs without one are skipped, so every triplet keeps
    d(a,n) > d(a,p).
    """
    labels_arr = np.asarray(labels)
    if len(set(labels_arr.tolist())) < 2:  # noqa: PLR2004
        return []
    points = np.asarray(embeddings, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    dist = pairwise_sq_distances(points)

    triplets = []
    for anchor in range(len(points)):
        same = labels_arr == labels_arr[anchor]
        negatives = ~same
        positives = np.flatnonzero(same)
        d_anchor = dist[anchor]
        for positive in positives:
            if positive == anchor:
                continue
            d_ap = d_anchor[positive]
            band = negatives & (d_anchor > d_ap) & (d_anchor < d_ap + alpha)
            if not band.any():
                continue
            candidates = np.flatnonzero(band)
            chosen = candidates[np.argmin(d_anchor[candidates])]
            triplets.append((anchor, int(positive), int(chosen)))
    return triplets
