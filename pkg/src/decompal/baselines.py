"""Comparison sampling strategies: RAND, UNCERT, DIVERS and BADGE.

Region descriptors for the diversity methods are deterministic surrogates
built from the prediction itself (mean class probabilities plus pseudo-label
histogram) rather than deep-backbone features; the selection algorithms on
top of them are unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ImageRecord, PredictionField, Region, AnnotationState, regions_overlap
from .integral import build_integral, feasible_origin_mask, window_argmax


# ---------------------------------------------------------------------------
# Pixel-level uncertainty maps
# ---------------------------------------------------------------------------


def entropy_map(pred: PredictionField) -> np.ndarray:
    """Shannon entropy (natural log) of the full probability map."""
    if pred.full_probs is None:
        raise ValueError("entropy requires full class probabilities")
    p = pred.full_probs
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def least_confidence_map(pred: PredictionField) -> np.ndarray:
    """One minus the retained maximum probability."""
    return 1.0 - pred.max_prob


# ---------------------------------------------------------------------------
# UNCERT: most uncertain images, then greedy NMS over window means
# ---------------------------------------------------------------------------


def uncert_select_images(
    scores: Mapping[int, float], n_image: int, state: AnnotationState
) -> list[int]:
    """Images with highest mean uncertainty, honoring the loop-restart rule.

    Kept as an independent implementation of the restart behavior so the two
    image-selection paths can be cross-checked against each other.
    """
    if not scores:
        raise ValueError("image pool is empty")
    if n_image < 1:
        raise ValueError("n_image must be >= 1")
    order = [i for i, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]
    picked: list[int] = []
    picked_set: set[int] = set()
    while len(picked) < n_image:
        eligible = [
            i
            for i in order
            if i not in state.loop_visited and i not in picked_set
        ]
        if not eligible:
            state.loop_visited.clear()
            state.loop_visited.update(picked_set)
            eligible = [i for i in order if i not in picked_set]
            if not eligible:
                break
        for image_id in eligible[: n_image - len(picked)]:
            picked.append(image_id)
            picked_set.add(image_id)
            state.loop_visited.add(image_id)
    return picked


def uncert_select_regions(
    umap: np.ndarray,
    side: int,
    n_region: int,
    excluded: Sequence[Region],
    *,
    image_id: int,
    cycle: int = 0,
) -> list[Region]:
    """Greedy non-maximum suppression over stride-1 window means.

    Repeatedly takes the feasible origin with the highest window mean,
    suppressing overlap with annotated and already picked regions, until the
    budget or the image is exhausted.  Ties break by smallest (z, y, x).
    Accepts a 2-D map or, for volumes, a 3-D map scanned slice by slice.
    """
    umap = np.asarray(umap)
    picked: list[Region] = []
    if umap.ndim == 2:
        table = build_integral(umap)
        for _ in range(n_region):
            hit = window_argmax(table, side, list(excluded) + picked)
            if hit is None:
                break
            (y, x), _ = hit
            picked.append(Region.square(image_id, y, x, side, cycle=cycle))
        return picked
    if umap.ndim != 3:
        raise ValueError("uncertainty map must be 2-D or 3-D")
    tables = [build_integral(umap[z]) for z in range(umap.shape[0])]
    for _ in range(n_region):
        best = None
        for z, table in enumerate(tables):
            on_slice = [r for r in list(excluded) + picked if r.z == z]
            hit = window_argmax(table, side, on_slice)
            if hit is None:
                continue
            (y, x), value = hit
            if best is None or value > best[0]:
                best = (value, z, y, x)
        if best is None:
            break
        _, z, y, x = best
        picked.append(Region.square(image_id, y, x, side, z=z, cycle=cycle))
    return picked


def uncert_select_rois(
    uncertainty: np.ndarray,
    n_region: int,
    excluded: Sequence[Region],
    *,
    image_id: int,
    cycle: int = 0,
) -> list[Region]:
    """Most uncertain unannotated ROIs, ties by lowest index."""
    taken = {r.roi_index for r in excluded}
    order = sorted(
        (j for j in range(len(uncertainty)) if j not in taken),
        key=lambda j: (-float(uncertainty[j]), j),
    )
    return [Region.roi(image_id, j, cycle=cycle) for j in order[:n_region]]


# ---------------------------------------------------------------------------
# Region descriptors for the diversity strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """A pooled candidate region with its surrogate descriptor.

    ``feature`` concatenates the mean per-class probability over the region
    with its normalized pseudo-label histogram (length 2C); ``discrepancy``
    is the pixel-averaged gap between probabilities and one-hot pseudo-labels
    used to build gradient embeddings.
    """

    region: Region
    uncertainty: float
    feature: np.ndarray
    discrepancy: np.ndarray


def _region_slices(pred: PredictionField, region: Region):
    if region.is_roi:
        sel = slice(region.roi_index, region.roi_index + 1)
        return pred.pseudo_labels[sel], pred.full_probs[sel]
    if region.z is not None:
        win = (
            region.z,
            slice(region.y, region.y + region.side),
            slice(region.x, region.x + region.side),
        )
    else:
        win = (
            slice(region.y, region.y + region.side),
            slice(region.x, region.x + region.side),
        )
    return pred.pseudo_labels[win], pred.full_probs[win]


def region_feature(pred: PredictionField, region: Region, n_classes: int) -> np.ndarray:
    """Mean class probabilities ++ normalized pseudo-label histogram."""
    if pred.full_probs is None:
        raise ValueError("region features require full class probabilities")
    labels, probs = _region_slices(pred, region)
    mean_probs = probs.reshape(-1, n_classes).mean(axis=0)
    hist = np.bincount(labels.ravel(), minlength=n_classes + 1)[1 : n_classes + 1]
    return np.concatenate([mean_probs, hist / hist.sum()])


def gradient_embedding(candidate: Candidate) -> np.ndarray:
    """Loss-gradient surrogate: discrepancy outer feature, flattened (2C*C)."""
    return np.outer(candidate.discrepancy, candidate.feature).ravel()


def make_candidate(
    pred: PredictionField, region: Region, umap: np.ndarray, n_classes: int
) -> Candidate:
    feature = region_feature(pred, region, n_classes)
    # Histogram half is exactly the pixel-mean of one-hot pseudo-labels.
    discrepancy = feature[:n_classes] - feature[n_classes:]
    if region.is_roi:
        unc = float(umap[region.roi_index])
    elif region.z is not None:
        unc = float(
            umap[
                region.z,
                region.y : region.y + region.side,
                region.x : region.x + region.side,
            ].mean()
        )
    else:
        unc = float(
            umap[
                region.y : region.y + region.side,
                region.x : region.x + region.side,
            ].mean()
        )
    return Candidate(
        region=region, uncertainty=unc, feature=feature, discrepancy=discrepancy
    )


def divers_candidate_pool(
    entries: Sequence[tuple[ImageRecord, PredictionField, np.ndarray]],
    side: int,
    factor: int,
    n_region: int,
    state: AnnotationState,
    cycle: int = 0,
) -> list[Candidate]:
    """Per image, the ``factor * n_region`` most uncertain disjoint regions.

    NMS runs per image first, then candidates pool across images; crowded
    images simply contribute fewer candidates.
    """
    if factor < 1:
        raise ValueError("candidate factor must be >= 1")
    pool: list[Candidate] = []
    for image, pred, umap in entries:
        n_classes = pred.full_probs.shape[-1] if pred.full_probs is not None else 0
        excluded = state.regions_for(image.image_id)
        if image.mode == "roi":
            regions = uncert_select_rois(
                umap,
                factor * n_region,
                excluded,
                image_id=image.image_id,
                cycle=cycle,
            )
        else:
            regions = uncert_select_regions(
                umap,
                side,
                factor * n_region,
                excluded,
                image_id=image.image_id,
                cycle=cycle,
            )
        pool.extend(make_candidate(pred, r, umap, n_classes) for r in regions)
    return pool


# ---------------------------------------------------------------------------
# k-means (Lloyd, k-means++ seeding) and the diversity selectors
# ---------------------------------------------------------------------------


def _sq_dists(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center
    return np.einsum("ij,ij->i", diff, diff)


def kmeans_plus_plus_init(
    features: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of k seeding points, squared-distance-proportional sampling."""
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(features, features[chosen[0]])
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            remaining = sorted(set(range(n)) - set(chosen))
            idx = remaining[int(rng.integers(len(remaining)))]
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(features, features[idx]))
    return np.asarray(chosen)


def kmeans(
    features: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iteration with k-means++ seeding; deterministic given the rng.

    Stops after ``max_iter`` rounds or when the largest center shift drops
    below ``tol``.  Empty clusters keep their previous center.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    centers = features[kmeans_plus_plus_init(features, k, rng)].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        shift = 0.0
        for j in range(k):
            members = features[labels == j]
            if len(members) == 0:
                continue
            new_center = members.mean(axis=0)
            shift = max(shift, float(np.linalg.norm(new_center - centers[j])))
            centers[j] = new_center
        if shift < tol:
            break
    return labels, centers


def divers_cluster_select(
    candidates: Sequence[Candidate], budget: int, rng: np.random.Generator
) -> list[Candidate]:
    """k-means with k=budget; the most uncertain candidate of each cluster."""
    if budget > len(candidates):
        raise ValueError("budget exceeds candidate pool")
    features = np.stack([c.feature for c in candidates])
    labels, _ = kmeans(features, budget, rng)
    selected: list[Candidate] = []
    for j in range(budget):
        members = [c for c, lab in zip(candidates, labels) if lab == j]
        if not members:
            continue
        members.sort(key=lambda c: (-c.uncertainty, c.region.sort_key()))
        selected.append(members[0])
    selected.sort(key=lambda c: c.region.sort_key())
    return selected


def divers_coreset_select(
    candidates: Sequence[Candidate], budget: int
) -> list[Candidate]:
    """Greedy k-center over region features.

    Seeds with the most uncertain candidate, then repeatedly adds the
    candidate with the largest minimal Euclidean distance to the selected
    set; ties break by smallest region key.
    """
    if budget > len(candidates):
        raise ValueError("budget exceeds candidate pool")
    if budget < 1:
        return []
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].uncertainty, candidates[i].region.sort_key()),
    )
    features = np.stack([c.feature for c in candidates])
    chosen = [order[0]]
    chosen_set = {order[0]}
    min_d2 = _sq_dists(features, features[chosen[0]])
    while len(chosen) < budget:
        best = None
        for i in range(len(candidates)):
            if i in chosen_set:
                continue
            key = (-min_d2[i], candidates[i].region.sort_key())
            if best is None or key < best[0]:
                best = (key, i)
        assert best is not None
        chosen.append(best[1])
        chosen_set.add(best[1])
        min_d2 = np.minimum(min_d2, _sq_dists(features, features[best[1]]))
    picked = [candidates[i] for i in chosen]
    picked.sort(key=lambda c: c.region.sort_key())
    return picked


def badge_select(
    candidates: Sequence[Candidate], budget: int, rng: np.random.Generator
) -> list[Candidate]:
    """k-means++ sampling over gradient embeddings.

    The first pick is uniform among the maximal-norm embeddings; subsequent
    picks are drawn with probability proportional to the squared distance to
    the already selected set.  With all-zero embeddings (exactly one-hot
    predictions) this degenerates to uniform random selection.
    """
    if budget > len(candidates):
        raise ValueError("budget exceeds candidate pool")
    if budget < 1:
        return []
    emb = np.stack([gradient_embedding(c) for c in candidates])
    norms = np.einsum("ij,ij->i", emb, emb)
    maximal = np.flatnonzero(norms == norms.max())
    chosen = [int(maximal[int(rng.integers(len(maximal)))])]
    d2 = _sq_dists(emb, emb[chosen[0]])
    while len(chosen) < budget:
        total = float(d2.sum())
        if total <= 0.0:
            remaining = sorted(set(range(len(candidates))) - set(chosen))
            idx = remaining[int(rng.integers(len(remaining)))]
        else:
            idx = int(rng.choice(len(candidates), p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(emb, emb[idx]))
    picked = [candidates[i] for i in chosen]
    picked.sort(key=lambda c: c.region.sort_key())
    return picked


# ---------------------------------------------------------------------------
# RAND
# ---------------------------------------------------------------------------


def rand_select_images(
    image_ids: Sequence[int],
    n_image: int,
    rng: np.random.Generator,
    state: AnnotationState,
) -> list[int]:
    """Uniform draw over unvisited images, with the same loop-restart rule."""
    if not image_ids:
        raise ValueError("image pool is empty")
    ids = sorted(image_ids)
    picked: list[int] = []
    picked_set: set[int] = set()
    while len(picked) < n_image:
        eligible = [
            i for i in ids if i not in state.loop_visited and i not in picked_set
        ]
        if not eligible:
            state.loop_visited.clear()
            state.loop_visited.update(picked_set)
            eligible = [i for i in ids if i not in picked_set]
            if not eligible:
                break
        take = min(n_image - len(picked), len(eligible))
        for idx in rng.choice(len(eligible), size=take, replace=False):
            image_id = eligible[int(idx)]
            picked.append(image_id)
            picked_set.add(image_id)
            state.loop_visited.add(image_id)
    return picked


def random_region(
    image_shape: tuple[int, ...],
    side: int,
    excluded: Sequence[Region],
    rng: np.random.Generator,
    *,
    image_id: int,
    cycle: int = 0,
    max_attempts: int = 10_000,
) -> Region | None:
    """One uniformly random feasible region, or None when none exists.

    Rejection-samples origins first; after ``max_attempts`` misses it falls
    back to enumerating every feasible origin, which keeps the overall draw
    uniform over the feasible set.
    """
    if len(image_shape) == 1:
        taken = {r.roi_index for r in excluded}
        free = [j for j in range(image_shape[0]) if j not in taken]
        if not free:
            return None
        return Region.roi(image_id, free[int(rng.integers(len(free)))], cycle=cycle)

    if len(image_shape) == 2:
        depth = None
        h, w = image_shape
    else:
        depth, h, w = image_shape
    if side > min(h, w):
        raise ValueError(f"side {side} exceeds image bounds {image_shape}")

    for _ in range(max_attempts):
        z = None if depth is None else int(rng.integers(depth))
        y = int(rng.integers(h - side + 1))
        x = int(rng.integers(w - side + 1))
        probe = Region.square(image_id, y, x, side, z=z, cycle=cycle)
        if not any(regions_overlap(probe, r) for r in excluded):
            return probe

    slices = [None] if depth is None else list(range(depth))
    feasible: list[tuple[int | None, int, int]] = []
    for z in slices:
        mask = feasible_origin_mask(
            h, w, side, [r for r in excluded if r.z == z]
        )
        for y, x in zip(*np.nonzero(mask)):
            feasible.append((z, int(y), int(x)))
    if not feasible:
        return None
    z, y, x = feasible[int(rng.integers(len(feasible)))]
    return Region.square(image_id, y, x, side, z=z, cycle=cycle)


def rand_select_regions(
    image: ImageRecord,
    side: int,
    n_region: int,
    rng: np.random.Generator,
    state: AnnotationState,
    cycle: int = 0,
) -> list[Region]:
    """Up to n_region disjoint uniformly random regions within one image."""
    picked: list[Region] = []
    excluded = list(state.regions_for(image.image_id))
    for _ in range(n_region):
        region = random_region(
            image.shape, side, excluded, rng, image_id=image.image_id, cycle=cycle
        )
        if region is None:
            break
        picked.append(region)
        excluded.append(region)
    return picked
