"""Class-decomposition sampling: confidence-weighted image and region choice.

The strategy decomposes every unlabeled image into class components via its
pseudo-labels, derives a per-class sampling weight from how confidently each
class is predicted across the pool, and spends the region budget by sampling
classes from those weights and grabbing the window that best represents each
sampled class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .baselines import random_region
from .core import ImageRecord, PredictionField, Region, AnnotationState
from .integral import IntegralTable, build_integral, window_argmax


@dataclass(frozen=True)
class ClassConfidence:
    """Per-class fraction of high-confidence predictions over the pool.

    ``sigma[c-1]`` is the share of pixels/ROIs predicted as class ``c`` whose
    retained probability strictly exceeds the threshold; a class never
    predicted anywhere gets sigma 0 (maximally uncertain) so that any image
    later predicting it is prioritized.
    """

    sigma: np.ndarray
    prediction_counts: np.ndarray


@dataclass(frozen=True)
class SamplingWeights:
    """Normalized inverse-confidence weights; always sums to 1."""

    w: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.w < 0) or abs(float(self.w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def n_classes(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class ImageScore:
    image_id: int
    score: float


def class_confidence(
    pool_predictions: Iterable[PredictionField],
    tau: float,
    n_classes: int,
) -> ClassConfidence:
    """Fraction of predictions per class with probability strictly above tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    totals = np.zeros(n_classes, dtype=np.int64)
    high = np.zeros(n_classes, dtype=np.int64)
    seen = False
    for pred in pool_predictions:
        seen = True
        labels = pred.pseudo_labels.ravel()
        probs = pred.max_prob.ravel()
        totals += np.bincount(labels, minlength=n_classes + 1)[1 : n_classes + 1]
        high += np.bincount(labels[probs > tau], minlength=n_classes + 1)[
            1 : n_classes + 1
        ]
    if not seen:
        raise ValueError("pool must be non-empty")
    sigma = np.zeros(n_classes, dtype=np.float64)
    np.divide(high, totals, out=sigma, where=totals > 0)
    return ClassConfidence(sigma=sigma, prediction_counts=totals)


def sampling_weights(
    confidence: ClassConfidence, manual_mask: np.ndarray | None = None
) -> SamplingWeights:
    """Normalized (1 - sigma), optionally reweighted by a manual mask.

    The mask supports emphasizing specific classes by hand; it multiplies the
    raw weights before normalization.  When every raw weight is zero (all
    classes fully confident) the weights fall back to uniform.
    """
    raw = 1.0 - confidence.sigma
    if manual_mask is not None:
        mask = np.asarray(manual_mask, dtype=np.float64)
        if mask.shape != raw.shape or np.any(mask < 0):
            raise ValueError("manual mask must be non-negative, one entry per class")
        raw = raw * mask
    total = float(raw.sum())
    n = len(raw)
    if total <= 0.0:
        return SamplingWeights(w=np.full(n, 1.0 / n))
    w = raw / total
    return SamplingWeights(w=w / w.sum())  # renormalize away rounding residue


def image_score(
    pred: PredictionField, weights: SamplingWeights, cap: float
) -> float:
    """Weighted sum of capped predicted class frequencies.

    Capping prevents large classes from dominating the score purely through
    pixel count; segmentation callers pass 10% of the image size, ROI callers
    pass 1.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    counts = np.bincount(
        pred.pseudo_labels.ravel(), minlength=weights.n_classes + 1
    )[1 : weights.n_classes + 1]
    return float(np.sum(weights.w * np.minimum(counts, cap)))


def select_images(
    pool: Sequence[ImageScore], state: AnnotationState, n_image: int
) -> list[int]:
    """Top-scoring images not yet visited in the current selection loop.

    When fewer unvisited images remain than requested, the remainder is taken,
    the visited set clears, and selection continues on a fresh loop (images
    already taken by this call stay excluded).  Ties break by lowest image id.
    """
    if not pool:
        raise ValueError("image pool is empty")
    if n_image < 1:
        raise ValueError("n_image must be >= 1")
    order = sorted(pool, key=lambda s: (-s.score, s.image_id))
    picked: list[int] = []
    picked_set: set[int] = set()
    while len(picked) < n_image:
        eligible = [
            s.image_id
            for s in order
            if s.image_id not in state.loop_visited and s.image_id not in picked_set
        ]
        if not eligible:
            state.loop_visited.clear()
            state.loop_visited.update(picked_set)
            eligible = [s.image_id for s in order if s.image_id not in picked_set]
            if not eligible:
                break  # entire pool taken within this call
        for image_id in eligible[: n_image - len(picked)]:
            picked.append(image_id)
            picked_set.add(image_id)
            state.loop_visited.add(image_id)
    return picked


def sample_class(
    weights: SamplingWeights, available: set[int], rng: np.random.Generator
) -> int:
    """Draw a class id from the weights renormalized over `available`.

    Falls back to a uniform draw when every available class has zero weight.
    """
    if not available:
        raise ValueError("no classes available to sample")
    classes = sorted(available)
    mass = weights.w[np.asarray(classes) - 1]
    total = float(mass.sum())
    if total <= 0.0:
        return classes[int(rng.integers(len(classes)))]
    return classes[int(rng.choice(len(classes), p=mass / total))]


def _region_class_counts(
    labels: np.ndarray, region: Region, n_classes: int
) -> np.ndarray:
    if region.is_roi:
        patch = labels[region.roi_index : region.roi_index + 1]
    elif region.z is not None:
        patch = labels[
            region.z,
            region.y : region.y + region.side,
            region.x : region.x + region.side,
        ]
    else:
        patch = labels[
            region.y : region.y + region.side, region.x : region.x + region.side
        ]
    return np.bincount(patch.ravel(), minlength=n_classes + 1)[1 : n_classes + 1]


def _unexcluded_slice_count(
    labels2d: np.ndarray, class_id: int, excluded: Sequence[Region]
) -> int:
    # Excluded regions are pairwise disjoint, so per-region subtraction is exact.
    count = int(np.count_nonzero(labels2d == class_id))
    for r in excluded:
        patch = labels2d[r.y : r.y + r.side, r.x : r.x + r.side]
        count -= int(np.count_nonzero(patch == class_id))
    return count


def select_region_for_class(
    image: ImageRecord,
    pred: PredictionField,
    class_id: int,
    side: int,
    state: AnnotationState,
    rng: np.random.Generator,
    extra_excluded: Sequence[Region] = (),
    cycle: int = 0,
    _cache: dict | None = None,
) -> Region | None:
    """The region best representing one class, avoiding prior annotations.

    2-D: feasible window argmax over the class indicator map, requiring at
    least one predicted pixel.  3-D: a uniformly random slice still containing
    the class, then the 2-D rule on that slice.  ROI: the unannotated ROI
    predicted as the class with the highest class probability, ties by lowest
    index.  Returns None when nothing feasible remains.
    """
    excluded = list(state.regions_for(image.image_id)) + list(extra_excluded)
    labels = pred.pseudo_labels

    if image.mode == "roi":
        taken = {r.roi_index for r in excluded}
        candidates = [
            j
            for j in range(labels.shape[0])
            if j not in taken and labels[j] == class_id
        ]
        if not candidates:
            return None
        if pred.full_probs is not None:
            probs = pred.full_probs[candidates, class_id - 1]
        else:
            probs = pred.max_prob[candidates]
        best = candidates[int(np.argmax(probs))]
        return Region.roi(image.image_id, best, cycle=cycle)

    if image.mode == "segmentation3d":
        eligible = [
            z
            for z in range(labels.shape[0])
            if _unexcluded_slice_count(
                labels[z], class_id, [r for r in excluded if r.z == z]
            )
            > 0
        ]
        if not eligible:
            return None
        z = eligible[int(rng.integers(len(eligible)))]
        key = (class_id, z)
        if _cache is not None and key in _cache:
            table = _cache[key]
        else:
            table = build_integral((labels[z] == class_id).astype(np.int64))
            if _cache is not None:
                _cache[key] = table
        hit = window_argmax(
            table, side, [r for r in excluded if r.z == z], require_positive=True
        )
        if hit is None:
            return None
        (y, x), _ = hit
        return Region.square(image.image_id, y, x, side, z=z, cycle=cycle)

    key = (class_id, None)
    if _cache is not None and key in _cache:
        table = _cache[key]
    else:
        table = build_integral((labels == class_id).astype(np.int64))
        if _cache is not None:
            _cache[key] = table
    hit = window_argmax(table, side, excluded, require_positive=True)
    if hit is None:
        return None
    (y, x), _ = hit
    return Region.square(image.image_id, y, x, side, cycle=cycle)


def decomp_select(
    image: ImageRecord,
    pred: PredictionField,
    weights: SamplingWeights,
    n_region: int,
    side: int,
    state: AnnotationState,
    rng: np.random.Generator,
    cycle: int = 0,
) -> list[Region]:
    """Sequentially pick up to ``n_region`` disjoint regions for one image.

    Each step samples a class among those still predicted on unannotated
    area, then takes the best representing region.  A class with no feasible
    region left drops out of the draw; when no predicted class yields a
    region, the budget falls back to a uniformly random feasible region
    rather than being silently dropped.  Stops early only when the image has
    no feasible region at all.
    """
    if n_region < 1:
        raise ValueError("n_region must be >= 1")
    n_classes = weights.n_classes
    labels = pred.pseudo_labels
    counts = np.bincount(labels.ravel(), minlength=n_classes + 1)[
        1 : n_classes + 1
    ].astype(np.int64)
    for r in state.regions_for(image.image_id):
        counts -= _region_class_counts(labels, r, n_classes)
    cache: dict = {}
    picked: list[Region] = []
    for _ in range(n_region):
        available = {c for c in range(1, n_classes + 1) if counts[c - 1] > 0}
        region: Region | None = None
        while available and region is None:
            c = sample_class(weights, available, rng)
            region = select_region_for_class(
                image,
                pred,
                c,
                side,
                state,
                rng,
                extra_excluded=picked,
                cycle=cycle,
                _cache=cache,
            )
            if region is None:
                available.discard(c)
        if region is None:
            region = random_region(
                image.shape,
                side,
                list(state.regions_for(image.image_id)) + picked,
                rng,
                image_id=image.image_id,
                cycle=cycle,
            )
        if region is None:
            break  # image fully exhausted
        picked.append(region)
        counts -= _region_class_counts(labels, region, n_classes)
    return picked
