"""Shared domain model: images, predictions, regions, annotation state.

Coordinate conventions used throughout the package:

* 2-D segmentation images have shape ``(H, W)`` and pixel coordinates ``(y, x)``.
* 3-D volumes have shape ``(D, H, W)``; annotation regions are 2-D squares on a
  single slice ``z``, pixel coordinates are ``(z, y, x)``.
* ROI-mode images are flat lists of ``M`` pre-defined regions; "coordinates"
  are 1-tuples ``(j,)`` indexing that list.

Class ids are 1-based (``1..C``); 0 never appears in a label map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

MODE_SEG2D = "segmentation2d"
MODE_SEG3D = "segmentation3d"
MODE_ROI = "roi"


class AnnotationError(ValueError):
    """Raised when a region submission violates the annotation contract."""


@dataclass(frozen=True)
class ImageRecord:
    """One pool or test image: per-pixel features plus hidden ground truth.

    ``hidden_labels`` is only ever read through an :class:`Oracle` (or by the
    evaluation code for the fully labeled test set).  ``features`` has shape
    ``shape + (F,)``.
    """

    image_id: int
    features: np.ndarray
    hidden_labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.hidden_labels)
        feats = np.asarray(self.features)
        if labels.ndim not in (1, 2, 3):
            raise ValueError(f"unsupported label rank {labels.ndim}")
        if any(s < 1 for s in labels.shape):
            raise ValueError(f"degenerate image shape {labels.shape}")
        if feats.shape[:-1] != labels.shape:
            raise ValueError(
                f"feature shape {feats.shape} does not match labels {labels.shape}"
            )
        if labels.min() < 1:
            raise ValueError("class ids must be >= 1")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.hidden_labels.shape

    @property
    def mode(self) -> str:
        return {1: MODE_ROI, 2: MODE_SEG2D, 3: MODE_SEG3D}[self.hidden_labels.ndim]

    @property
    def n_pixels(self) -> int:
        return int(self.hidden_labels.size)


@dataclass(frozen=True)
class PredictionField:
    """Model output over one image: pseudo-labels plus confidence.

    ``pseudo_labels`` holds the argmax class per pixel/ROI (ties broken toward
    the lowest class index), ``max_prob`` the retained maximum probability,
    and ``full_probs`` (optional, shape ``shape + (C,)``) the complete softmax
    output required by the entropy and gradient-embedding baselines.
    """

    pseudo_labels: np.ndarray
    max_prob: np.ndarray
    full_probs: np.ndarray | None = None

    @classmethod
    def from_probs(cls, full_probs: np.ndarray) -> "PredictionField":
        """Derive pseudo-labels and max-probability from a probability map."""
        probs = np.asarray(full_probs, dtype=np.float64)
        labels = np.argmax(probs, axis=-1).astype(np.int64) + 1
        return cls(
            pseudo_labels=labels,
            max_prob=np.max(probs, axis=-1),
            full_probs=probs,
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.pseudo_labels.shape

    def validate(self) -> None:
        """Check internal consistency; cheap enough for test-time audits."""
        if self.max_prob.shape != self.pseudo_labels.shape:
            raise ValueError("max_prob shape mismatch")
        if self.full_probs is not None:
            if self.full_probs.shape[:-1] != self.pseudo_labels.shape:
                raise ValueError("full_probs shape mismatch")
            sums = self.full_probs.sum(axis=-1)
            if not np.allclose(sums, 1.0, atol=1e-6):
                raise ValueError("full_probs rows must sum to 1")
            if not np.array_equal(
                np.argmax(self.full_probs, axis=-1) + 1, self.pseudo_labels
            ):
                raise ValueError("pseudo_labels disagree with argmax(full_probs)")
            if not np.allclose(np.max(self.full_probs, axis=-1), self.max_prob):
                raise ValueError("max_prob disagrees with max(full_probs)")


@dataclass(frozen=True)
class Region:
    """One annotation unit: an l x l square or a pre-defined ROI.

    Square regions never clip at image borders, so ``(y, x)`` ranges over
    ``[0, H-l] x [0, W-l]``.  ``z`` selects the slice for 3-D volumes and is
    None otherwise.  ``cycle_selected`` records provenance and is excluded
    from equality so geometric duplicates compare equal.
    """

    image_id: int
    y: int | None = None
    x: int | None = None
    side: int | None = None
    z: int | None = None
    roi_index: int | None = None
    cycle_selected: int = field(default=0, compare=False)

    @classmethod
    def square(
        cls,
        image_id: int,
        y: int,
        x: int,
        side: int,
        z: int | None = None,
        cycle: int = 0,
    ) -> "Region":
        if side < 1:
            raise ValueError("side must be >= 1")
        return cls(image_id=image_id, y=y, x=x, side=side, z=z, cycle_selected=cycle)

    @classmethod
    def roi(cls, image_id: int, index: int, cycle: int = 0) -> "Region":
        if index < 0:
            raise ValueError("ROI index must be >= 0")
        return cls(image_id=image_id, roi_index=index, cycle_selected=cycle)

    @property
    def is_roi(self) -> bool:
        return self.roi_index is not None

    def sort_key(self) -> tuple[int, int, int, int, int]:
        """Deterministic total order: (image, z, y, x, roi)."""
        return (
            self.image_id,
            -1 if self.z is None else self.z,
            -1 if self.y is None else self.y,
            -1 if self.x is None else self.x,
            -1 if self.roi_index is None else self.roi_index,
        )


def region_pixels(
    region: Region, image_shape: tuple[int, ...]
) -> set[tuple[int, ...]]:
    """Enumerate the coordinates a region covers, validating bounds.

    Square regions yield exactly ``side * side`` coordinates; ROI regions
    yield the 1-tuple ``(index,)``.
    """
    if region.is_roi:
        if len(image_shape) != 1:
            raise ValueError("ROI region on a non-ROI image")
        (m,) = image_shape
        j = int(region.roi_index)  # type: ignore[arg-type]
        if not 0 <= j < m:
            raise ValueError(f"ROI index {j} out of range for {m} ROIs")
        return {(j,)}

    y, x, side = region.y, region.x, region.side
    if y is None or x is None or side is None:
        raise ValueError("square region missing geometry")
    if len(image_shape) == 2:
        if region.z is not None:
            raise ValueError("2-D image region carries a slice index")
        h, w = image_shape
        coords_prefix: tuple[int, ...] = ()
    elif len(image_shape) == 3:
        d, h, w = image_shape
        if region.z is None or not 0 <= region.z < d:
            raise ValueError(f"slice {region.z} out of range for depth {d}")
        coords_prefix = (int(region.z),)
    else:
        raise ValueError(f"unsupported image shape {image_shape}")
    if y < 0 or x < 0 or y + side > h or x + side > w:
        raise ValueError(
            f"region origin ({y},{x}) side {side} exceeds image bounds ({h},{w})"
        )
    return {
        coords_prefix + (yy, xx)
        for yy in range(y, y + side)
        for xx in range(x, x + side)
    }


def regions_overlap(a: Region, b: Region) -> bool:
    """True iff the two regions of one image share at least one pixel.

    3-D squares on different slices never overlap; ROI regions overlap only
    when they index the same ROI.
    """
    if a.image_id != b.image_id:
        raise ValueError("overlap is defined per image")
    if a.is_roi != b.is_roi:
        raise ValueError("cannot mix ROI and square regions on one image")
    if a.is_roi:
        return a.roi_index == b.roi_index
    if a.z != b.z:
        return False
    assert a.y is not None and a.x is not None and a.side is not None
    assert b.y is not None and b.x is not None and b.side is not None
    return (
        a.y < b.y + b.side
        and b.y < a.y + a.side
        and a.x < b.x + b.side
        and b.x < a.x + a.side
    )


class Oracle:
    """Stand-in for the human annotator: reveals hidden labels per region."""

    def __init__(self, images: Mapping[int, ImageRecord]):
        self._labels = {i: img.hidden_labels for i, img in images.items()}

    def reveal(self, region: Region) -> np.ndarray:
        labels = self._labels[region.image_id]
        region_pixels(region, labels.shape)  # bounds check
        if region.is_roi:
            return labels[region.roi_index : region.roi_index + 1].copy()
        y, x, side = region.y, region.x, region.side
        if region.z is not None:
            return labels[region.z, y : y + side, x : x + side].copy()
        return labels[y : y + side, x : x + side].copy()


class AnnotationState:
    """The labeled set: selected regions plus their revealed ground truth.

    Mutated only by the orchestrator; one instance per (strategy, repeat).
    ``loop_visited`` tracks which pool images the image-selection stage has
    already used in the current selection loop.
    """

    def __init__(self) -> None:
        self._regions: dict[int, list[Region]] = {}
        self._revealed: dict[int, list[np.ndarray]] = {}
        self.loop_visited: set[int] = set()

    def regions_for(self, image_id: int) -> tuple[Region, ...]:
        return tuple(self._regions.get(image_id, ()))

    def revealed_for(self, image_id: int) -> tuple[np.ndarray, ...]:
        return tuple(self._revealed.get(image_id, ()))

    def image_ids(self) -> list[int]:
        return sorted(self._regions)

    def iter_regions(self) -> Iterator[Region]:
        for image_id in sorted(self._regions):
            yield from self._regions[image_id]

    def n_regions(self) -> int:
        return sum(len(v) for v in self._regions.values())

    def revealed_pixel_count(self) -> int:
        return sum(
            arr.size for arrs in self._revealed.values() for arr in arrs
        )

    def revealed_class_counts(self, n_classes: int) -> np.ndarray:
        """Per true class revealed pixel counts, index 0 = class 1."""
        counts = np.zeros(n_classes, dtype=np.int64)
        for arrs in self._revealed.values():
            for arr in arrs:
                counts += np.bincount(
                    arr.ravel(), minlength=n_classes + 1
                )[1 : n_classes + 1]
        return counts

    def training_pairs(
        self, images: Mapping[int, ImageRecord]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gather (features, labels) for every revealed pixel, for training."""
        feats: list[np.ndarray] = []
        labels: list[np.ndarray] = []
        for image_id in sorted(self._regions):
            img = images[image_id]
            for region, revealed in zip(
                self._regions[image_id], self._revealed[image_id]
            ):
                if region.is_roi:
                    feats.append(
                        img.features[region.roi_index : region.roi_index + 1]
                    )
                elif region.z is not None:
                    feats.append(
                        img.features[
                            region.z,
                            region.y : region.y + region.side,
                            region.x : region.x + region.side,
                        ].reshape(-1, img.features.shape[-1])
                    )
                else:
                    feats.append(
                        img.features[
                            region.y : region.y + region.side,
                            region.x : region.x + region.side,
                        ].reshape(-1, img.features.shape[-1])
                    )
                labels.append(revealed.ravel())
        if not feats:
            return (
                np.zeros((0, 0), dtype=np.float64),
                np.zeros(0, dtype=np.int64),
            )
        return np.concatenate(feats, axis=0), np.concatenate(labels, axis=0)


def annotate(state: AnnotationState, region: Region, oracle: Oracle) -> AnnotationState:
    """Submit a region for annotation, appending its revealed labels.

    Rejects any region that overlaps an already annotated region of the same
    image, across all cycles: re-annotating labeled pixels wastes budget.
    """
    for existing in state.regions_for(region.image_id):
        if regions_overlap(existing, region):
            raise AnnotationError(
                f"region {region} overlaps already annotated {existing}"
            )
    revealed = oracle.reveal(region)
    state._regions.setdefault(region.image_id, []).append(region)
    state._revealed.setdefault(region.image_id, []).append(revealed)
    return state


def verify_revealed(
    state: AnnotationState, images: Mapping[int, ImageRecord]
) -> None:
    """Audit that revealed labels match hidden ground truth exactly.

    Raises AssertionError when the oracle leaked anything outside the selected
    coordinates or stored a stale value.
    """
    for image_id in state.image_ids():
        img = images[image_id]
        for region, revealed in zip(
            state.regions_for(image_id), state.revealed_for(image_id)
        ):
            # Row-major sorted coordinates match the raveled slice order.
            coords = sorted(region_pixels(region, img.shape))
            expected = np.array([img.hidden_labels[c] for c in coords])
            got = revealed.ravel()
            if region.is_roi:
                assert got.size == 1
            else:
                assert got.size == region.side * region.side  # type: ignore[operator]
            assert np.array_equal(got, expected), (
                f"revealed labels diverge from ground truth on {region}"
            )


def disjoint_regions(regions: Iterable[Region]) -> bool:
    """True iff no two regions of the collection overlap (pairwise check)."""
    by_image: dict[int, list[Region]] = {}
    for r in regions:
        by_image.setdefault(r.image_id, []).append(r)
    for group in by_image.values():
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                if regions_overlap(a, b):
                    return False
    return True
