"""Fitness scorers for rendered images.

Three families share one contract (higher raw is always better, failures are
encoded in the Fitness rather than raised):

* analytic scorers computed directly from pixels, for CI and desk runs;
* a client for the remote model-scorer HTTP service (ImageNet class loss or
  CLIP caption similarity, already converted to maximize-better server-side);
* novelty scoring against an archive of behavior descriptors.
"""

from __future__ import annotations

import base64
import io
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np
import requests

from .render import ImageBuffer, encode_png

__all__ = [
    "Fitness",
    "ScoreRequest",
    "Scorer",
    "SilhouetteFractionScorer",
    "CoverageTargetScorer",
    "BrightnessScorer",
    "SilhouetteIoUScorer",
    "RemoteScorer",
    "NoveltyArchive",
    "DimensionMismatchError",
    "score",
    "remote_score",
    "check_health",
    "behavior_descriptor",
    "novelty",
    "archive_update",
]

SCORE_MODES = ("imagenet_class", "clip_text")
DESCRIPTOR_GRID = 16
DESCRIPTOR_DIM = DESCRIPTOR_GRID * DESCRIPTOR_GRID

DEFAULT_BACKGROUND = (128, 128, 128)


class DimensionMismatchError(ValueError):
    """Behavior descriptors of differing dimensions were mixed."""


@dataclass(frozen=True)
class Fitness:
    """Scorer output on the scorer's native scale; higher raw is better.

    valid=False marks a scoring failure: the evolver treats the genome as
    worst-in-generation instead of aborting, and raw carries no meaning.
    """

    raw: float
    valid: bool = True

    def __post_init__(self) -> None:
        if self.valid and not np.isfinite(self.raw):
            raise ValueError(f"valid fitness must be finite, got {self.raw}")

    @classmethod
    def invalid(cls) -> "Fitness":
        return cls(raw=0.0, valid=False)


@dataclass(frozen=True)
class ScoreRequest:
    """One unit of work for the remote scorer service."""

    id: str
    image: ImageBuffer
    mode: str
    target: str

    def __post_init__(self) -> None:
        if self.mode not in SCORE_MODES:
            raise ValueError(f"mode must be one of {SCORE_MODES}, got {self.mode!r}")
        if self.mode == "imagenet_class":
            try:
                idx = int(self.target)
            except ValueError:
                raise ValueError(f"imagenet_class target must be an integer, got {self.target!r}")
            if not 0 <= idx <= 999:
                raise ValueError(f"imagenet_class target must be in [0, 999], got {idx}")
        elif not self.target:
            raise ValueError("clip_text target caption must be non-empty")


class Scorer:
    """Interface: score(image) -> Fitness.  Implementations must tolerate
    concurrent calls on independent images."""

    def score(self, image: ImageBuffer) -> Fitness:
        raise NotImplementedError


def score(scorer: Scorer, image: ImageBuffer) -> Fitness:
    """Score an image, converting any scorer exception into an invalid Fitness."""

    try:
        return scorer.score(image)
    except Exception:
        return Fitness.invalid()


def silhouette_fraction(image: ImageBuffer, background=DEFAULT_BACKGROUND) -> float:
    """Fraction of pixels that differ from the background color."""

    bg = np.asarray(background, dtype=np.uint8)
    non_bg = (image.pixels != bg).any(axis=2)
    return float(non_bg.mean())


class SilhouetteFractionScorer(Scorer):
    """raw = fraction of non-background pixels (0 for a pure background image)."""

    def __init__(self, background=DEFAULT_BACKGROUND):
        self.background = tuple(background)

    def score(self, image: ImageBuffer) -> Fitness:
        return Fitness(raw=silhouette_fraction(image, self.background))


class CoverageTargetScorer(Scorer):
    """raw = -|coverage - target|: best when the silhouette fills the target
    fraction of the frame."""

    def __init__(self, target: float = 0.5, background=DEFAULT_BACKGROUND):
        if not 0.0 <= target <= 1.0:
            raise ValueError(f"target coverage must be in [0, 1], got {target}")
        self.target = target
        self.background = tuple(background)

    def score(self, image: ImageBuffer) -> Fitness:
        return Fitness(raw=-abs(silhouette_fraction(image, self.background) - self.target))


class BrightnessScorer(Scorer):
    """raw = mean pixel intensity scaled to [0, 1]."""

    def score(self, image: ImageBuffer) -> Fitness:
        return Fitness(raw=float(image.pixels.mean()) / 255.0)


class SilhouetteIoUScorer(Scorer):
    """raw = intersection-over-union between the silhouette and a target mask."""

    def __init__(self, mask: np.ndarray, background=DEFAULT_BACKGROUND):
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {mask.shape}")
        self.mask = mask.astype(bool)
        self.background = tuple(background)

    @classmethod
    def from_png(cls, path, background=DEFAULT_BACKGROUND) -> "SilhouetteIoUScorer":
        """Load a mask PNG; any pixel brighter than zero belongs to the target."""

        from PIL import Image

        with Image.open(path) as img:
            mask = np.asarray(img.convert("L")) > 0
        return cls(mask=mask, background=background)

    def score(self, image: ImageBuffer) -> Fitness:
        if self.mask.shape != (image.height, image.width):
            raise ValueError(
                f"mask shape {self.mask.shape} does not match image "
                f"{(image.height, image.width)}"
            )
        bg = np.asarray(self.background, dtype=np.uint8)
        sil = (image.pixels != bg).any(axis=2)
        union = (sil | self.mask).sum()
        if union == 0:
            return Fitness(raw=0.0)
        return Fitness(raw=float((sil & self.mask).sum() / union))


def _encode_png_b64(image: ImageBuffer) -> str:
    buf = io.BytesIO()
    encode_png(image, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def remote_score(endpoint: str, request: ScoreRequest, timeout: float = 30.0) -> Fitness:
    """POST the request to the scorer service; one retry, failures -> invalid.

    The service score passes through unchanged (the service already reports
    maximize-better values for every mode).  Timeouts, transport errors,
    non-200 statuses, malformed bodies, and response-id mismatches all yield
    Fitness(valid=False) after a single retry.
    """

    payload = {
        "id": request.id,
        "image_png_b64": _encode_png_b64(request.image),
        "mode": request.mode,
        "target": request.target,
    }
    url = endpoint.rstrip("/") + "/score"
    for _ in range(2):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            if resp.status_code != 200:
                continue
            body = resp.json()
            if body.get("id") != request.id:
                continue
            raw = float(body["score"])
            if not np.isfinite(raw):
                continue
            return Fitness(raw=raw)
        except (requests.RequestException, ValueError, KeyError, TypeError):
            continue
    return Fitness.invalid()


def check_health(endpoint: str, timeout: float = 5.0) -> bool:
    """True iff GET /healthz answers 200 (service models are loaded)."""

    try:
        resp = requests.get(endpoint.rstrip("/") + "/healthz", timeout=timeout)
        return resp.status_code == 200
    except requests.RequestException:
        return False


class RemoteScorer(Scorer):
    """Scorer backed by the model-scorer HTTP service."""

    def __init__(self, endpoint: str, mode: str, target: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.mode = mode
        self.target = target
        self.timeout = timeout
        self._ids = itertools.count(1)

    def score(self, image: ImageBuffer) -> Fitness:
        request = ScoreRequest(
            id=str(next(self._ids)), image=image, mode=self.mode, target=self.target
        )
        return remote_score(self.endpoint, request, timeout=self.timeout)


def behavior_descriptor(image: ImageBuffer) -> np.ndarray:
    """Map an image to a 256-vector: grayscale, 16x16 box-downsample, [0, 1].

    Grayscale uses Rec.601 luma weights.  Box cells are computed with
    area-exact bin sums, so dimensions need not divide evenly by 16.
    """

    px = image.pixels.astype(np.float64)
    gray = 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]
    rows = np.linspace(0, image.height, DESCRIPTOR_GRID + 1).round().astype(int)
    cols = np.linspace(0, image.width, DESCRIPTOR_GRID + 1).round().astype(int)
    sums = np.add.reduceat(np.add.reduceat(gray, rows[:-1], axis=0), cols[:-1], axis=1)
    areas = np.outer(np.diff(rows), np.diff(cols))
    return (sums / areas / 255.0).reshape(-1)


@dataclass
class NoveltyArchive:
    """Append-only store of behavior descriptors seen so far.

    Mutated only between generations by a single writer; during evaluation
    readers work against a frozen snapshot of ``descriptors``.
    """

    dim: int = DESCRIPTOR_DIM
    k: int = 15
    add_threshold: float = 0.03
    descriptors: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.add_threshold < 0:
            raise ValueError("add_threshold must be >= 0")
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.descriptors)

    def snapshot(self) -> np.ndarray:
        """Descriptors as one (n, dim) array; empty (0, dim) when fresh."""

        if not self.descriptors:
            return np.empty((0, self.dim))
        return np.stack(self.descriptors)


def _check_dim(vec: np.ndarray, dim: int) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (dim,):
        raise DimensionMismatchError(f"descriptor shape {arr.shape} != ({dim},)")
    return arr


def novelty(archive: NoveltyArchive, candidates, query) -> float:
    """Mean distance from query to its k nearest neighbors.

    Neighbors are the archive plus the candidate descriptors, minus the query
    itself (identity, not value: clones of the query still count, at distance
    zero).  Fewer than k neighbors average over all of them; none gives 0.
    """

    q = _check_dim(query, archive.dim)
    pool = [a for a in archive.descriptors] + [c for c in candidates if c is not query]
    if not pool:
        return 0.0
    mat = np.stack([_check_dim(p, archive.dim) for p in pool])
    dists = np.sqrt(((mat - q) ** 2).sum(axis=1))
    k = min(archive.k, len(dists))
    nearest = np.partition(dists, k - 1)[:k]
    return float(nearest.mean())


def archive_update(archive: NoveltyArchive, descriptor, its_novelty: float) -> None:
    """Append the descriptor iff its novelty strictly exceeds the threshold."""

    vec = _check_dim(descriptor, archive.dim)
    if its_novelty > archive.add_threshold:
        with archive._lock:
            archive.descriptors.append(vec)
