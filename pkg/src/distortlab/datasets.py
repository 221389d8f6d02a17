"""Distortion-rating datasets: records, CSV manifests, synthetic generation.

A manifest is a CSV file with header ``ref,dist,score`` whose paths are
relative to the manifest location.  One optional metadata line
``#polarity=quality|distortion`` declares whether scores increase with
image quality or with distortion (default: distortion).  Training and
evaluation canonicalize to distortion-increasing scores, so the objective
sign is never ambiguous.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError, ManifestError, ShapeError
from .grids import as_grid2, l2_norm
from .noise import NoiseStream
from .stages import ModelChain

__all__ = [
    "DatasetRecord",
    "load_manifest",
    "write_manifest",
    "canonicalize_scores",
    "generate_synthetic_dataset",
]

POLARITIES = ("distortion", "quality")


@dataclass
class DatasetRecord:
    """One (reference image, distorted image, score) triple."""

    reference: np.ndarray
    distorted: np.ndarray
    score: float

    def __post_init__(self):
        self.reference = as_grid2(self.reference, "reference")
        self.distorted = as_grid2(self.distorted, "distorted")
        if self.reference.shape != self.distorted.shape:
            raise ShapeError(
                f"record images differ in shape: {self.reference.shape} vs "
                f"{self.distorted.shape}"
            )
        self.score = float(self.score)
        if not math.isfinite(self.score):
            raise InputDomainError(f"record score is not finite: {self.score!r}")


def canonicalize_scores(records, polarity: str):
    """Return records whose scores increase with distortion."""
    if polarity not in POLARITIES:
        raise ManifestError(f"unknown polarity {polarity!r}")
    if polarity == "distortion":
        return list(records)
    return [DatasetRecord(r.reference, r.distorted, -r.score) for r in records]


def load_manifest(path, image_loader=None):
    """Parse a manifest CSV; returns (records, polarity).

    ``image_loader`` maps an absolute path to a 2-D grid; it defaults to
    :func:`distortlab.imageio.load_image` (kept injectable for tests).
    """
    if image_loader is None:
        from .imageio import load_image as image_loader
    base = os.path.dirname(os.path.abspath(path))
    polarity = "distortion"
    rows = []
    with open(path, "r", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if not line.startswith("#polarity="):
                    raise ManifestError(f"row {lineno}: unknown metadata line {line!r}")
                value = line.split("=", 1)[1]
                if value not in POLARITIES:
                    raise ManifestError(f"row {lineno}: invalid polarity {value!r}")
                polarity = value
                continue
            rows.append((lineno, line))
    if not rows:
        raise ManifestError("manifest has no data rows")
    header_no, header = rows[0]
    if [c.strip() for c in header.split(",")] != ["ref", "dist", "score"]:
        raise ManifestError(f"row {header_no}: header must be 'ref,dist,score', got {header!r}")

    records = []
    seen = {}
    for lineno, line in rows[1:]:
        parts = next(csv.reader([line]))
        if len(parts) != 3:
            raise ManifestError(f"row {lineno}: expected 3 fields, got {len(parts)}")
        ref_rel, dist_rel, score_text = (p.strip() for p in parts)
        key = (ref_rel, dist_rel)
        if key in seen:
            raise ManifestError(
                f"row {lineno}: duplicate pair {key!r} (first seen at row {seen[key]})"
            )
        seen[key] = lineno
        try:
            score = float(score_text)
        except ValueError:
            raise ManifestError(f"row {lineno}: score {score_text!r} is not a number") from None
        if not math.isfinite(score):
            raise ManifestError(f"row {lineno}: score {score_text!r} is not finite")
        ref = image_loader(os.path.join(base, ref_rel))
        dist = image_loader(os.path.join(base, dist_rel))
        try:
            records.append(DatasetRecord(ref, dist, score))
        except ShapeError as exc:
            raise ManifestError(f"row {lineno}: {exc}") from None
    return records, polarity


def write_manifest(path, entries, polarity: str = "distortion"):
    """Write manifest rows; entries are (ref_rel, dist_rel, score)."""
    if polarity not in POLARITIES:
        raise ManifestError(f"unknown polarity {polarity!r}")
    with open(path, "w", newline="") as fh:
        fh.write(f"#polarity={polarity}\n")
        fh.write("ref,dist,score\n")
        for ref_rel, dist_rel, score in entries:
            fh.write(f"{ref_rel},{dist_rel},{score!r}\n")


def generate_synthetic_dataset(
    chain: ModelChain,
    base_images,
    n_records: int,
    score_noise: float,
    seed: int,
    *,
    relative_noise: bool = False,
    amplitude_range=(0.02, 0.30),
    scale: float = 1.0,
    offset: float = 0.0,
):
    """Desk-scale stand-in for a human-rated distortion database.

    Each record perturbs a base image along a seeded white-noise direction
    with a random amplitude; its score is an affine function of the
    generating model's perceptual distance plus Gaussian noise.  With
    ``relative_noise`` the noise sigma is ``score_noise * std(distances)``.
    """
    if score_noise < 0.0:
        raise InputDomainError(f"score noise must be >= 0, got {score_noise}")
    base_images = [as_grid2(b, "base image") for b in base_images]
    lo, hi = float(amplitude_range[0]), float(amplitude_range[1])
    root = NoiseStream(seed)
    pairs = []
    distances = []
    for i in range(int(n_records)):
        base = base_images[i % len(base_images)]
        geom = root.substream(1, i)
        direction = geom.normal_grid(base.shape)
        direction /= l2_norm(direction)
        amplitude = lo + (hi - lo) * float(geom.uniforms(1)[0])
        distorted = base + amplitude * direction
        pairs.append((base, distorted))
        distances.append(l2_norm(chain.forward(base) - chain.forward(distorted)))
    distances = np.asarray(distances)
    sigma = score_noise * float(distances.std()) if relative_noise else score_noise
    noise = NoiseStream(seed).substream(2).normals(len(pairs)) * sigma
    return [
        DatasetRecord(ref, dist, scale * d + offset + eps)
        for (ref, dist), d, eps in zip(pairs, distances, noise)
    ]
