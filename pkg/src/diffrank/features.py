"""Feature containers and readers for fvecs / fbin vector files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

PathLike = Union[str, Path]

FORMATS = ("fvecs", "fbin")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """L2-normalized feature rows, optionally grouped into images.

    ``image_of[i]`` is the image that feature ``i`` belongs to. When it is
    ``None`` every feature is its own image (global descriptors).
    """

    vectors: np.ndarray
    image_of: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_images(self) -> int:
        if self.image_of is None:
            return self.n
        return int(self.image_of.max()) + 1 if self.n else 0

    @property
    def is_regional(self) -> bool:
        return self.image_of is not None

    def subset(self, ids) -> "FeatureSet":
        """Rows ``ids`` as a new set of global features (mapping dropped)."""
        return FeatureSet(self.vectors[np.asarray(ids)])

    @classmethod
    def from_array(cls, vectors, image_of=None) -> "FeatureSet":
        """Validate, L2-normalize and wrap an ``(n, d)`` array.

        float64 input stays float64; anything else is stored as float32.
        """
        arr = np.asarray(vectors)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d array of features, got shape {arr.shape}")
        dtype = np.float64 if arr.dtype == np.float64 else np.float32
        arr = np.array(arr, dtype=dtype, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
            raise ValueError(f"non-finite value in feature {bad}")
        norms = np.linalg.norm(arr.astype(np.float64), axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"zero-norm feature vector at index {int(zero[0])}")
        arr /= norms[:, None].astype(dtype)
        return cls(arr, _check_image_map(image_of, arr.shape[0]))


def _check_image_map(image_of, n: int) -> Optional[np.ndarray]:
    if image_of is None:
        return None
    image_of = np.asarray(image_of, dtype=np.int64).ravel()
    if image_of.shape[0] != n:
        raise ValueError(f"image map has {image_of.shape[0]} entries for {n} features")
    if n == 0:
        return image_of
    if image_of.min() < 0:
        raise ValueError("image ids must be non-negative")
    present = np.zeros(int(image_of.max()) + 1, dtype=bool)
    present[image_of] = True
    if not present.all():
        missing = int(np.flatnonzero(~present)[0])
        raise ValueError(f"image ids are not contiguous from 0: image {missing} has no features")
    return image_of


def read_fvecs(path: PathLike) -> np.ndarray:
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    d = int(raw[0])
    if d <= 0:
        raise ValueError(f"{path}: invalid dimension {d} in first record")
    if raw.size % (d + 1):
        raise ValueError(f"{path}: file size is not a whole number of {d}-d records")
    records = raw.reshape(-1, d + 1)
    dims = records[:, 0]
    if np.any(dims != d):
        bad = int(np.flatnonzero(dims != d)[0])
        raise ValueError(f"{path}: record {bad} has dimension {int(dims[bad])}, expected {d}")
    return records[:, 1:].view("<f4").astype(np.float32)


def write_fvecs(path: PathLike, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    n, d = vectors.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = vectors.view("<i4")
    out.tofile(path)


def read_fbin(path: PathLike) -> np.ndarray:
    """Read the ``[int32 n][int32 d][n*d float32]`` layout."""
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype="<i4", count=2)
        if header.size != 2:
            raise ValueError(f"{path}: truncated header")
        n, d = (int(v) for v in header)
        body = np.fromfile(f, dtype="<f4")
    if body.size != n * d:
        raise ValueError(f"{path}: header declares {n}x{d} values, found {body.size}")
    return body.reshape(n, d).astype(np.float32)


def write_fbin(path: PathLike, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    with open(path, "wb") as f:
        np.asarray(vectors.shape, dtype="<i4").tofile(f)
        vectors.tofile(f)


def read_image_map(path: PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        return np.array([int(line) for line in f if line.strip()], dtype=np.int64)


def write_image_map(path: PathLike, image_of) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{int(i)}\n" for i in image_of)


def load_features(path: PathLike, format: Optional[str] = None, image_map: Optional[PathLike] = None) -> FeatureSet:
    """Load a feature file and normalize its rows.

    ``format`` is inferred from the suffix when omitted (``.fbin`` means the
    headered raw float32 layout, anything else is read as fvecs).
    """
    if format is None:
        format = "fbin" if str(path).endswith(".fbin") else "fvecs"
    if format == "fvecs":
        arr = read_fvecs(path)
    elif format == "fbin":
        arr = read_fbin(path)
    else:
        raise ValueError(f"unknown feature format {format!r}; expected one of {FORMATS}")
    image_of = read_image_map(image_map) if image_map is not None else None
    return FeatureSet.from_array(arr, image_of)
