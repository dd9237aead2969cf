"""MNIST-shaped IDX ingestion, normalization, and PGM/CSV emission.

IDX image files are big-endian:

    [offset 0]  u32  magic 0x00000803
    [offset 4]  u32  image count
    [offset 8]  u32  rows
    [offset 12] u32  columns
    [offset 16] u8[] pixels, row-major

Label files use magic 0x00000801 followed by a count and one byte per
label. All writers go through a temp file and an atomic rename.
"""

import csv
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError, IdxFormatError, IdxTruncationError
from .train import LabeledDataset

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class RawImageSet:
    pixels: np.ndarray  # (count, rows, cols) uint8

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def rows(self) -> int:
        return self.pixels.shape[1]

    @property
    def cols(self) -> int:
        return self.pixels.shape[2]


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IdxTruncationError(
            f"file ends inside {what}: wanted {n} bytes, got {len(data)}"
        )
    return data


def load_idx_images(path) -> RawImageSet:
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "header"))
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
            )
        payload = _read_exact(fh, count * rows * cols, "pixel payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    return RawImageSet(pixels.copy())


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, "header"))
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
            )
        payload = _read_exact(fh, count, "label payload")
    labels = np.frombuffer(payload, dtype=np.uint8)
    if labels.size and labels.max() > 9:
        raise DataError(f"label {int(labels.max())} outside 0..9")
    return labels.astype(np.int64)


def normalize(images) -> np.ndarray:
    """uint8 pixels -> flat float rows: value / 255, row-major per image."""
    pixels = images.pixels if isinstance(images, RawImageSet) else np.asarray(images)
    return pixels.reshape(pixels.shape[0], -1).astype(float) / 255.0


def denormalize(values) -> np.ndarray:
    """[0, 1] floats back to bytes; exact inverse of normalize on all 256."""
    return np.rint(np.asarray(values, dtype=float) * 255.0).astype(np.uint8)


def to_dataset(images: RawImageSet, labels: np.ndarray,
               class_count: int = 10) -> LabeledDataset:
    if labels.shape[0] != images.count:
        raise DataError(
            f"{labels.shape[0]} labels for {images.count} images"
        )
    return LabeledDataset(normalize(images), labels, class_count)


def subset(dataset: LabeledDataset, count: int, seed: int | None = None) -> LabeledDataset:
    """First ``count`` rows, or a seeded sample without replacement."""
    if count > len(dataset):
        raise DataError(f"subset of {count} from {len(dataset)} rows")
    if seed is None:
        idx = np.arange(count)
    else:
        idx = np.sort(np.random.default_rng(seed).choice(len(dataset), count, replace=False))
    return LabeledDataset(dataset.features[idx], dataset.labels[idx], dataset.class_count)


def _atomic_write(path, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(values, path) -> None:
    """Binary PGM (P5, maxval 255); pixel byte = round(255 * value)."""
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise DataError(f"expected a 2-D image, got shape {a.shape}")
    if a.size and (not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0):
        raise DataError("pixel values must lie in [0, 1]")
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    _atomic_write(path, header + denormalize(a).tobytes())


def write_csv(path, header, rows) -> None:
    """RFC-4180-style CSV with LF line endings, written atomically."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def write_matrix_csv(path, matrix, value_format: str = "{:.6f}") -> None:
    """Class-indexed square matrix with a header row and column."""
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    rows = []
    for s in range(n):
        rows.append([s] + [value_format.format(v) for v in matrix[s]])
    write_csv(path, [""] + list(range(n)), rows)


def write_report(path, values: dict) -> None:
    """key=value lines for scalar summaries."""
    text = "".join(f"{k}={v}\n" for k, v in values.items())
    _atomic_write(path, text.encode("utf-8"))
