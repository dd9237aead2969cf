"""Deterministic MNIST-shaped digit corpus for the test suite.

Renders digit glyphs with matplotlib's bundled fonts, expands them with
seeded affine warps, blur, and speckle into 28x28 grayscale samples, and
writes standard IDX files so the loaders exercise the real container
format. Set JFORGE_TEST_DATA_DIR to a directory holding actual MNIST
IDX files to run the suite against the real dataset instead.
"""

import os
import struct

import numpy as np

GENERATOR_TAG = "synth-digits-v1"

_VARIANTS = [
    ("DejaVu Sans", "normal", "normal"),
    ("DejaVu Sans", "bold", "normal"),
    ("DejaVu Sans", "normal", "italic"),
    ("DejaVu Serif", "normal", "normal"),
    ("DejaVu Serif", "bold", "italic"),
]


def _render_templates() -> np.ndarray:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    templates = np.empty((10, len(_VARIANTS), 28, 28))
    for digit in range(10):
        for v, (family, weight, style) in enumerate(_VARIANTS):
            fig = Figure(figsize=(1, 1), dpi=56)
            canvas = FigureCanvasAgg(fig)
            ax = fig.add_axes([0, 0, 1, 1])
            ax.axis("off")
            fig.patch.set_facecolor("black")
            ax.text(0.5, 0.46, str(digit), ha="center", va="center",
                    fontsize=50, family=family, weight=weight, style=style,
                    color="white")
            canvas.draw()
            buf = np.asarray(canvas.buffer_rgba())[:, :, 0].astype(float) / 255.0
            templates[digit, v] = buf.reshape(28, 2, 28, 2).mean(axis=(1, 3))
    return templates


def make_corpus(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(count, 28, 28) uint8 images plus uint8 labels, deterministic in seed."""
    from scipy import ndimage

    templates = _render_templates()
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=count).astype(np.uint8)
    images = np.empty((count, 28, 28), dtype=np.uint8)
    center = np.array([13.5, 13.5])
    for i in range(count):
        base = templates[labels[i], rng.integers(len(_VARIANTS))]
        angle = np.deg2rad(rng.uniform(-20.0, 20.0))
        shear = rng.uniform(-0.25, 0.25)
        sx = rng.uniform(0.72, 1.18)
        sy = rng.uniform(0.72, 1.18)
        rot = np.array([
            [np.cos(angle), -np.sin(angle)],
            [np.sin(angle), np.cos(angle)],
        ])
        warp = rot @ np.array([[1.0 / sy, 0.0], [shear, 1.0 / sx]])
        shift = rng.uniform(-2.5, 2.5, size=2)
        warped = ndimage.affine_transform(
            base, warp, offset=center - warp @ center + shift, order=1, cval=0.0
        )
        # elastic wobble: smoothed random displacement field
        amp = rng.uniform(2.0, 7.0)
        dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (28, 28)), 4.0) * amp
        dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (28, 28)), 4.0) * amp
        ii, jj = np.meshgrid(np.arange(28.0), np.arange(28.0), indexing="ij")
        warped = ndimage.map_coordinates(warped, [ii + dy, jj + dx], order=1)
        warped = ndimage.gaussian_filter(warped, sigma=rng.uniform(0.2, 0.9))
        warped *= rng.uniform(0.65, 1.0)
        # sparse speckle, then squash faint values so backgrounds stay 0
        speckle = rng.random(warped.shape) < 0.015
        warped = np.clip(warped + speckle * rng.uniform(0.1, 0.5), 0.0, 1.0)
        warped[warped < 0.08] = 0.0
        images[i] = np.rint(warped * 255.0).astype(np.uint8)
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def corpus_dir(root: str, train_count: int = 11000, test_count: int = 1500) -> str:
    """Materialize (or reuse) the corpus as IDX files under ``root``."""
    override = os.environ.get("JFORGE_TEST_DATA_DIR")
    if override:
        return override
    tag = f"{GENERATOR_TAG}-{train_count}-{test_count}"
    directory = os.path.join(root, tag)
    done = os.path.join(directory, ".complete")
    if not os.path.exists(done):
        os.makedirs(directory, exist_ok=True)
        train_images, train_labels = make_corpus(train_count, seed=20)
        test_images, test_labels = make_corpus(test_count, seed=21)
        write_idx_images(os.path.join(directory, "train-images-idx3-ubyte"), train_images)
        write_idx_labels(os.path.join(directory, "train-labels-idx1-ubyte"), train_labels)
        write_idx_images(os.path.join(directory, "t10k-images-idx3-ubyte"), test_images)
        write_idx_labels(os.path.join(directory, "t10k-labels-idx1-ubyte"), test_labels)
        with open(done, "w", encoding="utf-8") as fh:
            fh.write(tag + "\n")
    return directory
