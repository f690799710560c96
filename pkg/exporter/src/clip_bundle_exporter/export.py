"""The export pipeline: encode, normalize, assemble, write."""

from __future__ import annotations

import numpy as np

from .encoders import Encoder, ImageDataset, TransformersClipEncoder, open_dataset
from .spec import ExportSpec, fill_template
from .writer import write_bundle

POOLED_SIZE = 32  # pooled_pixels resolution: 32 x 32 x 3 -> input_dim 3072


def normalize_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero embedding row")
    return arr / norms


def pooled_pixels(images: np.ndarray) -> np.ndarray:
    """Resize to a fixed small resolution, flatten, channel-standardize."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {images.shape}")
    n, h, w, _ = images.shape
    x = images.astype(np.float64) / 255.0
    if (h, w) != (POOLED_SIZE, POOLED_SIZE):
        x = _average_pool(x, POOLED_SIZE)
    mean = x.mean(axis=(0, 1, 2), keepdims=True)
    std = x.std(axis=(0, 1, 2), keepdims=True)
    std = np.where(std < 1e-8, 1.0, std)
    return ((x - mean) / std).reshape(n, -1)


def _average_pool(x: np.ndarray, size: int) -> np.ndarray:
    """Resample HxW to size x size: box-average when shrinking, nearest
    replication when a cell would otherwise span no pixels."""
    n, h, w, c = x.shape
    ys = np.linspace(0, h, size + 1).astype(int)
    xs = np.linspace(0, w, size + 1).astype(int)
    out = np.empty((n, size, size, c))
    for i in range(size):
        y0, y1 = ys[i], max(ys[i + 1], ys[i] + 1)
        for j in range(size):
            x0, x1 = xs[j], max(xs[j + 1], xs[j] + 1)
            out[:, i, j, :] = x[:, y0:y1, x0:x1, :].mean(axis=(1, 2))
    return out


def export(spec: ExportSpec, *, encoder: Encoder | None = None,
           dataset: ImageDataset | None = None):
    """Run the teacher over the dataset and write the bundle directory.

    ``encoder`` and ``dataset`` are injectable for testing; by default the
    model id and dataset name in ``spec`` are resolved to the real
    backends (model weights and data must be available locally or
    downloadable).
    """
    if dataset is None:
        dataset = open_dataset(spec.dataset)
    if encoder is None:
        encoder = TransformersClipEncoder(spec.model, device=spec.device,
                                          batch_size=spec.batch_size)

    train_images, train_labels = dataset.split_arrays("train", spec.limit_train)
    eval_images, eval_labels = dataset.split_arrays("eval", spec.limit_eval)
    images = np.concatenate([train_images, eval_images], axis=0)
    labels = np.concatenate([train_labels, eval_labels], axis=0)
    n_train = len(train_images)
    n = len(images)

    features = normalize_rows(np.asarray(encoder.encode_images(images), dtype=np.float64))

    class_names = list(dataset.class_names)
    text = []
    for template in spec.templates:
        prompts = [fill_template(template, name) for name in class_names]
        text.append(normalize_rows(np.asarray(encoder.encode_texts(prompts),
                                              dtype=np.float64)))
    text_embeddings = np.stack(text)  # p x c x d

    if spec.input_repr == "teacher_features":
        inputs = features.copy()  # upper-bound sanity mode
    else:
        inputs = pooled_pixels(images)

    return write_bundle(
        spec.out_dir,
        inputs=inputs,
        features=features,
        text_embeddings=text_embeddings,
        labels=labels,
        class_names=class_names,
        prompt_names=[f"template_{i}" for i in range(len(spec.templates))],
        train_indices=range(n_train),
        eval_indices=range(n_train, n),
    )
