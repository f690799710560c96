import numpy as np
import pytest

from clip_bundle_exporter.encoders import Encoder, ImageDataset
from clip_bundle_exporter.spec import PLACEHOLDER

CLASSES = ["apple", "bicycle", "cloud"]
DIM = 16
IMG = 8  # stub image side


class StubDataset(ImageDataset):
    """Tiny labeled images whose pixel pattern encodes the class."""

    def __init__(self, n_train=30, n_eval=12, seed=0):
        self.class_names = list(CLASSES)
        rng = np.random.default_rng(seed)
        self._patterns = rng.integers(40, 216, size=(len(CLASSES), IMG, IMG, 3))
        self._splits = {}
        for split, count in (("train", n_train), ("eval", n_eval)):
            labels = np.arange(count, dtype=np.int64) % len(CLASSES)
            noise = rng.integers(-30, 31, size=(count, IMG, IMG, 3))
            images = np.clip(self._patterns[labels] + noise, 0, 255).astype(np.uint8)
            self._splits[split] = (images, labels)

    def split_arrays(self, split, limit):
        images, labels = self._splits[split]
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        return images, labels


class StubEncoder(Encoder):
    """Shared random linear map over pixel patterns; prompts embed through
    the class pattern they mention, so image and text spaces align."""

    dim = DIM

    def __init__(self, dataset: StubDataset, seed=1):
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((IMG * IMG * 3, DIM))
        self._patterns = dataset._patterns
        self._rng = np.random.default_rng(seed + 1)

    def encode_images(self, images):
        flat = (np.asarray(images, dtype=np.float64) / 255.0).reshape(len(images), -1)
        return flat @ self._proj

    def encode_texts(self, texts):
        out = []
        for text in texts:
            hits = [j for j, name in enumerate(CLASSES) if name in text]
            if len(hits) != 1:
                raise AssertionError(f"stub prompt must mention one class: {text!r}")
            flat = (self._patterns[hits[0]].astype(np.float64) / 255.0).reshape(1, -1)
            jitter = 0.02 * self._rng.standard_normal((1, DIM))
            out.append(flat @ self._proj + jitter)
        return np.concatenate(out, axis=0)


@pytest.fixture
def stub_pair():
    dataset = StubDataset()
    return dataset, StubEncoder(dataset)


@pytest.fixture
def templates():
    return (f"a photo of a {PLACEHOLDER}", f"a bad drawing of a {PLACEHOLDER}")
