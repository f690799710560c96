"""Model and dataset backends.

The export pipeline talks to two small interfaces so tests can inject
stubs; the real implementations lazy-import torch/transformers/torchvision
and are exercised only where model weights and data are available.
"""

from __future__ import annotations

import numpy as np


class Encoder:
    """Embeds images and texts into a shared d-dimensional space."""

    dim: int

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, C) uint8 -> (B, d) float; rows need not be normalized."""
        raise NotImplementedError

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        """list of prompts -> (len(texts), d) float."""
        raise NotImplementedError


class ImageDataset:
    """A labeled image collection with named classes and a fixed split."""

    class_names: list[str]

    def split_arrays(self, split: str, limit: int | None):
        """'train' | 'eval' -> (images (N, H, W, C) uint8, labels (N,) int64)."""
        raise NotImplementedError


class TransformersClipEncoder(Encoder):
    """A contrastive vision-language checkpoint via the transformers API."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 64):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.device = device
        self.batch_size = batch_size
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = int(self.model.config.projection_dim)

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        torch = self._torch
        out = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                chunk = [images[i] for i in range(start, min(start + self.batch_size,
                                                             len(images)))]
                inputs = self.processor(images=chunk, return_tensors="pt").to(self.device)
                feats = self.model.get_image_features(**inputs)
                out.append(feats.cpu().numpy())
        return np.concatenate(out, axis=0)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        out = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                chunk = texts[start:start + self.batch_size]
                inputs = self.processor(text=chunk, return_tensors="pt",
                                        padding=True, truncation=True).to(self.device)
                feats = self.model.get_text_features(**inputs)
                out.append(feats.cpu().numpy())
        return np.concatenate(out, axis=0)


class TorchvisionCifar10(ImageDataset):
    """CIFAR-10 via torchvision; train split maps to 'train', test to 'eval'."""

    def __init__(self, root: str = "~/.cache/cifar10", download: bool = True):
        from torchvision.datasets import CIFAR10

        try:
            self._train = CIFAR10(root, train=True, download=download)
            self._eval = CIFAR10(root, train=False, download=download)
        except Exception as exc:  # download/disk failure is an I/O error
            raise OSError(f"could not obtain CIFAR-10: {exc}") from exc
        self.class_names = list(self._train.classes)

    def split_arrays(self, split: str, limit: int | None):
        ds = self._train if split == "train" else self._eval
        images = np.asarray(ds.data, dtype=np.uint8)
        labels = np.asarray(ds.targets, dtype=np.int64)
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        return images, labels


def open_dataset(name: str) -> ImageDataset:
    if name.lower() in ("cifar10", "cifar-10"):
        return TorchvisionCifar10()
    raise ValueError(f"unknown dataset {name!r} (supported: cifar10)")
