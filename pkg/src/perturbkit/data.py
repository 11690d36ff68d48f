"""Synthetic datasets for desk-scale experiments."""

import numpy as np

from perturbkit.model import Dataset, Example


def make_blobs(
    n: int,
    n_classes: int = 3,
    dim: int = 2,
    radius: float = 3.0,
    spread: float = 0.6,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs around centers evenly spaced on a circle.

    `n` points total, labels round-robin over classes; extra dimensions
    beyond the first two get zero-centered noise only.
    """
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    if dim > 1:
        centers[:, 1] = radius * np.sin(angles)
    examples = []
    for i in range(n):
        label = i % n_classes
        x = centers[label] + spread * rng.standard_normal(dim)
        examples.append(Example(x, label=label))
    return Dataset(examples)


def make_patterns(n: int, dim: int = 64, seed: int = 0) -> Dataset:
    """Smooth [0, 1] signals (two random sinusoid modes plus noise).

    Each example carries itself as the regression target, the
    autoencoder convention.
    """
    rng = np.random.default_rng(seed)
    grid = np.arange(dim) / dim
    examples = []
    for _ in range(n):
        x = np.full(dim, 0.5)
        for _ in range(2):
            freq = rng.integers(1, 5)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.1, 0.22)
            x = x + amp * np.sin(2 * np.pi * freq * grid + phase)
        x = x + 0.02 * rng.standard_normal(dim)
        x = np.clip(x, 0.0, 1.0)
        examples.append(Example(x, target=x.copy()))
    return Dataset(examples)
