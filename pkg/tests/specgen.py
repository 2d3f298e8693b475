"""Random legal CNN specs with an independently tallied parameter count."""
from __future__ import annotations

from usbench.models import CNNSpec, Conv1d, Dense, Dropout, Flatten, MaxPool1d, ReLU


def random_cnn_spec(rng):
    """A random legal layer chain, its input shape and an independently tallied count."""
    c, length = int(rng.integers(1, 9)), int(rng.integers(16, 200))
    shape = (c, length)
    layers, count = [], 0
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, min(9, length) + 1))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        out = int(rng.integers(1, 12))
        layers.append(Conv1d(out, k, stride, pad))
        count += out * c * k + out
        c, length = out, (length + 2 * pad - k) // stride + 1
        if rng.random() < 0.5:
            layers.append(ReLU())
        if length >= 4 and rng.random() < 0.5:
            layers.append(MaxPool1d(2))
            length = (length - 2) // 2 + 1
    layers.append(Flatten())
    flat = c * length
    if rng.random() < 0.5:
        hidden = int(rng.integers(2, 20))
        layers += [Dropout(0.1), Dense(hidden), ReLU()]
        count += flat * hidden + hidden
        flat = hidden
    classes = int(rng.integers(2, 7))
    layers.append(Dense(classes))
    count += flat * classes + classes
    return CNNSpec(layers, classes), shape, count
