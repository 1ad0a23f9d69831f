import numpy as np
import pytest

from pilae import data_io

ACCEPTANCE = pytest.StashKey[dict]()


def planted(rng, m, n, r, scale=1.0):
    """Random m x n matrix of exact rank r (r = 0 gives zeros)."""
    if r == 0:
        return np.zeros((m, n))
    return scale * rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


def blobs(rng, d=6, per_class=20, classes=3, spread=0.15):
    """Well separated Gaussian clusters, samples as columns."""
    centres = 3.0 * rng.standard_normal((d, classes))
    x = np.concatenate([centres[:, [c]] + spread * rng.standard_normal((d, per_class)) for c in range(classes)], axis=1)
    labels = np.repeat(np.arange(classes), per_class)
    return x, labels


def mnist_like(rng, n, classes=10):
    """28x28 images with a blank border and sparse class-dependent strokes.

    Stands in for MNIST when timing; pixels in [0, 1], samples as columns.
    """
    masks = rng.random((classes, 26, 26)) < 0.2
    labels = np.arange(n) % classes
    img = np.zeros((n, 28, 28))
    keep = rng.random((n, 26, 26)) < 0.8
    img[:, 1:27, 1:27] = masks[labels] * keep * rng.random((n, 26, 26))
    return np.ascontiguousarray(img.reshape(n, 784).T), labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def idx_dir(tmp_path):
    """Tiny MNIST-style IDX directory: 4x4 images, 3 classes, train and test."""
    g = np.random.default_rng(7)
    proto = g.integers(0, 256, size=(3, 4, 4))
    for split, n in (("train", 60), ("test", 30)):
        labels = np.arange(n) % 3
        noise = g.integers(-20, 21, size=(n, 4, 4))
        imgs = np.clip(proto[labels] + noise, 0, 255).astype(np.uint8)
        stem = "train" if split == "train" else "t10k"
        data_io.write_idx_images(tmp_path / f"{stem}-images-idx3-ubyte", imgs)
        data_io.write_idx_labels(tmp_path / f"{stem}-labels-idx1-ubyte", labels.astype(np.uint8))
    return tmp_path


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail=""):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        results[n] = line
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
