"""Shared fixtures.

Session-scoped fixtures deliberately hold only file paths and plain floats.
Tensors and models are constructed per test so the live-tensor tracker
starts every memory assertion from an empty baseline.
"""

import gc

import pytest

from greenlite import (
    TRACKER,
    build_model,
    calibrate,
    letterbox,
    load_manifest,
    read_ppm,
    save_manifest,
    synth_dataset,
)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthset")
    ds = synth_dataset(root, num_images=16, num_classes=7, max_boxes_per_image=3, image_size=320, seed=5)
    save_manifest(ds, root / "manifest.tsv")
    return root


@pytest.fixture(scope="session")
def synth_manifest(synth_root):
    return synth_root / "manifest.tsv"


def load_tensors(manifest_path, limit, target=320):
    """Letterboxed input tensors for the first `limit` manifest rows."""
    ds = load_manifest(manifest_path)
    tensors = []
    for img in ds.images[:limit]:
        px = read_ppm(manifest_path.parent / img.image_path)
        t, _ = letterbox(px.tobytes(), img.width, img.height, target)
        tensors.append(t)
    return tensors


@pytest.fixture(scope="session")
def calib_stats(synth_manifest):
    """Activation ranges for the default 7-class build over 8 images.

    CalibrationStats stores only floats, so keeping it alive for the whole
    session does not disturb memory-tracking tests.
    """
    model = build_model(num_classes=7)
    stats = calibrate(model, load_tensors(synth_manifest, 8))
    del model
    gc.collect()
    return stats


@pytest.fixture(autouse=True)
def _collect_garbage():
    """Keep finalizer-driven tracker bookkeeping deterministic across tests."""
    yield
    gc.collect()


def assert_tracker_empty():
    gc.collect()
    assert TRACKER.current_bytes == 0, "stray live tensors would skew this test"
