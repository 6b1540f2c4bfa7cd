import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from tirseg.dataprep import LabeledImage
from tirseg.synthgen import SceneParams, gen_dataset, gen_scene, load_dataset, snr


def test_no_targets_gives_empty_mask():
    item = gen_scene(SceneParams(n_targets=0, seed=3))
    assert item.mask.sum() == 0


def test_scene_is_deterministic():
    p = SceneParams(seed=42)
    a, b = gen_scene(p), gen_scene(p)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    c = gen_scene(replace(p, seed=43))
    assert not np.array_equal(a.image, c.image)


@pytest.mark.parametrize("seed", range(5))
def test_snr_hits_target(seed):
    item = gen_scene(SceneParams(target_snr=5.0, seed=seed))
    assert 4.5 <= snr(item) <= 5.5


def test_snr_definition():
    rng = np.random.default_rng(0)
    bg = rng.normal(0.4, 0.1, size=(64, 64))
    bg = (bg - bg.mean()) / bg.std() * 0.1 + 0.4
    mask = np.zeros((64, 64), dtype=np.uint8)
    mask[10:12, 10:12] = 1
    img = bg.copy()
    bgvals = bg[mask == 0]
    img[mask == 1] = bgvals.mean() + 5 * bgvals.std()
    assert abs(snr(LabeledImage(img, mask)) - 5.0) < 1e-9
    img[mask == 1] = bgvals.mean()
    assert abs(snr(LabeledImage(img, mask))) < 1e-9


def test_snr_errors():
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[0, 0] = 1
    with pytest.raises(ValueError):
        snr(LabeledImage(np.full((4, 4), 0.3), mask))
    with pytest.raises(ValueError):
        snr(LabeledImage(np.random.default_rng(0).random((4, 4)), np.zeros((4, 4), dtype=np.uint8)))


def test_flat_background_is_constant():
    p = SceneParams(n_targets=0, clutter_amplitude=0, row_noise_sigma=0, pixel_noise_sigma=0,
                    horizon_gradient=0, seed=9)
    img = gen_scene(p).image
    assert np.all(img == img[0, 0])


@pytest.mark.parametrize("extent", [1, 2, 3, 5, 7])
def test_target_components(extent):
    for seed in range(4):
        item = gen_scene(SceneParams(n_targets=4, target_extent=extent, seed=seed, target_snr=4))
        labels, n = ndimage.label(item.mask)
        assert n == 4
        sizes = ndimage.sum(item.mask, labels, range(1, n + 1))
        assert sizes.min() >= 1 and sizes.max() <= (extent + 2) ** 2


def test_placement_failure():
    with pytest.raises(RuntimeError):
        gen_scene(SceneParams(width=16, height=16, n_targets=30, target_extent=5))


def test_param_validation():
    with pytest.raises(ValueError):
        SceneParams(target_extent=9)
    with pytest.raises(ValueError):
        SceneParams(target_snr=0)
    with pytest.raises(ValueError):
        SceneParams(pixel_noise_sigma=-1)


def test_dataset_files_and_determinism(tmp_path):
    base = SceneParams(width=32, height=32, n_targets=2)
    ds = gen_dataset(base, 4, seed=7, out_dir=tmp_path)
    assert len(list((tmp_path / "images").iterdir())) == 4
    assert len(list((tmp_path / "masks").iterdir())) == 4
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest) == 4 == len(ds.items)
    seeds = [m["seed"] for m in manifest]
    assert len(set(seeds)) == 4
    again = gen_dataset(base, 4, seed=7)
    for a, b in zip(ds.items, again.items):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    loaded = load_dataset(tmp_path / "manifest.json")
    for a, b in zip(ds.items, loaded.items):
        assert np.array_equal(a.mask, b.mask)
        assert np.abs(a.image - b.image).max() <= 1 / 65535


def test_dataset_snr_jitter_and_accuracy():
    ds = gen_dataset(SceneParams(target_snr=4.0), 12, seed=1)
    for item, entry in zip(ds.items, ds.manifest):
        target = entry["params"]["target_snr"]
        assert 4.0 * 0.7 <= target <= 4.0 * 1.3
        assert abs(snr(item) - target) <= 0.1 * target
