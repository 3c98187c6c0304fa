"""Corpus construction, the block store format, and image loading."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from rdlt import dataset, intra


def _checker_image(h, w, seed):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(h, w))
    return base.astype(np.uint8)


def _write_images(directory, count, size=48, seed=0):
    paths = []
    for i in range(count):
        path = os.path.join(directory, f"img_{i:02d}.pgm")
        dataset.write_pgm(_checker_image(size, size, seed + i), path)
        paths.append(path)
    return paths


def test_build_save_load_roundtrip(tmp_path):
    paths = _write_images(str(tmp_path), 4)
    ds = dataset.build_dataset(paths, n=8, split=0.8, seed=3)
    out = str(tmp_path / "ds")
    content = dataset.save_dataset(ds, out)

    loaded, manifest = dataset.load_dataset(out)
    assert loaded.n == ds.n
    assert np.array_equal(loaded.train, ds.train)
    assert np.array_equal(loaded.eval, ds.eval)
    assert np.array_equal(loaded.mode_histogram, ds.mode_histogram)
    assert loaded.sources == ds.sources
    assert manifest["content_hash"] == content
    assert loaded.train.dtype == np.int16


def test_build_is_deterministic_and_seed_sensitive(tmp_path):
    paths = _write_images(str(tmp_path), 3)
    a = dataset.build_dataset(paths, n=8, split=0.85, seed=1)
    b = dataset.build_dataset(paths, n=8, split=0.85, seed=1)
    c = dataset.build_dataset(paths, n=8, split=0.85, seed=2)
    assert a.content_hash() == b.content_hash()
    assert np.array_equal(a.train, b.train)
    # A different seed permutes differently but keeps the same block pool.
    assert a.content_hash() != c.content_hash()
    pool_a = np.sort(np.concatenate([a.train, a.eval], axis=0).view(np.int16), axis=None)
    pool_c = np.sort(np.concatenate([c.train, c.eval], axis=0).view(np.int16), axis=None)
    assert np.array_equal(pool_a, pool_c)


def test_histogram_counts_every_block(tmp_path):
    paths = _write_images(str(tmp_path), 3, size=40)
    ds = dataset.build_dataset(paths, n=8, split=0.5, seed=0)
    total = ds.train.shape[0] + ds.eval.shape[0]
    assert int(ds.mode_histogram.sum()) == total
    assert ds.mode_histogram.shape == (intra.NUM_MODES,)


def test_split_fraction_positions_cut(tmp_path):
    paths = _write_images(str(tmp_path), 2, size=32)
    ds = dataset.build_dataset(paths, n=8, split=0.75, seed=0)
    total = ds.train.shape[0] + ds.eval.shape[0]
    assert ds.train.shape[0] == int(total * 0.75)


def test_degenerate_splits_rejected(tmp_path):
    paths = _write_images(str(tmp_path), 1, size=16)  # 4 blocks only
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            dataset.build_dataset(paths, n=8, split=bad, seed=0)
    # 4 blocks at split 0.1 -> floor(0.4) = 0 training blocks
    with pytest.raises(ValueError, match="empty partition"):
        dataset.build_dataset(paths, n=8, split=0.1, seed=0)


def test_build_requires_images_and_blocks(tmp_path):
    with pytest.raises(ValueError, match="no input images"):
        dataset.build_dataset([], n=8)
    tiny = os.path.join(str(tmp_path), "tiny.pgm")
    dataset.write_pgm(np.zeros((4, 4), dtype=np.uint8), tiny)
    with pytest.raises(ValueError, match="no 8x8 blocks"):
        dataset.build_dataset([tiny], n=8)


def test_content_hash_covers_sources(tmp_path):
    paths = _write_images(str(tmp_path), 2)
    before = dataset.build_dataset(paths, n=8, split=0.85, seed=0).content_hash()
    img = _checker_image(48, 48, 999)
    dataset.write_pgm(img, paths[0])
    after = dataset.build_dataset(paths, n=8, split=0.85, seed=0).content_hash()
    assert before != after


def test_extra_manifest_merges_after_hash(tmp_path):
    paths = _write_images(str(tmp_path), 2)
    ds = dataset.build_dataset(paths, n=8, split=0.85, seed=0)
    plain = dataset.save_dataset(ds, str(tmp_path / "plain"))
    tagged = dataset.save_dataset(ds, str(tmp_path / "tagged"),
                                  extra_manifest={"note": {"tool": "test"}})
    # Provenance must not move the content hash.
    assert plain == tagged
    with open(tmp_path / "tagged" / dataset.MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    assert manifest["note"] == {"tool": "test"}
    assert manifest["content_hash"] == plain


def test_extra_manifest_cannot_shadow(tmp_path):
    paths = _write_images(str(tmp_path), 2)
    ds = dataset.build_dataset(paths, n=8, split=0.85, seed=0)
    with pytest.raises(ValueError, match="shadow"):
        dataset.save_dataset(ds, str(tmp_path / "bad"), extra_manifest={"n": 4})


def test_corrupt_store_detected(tmp_path):
    paths = _write_images(str(tmp_path), 2)
    ds = dataset.build_dataset(paths, n=8, split=0.85, seed=0)
    out = str(tmp_path / "ds")
    dataset.save_dataset(ds, out)
    store = os.path.join(out, "train.rdlb")
    raw = bytearray(open(store, "rb").read())
    raw[20] ^= 0xFF
    open(store, "wb").write(bytes(raw))
    with pytest.raises(ValueError, match="does not match manifest"):
        dataset.load_dataset(out)


def test_missing_manifest_is_oserror(tmp_path):
    with pytest.raises(OSError, match="no dataset manifest"):
        dataset.load_dataset(str(tmp_path))


def test_wrong_manifest_format_rejected(tmp_path):
    with open(tmp_path / dataset.MANIFEST_NAME, "w") as fh:
        json.dump({"format": "something-else"}, fh)
    with pytest.raises(ValueError, match="not a dataset manifest"):
        dataset.load_dataset(str(tmp_path))


def test_block_store_roundtrip_and_validation(tmp_path):
    rng = np.random.default_rng(0)
    blocks = rng.integers(-300, 300, size=(17, 64)).astype(np.int16)
    path = str(tmp_path / "b.rdlb")
    dataset.save_blocks(blocks, path)
    back = dataset.load_blocks(path)
    assert np.array_equal(back, blocks)

    with pytest.raises(ValueError, match="not square"):
        dataset.save_blocks(np.zeros((3, 63), dtype=np.int16), path)
    with pytest.raises(ValueError, match="outside int16"):
        dataset.save_blocks(np.full((1, 64), 1 << 15, dtype=np.int64), path)


def test_block_store_corruption_errors(tmp_path):
    blocks = np.arange(128, dtype=np.int16).reshape(2, 64)
    path = str(tmp_path / "b.rdlb")
    dataset.save_blocks(blocks, path)
    raw = open(path, "rb").read()

    bad_magic = str(tmp_path / "m.rdlb")
    open(bad_magic, "wb").write(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="bad magic"):
        dataset.load_blocks(bad_magic)

    truncated = str(tmp_path / "t.rdlb")
    open(truncated, "wb").write(raw[:40])
    with pytest.raises(ValueError, match="expected"):
        dataset.load_blocks(truncated)

    short_header = str(tmp_path / "h.rdlb")
    open(short_header, "wb").write(raw[:6])
    with pytest.raises(ValueError):
        dataset.load_blocks(short_header)

    versioned = bytearray(raw)
    versioned[4] = 99
    vpath = str(tmp_path / "v.rdlb")
    open(vpath, "wb").write(bytes(versioned))
    with pytest.raises(ValueError, match="version"):
        dataset.load_blocks(vpath)


def test_write_pgm_roundtrip_with_comment(tmp_path):
    img = _checker_image(9, 13, 5)
    path = str(tmp_path / "c.pgm")
    dataset.write_pgm(img, path, comment="hello header")
    back = dataset.load_image(path)
    assert np.array_equal(back, img)
    assert b"# hello header" in open(path, "rb").read()
    with pytest.raises(ValueError, match="single line"):
        dataset.write_pgm(img, path, comment="two\nlines")
    with pytest.raises(ValueError, match="2-D"):
        dataset.write_pgm(np.zeros((2, 2, 3), dtype=np.uint8), path)


def test_load_image_grayscale_passthrough(tmp_path):
    img = _checker_image(20, 21, 8)
    path = str(tmp_path / "g.png")
    Image.fromarray(img, mode="L").save(path)
    assert np.array_equal(dataset.load_image(path), img)


def test_load_image_bt601_weights(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, size=(15, 10, 3)).astype(np.uint8)
    path = str(tmp_path / "c.png")
    Image.fromarray(rgb, mode="RGB").save(path)
    got = dataset.load_image(path)
    want = np.clip(np.rint(
        0.299 * rgb[..., 0].astype(np.float64)
        + 0.587 * rgb[..., 1]
        + 0.114 * rgb[..., 2]), 0, 255).astype(np.uint8)
    assert np.array_equal(got, want)


def test_load_image_rejects_high_bit_depth(tmp_path):
    deep = (np.arange(64, dtype=np.int32) * 1000).reshape(8, 8)
    path = str(tmp_path / "deep.png")
    Image.fromarray(deep, mode="I").save(path)
    with pytest.raises(ValueError, match="unsupported image mode"):
        dataset.load_image(path)


def test_load_image_missing_file(tmp_path):
    with pytest.raises(OSError):
        dataset.load_image(str(tmp_path / "nope.png"))
