import numpy as np
import pytest

from composcene.errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    ParameterError,
    TruncationError,
    VersionError,
)
from composcene.world import (
    BlobSpec,
    SceneSpec,
    load_dataset,
    render_scene,
    sample_dataset,
    save_dataset,
    scene_concepts,
    splits_disjoint,
)


def test_single_blob_peak_at_center():
    spec = SceneSpec(image_shape=(16, 16, 1), objects=(BlobSpec(0.5, 0.5, 0.2),))
    img = render_scene(spec)[:, :, 0]
    peak = np.unravel_index(img.argmax(), img.shape)
    assert abs(peak[0] - 7.5) <= 1 and abs(peak[1] - 7.5) <= 1


def test_zero_objects_constant_background():
    img = render_scene(SceneSpec(image_shape=(8, 8, 1)))
    assert np.all(img == img[0, 0, 0])


def test_mirrored_blobs_give_mirrored_image():
    spec = SceneSpec(image_shape=(16, 16, 1),
                     objects=(BlobSpec(0.3, 0.5, 0.15), BlobSpec(0.7, 0.5, 0.15)))
    img = render_scene(spec)[:, :, 0]
    assert np.allclose(img, img[:, ::-1], atol=1e-12)


def test_render_is_deterministic():
    spec = SceneSpec(image_shape=(12, 12, 1),
                     objects=(BlobSpec(0.4, 0.6, 0.1),), seed=77)
    assert np.array_equal(render_scene(spec), render_scene(spec))


def test_out_of_range_center_rejected():
    spec = SceneSpec(image_shape=(8, 8, 1), objects=(BlobSpec(0.02, 0.5, 0.1),))
    with pytest.raises(ParameterError):
        render_scene(spec)


def test_attributes_modulate_rendering():
    base = SceneSpec(image_shape=(12, 12, 1), objects=(BlobSpec(0.5, 0.5, 0.2),))
    dark = render_scene(base)
    light = render_scene(SceneSpec(image_shape=(12, 12, 1),
                                   objects=base.objects, attributes=(1, 0, 0)))
    border = render_scene(SceneSpec(image_shape=(12, 12, 1),
                                    objects=base.objects, attributes=(0, 1, 0)))
    ring = render_scene(SceneSpec(image_shape=(12, 12, 1),
                                  objects=base.objects, attributes=(0, 0, 1)))
    assert light[0, 0, 0] > dark[0, 0, 0]
    assert border[0, 5, 0] == pytest.approx(0.9)
    assert ring[6, 6, 0] < dark[6, 6, 0]   # ring carves out the middle


def test_palettes_differ():
    spec0 = SceneSpec(image_shape=(12, 12, 1), objects=(BlobSpec(0.5, 0.5, 0.2),), palette=0)
    spec1 = SceneSpec(image_shape=(12, 12, 1), objects=(BlobSpec(0.5, 0.5, 0.2),), palette=1)
    assert not np.array_equal(render_scene(spec0), render_scene(spec1))


def test_three_channel_mode():
    spec = SceneSpec(image_shape=(8, 8, 3), objects=(BlobSpec(0.5, 0.5, 0.2),))
    img = render_scene(spec)
    assert img.shape == (8, 8, 3)
    assert not np.array_equal(img[:, :, 0], img[:, :, 2])


def test_scene_concepts_mapping():
    spec = SceneSpec(image_shape=(8, 8, 1),
                     objects=(BlobSpec(0.2, 0.3, 0.1), BlobSpec(0.7, 0.8, 0.1)),
                     attributes=(1, 0, 1))
    local = scene_concepts(spec, "local")
    assert np.array_equal(local.matrix(), [[0.2, 0.3], [0.7, 0.8]])
    glob = scene_concepts(spec, "global")
    assert glob.k == 3 and glob.dim == 6


def test_sample_determinism_bitwise():
    a = sample_dataset("local", 5, seed=42, image_shape=(10, 10, 1))
    b = sample_dataset("local", 5, seed=42, image_shape=(10, 10, 1))
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.image, rb.image)
        assert ra.spec == rb.spec


def test_sample_k_range_exact():
    ds = sample_dataset("local", 50, k_range=(2, 2), seed=1, image_shape=(12, 12, 1))
    assert all(len(r.spec.objects) == 2 for r in ds.records)


def test_minimum_separation_holds():
    ds = sample_dataset("local", 1000, k_range=(2, 4), seed=3,
                        image_shape=(8, 8, 1), min_sep=0.15)
    for rec in ds.records:
        pts = np.array([(o.cx, o.cy) for o in rec.spec.objects])
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                assert np.hypot(*(pts[i] - pts[j])) >= 0.15


def test_infeasible_separation_raises():
    with pytest.raises(ConfigError):
        sample_dataset("local", 1, k_range=(40, 40), seed=0,
                       image_shape=(8, 8, 1), min_sep=0.3)


def test_rerender_reproduces_stored_images():
    ds = sample_dataset("global", 8, seed=5, image_shape=(10, 10, 1))
    for rec in ds.records:
        assert np.array_equal(render_scene(rec.spec), rec.image)


def test_save_load_round_trip_bitwise(tmp_path):
    ds = sample_dataset("local", 7, k_range=(1, 3), seed=9, image_shape=(9, 11, 1))
    path = tmp_path / "scenes.dat"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.header == ds.header
    assert len(back.records) == len(ds.records)
    for ra, rb in zip(ds.records, back.records):
        assert np.array_equal(ra.image, rb.image)
        assert ra.spec == rb.spec
        assert np.array_equal(ra.concepts.matrix(), rb.concepts.matrix())
    # saving the loaded dataset reproduces the file bytes
    path2 = tmp_path / "scenes2.dat"
    save_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_global_round_trip(tmp_path):
    ds = sample_dataset("global", 4, seed=10, image_shape=(8, 8, 1))
    path = tmp_path / "g.dat"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.header.task == "global"
    for ra, rb in zip(ds.records, back.records):
        assert np.array_equal(ra.concepts.matrix(), rb.concepts.matrix())


def test_truncated_file_raises_truncation(tmp_path):
    ds = sample_dataset("local", 3, seed=11, image_shape=(8, 8, 1))
    path = tmp_path / "t.dat"
    save_dataset(ds, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 200])
    with pytest.raises(TruncationError):
        load_dataset(path)


def test_future_version_raises_naming_both(tmp_path):
    ds = sample_dataset("local", 2, seed=12, image_shape=(8, 8, 1))
    path = tmp_path / "v.dat"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError) as err:
        load_dataset(path)
    assert "99" in str(err.value) and "1" in str(err.value)


def test_corrupted_payload_raises_checksum(tmp_path):
    ds = sample_dataset("local", 2, seed=13, image_shape=(8, 8, 1))
    path = tmp_path / "c.dat"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[-40] ^= 0xFF   # payload byte, not the digest
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_dataset(path)


def test_wrong_magic_raises(tmp_path):
    path = tmp_path / "junk.dat"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataFormatError):
        load_dataset(path)


def test_split_disjointness():
    a = sample_dataset("local", 2, k_range=(1, 2), palette=0, seed=1,
                       image_shape=(8, 8, 1)).header
    b = sample_dataset("local", 2, k_range=(3, 4), palette=1, seed=1,
                       image_shape=(8, 8, 1)).header
    c = sample_dataset("local", 2, k_range=(2, 3), palette=1, seed=1,
                       image_shape=(8, 8, 1)).header
    assert splits_disjoint(a, b)
    assert not splits_disjoint(a, c)   # K ranges overlap
    assert not splits_disjoint(b, c)   # palettes clash
