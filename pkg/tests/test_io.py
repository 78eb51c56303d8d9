import json
import struct
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from farmamba.data import (
    Dataset,
    SyntheticSpec,
    class_levels,
    generate_synthetic,
    load_folder_dataset,
    render,
    save_folder_dataset,
)
from farmamba.params import ParamTree, dumps, load, load_tree, loads, save, save_tree
from farmamba.tensor import Tensor


class TestFarmContainer:
    def test_header_layout(self):
        blob = dumps(OrderedDict(w=np.arange(3, dtype=np.float32)))
        assert blob[:4] == b"FARM"
        assert struct.unpack("<II", blob[4:12]) == (1, 1)
        name_len = struct.unpack("<I", blob[12:16])[0]
        assert blob[16 : 16 + name_len] == b"w"
        assert len(blob) == 16 + name_len + 4 + 8 + 3 * 4

    def test_version_follows_dtype(self):
        assert struct.unpack("<I", dumps({"a": np.zeros(1)})[4:8])[0] == 2
        assert struct.unpack("<I", dumps({"a": np.zeros(1, np.float32)})[4:8])[0] == 1

    @settings(max_examples=30, deadline=None)
    @given(
        st.dictionaries(
            st.text("abcdefgh._", min_size=1, max_size=12),
            arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4), elements=st.floats(-1e6, 1e6)),
            max_size=4,
        )
    )
    def test_roundtrip_is_byte_stable(self, entries):
        blob = dumps(entries, version=2)
        back = loads(blob)
        assert list(back) == list(entries)
        for k in entries:
            np.testing.assert_array_equal(back[k], entries[k])
        assert dumps(back, version=2) == blob

    def test_corruption_detected(self):
        blob = dumps({"a": np.ones(4)})
        with pytest.raises(ValueError):
            loads(b"NOPE" + blob[4:])
        with pytest.raises(ValueError):
            loads(blob[:-3])
        with pytest.raises(ValueError):
            loads(blob + b"\0")
        with pytest.raises(ValueError):
            dumps({"a": np.ones(1)}, version=9)

    def test_tree_save_load(self, tmp_path):
        tree = ParamTree(a=Tensor(np.ones((2, 2)), requires_grad=True), b=Tensor(np.arange(3.0), requires_grad=True))
        save_tree(tmp_path / "t.farm", tree)
        back = load_tree(tmp_path / "t.farm")
        assert list(back) == ["a", "b"] and back["b"].requires_grad
        np.testing.assert_array_equal(back["b"].data, [0, 1, 2])

    def test_tree_rejects_duplicates_and_shape_mismatch(self):
        tree = ParamTree(a=Tensor(np.ones(2), requires_grad=True))
        with pytest.raises(KeyError):
            tree["a"] = Tensor(np.ones(2))
        with pytest.raises(ValueError):
            tree.load_arrays({"a": np.ones(3)})
        with pytest.raises(KeyError):
            tree.load_arrays({})
        tree.load_arrays({}, strict=False)

    def test_file_helpers(self, tmp_path):
        save(tmp_path / "x.farm", {"k": np.full(2, 0.5, np.float32)})
        assert load(tmp_path / "x.farm")["k"].dtype == np.float32


class TestSynthetic:
    def test_shapes_and_ranges(self):
        train, val = generate_synthetic(SyntheticSpec(size=32, n_train=6, n_val=2))
        assert train.images.shape == (6, 3, 32, 32) and val.labels.shape == (2, 32, 32)
        assert train.images.min() >= 0 and train.images.max() <= 1
        assert train.labels.dtype == np.int64 and train.labels.max() < 3
        np.testing.assert_array_equal(train.images[:, 0], train.images[:, 2])

    def test_seeded(self):
        a, _ = generate_synthetic(SyntheticSpec(size=32, n_train=3, n_val=1, seed=5))
        b, _ = generate_synthetic(SyntheticSpec(size=32, n_train=3, n_val=1, seed=5))
        np.testing.assert_array_equal(a.images, b.images)

    def test_clean_render_thresholds_to_labels(self, rng):
        spec = SyntheticSpec(size=32, blur_sigma=0, speckle=0, bias_field=0)
        img, lab = render(spec, rng)
        levels = class_levels(3)
        recovered = np.abs(img[..., None] - levels).argmin(-1)
        np.testing.assert_array_equal(recovered, lab)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(size=40)
        with pytest.raises(ValueError):
            SyntheticSpec(num_classes=1)

    def test_batches_cover_once(self, rng):
        ds = Dataset(np.zeros((7, 3, 2, 2)), np.zeros((7, 2, 2), np.int64), 2)
        seen = np.concatenate(list(ds.batches(3, rng)))
        assert sorted(seen.tolist()) == list(range(7))
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3, 2, 2)), np.zeros((3, 2, 2), np.int64), 2)


class TestFolderDataset:
    def test_roundtrip(self, tmp_path):
        train, _ = generate_synthetic(SyntheticSpec(size=32, n_train=3, n_val=1))
        save_folder_dataset(train, tmp_path)
        back = load_folder_dataset(tmp_path)
        np.testing.assert_array_equal(back.labels, train.labels)
        np.testing.assert_allclose(back.images, train.images, atol=0.5 / 255 + 1e-12)
        assert json.loads((tmp_path / "palette.json").read_text())["values"] == [0, 128, 255]

    def test_resize_on_load(self, tmp_path):
        train, _ = generate_synthetic(SyntheticSpec(size=64, n_train=1, n_val=1))
        save_folder_dataset(train, tmp_path)
        assert load_folder_dataset(tmp_path, size=32).images.shape == (1, 3, 32, 32)

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError, match="no pairs"):
            load_folder_dataset(tmp_path)
        train, _ = generate_synthetic(SyntheticSpec(size=32, n_train=2, n_val=1))
        save_folder_dataset(train, tmp_path)
        (tmp_path / "masks" / "00001.pgm").unlink()
        with pytest.raises(ValueError, match="orphan"):
            load_folder_dataset(tmp_path)
        save_folder_dataset(train, tmp_path)
        (tmp_path / "palette.json").write_text(json.dumps({"values": [0, 255, 7]}))
        with pytest.raises(ValueError, match="outside the palette"):
            load_folder_dataset(tmp_path)
        with pytest.raises(ValueError):
            save_folder_dataset(train, tmp_path, palette=[0, 0, 1])
