"""Dataset loading, normalization round-trips, checkpoints, grid export."""

import numpy as np
import pytest

from cloudgan import data as dio
from cloudgan.demo import make_demo_dataset
from cloudgan.errors import CheckpointError, ConfigurationError, DataError
from cloudgan.models import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    generator_spec_to_dict,
)


def gen(seed=0):
    return np.random.default_rng(seed)


class TestNormalization:
    def test_endpoints(self):
        assert dio.normalize(np.array([0]))[0] == pytest.approx(-1.0)
        assert dio.normalize(np.array([255]))[0] == pytest.approx(1.0)

    def test_midpoint_formula(self):
        assert dio.normalize(np.array([127]))[0] == pytest.approx(
            (127 - 127.5) / 127.5)

    def test_roundtrip_bijection(self):
        v = np.arange(256, dtype=np.uint8)
        assert np.array_equal(dio.denormalize(dio.normalize(v)), v)

    def test_denormalize_clamps(self):
        assert dio.denormalize(np.array([1.7]))[0] == 255
        assert dio.denormalize(np.array([-3.0]))[0] == 0


class TestLoadDataset:
    def test_empty_dir(self, tmp_path):
        (tmp_path / "sar").mkdir()
        (tmp_path / "opt").mkdir()
        assert dio.load_dataset(tmp_path, 0, "train") == []

    def test_split_sizes_and_disjoint(self, tmp_path):
        make_demo_dataset(tmp_path, 10, 16, seed=1)
        train = dio.load_dataset(tmp_path, split_seed=3, split="train")
        test = dio.load_dataset(tmp_path, split_seed=3, split="test")
        assert len(train) == 8 and len(test) == 2
        assert not {s.id for s in train} & {s.id for s in test}

    def test_split_stable_under_reload(self, tmp_path):
        make_demo_dataset(tmp_path, 10, 16, seed=2)
        a = [s.id for s in dio.load_dataset(tmp_path, 7, "train")]
        b = [s.id for s in dio.load_dataset(tmp_path, 7, "train")]
        assert a == b

    def test_orphan_sar_reported(self, tmp_path):
        make_demo_dataset(tmp_path, 3, 16, seed=3)
        (tmp_path / "opt" / "patch0001.png").unlink()
        with pytest.raises(DataError, match="patch0001"):
            dio.load_dataset(tmp_path, 0, "train")

    def test_quadruples_loaded(self, tmp_path):
        make_demo_dataset(tmp_path, 4, 16, seed=4, coverages=[0.3])
        samples = dio.load_dataset(tmp_path, 0, "train", train_fraction=1.0)
        assert all(s.cloudy is not None and s.mask is not None
                   for s in samples)
        assert samples[0].cloudy.shape == (3, 16, 16)
        assert samples[0].mask.alpha.shape == (16, 16)

    def test_size_mismatch_named(self, tmp_path):
        make_demo_dataset(tmp_path, 2, 16, seed=5)
        dio.write_image(tmp_path / "opt" / "patch0000.png",
                        np.zeros((32, 32, 3), np.uint8))
        with pytest.raises(DataError, match="patch0000"):
            dio.load_dataset(tmp_path, 0, "train", train_fraction=1.0)

    def test_tensors_normalized(self, tmp_path):
        make_demo_dataset(tmp_path, 2, 16, seed=6)
        sample = dio.load_dataset(tmp_path, 0, "train")[0]
        for t in (sample.sar, sample.optical):
            assert t.dtype == np.float32
            assert t.min() >= -1.0 and t.max() <= 1.0


class TestCheckpoints:
    def test_roundtrip_bitwise_forward(self, tmp_path):
        net = build_generator(GeneratorSpec(base_channels=4, num_blocks=1),
                              gen(0))
        x = gen(1).standard_normal((1, 1, 16, 16)).astype(np.float32)
        # move running stats off init values first
        net.forward(gen(2).standard_normal((2, 1, 16, 16)).astype(np.float32),
                    train=True, rng=gen(3))
        net.clear_caches()
        before = net.forward(x)
        dio.save_checkpoint(net, {"step": 3}, tmp_path / "ckpt-3")
        loaded, meta, aux = dio.load_checkpoint(tmp_path / "ckpt-3")
        assert meta == {"step": 3}
        assert np.array_equal(loaded.forward(x), before)

    def test_parameter_delta_zero(self, tmp_path):
        net = build_discriminator(DiscriminatorSpec(1, base_channels=4), gen(4))
        dio.save_checkpoint(net, {}, tmp_path / "c")
        loaded, _, _ = dio.load_checkpoint(tmp_path / "c")
        for (_, a), (_, b) in zip(net.named_parameters(),
                                  loaded.named_parameters()):
            assert np.max(np.abs(a.data - b.data)) == 0.0

    def test_mismatched_spec_rejected_before_blobs(self, tmp_path):
        net = build_generator(GeneratorSpec(base_channels=4, num_blocks=1),
                              gen(5))
        path = dio.save_checkpoint(net, {}, tmp_path / "c")
        for blob in (path / "tensors").iterdir():
            blob.unlink()  # blobs unreadable; arch check must fire first
        other = generator_spec_to_dict(GeneratorSpec(base_channels=8))
        with pytest.raises(CheckpointError, match="arch"):
            dio.load_checkpoint(path, expected_arch=other)

    def test_truncated_blob_names_tensor(self, tmp_path):
        net = build_discriminator(DiscriminatorSpec(1, base_channels=4), gen(6))
        path = dio.save_checkpoint(net, {}, tmp_path / "c")
        victim = path / "tensors" / "net.net.steps.0.steps.0.weight.f32"
        victim.write_bytes(victim.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="steps.0.weight"):
            dio.load_checkpoint(path)

    def test_aux_tensors_roundtrip(self, tmp_path):
        net = build_discriminator(DiscriminatorSpec(1, base_channels=4), gen(7))
        aux = {"m.w": np.arange(4, dtype=np.float32)}
        dio.save_checkpoint(net, {}, tmp_path / "c", aux_tensors=aux)
        _, _, loaded_aux = dio.load_checkpoint(tmp_path / "c")
        assert np.array_equal(loaded_aux["m.w"], aux["m.w"])


class TestExportGrid:
    def test_single_tensor(self, tmp_path):
        t = gen(0).uniform(-1, 1, (3, 8, 8))
        path = dio.export_grid([[t]], tmp_path / "one.png")
        assert dio.read_image(path).shape == (8, 8, 3)

    def test_grid_dimensions(self, tmp_path):
        tiles = [[gen(i * 3 + j).uniform(-1, 1, (3, 64, 64))
                  for j in range(3)] for i in range(2)]
        path = dio.export_grid(tiles, tmp_path / "grid.png")
        arr = dio.read_image(path)
        assert arr.shape == (2 * 64 + 2, 3 * 64 + 2 * 2, 3)

    def test_mixed_sizes_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError, match="mixed"):
            dio.export_grid([[np.zeros((3, 8, 8)), np.zeros((3, 16, 16))]],
                            tmp_path / "bad.png")

    def test_labels_add_strip(self, tmp_path):
        t = np.zeros((1, 8, 8))
        path = dio.export_grid([[t, t]], tmp_path / "lab.png",
                               labels=["a", "b"])
        arr = dio.read_image(path)
        assert arr.shape[0] == 8 + dio.GRID_LABEL_STRIP_PX
