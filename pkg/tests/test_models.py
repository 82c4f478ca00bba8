import numpy as np
import pytest

from cdgan import autodiff as ad
from cdgan.autodiff import Tensor
from cdgan.errors import ContractError, FormatError, ValidationError
from cdgan.latent import sample_latent
from cdgan.models import (MLP, CHECKPOINT_MAGIC, Linear, MLPSpec, ModelBundle,
                          discriminator_forward, encoder_forward,
                          generator_forward, load_checkpoint, save_checkpoint)


def small_bundle(seed=0, **kw):
    args = dict(p=16, d_z=3, k=3, d_f=4, hidden=(8, 8))
    args.update(kw)
    return ModelBundle.build(rng=np.random.default_rng(seed), **args)


class TestMLPSpec:
    @pytest.mark.parametrize("kw", [
        dict(widths=[4, 1]), dict(widths=[4, 0, 1]),
        dict(widths=[4, 8, 1], hidden="gelu"),
        dict(widths=[4, 8, 1], output="sigmoid"),
    ])
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValidationError):
            MLPSpec(**kw)


class TestForwards:
    def test_generator_output_range_and_shape(self, rng):
        bundle = small_bundle()
        latent = sample_latent(12, 3, 3, 1.0, None, rng)
        x = generator_forward(bundle, latent)
        assert x.values.shape == (12, 16)
        assert np.all(np.abs(x.values) < 1.0)  # tanh output

    def test_discriminator_shape(self, rng):
        bundle = small_bundle()
        out = discriminator_forward(
            bundle, Tensor(rng.uniform(-1, 1, (7, 16)).astype(np.float32)))
        assert out.values.shape == (7, 1)

    def test_encoder_heads(self, rng):
        bundle = small_bundle()
        out = encoder_forward(
            bundle, Tensor(rng.uniform(-1, 1, (9, 16)).astype(np.float32)))
        assert out.f.values.shape == (9, 4)
        assert out.e.values.shape == (9, 3)
        np.testing.assert_allclose(np.linalg.norm(out.f.values, axis=1), 1.0,
                                   atol=1e-5)

    def test_encoder_normalization_switch(self, rng):
        bundle = small_bundle(normalize_f=False)
        out = encoder_forward(
            bundle, Tensor(rng.uniform(-1, 1, (9, 16)).astype(np.float32)))
        norms = np.linalg.norm(out.f.values, axis=1)
        assert not np.allclose(norms, 1.0, atol=1e-3)

    def test_dim_mismatches_rejected(self, rng):
        bundle = small_bundle()
        bad_latent = sample_latent(4, 5, 3, 1.0, None, rng)
        with pytest.raises(ContractError):
            generator_forward(bundle, bad_latent)
        with pytest.raises(ContractError):
            discriminator_forward(bundle, Tensor(np.zeros((2, 9), np.float32)))
        with pytest.raises(ContractError):
            encoder_forward(bundle, Tensor(np.zeros((2, 9), np.float32)))

    def test_gradients_reach_every_parameter(self, rng):
        bundle = small_bundle()
        latent = sample_latent(6, 3, 3, 1.0, None, rng)
        with ad.Tape() as tape:
            x = generator_forward(bundle, latent)
            d = discriminator_forward(bundle, x)
            enc = encoder_forward(bundle, x)
            loss = ad.add(ad.mean(d), ad.add(ad.mean(enc.f), ad.mean(enc.e)))
            tape.backward(loss)
        for p in bundle.all_params:
            assert p.grad is not None, p.name
            assert np.all(np.isfinite(p.grad)), p.name

    def test_param_groups_disjoint_and_complete(self):
        bundle = small_bundle()
        names = [p.name for p in bundle.all_params]
        assert len(names) == len(set(names))
        assert len(bundle.all_params) == (len(bundle.g_params)
                                          + len(bundle.d_params)
                                          + len(bundle.e_params))
        g_ids = {id(p) for p in bundle.g_params}
        assert g_ids.isdisjoint({id(p) for p in bundle.d_params})
        assert g_ids.isdisjoint({id(p) for p in bundle.e_params})


class TestInit:
    def test_seeded_build_reproducible(self):
        a = small_bundle(seed=3)
        b = small_bundle(seed=3)
        for pa, pb in zip(a.all_params, b.all_params):
            np.testing.assert_array_equal(pa.values, pb.values)

    def test_he_limit_respected(self):
        layer = Linear(100, 50, np.random.default_rng(0), "t")
        limit = np.sqrt(6.0 / 100)
        assert np.all(np.abs(layer.w.values) <= limit)
        np.testing.assert_array_equal(layer.b.values, 0.0)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        bundle = small_bundle(seed=7)
        for p in bundle.all_params:  # perturb away from init
            p.values = p.values + rng.standard_normal(p.values.shape).astype(np.float32)
        path = tmp_path / "model.ckpt"
        save_checkpoint(bundle, path)
        loaded = load_checkpoint(path)
        assert (loaded.p, loaded.d_z, loaded.k, loaded.d_f) == (16, 3, 3, 4)
        assert loaded.hidden == (8, 8)
        for pa, pb in zip(bundle.all_params, loaded.all_params):
            assert pa.name == pb.name
            np.testing.assert_array_equal(pa.values, pb.values)

    def test_round_trip_preserves_forward(self, tmp_path, rng):
        bundle = small_bundle(seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(bundle, path)
        loaded = load_checkpoint(path)
        latent = sample_latent(4, 3, 3, 1.0, None, np.random.default_rng(2))
        np.testing.assert_array_equal(
            generator_forward(bundle, latent).values,
            generator_forward(loaded, latent).values)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        import json
        import struct
        blob = json.dumps({"format": "something-else", "tensors": []}).encode()
        path.write_bytes(struct.pack("<I", len(blob)) + blob)
        with pytest.raises(FormatError, match=CHECKPOINT_MAGIC):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        path.write_bytes(b"\x01")
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "garbage.ckpt"
        import struct
        path.write_bytes(struct.pack("<I", 8) + b"\xff" * 8)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        bundle = small_bundle()
        path = tmp_path / "short.ckpt"
        save_checkpoint(bundle, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-200])
        with pytest.raises(FormatError):
            load_checkpoint(path)
