import struct

import numpy as np
import pytest

from bxrl.bc import BcConfig, train_bc
from bxrl.checkpoint import (
    MAGIC,
    load_bc,
    load_checkpoint,
    load_vqvae,
    save_bc,
    save_checkpoint,
    save_vqvae,
)
from bxrl.errors import IoError, ParseError, UnsupportedVersion
from bxrl.vqvae import TrainConfig, train_vqvae

TINY = TrainConfig(num_codes=4, embed_dim=16, code_dim=4, num_layers=1,
                   num_heads=2, seq_len=6, batch_size=8, num_epochs=3, seed=0)


class TestRawFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "x.bxrl"
        tensors = [
            ("a", np.arange(6.0).reshape(2, 3)),
            ("b.scalar", np.asarray(3.5)),
        ]
        save_checkpoint(path, "test", {"note": "hi"}, tensors)
        meta, loaded = load_checkpoint(path)
        assert meta["kind"] == "test"
        assert meta["note"] == "hi"
        assert np.array_equal(loaded["a"], tensors[0][1])
        assert loaded["b.scalar"].shape == ()

    def test_magic_is_first_bytes(self, tmp_path):
        path = tmp_path / "x.bxrl"
        save_checkpoint(path, "test", {}, [])
        assert path.read_bytes()[:4] == MAGIC

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bxrl"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "future.bxrl"
        save_checkpoint(path, "test", {}, [])
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersion):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "cut.bxrl"
        save_checkpoint(path, "test", {}, [("a", np.ones(8))])
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(IoError):
            load_checkpoint(tmp_path / "absent.bxrl")


class TestModelCheckpoints:
    def test_vqvae_round_trip(self, pointmass_small, tmp_path):
        model, _ = train_vqvae(pointmass_small, TINY)
        path = tmp_path / "model.bxrl"
        save_vqvae(model, path, extra_metadata={"config_hash": "abc"})
        loaded, meta = load_vqvae(path)
        assert meta["config_hash"] == "abc"
        assert loaded.cfg == model.cfg
        for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)
        # Loaded model tokenizes identically.
        from bxrl.vqvae import tokenize

        t1 = tokenize(model, pointmass_small)
        t2 = tokenize(loaded, pointmass_small)
        for a, b in zip(t1, t2):
            assert np.array_equal(a.tokens, b.tokens)

    def test_bc_round_trip(self, pointmass_small, tmp_path):
        cfg = BcConfig(hidden_dim=16, num_epochs=2, seed=0, min_samples_warn=1)
        obs = np.concatenate([t.observations for t in pointmass_small.trajectories])
        act = np.concatenate([t.actions for t in pointmass_small.trajectories])
        model = train_bc(obs, act, pointmass_small.obs_spec,
                         pointmass_small.act_spec, cfg, scope="cluster_2")
        path = tmp_path / "bc.bxrl"
        save_bc(model, path)
        loaded, meta = load_bc(path)
        assert meta["scope"] == "cluster_2"
        assert np.array_equal(loaded.predict(obs[:10]), model.predict(obs[:10]))

    def test_kind_mismatch_rejected(self, pointmass_small, tmp_path):
        model, _ = train_vqvae(pointmass_small, TINY)
        path = tmp_path / "model.bxrl"
        save_vqvae(model, path)
        with pytest.raises(ParseError):
            load_bc(path)
