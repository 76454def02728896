import dataclasses

import numpy as np
import pytest

from tcsr import cli
from tcsr.data import load_image, save_image
from tcsr.io import (CheckpointError, ParamStore, decode_store, dump_config, encode_store,
                     load_checkpoint, load_model, parse_config, save_checkpoint)
from tcsr.model import REFERENCE_CONFIGS, ModelConfig, count_params, init_model, reference_config
from tcsr.train import TrainConfig


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        store = ParamStore(a=rng.standard_normal((3, 4)), b=rng.random(5).astype(np.float32),
                           c=np.arange(4, dtype=np.int64), d=np.zeros((0, 3)), e=np.float64(2.5))
        save_checkpoint(store, tmp_path / "s.ckpt")
        back = load_checkpoint(tmp_path / "s.ckpt")
        assert list(back) == list(store)
        for k in store:
            assert back[k].dtype == store[k].dtype and back[k].shape == store[k].shape
            np.testing.assert_array_equal(back[k], store[k])

    def test_empty(self, tmp_path):
        save_checkpoint({}, tmp_path / "e.ckpt")
        blob = (tmp_path / "e.ckpt").read_bytes()
        assert blob[:4] == b"TCSR" and len(blob) == 12 + 8
        assert load_checkpoint(tmp_path / "e.ckpt") == {}

    def test_corrupt_byte(self, rng):
        blob = bytearray(encode_store({"w": rng.standard_normal(10)}))
        blob[40] ^= 1
        with pytest.raises(CheckpointError, match="checksum"):
            decode_store(bytes(blob))

    def test_truncated(self, rng):
        blob = encode_store({"w": rng.standard_normal(10)})
        with pytest.raises(CheckpointError):
            decode_store(blob[:30])

    def test_version(self, rng):
        import hashlib
        body = bytearray(encode_store({"w": np.ones(2)})[:-8])
        body[4] = 9
        blob = bytes(body) + hashlib.blake2b(bytes(body), digest_size=8).digest()
        with pytest.raises(CheckpointError, match="version 9"):
            decode_store(blob)

    def test_little_endian(self):
        blob = encode_store({"x": np.array([1.0], dtype=">f8")})
        assert np.frombuffer(blob[-16:-8], "<f8")[0] == 1.0

    def test_model_round_trip(self, tmp_path):
        m = init_model(reference_config("tiny", scale=3), seed=2)
        save_checkpoint(m, tmp_path / "m.ckpt", train_config=TrainConfig(steps=7), step=7)
        back = load_model(tmp_path / "m.ckpt")
        assert back.config == m.config
        for k, v in m.params.items():
            np.testing.assert_array_equal(back.params[k], v)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestConfig:
    @pytest.mark.parametrize("name", sorted(REFERENCE_CONFIGS))
    def test_round_trip(self, name):
        mc = REFERENCE_CONFIGS[name]
        tc = TrainConfig(lr=1.2345678901234567e-4, steps=3, augment=False)
        assert parse_config(dump_config(mc, tc)) == (mc, tc)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("channels = 8\nfoo = 1\n")

    def test_variant_defaults(self):
        mc, tc = parse_config("variant = tiny  # base\nscale = 3\nbatch = 4\n")
        assert mc == reference_config("tiny", scale=3) and tc.batch == 4

    def test_bad_value(self):
        with pytest.raises(ValueError):
            parse_config("use_shift = maybe")
        with pytest.raises(ValueError):
            parse_config("channels")


@pytest.fixture
def tiny_ckpt(tmp_path):
    cfg = ModelConfig(channels=8, blocks=1, kernel=3, heads=2, scale=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg, seed=0), path)
    return path


class TestCli:
    def test_analyze_consistent(self, tmp_path, capsys):
        mc = reference_config("tiny")
        (tmp_path / "t.cfg").write_text(dump_config(mc))
        assert cli.main(["analyze", "--config", str(tmp_path / "t.cfg"), "--hw", "64x64", "--csv"]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        rep = count_params(init_model(mc), 64, 64)
        assert rows[-1] == f"total,{rep.total_params},{rep.total_flops}"

    def test_infer_32_to_128(self, tmp_path, tiny_ckpt, rng):
        save_image(tmp_path / "in.png", rng.random((32, 32, 3)))
        args = ["infer", "--ckpt", str(tiny_ckpt), "--input", str(tmp_path / "in.png"),
                "--output", str(tmp_path / "out.png"), "--scale", "4"]
        assert cli.main(args) == 0
        assert load_image(tmp_path / "out.png").shape == (128, 128, 3)
        assert cli.main(args + ["--tile", "12"]) == 0

    def test_infer_wrong_scale(self, tmp_path, tiny_ckpt, rng):
        save_image(tmp_path / "in.png", rng.random((16, 16, 3)))
        assert cli.main(["infer", "--ckpt", str(tiny_ckpt), "--input", str(tmp_path / "in.png"),
                         "--output", str(tmp_path / "o.png"), "--scale", "2"]) == 1

    def test_eval_identity(self, tmp_path, rng, capsys):
        for i in range(2):
            save_image(tmp_path / f"{i}.png", rng.random((24, 24, 3)))
        assert cli.main(["eval", "--hr", str(tmp_path), "--scale", "2", "--method", "identity",
                         "--csv", str(tmp_path / "r.csv")]) == 0
        out = capsys.readouterr().out
        assert "100.000" in out and "1.0000" in out
        assert (tmp_path / "r.csv").read_text().startswith("image,psnr,ssim")

    def test_train_and_eval(self, tmp_path, rng):
        data = tmp_path / "data"
        data.mkdir()
        for i in range(2):
            save_image(data / f"{i}.png", rng.random((40, 40, 3)))
        cfg = tmp_path / "c.cfg"
        cfg.write_text("channels = 8\nblocks = 1\nkernel = 3\nheads = 2\nscale = 2\n"
                       "patch = 8\nbatch = 2\nsteps = 50\n")
        out = tmp_path / "m.ckpt"
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out),
                         "--steps", "2", "--seed", "3"]) == 0
        assert out.exists() and (tmp_path / "m.ckpt.csv").read_text().count("\n") == 3
        assert cli.main(["eval", "--ckpt", str(out), "--hr", str(data), "--scale", "2"]) == 0

    def test_gradcheck_single_op(self, capsys):
        assert cli.main(["gradcheck", "--op", "pixelshuffle", "--seeds", "1"]) == 0
        assert capsys.readouterr().out.strip().endswith("PASS")

    def test_gradcheck_failure_exit(self, monkeypatch):
        from tcsr import gradcheck

        def broken(rng):
            return (lambda x: (2 * x, lambda g: (g,))), {"x": rng.standard_normal(3)}, {}
        monkeypatch.setitem(gradcheck.OPS, "broken", broken)
        assert cli.main(["gradcheck", "--op", "broken", "--seeds", "1"]) == 1

    @pytest.mark.parametrize("argv", [[], ["bogus"], ["analyze"], ["analyze", "--config", "x", "--wat"],
                                      ["analyze", "--config", "x", "--hw", "64"],
                                      ["eval", "--hr", ".", "--scale", "5"],
                                      ["gradcheck", "--op", "nope"]])
    def test_usage_errors(self, argv, capsys):
        assert cli.main(argv) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_files(self, tmp_path, capsys):
        assert cli.main(["analyze", "--config", str(tmp_path / "nope.cfg")]) == 1
        assert "nope.cfg" in capsys.readouterr().err
        assert cli.main(["infer", "--ckpt", str(tmp_path / "x.ckpt"), "--input", "a.png",
                         "--output", "b.png", "--scale", "2"]) == 1

    def test_eval_requires_ckpt(self):
        assert cli.main(["eval", "--hr", ".", "--scale", "2"]) == 2
