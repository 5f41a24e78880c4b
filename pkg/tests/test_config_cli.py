"""RunConfig parsing and CLI behavior: key registry, exit codes, record
output, and a miniature end-to-end pipeline."""

import os

import numpy as np
import pytest

from videocodes import cli
from videocodes import config as cfg_mod
from videocodes.config import ConfigError


class TestConfig:
    def test_defaults_cover_registry(self):
        d = cfg_mod.defaults()
        assert set(d) == set(cfg_mod.KNOWN_KEYS)

    def test_unknown_key_is_hard_error(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("codec.E_z = 3\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            cfg_mod.parse_config_file(p)

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# a comment\n\ncodec.K = 512  # inline\n")
        assert cfg_mod.parse_config_file(p) == {"codec.K": 512}

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("codec.K 512\n")
        with pytest.raises(ConfigError, match="key=value"):
            cfg_mod.parse_config_file(p)

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="bad value"):
            cfg_mod.parse_value("codec.K", "many")

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("codec.K = 512\n")
        cfg = cfg_mod.resolve(p, ["codec.K=64"])
        assert cfg["codec.K"] == 64

    def test_tuple_and_bool_values(self):
        assert cfg_mod.parse_value("codec.time_strides", "2,1,1") == (2, 1, 1)
        assert cfg_mod.parse_value("cls.flip_pool", "true") is True

    def test_resolved_round_trip(self, tmp_path):
        cfg = cfg_mod.resolve(None, ["codec.K=32", "aug.family=flip",
                                     "cls.flip_pool=true"])
        p = tmp_path / "resolved.cfg"
        cfg_mod.write_resolved(cfg, p)
        assert cfg_mod.parse_config_file(p) == cfg


class TestCliBasics:
    def test_rate_paper_anchor(self, capsys):
        code = cli.main(["rate", "--input", "32x256x256x3", "--codes",
                         "32x16x16", "--codebooks", "2", "--K", "8192"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("rate:")
        assert abs(float(out.split(":")[1]) - 236.3) < 0.05

    def test_rate_missing_args_is_validation_error(self, capsys):
        assert cli.main(["rate"]) == cli.EXIT_VALIDATION

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["rate", "--bogus"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["transmogrify"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_unknown_config_key_is_validation_error(self, tmp_path, capsys):
        code = cli.main(["gen-data", "--out", str(tmp_path / "d"),
                         "--set", "data.seeed=1"])
        assert code == cli.EXIT_VALIDATION

    def test_corrupt_input_is_runtime_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cvc"
        bad.write_bytes(b"JUNKJUNKJUNK")
        model = tmp_path / "m.cvcm"
        # corrupt model file: caught as validation (bad magic is a ValueError)
        code = cli.main(["decompress", "--model", str(bad), "--input",
                         str(bad), "--out", str(tmp_path / "o.cvrv")])
        assert code in (cli.EXIT_VALIDATION, cli.EXIT_RUNTIME)


def _records(out):
    rows = []
    for line in out.strip().splitlines():
        rows.append(dict(f.split(":", 1) for f in line.split("\t")))
    return rows


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    small = ["--set", "data.clips=6", "--set", "data.frames=4",
             "--set", "data.height=16", "--set", "data.width=16"]
    tiny_codec = ["--set", "codec.E_s=2", "--set", "codec.V_e=8",
                  "--set", "codec.K=8", "--set", "codec.steps=4"]
    assert cli.main(["gen-data", "--out", str(d / "data")] + small) == 0
    assert cli.main(["train-codec", "--data", str(d / "data"), "--out",
                     str(d / "codec.cvcm")] + small + tiny_codec) == 0
    return d


class TestPipeline:
    def test_compress_decompress_metrics(self, workdir, capsys):
        d = workdir
        assert cli.main(["compress", "--model", str(d / "codec.cvcm"),
                         "--input", str(d / "data" / "clip_0000.cvrv"),
                         "--out", str(d / "c.cvc")]) == 0
        assert cli.main(["decompress", "--model", str(d / "codec.cvcm"),
                         "--input", str(d / "c.cvc"),
                         "--out", str(d / "r.cvrv")]) == 0
        capsys.readouterr()
        assert cli.main(["metrics", "--a",
                         str(d / "data" / "clip_0000.cvrv"),
                         "--b", str(d / "r.cvrv")]) == 0
        rec = _records(capsys.readouterr().out)[0]
        assert set(rec) == {"psnr", "ssim", "mae"}
        assert 0.0 <= float(rec["mae"]) <= 1.0

    def test_resolved_config_written_and_replayable(self, workdir, capsys):
        d = workdir
        resolved = str(d / "codec.cvcm") + ".resolved.cfg"
        assert os.path.exists(resolved)
        capsys.readouterr()
        assert cli.main(["train-codec", "--config", resolved,
                         "--data", str(d / "data"),
                         "--out", str(d / "codec2.cvcm")]) == 0
        a = (d / "codec.cvcm").read_bytes()
        b = (d / "codec2.cvcm").read_bytes()
        assert a == b

    def test_measured_rate_of_real_container(self, workdir, capsys):
        d = workdir
        capsys.readouterr()
        assert cli.main(["rate", "--container", str(d / "c.cvc")]) == 0
        rec = _records(capsys.readouterr().out)[0]
        # (4*16*16*3*8) / (4*4*4*2*3): E_s=2, K=8 -> b=3
        assert float(rec["rate"]) == pytest.approx(64.0)

    def test_mismatched_codec_rejected(self, workdir, capsys):
        d = workdir
        small = ["--set", "data.clips=6", "--set", "data.frames=4",
                 "--set", "data.height=16", "--set", "data.width=16"]
        tiny = ["--set", "codec.E_s=2", "--set", "codec.V_e=8",
                "--set", "codec.K=8", "--set", "codec.steps=1",
                "--set", "data.seed=9"]
        assert cli.main(["train-codec", "--data", str(d / "data"), "--out",
                         str(d / "other.cvcm")] + small + tiny) == 0
        code = cli.main(["decompress", "--model", str(d / "other.cvcm"),
                         "--input", str(d / "c.cvc"),
                         "--out", str(d / "x.cvrv")])
        assert code == cli.EXIT_VALIDATION
        assert not os.path.exists(d / "x.cvrv")
