import pytest

from scesep.config import RunConfig, parse_config_file, resolve
from scesep.seeding import rng_for, stream_seed


class TestParseConfigFile:
    def write(self, tmp_path, text):
        path = tmp_path / "run.cfg"
        path.write_text(text)
        return path

    def test_basic_types(self, tmp_path):
        path = self.write(tmp_path, "epochs = 12\nlr = 0.005\nsnr_min_db = -3\n")
        overrides = parse_config_file(path)
        assert overrides == {"epochs": 12, "lr": 0.005, "snr_min_db": -3.0}
        assert isinstance(overrides["epochs"], int)

    def test_comments_and_blank_lines(self, tmp_path):
        path = self.write(tmp_path, "# full line comment\n\nepochs = 9  # trailing\n")
        assert parse_config_file(path) == {"epochs": 9}

    def test_unknown_key_rejected(self, tmp_path):
        path = self.write(tmp_path, "momentum = 0.9\n")
        with pytest.raises(ValueError, match="unknown key"):
            parse_config_file(path)

    def test_missing_equals_rejected(self, tmp_path):
        path = self.write(tmp_path, "epochs 12\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(path)

    def test_bad_value_type(self, tmp_path):
        path = self.write(tmp_path, "epochs = soon\n")
        with pytest.raises(ValueError):
            parse_config_file(path)


class TestResolve:
    def test_defaults(self):
        cfg = resolve()
        assert cfg == RunConfig()

    def test_file_overrides_defaults(self):
        cfg = resolve({"epochs": 3}, None)
        assert cfg.epochs == 3

    def test_cli_beats_file(self):
        cfg = resolve({"epochs": 3, "lr": 0.5}, {"epochs": 7})
        assert cfg.epochs == 7 and cfg.lr == 0.5

    def test_none_cli_values_ignored(self):
        cfg = resolve({"epochs": 3}, {"epochs": None})
        assert cfg.epochs == 3


class TestDerivedConfigs:
    def test_stft_config(self):
        s = RunConfig(window_len=256, hop=128).stft_config()
        assert (s.window_len, s.hop) == (256, 128)
        assert s.n_freq == 129

    def test_model_config(self):
        m = RunConfig(hidden_total=16, embed_dim=4).model_config(n_table_rows=10)
        assert m.hidden_total == 16
        assert m.embed_dim == 4
        assert m.n_table_rows == 10
        assert m.n_freq == 257

    def test_snmf_config(self):
        s = RunConfig(snmf_rank=8, snmf_sparsity=0.3).snmf_config()
        assert (s.rank, s.sparsity) == (8, 0.3)


class TestSeeding:
    def test_streams_differ_by_purpose(self):
        assert stream_seed(1, "a") != stream_seed(1, "b")

    def test_streams_differ_by_master(self):
        assert stream_seed(1, "a") != stream_seed(2, "a")

    def test_stable_values(self):
        assert stream_seed(0, "x") == stream_seed(0, "x")

    def test_rng_reproducible(self):
        a = rng_for(5, "draw").random(4)
        b = rng_for(5, "draw").random(4)
        assert (a == b).all()
