"""Flat run configuration with `key = value` config-file support.

Precedence: CLI flag > config file > default. Unknown keys are rejected.
"""

from dataclasses import dataclass, fields

from .dsp import StftConfig
from .model import ModelConfig
from .snmf import SnmfConfig


@dataclass
class RunConfig:
    seed: int = 0
    # corpus
    n_train: int = 16
    n_val: int = 4
    n_test: int = 4
    snr_min_db: float = -5.0
    snr_max_db: float = 5.0
    clip_duration_s: float = 3.0
    # stft
    window_len: int = 512
    hop: int = 256
    sample_rate_hz: int = 10000
    # model
    n_blstm_layers: int = 2
    hidden_total: int = 32
    embed_dim: int = 8
    n_mix_sources: int = 2
    batch_size: int = 4
    sce_weight: float = 0.2
    epochs: int = 100
    lr: float = 1e-2
    grad_clip: float = 5.0
    # inference
    kmeans_restarts: int = 8
    kmeans_max_iter: int = 300
    low_energy_threshold: float = 0.1
    # snmf
    snmf_rank: int = 32
    snmf_sparsity: float = 0.1
    snmf_max_iters: int = 200
    snmf_tol: float = 1e-5
    trim_threshold: float = -2.0

    def stft_config(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop, self.sample_rate_hz)

    def model_config(self, n_table_rows: int) -> ModelConfig:
        return ModelConfig(
            n_blstm_layers=self.n_blstm_layers,
            hidden_total=self.hidden_total,
            embed_dim=self.embed_dim,
            n_freq=self.stft_config().n_freq,
            n_mix_sources=self.n_mix_sources,
            n_table_rows=n_table_rows,
            batch_size=self.batch_size,
            sce_weight=self.sce_weight,
            epochs=self.epochs,
            lr=self.lr,
            grad_clip=self.grad_clip,
        )

    def snmf_config(self) -> SnmfConfig:
        return SnmfConfig(
            rank=self.snmf_rank,
            sparsity=self.snmf_sparsity,
            max_iters=self.snmf_max_iters,
            tol=self.snmf_tol,
            trim_threshold=self.trim_threshold,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Parse `key = value` lines; `#` starts a comment; unknown keys fail."""
    overrides = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _FIELDS[key](value)
    return overrides


def resolve(file_overrides: dict = None, cli_overrides: dict = None) -> RunConfig:
    """Merge defaults, config file, and CLI flags (in rising precedence)."""
    merged = {}
    merged.update(file_overrides or {})
    merged.update({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    return RunConfig(**merged)
