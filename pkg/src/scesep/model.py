"""Source-contrastive embedding network with a mask-inference head.

The network maps compressed mixture magnitudes (B, T, F) through a BLSTM
stack and a per-timestep linear embedding layer to an embedding field
(B, T, F, E). Training contrasts those per-bin embeddings against a
trainable per-source table; a softmax head over the embedding dimension
yields a ratio mask. Inference never touches the source table.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .container import MAGIC_MODEL, read_container, write_container
from .errors import EmptyCorpus, ShapeMismatch, UnknownSource
from .seeding import rng_for


@dataclass(frozen=True)
class ModelConfig:
    n_blstm_layers: int = 2
    hidden_total: int = 32  # concatenated width of both directions
    embed_dim: int = 8
    n_freq: int = 257
    n_mix_sources: int = 2  # M
    n_table_rows: int = 16  # C
    batch_size: int = 4
    sce_weight: float = 0.2  # weight on the contrastive term; 1-w on the mask term
    epochs: int = 100
    lr: float = 1e-2
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.hidden_total % 2 != 0:
            raise ValueError("hidden_total must be even (two directions)")
        if not 0.0 <= self.sce_weight <= 1.0:
            raise ValueError("sce_weight must be in [0, 1]")
        if self.embed_dim < 1 or self.n_mix_sources < 2:
            raise ValueError("embed_dim >= 1 and n_mix_sources >= 2 required")


class SeparationModel:
    """Parameters of the BLSTM stack, embedding layer, MI head, and table."""

    def __init__(self, config: ModelConfig, rng=None, values=None):
        self.config = config
        h = config.hidden_total // 2
        if rng is None and values is None:
            rng = np.random.default_rng(0)
        self.layers = []
        d_in = config.n_freq
        for i in range(config.n_blstm_layers):
            self.layers.append(
                (
                    nn.init_lstm_params(d_in, h, rng or np.random.default_rng(0), f"blstm{i}.fwd"),
                    nn.init_lstm_params(d_in, h, rng or np.random.default_rng(0), f"blstm{i}.bwd"),
                )
            )
            d_in = config.hidden_total
        k = config.n_freq * config.embed_dim
        bound = 1.0 / math.sqrt(config.hidden_total)
        r = rng or np.random.default_rng(0)
        self.embed_w = nn.Parameter(r.uniform(-bound, bound, (config.hidden_total, k)), "embed.w")
        self.embed_b = nn.Parameter(np.zeros(k), "embed.b")
        mb = 1.0 / math.sqrt(config.embed_dim)
        self.mi_w = nn.Parameter(r.uniform(-mb, mb, (config.embed_dim, config.n_mix_sources)), "mi.w")
        self.mi_b = nn.Parameter(np.zeros(config.n_mix_sources), "mi.b")
        rows = r.standard_normal((config.n_table_rows, config.embed_dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        self.table = nn.Parameter(rows, "table")
        if values is not None:
            self.load_values(values)

    def parameters(self):
        params = []
        for p_fwd, p_bwd in self.layers:
            params.extend(p_fwd.parameters())
            params.extend(p_bwd.parameters())
        params.extend([self.embed_w, self.embed_b, self.mi_w, self.mi_b, self.table])
        return params

    def named_values(self):
        return {p.name: p.data for p in self.parameters()}

    def load_values(self, values):
        for p in self.parameters():
            if p.name not in values:
                raise ShapeMismatch(f"missing tensor {p.name!r} in checkpoint")
            if values[p.name].shape != p.data.shape:
                raise ShapeMismatch(
                    f"{p.name}: expected {p.data.shape}, got {values[p.name].shape}"
                )
            p.data = values[p.name].copy()

    def forward_embeddings(self, x: np.ndarray) -> nn.Tensor:
        """Compressed magnitudes (B, T, F) -> embedding field (B, T, F, E)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.config.n_freq:
            raise ShapeMismatch(f"expected (B, T, {self.config.n_freq}), got {x.shape}")
        out = nn.Tensor(x)
        for p_fwd, p_bwd in self.layers:
            out = nn.blstm_layer(out, p_fwd, p_bwd)
        out = nn.time_affine(out, self.embed_w, self.embed_b)
        B, T = x.shape[0], x.shape[1]
        return nn.reshape(out, (B, T, self.config.n_freq, self.config.embed_dim))

    def mi_masks(self, v_i: nn.Tensor) -> nn.Tensor:
        """Ratio mask (B, T, F, M): per-bin affine over E, softmax over M."""
        B, T, F, E = v_i.shape
        flat = nn.reshape(v_i, (B * T * F, E))
        logits = nn.add(nn.matmul(flat, self.mi_w), self.mi_b)
        return nn.reshape(nn.softmax(logits, axis=-1), (B, T, F, self.config.n_mix_sources))


def gather_source_vectors(model: SeparationModel, source_ids) -> nn.Tensor:
    """Rows of the source table for a (B, M) id array -> (B, M, E)."""
    ids = np.asarray(source_ids)
    if ids.min() < 0 or ids.max() >= model.config.n_table_rows:
        raise UnknownSource(f"source ids out of range [0, {model.config.n_table_rows})")
    return nn.gather_rows(model.table, ids)


def sce_loss(v_i: nn.Tensor, v_o: nn.Tensor, y: np.ndarray) -> nn.Tensor:
    """Contrastive loss over dominance labels.

    Per bin: -(1/M) * sum_m log sigmoid(y * <v_i, v_o[m]>); total is the
    batch mean of the per-sample sums over (t, f).
    """
    B, T, F, E = v_i.shape
    M = v_o.shape[1]
    if y.shape != (B, T, F, M):
        raise ShapeMismatch(f"labels {y.shape} != {(B, T, F, M)}")
    vi_flat = nn.reshape(v_i, (B, T * F, E))
    d = nn.reshape(nn.matmul(vi_flat, nn.swap_last(v_o)), (B, T, F, M))
    return nn.mul(nn.tsum(nn.log_sigmoid(nn.mul(d, y))), -1.0 / (B * M))


def sce_loss_oracle(v_i: np.ndarray, v_o: np.ndarray, y: np.ndarray) -> float:
    """Naive five-nested-loop scalar reference for sce_loss."""
    B, T, F, E = v_i.shape
    M = v_o.shape[1]
    total = 0.0
    for b in range(B):
        for t in range(T):
            for f in range(F):
                for m in range(M):
                    dot = 0.0
                    for e in range(E):
                        dot += v_i[b, t, f, e] * v_o[b, m, e]
                    z = y[b, t, f, m] * dot
                    total += -math.log(1.0 / (1.0 + math.exp(-z))) / M
    return total / B


def mi_loss(mask: nn.Tensor, x_mag: np.ndarray, true_source_mags: np.ndarray) -> nn.Tensor:
    """Mean squared error between masked mixture and true source magnitudes."""
    B, T, F, M = mask.shape
    if x_mag.shape != (B, T, F) or true_source_mags.shape != (B, T, F, M):
        raise ShapeMismatch("mi_loss shapes inconsistent with mask")
    est = nn.mul(mask, x_mag[..., None])
    diff = nn.sub(est, true_source_mags)
    return nn.tmean(nn.mul(diff, diff))


# --- training --------------------------------------------------------------


@dataclass
class Batch:
    x_mag: np.ndarray  # (B, T, F) compressed mixture magnitudes
    labels: np.ndarray  # (B, T, F, M)
    source_ids: np.ndarray  # (B, M)
    true_mags: np.ndarray  # (B, T, F, M) compressed per-source magnitudes


def batch_from_records(records) -> Batch:
    from .dsp import compress

    xs, ys, ids, trues = [], [], [], []
    for rec in records:
        feat = compress(rec.mixture_spec)
        xs.append(feat.mag)
        ys.append(rec.labels)
        ids.append(rec.source_ids)
        trues.append(
            np.stack(
                [np.sqrt(np.abs(s)) / feat.norm_scale for s in rec.source_specs],
                axis=-1,
            )
        )
    return Batch(np.stack(xs), np.stack(ys), np.asarray(ids), np.stack(trues))


def _losses(model, batch):
    v_i = model.forward_embeddings(batch.x_mag)
    v_o = gather_source_vectors(model, batch.source_ids)
    l_sce = sce_loss(v_i, v_o, batch.labels)
    mask = model.mi_masks(v_i)
    l_mi = mi_loss(mask, batch.x_mag, batch.true_mags)
    return l_sce, l_mi


def _bins_per_clip(records):
    t, f, _ = records[0].labels.shape
    return t * f


def evaluate_losses(model, records, batch_size):
    """(mean sce, mean mi) over records, without touching gradients."""
    sce_sum = mi_sum = 0.0
    for lo in range(0, len(records), batch_size):
        chunk = records[lo : lo + batch_size]
        l_sce, l_mi = _losses(model, batch_from_records(chunk))
        sce_sum += float(l_sce.data) * len(chunk)
        mi_sum += float(l_mi.data) * len(chunk)
    return sce_sum / len(records), mi_sum / len(records)


@dataclass
class TrainState:
    """Everything needed to continue or reuse a training run."""

    model: SeparationModel
    optimizer: nn.Adam
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    best_values: dict = field(default_factory=dict)
    log_rows: list = field(default_factory=list)


def train(
    train_records,
    val_records,
    config: ModelConfig,
    seed: int,
    state: TrainState = None,
    epochs: int = None,
) -> TrainState:
    """Train SCE+MI with Adam; deterministic under seed.

    Shuffling and initialization are drawn from named streams of the seed,
    keyed by epoch, so resuming from a checkpoint replays the identical
    continuation. The best-validation parameter snapshot is retained.
    """
    if not train_records:
        raise EmptyCorpus("no training records")
    if state is None:
        model = SeparationModel(config, rng_for(seed, "model-init"))
        state = TrainState(model, nn.Adam(model.parameters(), lr=config.lr))
    model, opt = state.model, state.optimizer
    params = model.parameters()
    alpha = config.sce_weight
    # The contrastive loss sums over T*F bins while the mask loss is a per-bin
    # mean; put both on a per-bin scale so neither swamps the other.
    n_bins = _bins_per_clip(train_records)
    end_epoch = config.epochs if epochs is None else epochs
    for epoch in range(state.epoch, end_epoch):
        order = rng_for(seed, f"shuffle-{epoch}").permutation(len(train_records))
        sce_sum = mi_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = batch_from_records([train_records[i] for i in order[lo : lo + config.batch_size]])
            opt.zero_grad()
            l_sce, l_mi = _losses(model, batch)
            total = nn.add(nn.mul(l_sce, alpha / n_bins), nn.mul(l_mi, 1.0 - alpha))
            total.backward()
            nn.clip_global_norm(params, config.grad_clip)
            opt.step()
            sce_sum += float(l_sce.data) * len(batch.x_mag)
            mi_sum += float(l_mi.data) * len(batch.x_mag)
        train_sce = sce_sum / len(train_records)
        train_mi = mi_sum / len(train_records)
        if val_records:
            val_sce, val_mi = evaluate_losses(model, val_records, config.batch_size)
        else:
            val_sce, val_mi = train_sce, train_mi
        # Select on the mask loss alone: held-out clips use source-table rows
        # that receive no training gradient, so their contrastive loss says
        # nothing about embedding quality.
        val_total = val_mi
        if val_total < state.best_val:
            state.best_val = val_total
            state.best_epoch = epoch
            state.best_values = {k: v.copy() for k, v in model.named_values().items()}
        state.log_rows.append((epoch, train_sce, train_mi, val_sce, val_mi))
        state.epoch = epoch + 1
    return state


LOG_HEADER = "epoch,train_sce,train_mi,val_sce,val_mi"


def write_log(path, log_rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(LOG_HEADER + "\n")
        for epoch, a, b, c, d in log_rows:
            f.write(f"{epoch},{a!r},{b!r},{c!r},{d!r}\n")


# --- checkpointing ----------------------------------------------------------


def save_checkpoint(path, state: TrainState, seed: int) -> None:
    cfg = state.model.config
    meta = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    meta.update(
        epoch=state.epoch,
        step=state.optimizer.step_count,
        best_val=repr(state.best_val),
        best_epoch=state.best_epoch,
        seed=seed,
        lr_opt=repr(state.optimizer.lr),
    )
    tensors = {}
    for name, value in state.model.named_values().items():
        tensors[f"param/{name}"] = value
    for name, value in (state.best_values or state.model.named_values()).items():
        tensors[f"best/{name}"] = value
    for p, m, v in zip(state.optimizer.params, state.optimizer.m, state.optimizer.v):
        tensors[f"adam/m/{p.name}"] = m
        tensors[f"adam/v/{p.name}"] = v
    write_container(path, MAGIC_MODEL, meta, tensors)


def load_checkpoint(path):
    """Return a TrainState rebuilt from a checkpoint, plus its meta dict."""
    meta, tensors = read_container(path, MAGIC_MODEL)
    config = ModelConfig(
        n_blstm_layers=int(meta["n_blstm_layers"]),
        hidden_total=int(meta["hidden_total"]),
        embed_dim=int(meta["embed_dim"]),
        n_freq=int(meta["n_freq"]),
        n_mix_sources=int(meta["n_mix_sources"]),
        n_table_rows=int(meta["n_table_rows"]),
        batch_size=int(meta["batch_size"]),
        sce_weight=float(meta["sce_weight"]),
        epochs=int(meta["epochs"]),
        lr=float(meta["lr"]),
        grad_clip=float(meta["grad_clip"]),
    )
    values = {k[len("param/") :]: v for k, v in tensors.items() if k.startswith("param/")}
    model = SeparationModel(config, values=values)
    opt = nn.Adam(model.parameters(), lr=float(meta["lr_opt"]))
    opt.step_count = int(meta["step"])
    opt.m = [tensors[f"adam/m/{p.name}"].copy() for p in opt.params]
    opt.v = [tensors[f"adam/v/{p.name}"].copy() for p in opt.params]
    best_values = {k[len("best/") :]: v.copy() for k, v in tensors.items() if k.startswith("best/")}
    state = TrainState(
        model,
        opt,
        epoch=int(meta["epoch"]),
        best_val=float(meta["best_val"]),
        best_epoch=int(meta["best_epoch"]),
        best_values=best_values,
    )
    return state, meta


def load_inference_model(path) -> SeparationModel:
    """Model with the best-validation parameters from a checkpoint."""
    state, _ = load_checkpoint(path)
    if state.best_values:
        state.model.load_values(state.best_values)
    return state.model
