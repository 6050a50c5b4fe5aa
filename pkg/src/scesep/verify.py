"""Finite-difference verification of every differentiable component."""

import numpy as np

from . import nn
from .model import (
    ModelConfig,
    SeparationModel,
    gather_source_vectors,
    mi_loss,
    sce_loss,
)
from .seeding import rng_for

# (name, tolerance) pairs; recurrent paths get the looser bound.
TOL_NONRECURRENT = 1e-6
TOL_RECURRENT = 1e-4


def _check_time_affine(seed):
    rng = rng_for(seed, "gc-affine")
    x = nn.Tensor(rng.standard_normal((2, 3, 4)))
    w = nn.Parameter(rng.standard_normal((4, 5)), "w")
    b = nn.Parameter(rng.standard_normal(5), "b")
    return nn.finite_difference_check(
        lambda: nn.tsum(nn.tanh(nn.time_affine(x, w, b))), [w, b]
    )


def _check_blstm(seed):
    rng = rng_for(seed, "gc-blstm")
    x = nn.Tensor(rng.standard_normal((2, 3, 4)))
    p_fwd = nn.init_lstm_params(4, 3, rng, "fwd")
    p_bwd = nn.init_lstm_params(4, 3, rng, "bwd")
    params = p_fwd.parameters() + p_bwd.parameters()
    return nn.finite_difference_check(
        lambda: nn.tsum(nn.mul(nn.blstm_layer(x, p_fwd, p_bwd), rng_weights(seed, (2, 3, 6)))),
        params,
    )


def rng_weights(seed, shape):
    return rng_for(seed, f"gc-weights-{shape}").standard_normal(shape)


def _check_softmax_head(seed):
    rng = rng_for(seed, "gc-softmax")
    x = nn.Tensor(rng.standard_normal((6, 3)))
    w = nn.Parameter(rng.standard_normal((3, 2)), "w")
    target = rng.standard_normal((6, 2))
    return nn.finite_difference_check(
        lambda: nn.tsum(nn.mul(nn.softmax(nn.matmul(x, w)), target)), [w]
    )


def _check_sce_loss(seed):
    rng = rng_for(seed, "gc-sce")
    B, T, F, E, M = 2, 3, 4, 3, 2
    cfg = ModelConfig(
        n_blstm_layers=1, hidden_total=4, embed_dim=E, n_freq=F,
        n_table_rows=4, n_mix_sources=M,
    )
    model = SeparationModel(cfg, rng)
    x = rng.uniform(0, 1, (B, T, F))
    ids = np.array([[0, 1], [2, 3]])
    y = np.where(rng.standard_normal((B, T, F, M)) > 0, 1.0, -1.0)

    def loss_fn():
        v_i = model.forward_embeddings(x)
        return sce_loss(v_i, gather_source_vectors(model, ids), y)

    return nn.finite_difference_check(loss_fn, model.parameters())


def _check_mi_loss(seed):
    rng = rng_for(seed, "gc-mi")
    B, T, F, E, M = 2, 3, 4, 3, 2
    cfg = ModelConfig(
        n_blstm_layers=1, hidden_total=4, embed_dim=E, n_freq=F,
        n_table_rows=4, n_mix_sources=M,
    )
    model = SeparationModel(cfg, rng)
    x = rng.uniform(0, 1, (B, T, F))
    true = rng.uniform(0, 1, (B, T, F, M))

    def loss_fn():
        mask = model.mi_masks(model.forward_embeddings(x))
        return mi_loss(mask, x, true)

    return nn.finite_difference_check(loss_fn, model.parameters())


def _check_full_model(seed):
    rng = rng_for(seed, "gc-full")
    B, T, F, E, M = 2, 4, 5, 3, 2
    cfg = ModelConfig(
        n_blstm_layers=2, hidden_total=4, embed_dim=E, n_freq=F,
        n_table_rows=4, n_mix_sources=M, sce_weight=0.5,
    )
    model = SeparationModel(cfg, rng)
    x = rng.uniform(0, 1, (B, T, F))
    ids = np.array([[0, 1], [2, 3]])
    y = np.where(rng.standard_normal((B, T, F, M)) > 0, 1.0, -1.0)
    true = rng.uniform(0, 1, (B, T, F, M))

    def loss_fn():
        v_i = model.forward_embeddings(x)
        l_sce = sce_loss(v_i, gather_source_vectors(model, ids), y)
        l_mi = mi_loss(model.mi_masks(v_i), x, true)
        return nn.add(nn.mul(l_sce, 0.5), nn.mul(l_mi, 0.5))

    return nn.finite_difference_check(loss_fn, model.parameters())


CHECKS = [
    ("time_affine", _check_time_affine, TOL_NONRECURRENT),
    ("softmax_head", _check_softmax_head, TOL_NONRECURRENT),
    ("blstm_layer", _check_blstm, TOL_RECURRENT),
    ("sce_loss_full_path", _check_sce_loss, TOL_RECURRENT),
    ("mi_loss_full_path", _check_mi_loss, TOL_RECURRENT),
    ("full_model_dual_objective", _check_full_model, TOL_RECURRENT),
]


def run_gradient_checks(seed: int = 0):
    """Run every check; returns a list of (name, max_rel_error, tol, ok)."""
    results = []
    for name, fn, tol in CHECKS:
        err = fn(seed)
        results.append((name, err, tol, err < tol))
    return results
