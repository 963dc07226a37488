"""Bidirectional gated-recurrent classifier with three embedding taps.

The network is: token embedding lookup -> bidirectional LSTM ->
summarization (learned additive attention pooling, or masked mean) ->
tanh feed-forward stack -> softmax.  Three fixed-size vectors are tapped
per utterance:

  su  mean over timesteps of the concatenated bidirectional states
      (the summarization layer's input collapsed to fixed size),
  ff  the summarization output actually consumed by the first
      feed-forward layer,
  sm  the last feed-forward activation actually consumed by the softmax.

Forward and backward passes are hand-written in numpy over padded
batches; all parameters are float64 and every gradient is verifiable
against central finite differences via gradient_check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import seeding
from ..corpus import PAD_ID

TAPS = ("su", "ff", "sm")

# Stacked (…, 4H) recurrent tensors hold the gate blocks in the order
# input, forget, candidate, output.


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters of one ensemble member."""

    embedding_dim: int = 32
    hidden_dim: int = 32
    ff_dims: tuple[int, ...] = (64,)
    dropout: float = 0.0
    seed: int = 0
    summarization_mode: str = "attention_pool"  # or "mean_pool"
    su_mode: str = "mean"                       # or "final_concat"
    learning_rate: float = 0.01
    epochs: int = 5
    batch_size: int = 64

    def validate(self) -> None:
        if self.embedding_dim < 1 or self.hidden_dim < 1:
            raise ValueError("embedding_dim and hidden_dim must be positive")
        if not self.ff_dims or any(d < 1 for d in self.ff_dims):
            raise ValueError("ff_dims must be a non-empty tuple of positive ints")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.summarization_mode not in ("attention_pool", "mean_pool"):
            raise ValueError(f"unknown summarization_mode {self.summarization_mode!r}")
        if self.su_mode not in ("mean", "final_concat"):
            raise ValueError(f"unknown su_mode {self.su_mode!r}")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size positive")


ModelParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class EmbeddingTriple:
    """The three per-utterance tap vectors of one ensemble member."""

    model_id: int
    su: np.ndarray
    ff: np.ndarray
    sm: np.ndarray

    def tap(self, layer: str) -> np.ndarray:
        if layer not in TAPS:
            raise KeyError(f"unknown tap layer {layer!r}")
        return getattr(self, layer)


def init_params(config: ModelConfig, vocab_size: int, n_labels: int) -> ModelParams:
    """Uniform init scaled by 1/sqrt(fan-in); biases zero except forget gate."""
    config.validate()
    if vocab_size < 2 or n_labels < 1:
        raise ValueError("need a vocabulary with specials and at least one label")
    r = seeding.rng(config.seed, "init")
    E, H = config.embedding_dim, config.hidden_dim

    def uniform(fan_in: int, shape) -> np.ndarray:
        scale = 1.0 / math.sqrt(fan_in)
        return r.uniform(-scale, scale, size=shape)

    p: ModelParams = {}
    p["emb"] = uniform(E, (vocab_size, E))
    p["emb"][PAD_ID] = 0.0
    for direction in ("fwd", "bwd"):
        p[f"{direction}_wx"] = uniform(E, (E, 4 * H))
        p[f"{direction}_wh"] = uniform(H, (H, 4 * H))
        bias = np.zeros(4 * H)
        bias[H: 2 * H] = 1.0
        p[f"{direction}_b"] = bias
    if config.summarization_mode == "attention_pool":
        p["attn_w"] = uniform(2 * H, (2 * H, H))
        p["attn_b"] = np.zeros(H)
        p["attn_v"] = uniform(H, (H,))
    prev = 2 * H
    for j, dim in enumerate(config.ff_dims):
        p[f"ff{j}_w"] = uniform(prev, (prev, dim))
        p[f"ff{j}_b"] = np.zeros(dim)
        prev = dim
    p["out_w"] = uniform(prev, (prev, n_labels))
    p["out_b"] = np.zeros(n_labels)
    return p


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class _DirCache:
    x: np.ndarray        # (B,T,E) inputs seen by this direction
    h_prev: np.ndarray   # (B,T,H)
    c_prev: np.ndarray   # (B,T,H)
    gates: np.ndarray    # (B,T,4H) post-nonlinearity [i,f,g,o]
    tanh_c: np.ndarray   # (B,T,H)
    h: np.ndarray        # (B,T,H)


def _lstm_direction(x: np.ndarray, wx: np.ndarray, wh: np.ndarray,
                    b: np.ndarray) -> _DirCache:
    B, T, _ = x.shape
    H = wh.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    h_prev = np.empty((B, T, H))
    c_prev = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    tanh_c = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    xw = x.reshape(B * T, -1) @ wx
    xw = xw.reshape(B, T, 4 * H)
    for t in range(T):
        z = xw[:, t] + h @ wh + b
        i = _sigmoid(z[:, : H])
        f = _sigmoid(z[:, H: 2 * H])
        g = np.tanh(z[:, 2 * H: 3 * H])
        o = _sigmoid(z[:, 3 * H:])
        h_prev[:, t] = h
        c_prev[:, t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, : H] = i
        gates[:, t, H: 2 * H] = f
        gates[:, t, 2 * H: 3 * H] = g
        gates[:, t, 3 * H:] = o
        tanh_c[:, t] = tc
        hs[:, t] = h
    return _DirCache(x=x, h_prev=h_prev, c_prev=c_prev, gates=gates,
                     tanh_c=tanh_c, h=hs)


def _lstm_direction_backward(cache: _DirCache, wx: np.ndarray, wh: np.ndarray,
                             d_h: np.ndarray) -> tuple[np.ndarray, np.ndarray,
                                                       np.ndarray, np.ndarray]:
    """BPTT for one direction.  d_h is (B,T,H) with zeros at padded steps."""
    B, T, H = d_h.shape
    g_wx = np.zeros_like(wx)
    g_wh = np.zeros_like(wh)
    g_b = np.zeros(4 * H)
    d_x = np.empty_like(cache.x)
    dz_all = np.empty((B, T, 4 * H))
    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = cache.gates[:, t, : H]
        f = cache.gates[:, t, H: 2 * H]
        g = cache.gates[:, t, 2 * H: 3 * H]
        o = cache.gates[:, t, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = d_h[:, t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * cache.c_prev[:, t]
        dg = dc * i
        dz = dz_all[:, t]
        dz[:, : H] = di * i * (1.0 - i)
        dz[:, H: 2 * H] = df * f * (1.0 - f)
        dz[:, 2 * H: 3 * H] = dg * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        g_wh += cache.h_prev[:, t].T @ dz
        dh_carry = dz @ wh.T
        dc_carry = dc * f
    flat_dz = dz_all.reshape(B * T, 4 * H)
    flat_x = cache.x.reshape(B * T, -1)
    g_wx[:] = flat_x.T @ flat_dz
    g_b[:] = flat_dz.sum(axis=0)
    d_x[:] = (flat_dz @ wx.T).reshape(cache.x.shape)
    return d_x, g_wx, g_wh, g_b


@dataclass
class _Cache:
    """Everything the backward pass needs, plus the tap arrays themselves."""

    ids: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray          # (B,T) float 0/1
    rev_index: np.ndarray     # (B,T) per-row involution mapping fwd<->reversed
    fwd: _DirCache
    bwd: _DirCache
    states: np.ndarray        # (B,T,2H) concatenated bidirectional states
    alpha: np.ndarray | None  # (B,T) attention weights (attention_pool only)
    attn_q: np.ndarray | None  # (B,T,A) tanh attention features
    su: np.ndarray
    summary: np.ndarray       # (B,2H) == ff tap
    ff_pre_drop: list[np.ndarray]
    ff_acts: list[np.ndarray]  # activations consumed by the next layer
    drop_masks: list[np.ndarray] | None
    sm: np.ndarray            # alias of the activation consumed by softmax
    probs: np.ndarray


def forward_batch(config: ModelConfig, params: ModelParams, ids: np.ndarray,
                  lengths: np.ndarray, train: bool = False,
                  dropout_rng: np.random.Generator | None = None) -> _Cache:
    """Run the network over a padded id batch; returns the full cache.

    ids is (B,T) int64 padded with PAD_ID; lengths gives the valid prefix
    of each row.  Dropout is applied only when train=True and
    config.dropout > 0, with masks drawn from dropout_rng.
    """
    if ids.ndim != 2:
        raise ValueError("ids must be a 2-d padded batch")
    vocab_size = params["emb"].shape[0]
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValueError("token id out of vocabulary range")
    B, T = ids.shape
    H = config.hidden_dim
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.min() < 1 or lengths.max() > T:
        raise ValueError("lengths must lie in [1, T]")
    positions = np.arange(T)[None, :]
    mask = (positions < lengths[:, None]).astype(np.float64)
    # Involution: valid prefix reversed in place, padding fixed.
    rev_index = np.where(mask.astype(bool),
                         lengths[:, None] - 1 - positions, positions)

    x = params["emb"][ids]
    x_rev = np.take_along_axis(x, rev_index[:, :, None], axis=1)
    fwd = _lstm_direction(x, params["fwd_wx"], params["fwd_wh"], params["fwd_b"])
    bwd = _lstm_direction(x_rev, params["bwd_wx"], params["bwd_wh"], params["bwd_b"])
    h_bwd_aligned = np.take_along_axis(bwd.h, rev_index[:, :, None], axis=1)
    states = np.concatenate([fwd.h, h_bwd_aligned], axis=2)

    masked_states = states * mask[:, :, None]
    mean_states = masked_states.sum(axis=1) / lengths[:, None]
    if config.su_mode == "mean":
        su = mean_states
    else:
        rows = np.arange(B)
        su = np.concatenate([fwd.h[rows, lengths - 1], bwd.h[rows, lengths - 1]],
                            axis=1)

    alpha = None
    attn_q = None
    if config.summarization_mode == "attention_pool":
        pre = states @ params["attn_w"] + params["attn_b"]
        attn_q = np.tanh(pre)
        scores = attn_q @ params["attn_v"]
        scores = np.where(mask.astype(bool), scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(scores)
        alpha = expd / expd.sum(axis=1, keepdims=True)
        summary = (alpha[:, :, None] * states).sum(axis=1)
    else:
        summary = mean_states

    use_dropout = train and config.dropout > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("dropout requires a dropout_rng in training mode")
    keep = 1.0 - config.dropout
    drop_masks: list[np.ndarray] | None = [] if use_dropout else None

    ff_pre_drop: list[np.ndarray] = []
    ff_acts: list[np.ndarray] = []
    act = summary
    if use_dropout:
        m = (dropout_rng.random(act.shape) < keep) / keep
        drop_masks.append(m)
        act = act * m
    for j in range(len(config.ff_dims)):
        raw = np.tanh(act @ params[f"ff{j}_w"] + params[f"ff{j}_b"])
        ff_pre_drop.append(raw)
        act = raw
        if use_dropout and j < len(config.ff_dims) - 1:
            m = (dropout_rng.random(act.shape) < keep) / keep
            drop_masks.append(m)
            act = act * m
        ff_acts.append(act)

    sm = act
    logits = sm @ params["out_w"] + params["out_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)

    return _Cache(ids=ids, lengths=lengths, mask=mask, rev_index=rev_index,
                  fwd=fwd, bwd=bwd, states=states, alpha=alpha, attn_q=attn_q,
                  su=su, summary=summary,
                  ff_pre_drop=ff_pre_drop, ff_acts=ff_acts,
                  drop_masks=drop_masks, sm=sm, probs=probs)


def forward(config: ModelConfig, params: ModelParams, token_ids: Sequence[int],
            model_id: int = 0) -> tuple[np.ndarray, EmbeddingTriple]:
    """Single-utterance forward pass: (label distribution, embedding taps)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token_ids must be a non-empty 1-d sequence")
    cache = forward_batch(config, params, ids[None, :],
                          np.array([ids.size], dtype=np.int64))
    triple = EmbeddingTriple(model_id=model_id, su=cache.su[0],
                             ff=cache.summary[0], sm=cache.sm[0])
    return cache.probs[0], triple


def backward_batch(config: ModelConfig, params: ModelParams, cache: _Cache,
                   gold: np.ndarray) -> tuple[float, ModelParams]:
    """Mean cross-entropy loss over the batch and gradients for every tensor."""
    B, T = cache.ids.shape
    H = config.hidden_dim
    probs = cache.probs
    rows = np.arange(B)
    # An exact-zero gold probability means training has diverged; the inf
    # loss trips the trainer's non-finite abort.
    with np.errstate(divide="ignore"):
        loss = float(-np.log(probs[rows, gold]).mean())

    grads: ModelParams = {}
    dlogits = probs.copy()
    dlogits[rows, gold] -= 1.0
    dlogits /= B

    grads["out_w"] = cache.sm.T @ dlogits
    grads["out_b"] = dlogits.sum(axis=0)
    d_act = dlogits @ params["out_w"].T

    use_dropout = cache.drop_masks is not None
    n_ff = len(config.ff_dims)
    for j in range(n_ff - 1, -1, -1):
        if use_dropout and j < n_ff - 1:
            d_act = d_act * cache.drop_masks[j + 1]
        raw = cache.ff_pre_drop[j]
        d_pre = d_act * (1.0 - raw * raw)
        prev = cache.ff_acts[j - 1] if j > 0 else (
            cache.summary * cache.drop_masks[0] if use_dropout else cache.summary)
        grads[f"ff{j}_w"] = prev.T @ d_pre
        grads[f"ff{j}_b"] = d_pre.sum(axis=0)
        d_act = d_pre @ params[f"ff{j}_w"].T
    if use_dropout:
        d_act = d_act * cache.drop_masks[0]
    d_summary = d_act

    d_states = np.zeros_like(cache.states)
    if config.summarization_mode == "attention_pool":
        alpha, attn_q = cache.alpha, cache.attn_q
        d_alpha = (d_summary[:, None, :] * cache.states).sum(axis=2)
        d_states += alpha[:, :, None] * d_summary[:, None, :]
        inner = (alpha * d_alpha).sum(axis=1, keepdims=True)
        d_scores = alpha * (d_alpha - inner)
        d_q = d_scores[:, :, None] * params["attn_v"][None, None, :]
        grads["attn_v"] = (attn_q * d_scores[:, :, None]).sum(axis=(0, 1))
        d_pre = d_q * (1.0 - attn_q * attn_q)
        flat_states = cache.states.reshape(B * T, 2 * H)
        flat_dpre = d_pre.reshape(B * T, -1)
        grads["attn_w"] = flat_states.T @ flat_dpre
        grads["attn_b"] = flat_dpre.sum(axis=0)
        d_states += (flat_dpre @ params["attn_w"].T).reshape(B, T, 2 * H)
    else:
        d_states += (d_summary[:, None, :] / cache.lengths[:, None, None]
                     ) * cache.mask[:, :, None]

    d_h_fwd = d_states[:, :, : H]
    d_h_bwd_aligned = d_states[:, :, H:]
    d_h_bwd = np.take_along_axis(d_h_bwd_aligned, cache.rev_index[:, :, None],
                                 axis=1)

    d_x_fwd, g_wx_f, g_wh_f, g_b_f = _lstm_direction_backward(
        cache.fwd, params["fwd_wx"], params["fwd_wh"], d_h_fwd)
    d_x_rev, g_wx_b, g_wh_b, g_b_b = _lstm_direction_backward(
        cache.bwd, params["bwd_wx"], params["bwd_wh"], d_h_bwd)
    grads["fwd_wx"], grads["fwd_wh"], grads["fwd_b"] = g_wx_f, g_wh_f, g_b_f
    grads["bwd_wx"], grads["bwd_wh"], grads["bwd_b"] = g_wx_b, g_wh_b, g_b_b

    d_x = d_x_fwd + np.take_along_axis(d_x_rev, cache.rev_index[:, :, None], axis=1)
    g_emb = np.zeros_like(params["emb"])
    np.add.at(g_emb, cache.ids.ravel(), d_x.reshape(B * T, -1))
    grads["emb"] = g_emb
    return loss, grads


def loss_and_grads(config: ModelConfig, params: ModelParams, ids: np.ndarray,
                   lengths: np.ndarray, gold: np.ndarray, train: bool = False,
                   dropout_rng: np.random.Generator | None = None
                   ) -> tuple[float, ModelParams]:
    cache = forward_batch(config, params, ids, lengths, train=train,
                          dropout_rng=dropout_rng)
    return backward_batch(config, params, cache, gold)


def _loss_extended(config: ModelConfig, params_ld: ModelParams, ids: np.ndarray,
                   lengths: np.ndarray, gold: np.ndarray) -> np.longdouble:
    """Straight-line re-implementation of the loss in extended precision.

    Used as the finite-difference oracle: the fd quotient (L+ - L-)/(2h)
    is roundoff-limited at float64, so the oracle evaluates the same
    function in longdouble.  Independent of forward_batch on purpose.
    """
    B, T = ids.shape
    H = config.hidden_dim
    one = np.longdouble(1.0)
    positions = np.arange(T)[None, :]
    mask = positions < lengths[:, None]
    rev_index = np.where(mask, lengths[:, None] - 1 - positions, positions)

    x = params_ld["emb"][ids]
    x_rev = np.take_along_axis(x, rev_index[:, :, None], axis=1)

    def run_direction(inp, wx, wh, b):
        h = np.zeros((B, H), dtype=np.longdouble)
        c = np.zeros((B, H), dtype=np.longdouble)
        states = np.empty((B, T, H), dtype=np.longdouble)
        for t in range(T):
            z = inp[:, t] @ wx + h @ wh + b
            i = _sigmoid(z[:, : H])
            f = _sigmoid(z[:, H: 2 * H])
            g = np.tanh(z[:, 2 * H: 3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            states[:, t] = h
        return states

    h_fwd = run_direction(x, params_ld["fwd_wx"], params_ld["fwd_wh"],
                          params_ld["fwd_b"])
    h_bwd = run_direction(x_rev, params_ld["bwd_wx"], params_ld["bwd_wh"],
                          params_ld["bwd_b"])
    h_bwd = np.take_along_axis(h_bwd, rev_index[:, :, None], axis=1)
    states = np.concatenate([h_fwd, h_bwd], axis=2)

    if config.summarization_mode == "attention_pool":
        q = np.tanh(states @ params_ld["attn_w"] + params_ld["attn_b"])
        scores = q @ params_ld["attn_v"]
        scores = np.where(mask, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(scores)
        alpha = expd / expd.sum(axis=1, keepdims=True)
        act = (alpha[:, :, None] * states).sum(axis=1)
    else:
        act = (states * mask[:, :, None]).sum(axis=1) / lengths[:, None]

    for j in range(len(config.ff_dims)):
        act = np.tanh(act @ params_ld[f"ff{j}_w"] + params_ld[f"ff{j}_b"])
    logits = act @ params_ld["out_w"] + params_ld["out_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    picked = probs[np.arange(B), gold]
    return -np.log(picked).mean()


def gradient_check(config: ModelConfig, params: ModelParams,
                   token_ids: Sequence[int], gold_label: int,
                   h: float = 1e-5, min_coords: int = 200, seed: int = 0,
                   grad_override: ModelParams | None = None) -> float:
    """Max relative deviation between analytic and central-difference grads.

    Samples at least min_coords coordinates spanning every parameter
    tensor; deviation per coordinate is |ga - gf| / max(|ga|, |gf|, 1e-8).
    grad_override substitutes specific analytic tensors (test fixtures).
    """
    if not 0.0 < h <= 1e-3:
        raise ValueError("h must lie in (0, 1e-3]")
    ids = np.asarray(token_ids, dtype=np.int64)[None, :]
    lengths = np.array([ids.shape[1]], dtype=np.int64)
    gold = np.array([gold_label], dtype=np.int64)
    _, grads = loss_and_grads(config, params, ids, lengths, gold)
    if grad_override:
        grads = {**grads, **grad_override}

    r = seeding.rng(seed, "gradient-check")
    params_ld = {k: v.astype(np.longdouble) for k, v in params.items()}
    h_ld = np.longdouble(h)
    total = sum(p.size for p in params.values())
    worst = 0.0
    for name in sorted(params):
        tensor = params_ld[name]
        n_here = max(2 if tensor.size > 1 else 1,
                     int(round(min_coords * tensor.size / total)))
        n_here = min(n_here, tensor.size)
        flat_idx = r.choice(tensor.size, size=n_here, replace=False)
        flat = tensor.reshape(-1)
        for idx in flat_idx:
            original = flat[idx]
            flat[idx] = original + h_ld
            loss_plus = _loss_extended(config, params_ld, ids, lengths, gold)
            flat[idx] = original - h_ld
            loss_minus = _loss_extended(config, params_ld, ids, lengths, gold)
            flat[idx] = original
            g_fd = float((loss_plus - loss_minus) / (2.0 * h_ld))
            g_an = grads[name].reshape(-1)[idx]
            deviation = abs(g_an - g_fd) / max(abs(g_an), abs(g_fd), 1e-8)
            worst = max(worst, deviation)
    return worst
