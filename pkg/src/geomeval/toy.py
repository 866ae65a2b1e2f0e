"""Desk-scale, forward-only dual-stream attention stack.

Implements the fusion mechanism at toy size: alternating frame/global
self-attention over low-resolution tokens, and an adapter that injects LR
context into per-frame high-resolution tokens via cross-attention with
grid-snapped rotary encodings followed by self-attention with
frequency-interpolated rotary encodings.

Everything runs in float64 with a single attention head and fixed
reduction order, so invariants hold at 1e-9..1e-12 tolerances and outputs
are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, ShapeMismatchError


@dataclass(frozen=True)
class RopeConfig:
    base_frequency: float = 100.0
    l_max: int = 8          # fixed maximum patch length the spectrum is pinned to
    head_dim: int = 32      # channel count; must be divisible by 4 (2 axes x pairs)

    def __post_init__(self):
        if self.l_max < 1:
            raise DegenerateInputError("l_max must be >= 1")
        if self.base_frequency <= 1:
            raise DegenerateInputError("base_frequency must be > 1")
        if self.head_dim % 4 != 0:
            raise DegenerateInputError("head_dim must be divisible by 4")


@dataclass(frozen=True)
class TokenGrid:
    """N frames of h x w feature tokens with their 2D patch coordinates."""

    tokens: np.ndarray     # (N, h, w, C)
    positions: np.ndarray  # (h, w, 2) integer lattice (row, col)

    def __post_init__(self):
        tok = np.asarray(self.tokens, dtype=np.float64)
        if tok.ndim != 4:
            raise ShapeMismatchError("tokens must be (N, h, w, C)")
        if tok.shape[3] % 2 != 0:
            raise DegenerateInputError("channel count must be even")
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (tok.shape[1], tok.shape[2], 2):
            raise ShapeMismatchError("positions must be (h, w, 2)")
        object.__setattr__(self, "tokens", tok)
        object.__setattr__(self, "positions", pos)

    @property
    def frame_count(self):
        return self.tokens.shape[0]

    @property
    def grid_shape(self):
        return self.tokens.shape[1:3]

    @staticmethod
    def lattice(h: int, w: int) -> np.ndarray:
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        return np.stack([rr, cc], axis=-1).astype(np.float64)


def rope_angles(positions: np.ndarray, cfg: RopeConfig) -> np.ndarray:
    """Rotation angles for 2D axial RoPE at the given (row, col) positions.

    Channels split in half per axis; within an axis, pair k rotates by
    pos * base_frequency^(-2k / d_axis). Returns (..., C/2) angles.
    """
    d_axis = cfg.head_dim // 2
    k = np.arange(d_axis // 2)
    inv_freq = cfg.base_frequency ** (-2.0 * k / d_axis)
    pos = np.asarray(positions, dtype=np.float64)
    ang_r = pos[..., 0:1] * inv_freq
    ang_c = pos[..., 1:2] * inv_freq
    return np.concatenate([ang_r, ang_c], axis=-1)


def rope_apply(tokens: np.ndarray, positions: np.ndarray, cfg: RopeConfig) -> np.ndarray:
    """Rotate channel pairs (2k, 2k+1) of tokens by the axial RoPE angles."""
    tok = np.asarray(tokens, dtype=np.float64)
    if tok.shape[-1] != cfg.head_dim:
        raise ShapeMismatchError("token channels do not match cfg.head_dim")
    if cfg.head_dim % 2 != 0:
        raise DegenerateInputError("head_dim must be even")
    ang = rope_angles(positions, cfg)
    cos, sin = np.cos(ang), np.sin(ang)
    even = tok[..., 0::2]
    odd = tok[..., 1::2]
    out = np.empty_like(tok)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def interp_rope_apply(tokens: np.ndarray, positions: np.ndarray,
                      cfg: RopeConfig, l_cur: int) -> np.ndarray:
    """RoPE with positions rescaled by l_max / l_cur, pinning the angular
    spectrum to the fixed maximum patch length."""
    if l_cur < 1:
        raise DegenerateInputError("l_cur must be >= 1")
    pos = np.asarray(positions, dtype=np.float64) * (cfg.l_max / l_cur)
    return rope_apply(tokens, pos, cfg)


def snap_positions(hr_positions: np.ndarray, lr_shape, hr_shape) -> np.ndarray:
    """Map HR patch coordinates to their nearest LR grid cell (align-centers).

    Per axis: round((m + 0.5) * lr_dim / hr_dim - 0.5), clamped to the LR
    grid. Identity when the shapes coincide.
    """
    pos = np.asarray(hr_positions, dtype=np.float64)
    out = np.empty_like(pos)
    for ax in range(2):
        lr_dim, hr_dim = lr_shape[ax], hr_shape[ax]
        if lr_dim < 1 or hr_dim < 1:
            raise DegenerateInputError("grid dims must be >= 1")
        snapped = np.round((pos[..., ax] + 0.5) * lr_dim / hr_dim - 0.5)
        out[..., ax] = np.clip(snapped, 0, lr_dim - 1)
    return out


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
              rope_positions_q=None, rope_positions_k=None,
              cfg: RopeConfig = None) -> np.ndarray:
    """Single-head scaled dot-product attention, softmax over the key axis.

    q: (Nq, C), k/v: (Nk, C). RoPE is applied to q and k at their
    respective positions (flattened to (Nq, 2) / (Nk, 2)) when given.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape[-1] != k.shape[-1] or k.shape[0] != v.shape[0]:
        raise ShapeMismatchError("q/k/v shapes are inconsistent")
    if rope_positions_q is not None:
        q = rope_apply(q, np.asarray(rope_positions_q).reshape(len(q), 2), cfg)
    if rope_positions_k is not None:
        k = rope_apply(k, np.asarray(rope_positions_k).reshape(len(k), 2), cfg)
    logits = q @ k.T / np.sqrt(q.shape[-1])
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ v


@dataclass(frozen=True)
class AttentionWeights:
    """Projections for one pre-norm transformer block (single head)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray

    @staticmethod
    def random(rng: np.random.Generator, dim: int, hidden: int = None,
               scale: float = 0.2) -> "AttentionWeights":
        hidden = hidden or 2 * dim
        def m(*shape):
            return rng.normal(0.0, scale / np.sqrt(shape[0]), size=shape)
        return AttentionWeights(
            wq=m(dim, dim), wk=m(dim, dim), wv=m(dim, dim), wo=m(dim, dim),
            ln1_gamma=np.ones(dim), ln1_beta=np.zeros(dim),
            mlp_w1=m(dim, hidden), mlp_b1=np.zeros(hidden),
            mlp_w2=m(hidden, dim), mlp_b2=np.zeros(dim),
            ln2_gamma=np.ones(dim), ln2_beta=np.zeros(dim),
        )

    def zero_output_projections(self) -> "AttentionWeights":
        return replace(self, wo=np.zeros_like(self.wo),
                       mlp_w2=np.zeros_like(self.mlp_w2),
                       mlp_b2=np.zeros_like(self.mlp_b2))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _mlp(x, w: AttentionWeights):
    return _gelu(x @ w.mlp_w1 + w.mlp_b1) @ w.mlp_w2 + w.mlp_b2


def _block(tokens_flat, pos_flat, w: AttentionWeights, cfg: RopeConfig, l_cur: int):
    """Pre-norm residual block: attn with interp RoPE, then MLP."""
    x = tokens_flat
    xn = layer_norm(x, w.ln1_gamma, w.ln1_beta)
    pos = pos_flat * (cfg.l_max / l_cur)
    attn = attention(xn @ w.wq, xn @ w.wk, xn @ w.wv,
                     rope_positions_q=pos, rope_positions_k=pos, cfg=cfg)
    x = x + attn @ w.wo
    x = x + _mlp(layer_norm(x, w.ln2_gamma, w.ln2_beta), w)
    return x


def frame_attention(x: TokenGrid, w: AttentionWeights, cfg: RopeConfig) -> TokenGrid:
    """Self-attention within each frame independently."""
    n, h, wd, c = x.tokens.shape
    l_cur = max(h, wd)
    pos = x.positions.reshape(-1, 2)
    out = np.empty_like(x.tokens)
    for i in range(n):
        out[i] = _block(x.tokens[i].reshape(-1, c), pos, w, cfg, l_cur).reshape(h, wd, c)
    return TokenGrid(out, x.positions)


def global_attention(x: TokenGrid, w: AttentionWeights, cfg: RopeConfig) -> TokenGrid:
    """Self-attention jointly over all N*h*w tokens.

    RoPE positions stay per-frame spatial (no temporal index), so frame
    permutation equivariance holds by construction.
    """
    n, h, wd, c = x.tokens.shape
    l_cur = max(h, wd)
    pos = np.broadcast_to(x.positions, (n, h, wd, 2)).reshape(-1, 2)
    out = _block(x.tokens.reshape(-1, c), pos, w, cfg, l_cur)
    return TokenGrid(out.reshape(n, h, wd, c), x.positions)


def lr_stream_forward(x: TokenGrid, weights, cfg: RopeConfig) -> TokenGrid:
    """Alternating [frame attention -> global attention] pairs."""
    for w_frame, w_global in weights:
        x = frame_attention(x, w_frame, cfg)
        x = global_attention(x, w_global, cfg)
    return x


@dataclass(frozen=True)
class AdapterBlockWeights:
    cross: AttentionWeights   # ln1 normalizes queries, ln2 normalizes keys/values
    self_attn: AttentionWeights
    mlp: AttentionWeights     # only its MLP and ln2 parameters are used

    @staticmethod
    def random(rng: np.random.Generator, dim: int) -> "AdapterBlockWeights":
        return AdapterBlockWeights(
            cross=AttentionWeights.random(rng, dim),
            self_attn=AttentionWeights.random(rng, dim),
            mlp=AttentionWeights.random(rng, dim),
        )

    def zero_init(self) -> "AdapterBlockWeights":
        """Zero all output projections; the block becomes the identity."""
        return AdapterBlockWeights(
            cross=self.cross.zero_output_projections(),
            self_attn=self.self_attn.zero_output_projections(),
            mlp=self.mlp.zero_output_projections(),
        )


def adapter_block(f_hr: TokenGrid, f_lr: TokenGrid, w: AdapterBlockWeights,
                  cfg: RopeConfig) -> TokenGrid:
    """One [cross-attention -> self-attention -> MLP] fusion block.

    Per frame i, HR tokens query the matching LR frame; cross-attention
    queries use RoPE at grid-snapped LR coordinates while keys use native
    LR coordinates. The fused tokens pass through self-attention with
    interpolated RoPE at HR coordinates, and the block output is
    f_hr + MLP(...). With zero output projections the MLP vanishes and the
    block returns f_hr exactly.
    """
    if f_hr.frame_count != f_lr.frame_count:
        raise ShapeMismatchError("HR/LR frame counts differ")
    n, h, wd, c = f_hr.tokens.shape
    hl, wl = f_lr.grid_shape
    snapped = snap_positions(f_hr.positions, (hl, wl), (h, wd)).reshape(-1, 2)
    lr_pos = f_lr.positions.reshape(-1, 2)
    hr_pos = f_hr.positions.reshape(-1, 2) * (cfg.l_max / max(h, wd))

    out = np.empty_like(f_hr.tokens)
    for i in range(n):
        hr = f_hr.tokens[i].reshape(-1, c)
        lr = f_lr.tokens[i].reshape(-1, c)
        wc = w.cross
        qn = layer_norm(hr, wc.ln1_gamma, wc.ln1_beta)
        kn = layer_norm(lr, wc.ln2_gamma, wc.ln2_beta)
        fuse = attention(qn @ wc.wq, kn @ wc.wk, kn @ wc.wv,
                         rope_positions_q=snapped, rope_positions_k=lr_pos,
                         cfg=cfg) @ wc.wo
        ws = w.self_attn
        sn = layer_norm(fuse, ws.ln1_gamma, ws.ln1_beta)
        sa = attention(sn @ ws.wq, sn @ ws.wk, sn @ ws.wv,
                       rope_positions_q=hr_pos, rope_positions_k=hr_pos,
                       cfg=cfg) @ ws.wo
        wm = w.mlp
        out[i] = (hr + _mlp(layer_norm(sa, wm.ln2_gamma, wm.ln2_beta), wm)).reshape(h, wd, c)
    return TokenGrid(out, f_hr.positions)


def fuse_forward(f_lr: TokenGrid, f_hr: TokenGrid, lr_weights, adapter_weights,
                 cfg: RopeConfig) -> TokenGrid:
    """Full toy pipeline: LR stream then the adapter block stack."""
    lr_out = lr_stream_forward(f_lr, lr_weights, cfg)
    x = f_hr
    for w in adapter_weights:
        x = adapter_block(x, lr_out, w, cfg)
    return x
