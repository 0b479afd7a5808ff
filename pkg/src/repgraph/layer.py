"""Representative-node sparse attention: offset regression, sampling, attention,
and the simple / bottleneck residual instantiations.

Per query position the layer regresses S fractional 2-D offsets, bilinearly
samples the key and value branches at (position + offset), and attends over
those S nodes only, which drops the attention cost from O(C'*N^2) to
O(C'*N*S).  Both instantiations are residual and support an insertion mode
whose zero-initialized output branch makes the layer an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from . import ops
from .autograd import Node, Tape
from .errors import ContractError, ShapeError
from .ops import BatchNormParams, Projection1x1
from .tensor import Rng, Tensor4

_VARIANTS = ("simple", "bottleneck")
_FUSIONS = ("sum", "concat")
_INIT_MODES = ("fresh", "pretrained_insert")
_OFFSET_SOURCES = ("input", "theta")


@dataclass(frozen=True)
class LayerConfig:
    """Structural description of one layer instance."""

    c: int
    cp: int
    s: int = 9
    variant: str = "simple"
    fusion: str = "sum"
    init_mode: str = "fresh"
    offset_source: str = "input"
    seed: int = 0

    def validate(self) -> None:
        if self.s < 1:
            raise ContractError(f"sample count S must be >= 1, got {self.s}")
        if self.c < 1 or self.cp < 1:
            raise ContractError(f"channel widths must be positive, got C={self.c}, C'={self.cp}")
        if self.variant not in _VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.fusion not in _FUSIONS:
            raise ContractError(f"unknown fusion {self.fusion!r}")
        if self.init_mode not in _INIT_MODES:
            raise ContractError(f"unknown init_mode {self.init_mode!r}")
        if self.offset_source not in _OFFSET_SOURCES:
            raise ContractError(f"unknown offset_source {self.offset_source!r}")
        if self.init_mode == "pretrained_insert" and self.fusion != "sum":
            raise ContractError("pretrained_insert requires sum fusion")


@dataclass
class OffsetField:
    """Per-position fractional displacements; channel 2k is dy, 2k+1 is dx of sample k."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 4 or arr.shape[1] % 2 != 0:
            raise ShapeError(
                f"offset field must be [n, 2S, h, w] with even channels, got {arr.shape}"
            )
        if arr.size and not np.all(np.isfinite(arr)):
            raise ContractError("offset field must be finite")
        self.data = arr

    @property
    def s(self) -> int:
        return self.data.shape[1] // 2


@dataclass
class RepresentativeSet:
    """S sampled node features per query: features [n, S, C_branch, P], positions [n, S, 2, P]."""

    features: np.ndarray
    positions: np.ndarray


@dataclass
class AttentionWeights:
    """Per-query distribution over S sampled nodes; rows sum to 1."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"attention weights must be [n, N, S], got {arr.shape}")
        tol = 1e-10 if arr.dtype == np.float64 else 1e-5
        sums = arr.sum(axis=-1)
        if arr.size and (np.any(arr < 0) or np.any(np.abs(sums - 1.0) > tol)):
            raise ContractError("attention rows must be distributions summing to 1")
        self.data = arr


@dataclass
class SimpleRepGraphParams:
    theta: Projection1x1
    phi: Projection1x1
    g: Projection1x1
    w_off: Projection1x1
    w_out: Projection1x1  # C' -> C for sum fusion, (C + C') -> C for concat


@dataclass
class BottleneckRepGraphParams:
    reduce: Projection1x1
    bn_reduce: BatchNormParams
    w_off: Projection1x1
    expand: Projection1x1  # C' -> C for sum fusion, 2C' -> C for concat
    bn_expand: BatchNormParams


def _proj(rng: Rng, c_out: int, c_in: int, dtype, zero: bool = False) -> Projection1x1:
    if zero:
        return Projection1x1(
            weight=np.zeros((c_out, c_in), dtype=dtype), bias=np.zeros(c_out, dtype=dtype)
        )
    return Projection1x1(
        weight=rng.init_weight((c_out, c_in), fan_in=c_in, dtype=dtype),
        bias=np.zeros(c_out, dtype=dtype),
    )


def init_simple_params(cfg: LayerConfig, rng: Optional[Rng] = None,
                       dtype=np.float64) -> SimpleRepGraphParams:
    cfg.validate()
    if cfg.variant != "simple":
        raise ContractError(f"config variant is {cfg.variant!r}, expected 'simple'")
    rng = rng if rng is not None else Rng(cfg.seed)
    c_src = cfg.c if cfg.offset_source == "input" else cfg.cp
    c_fuse_in = cfg.cp if cfg.fusion == "sum" else cfg.c + cfg.cp
    zero_out = cfg.init_mode == "pretrained_insert"
    return SimpleRepGraphParams(
        theta=_proj(rng, cfg.cp, cfg.c, dtype),
        phi=_proj(rng, cfg.cp, cfg.c, dtype),
        g=_proj(rng, cfg.cp, cfg.c, dtype),
        w_off=_proj(rng, 2 * cfg.s, c_src, dtype),
        w_out=_proj(rng, cfg.c, c_fuse_in, dtype, zero=zero_out),
    )


def init_bottleneck_params(cfg: LayerConfig, rng: Optional[Rng] = None,
                           dtype=np.float64) -> BottleneckRepGraphParams:
    cfg.validate()
    if cfg.variant != "bottleneck":
        raise ContractError(f"config variant is {cfg.variant!r}, expected 'bottleneck'")
    rng = rng if rng is not None else Rng(cfg.seed)
    c_expand_in = cfg.cp if cfg.fusion == "sum" else 2 * cfg.cp
    zero_out = cfg.init_mode == "pretrained_insert"
    bn_expand = BatchNormParams.create(cfg.c, dtype=dtype)
    if zero_out:
        bn_expand.gamma = np.zeros(cfg.c, dtype=dtype)
        bn_expand.beta = np.zeros(cfg.c, dtype=dtype)
    return BottleneckRepGraphParams(
        reduce=_proj(rng, cfg.cp, cfg.c, dtype),
        bn_reduce=BatchNormParams.create(cfg.cp, dtype=dtype),
        w_off=_proj(rng, 2 * cfg.s, cfg.cp, dtype),
        expand=_proj(rng, cfg.c, c_expand_in, dtype, zero=zero_out),
        bn_expand=bn_expand,
    )


def init_layer_params(cfg: LayerConfig, rng: Optional[Rng] = None, dtype=np.float64):
    if cfg.variant == "simple":
        return init_simple_params(cfg, rng, dtype)
    return init_bottleneck_params(cfg, rng, dtype)


# ---------------------------------------------------------------------------
# Offset regression and representative sampling
# ---------------------------------------------------------------------------


def regress_offsets(x: Tensor4, w_off: Projection1x1) -> OffsetField:
    """1x1 projection of the source map into a 2S-channel displacement field."""
    if w_off.c_out % 2 != 0:
        raise ContractError(f"offset projection needs 2S output channels, got {w_off.c_out}")
    return OffsetField(ops.project_1x1(x, w_off).data)


def _anchor_grid(h: int, w: int, stride: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Row-major (y, x) anchor coordinates of an h x w grid scaled by ``stride``."""
    ay = np.repeat(np.arange(h, dtype=dtype) * stride, w)
    ax = np.tile(np.arange(w, dtype=dtype) * stride, h)
    return ay, ax


def sample_representative(x_branch: Tensor4, offsets: OffsetField) -> RepresentativeSet:
    """Sample x_branch at (query position + offset) for every query and sample slot."""
    n, c, h, w = x_branch.shape
    if offsets.data.shape[0] != n or offsets.data.shape[2:] != (h, w):
        raise ShapeError(
            f"offset field {offsets.data.shape} does not match feature map {x_branch.shape}"
        )
    s = offsets.s
    p = h * w
    ay, ax = _anchor_grid(h, w, 1, np.float64)
    off = offsets.data.reshape(n, s, 2, p)
    py = off[:, :, 0, :] + ay[None, None, :]
    px = off[:, :, 1, :] + ax[None, None, :]
    b = np.broadcast_to(np.arange(n)[:, None, None], (n, s, p)).reshape(-1)
    vals = ops._bilinear_forward(x_branch.data, b, py.reshape(-1), px.reshape(-1))
    features = vals.reshape(n, s, p, c).transpose(0, 1, 3, 2)
    positions = np.stack([py, px], axis=2)
    return RepresentativeSet(features=features, positions=positions)


def full_grid_offsets(n: int, h: int, w: int, dtype=np.float64) -> OffsetField:
    """Offsets that make every query sample the entire grid (S = N).

    Sample k of query (i, j) is displaced by (k // w - i, k % w - j), i.e. it
    lands exactly on grid node k; with these offsets the sparse layer
    reproduces the dense baseline.
    """
    node_y = np.arange(h * w, dtype=dtype) // w
    node_x = np.arange(h * w, dtype=dtype) % w
    qy = np.repeat(np.arange(h, dtype=dtype), w)
    qx = np.tile(np.arange(w, dtype=dtype), h)
    dy = node_y[:, None] - qy[None, :]
    dx = node_x[:, None] - qx[None, :]
    off = np.stack([dy, dx], axis=1).reshape(1, 2 * h * w, h, w)
    return OffsetField(np.broadcast_to(off, (n, 2 * h * w, h, w)).copy())


# ---------------------------------------------------------------------------
# Sparse attention over the sampled node set
# ---------------------------------------------------------------------------


def _attention_nodes(theta: Node, key_feats: Node, val_feats: Node) -> tuple[Node, Node]:
    """theta [n, N, C'], feats [n, S, C', N] -> (x_tilde [n, N, C'], weights [n, N, S])."""
    if key_feats.value.shape[1] != val_feats.value.shape[1]:
        raise ShapeError(
            f"key and value sets disagree on S: {key_feats.value.shape[1]} "
            f"vs {val_feats.value.shape[1]}"
        )
    if key_feats.value.shape[2] != theta.value.shape[2]:
        raise ShapeError(
            f"query width {theta.value.shape[2]} does not match key width "
            f"{key_feats.value.shape[2]}"
        )
    logits = ag.einsum2("bpc,bscp->bps", theta, key_feats)
    weights = ops.softmax_node(logits)
    x_tilde = ag.einsum2("bps,bscp->bpc", weights, val_feats)
    return x_tilde, weights


def repgraph_attention(x_theta: np.ndarray, key_set: RepresentativeSet,
                       value_set: RepresentativeSet) -> tuple[np.ndarray, AttentionWeights]:
    """Attend each query over its own S sampled nodes.

    ``x_theta`` may be a single [N, C'] matrix or a batched [n, N, C'] stack;
    the result mirrors the input rank.
    """
    theta = np.asarray(x_theta)
    squeeze = theta.ndim == 2
    if squeeze:
        theta = theta[None]
    tape = Tape()
    xt, w = _attention_nodes(
        tape.constant(theta),
        tape.constant(key_set.features),
        tape.constant(value_set.features),
    )
    x_tilde = xt.value[0] if squeeze else xt.value
    return x_tilde, AttentionWeights(w.value)


# ---------------------------------------------------------------------------
# Shared forward assembly
# ---------------------------------------------------------------------------


def _flatten_map(x: Node) -> Node:
    n, c, h, w = x.value.shape
    return ag.transpose(ag.reshape(x, (n, c, h * w)), (0, 2, 1))


def _unflatten_map(x: Node, h: int, w: int) -> Node:
    n, p, c = x.value.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1)), (n, c, h, w))


def _positions_node(off: Node, anchor_y: np.ndarray, anchor_x: np.ndarray) -> tuple[Node, Node]:
    n, two_s, hg, wg = off.value.shape
    s = two_s // 2
    r = ag.reshape(off, (n, s, 2, hg * wg))
    dy = ag.reshape(ag.narrow(r, 2, 0, 1), (n, s, hg * wg))
    dx = ag.reshape(ag.narrow(r, 2, 1, 1), (n, s, hg * wg))
    return ag.add_const(dy, anchor_y[None, None, :]), ag.add_const(dx, anchor_x[None, None, :])


def _sample_node(branch: Node, py: Node, px: Node) -> Node:
    """Bilinear-sample a branch map into the [n, S, C, P] representative layout."""
    n = branch.value.shape[0]
    b = np.arange(n)[:, None, None]
    feats = ops.bilinear_node(branch, py, px, b)  # [n, S, P, c]
    return ag.transpose(feats, (0, 1, 3, 2))


def _grouped_attention(theta: Node, key_feats: Node, val_feats: Node, groups: int,
                       collect: Optional[dict]) -> Node:
    cp = theta.value.shape[2]
    if cp % groups != 0:
        raise ContractError(f"channel width C'={cp} is not divisible by G={groups}")
    if groups == 1:
        xt, w = _attention_nodes(theta, key_feats, val_feats)
        if collect is not None:
            collect["weights"] = AttentionWeights(w.value)
        return xt
    width = cp // groups
    parts = []
    weight_parts = []
    for gi in range(groups):
        th = ag.narrow(theta, 2, gi * width, width)
        kf = ag.narrow(key_feats, 2, gi * width, width)
        vf = kf if val_feats is key_feats else ag.narrow(val_feats, 2, gi * width, width)
        xt, w = _attention_nodes(th, kf, vf)
        parts.append(xt)
        weight_parts.append(AttentionWeights(w.value))
    if collect is not None:
        collect["weights"] = weight_parts
    return ag.concat(parts, axis=2)


def _repgraph_core(
    offset_src: Node,
    theta_map: Node,
    phi_map: Node,
    g_map: Node,
    w_off_w: Node,
    w_off_b: Optional[Node],
    s: int,
    gs: int = 1,
    groups: int = 1,
    offsets: Optional[OffsetField] = None,
    collect: Optional[dict] = None,
) -> Node:
    """Offsets -> sampling -> sparse attention; returns x_tilde as an [n, Cb, h, w] map.

    ``gs`` > 1 switches to grid mode: offsets are regressed from the pooled
    source, one sampled set is anchored at each group's left-top pixel, and
    every position in a group shares that set while keeping its own query row.
    """
    n, _, h, w = theta_map.value.shape
    dtype = theta_map.value.dtype

    if offsets is not None:
        if offsets.s != s:
            raise ShapeError(f"offset field carries S={offsets.s}, config says S={s}")
        expected = (-(-h // gs), -(-w // gs))
        if offsets.data.shape[2:] != expected:
            raise ShapeError(
                f"offset field spatial shape {offsets.data.shape[2:]} does not match "
                f"the query grid {expected}"
            )
        off = offset_src.tape.constant(offsets.data.astype(dtype, copy=False))
    else:
        src = ops.avg_pool_node(offset_src, gs) if gs > 1 else offset_src
        off = ops.project_node(src, w_off_w, w_off_b)

    hg, wg = off.value.shape[2], off.value.shape[3]
    ay, ax = _anchor_grid(hg, wg, gs, dtype)
    py, px = _positions_node(off, ay, ax)

    key_feats = _sample_node(phi_map, py, px)
    val_feats = key_feats if g_map is phi_map else _sample_node(g_map, py, px)

    if gs > 1:
        row = np.arange(h) // gs
        col = np.arange(w) // gs
        gidx = (row[:, None] * wg + col[None, :]).reshape(-1)
        key_feats = ag.gather_last(key_feats, gidx)
        val_feats = key_feats if g_map is phi_map else ag.gather_last(val_feats, gidx)

    if collect is not None:
        collect["offsets"] = OffsetField(off.value)
        collect["positions"] = np.stack([py.value, px.value], axis=2)

    theta_flat = _flatten_map(theta_map)
    x_tilde = _grouped_attention(theta_flat, key_feats, val_feats, groups, collect)
    return _unflatten_map(x_tilde, h, w)


def _bind_proj(tape: Tape, prefix: str, name: str, proj: Projection1x1) -> tuple[Node, Optional[Node]]:
    wn = tape.leaf(proj.weight, f"{prefix}{name}.w")
    bn = tape.leaf(proj.bias, f"{prefix}{name}.b") if proj.bias is not None else None
    return wn, bn


def simple_forward_node(
    tape: Tape,
    x: Node,
    params: SimpleRepGraphParams,
    cfg: LayerConfig,
    offsets: Optional[OffsetField] = None,
    collect: Optional[dict] = None,
    gs: int = 1,
    groups: int = 1,
    prefix: str = "",
) -> Node:
    cfg.validate()
    if x.value.shape[1] != cfg.c:
        raise ShapeError(f"input has {x.value.shape[1]} channels, config says C={cfg.c}")
    theta = ops.project_node(x, *_bind_proj(tape, prefix, "theta", params.theta))
    phi = ops.project_node(x, *_bind_proj(tape, prefix, "phi", params.phi))
    g = ops.project_node(x, *_bind_proj(tape, prefix, "g", params.g))
    off_w, off_b = _bind_proj(tape, prefix, "w_off", params.w_off)
    offset_src = x if cfg.offset_source == "input" else theta
    x_tilde = _repgraph_core(
        offset_src, theta, phi, g, off_w, off_b, cfg.s,
        gs=gs, groups=groups, offsets=offsets, collect=collect,
    )
    out_w, out_b = _bind_proj(tape, prefix, "w_out", params.w_out)
    if cfg.fusion == "sum":
        return ag.add(ops.project_node(x_tilde, out_w, out_b), x)
    return ops.project_node(ag.concat([x_tilde, x], axis=1), out_w, out_b)


def bottleneck_forward_node(
    tape: Tape,
    x: Node,
    params: BottleneckRepGraphParams,
    cfg: LayerConfig,
    training: bool = False,
    offsets: Optional[OffsetField] = None,
    collect: Optional[dict] = None,
    gs: int = 1,
    groups: int = 1,
    prefix: str = "",
) -> Node:
    """Reduce -> sparse attention on the reduced map -> expand -> residual.

    The reduced features serve as query, key, and value directly; adding
    dedicated projections inside the bottleneck would roughly match the cost
    of the reduction itself and defeat the design.
    """
    cfg.validate()
    if x.value.shape[1] != cfg.c:
        raise ShapeError(f"input has {x.value.shape[1]} channels, config says C={cfg.c}")
    rw, rb = _bind_proj(tape, prefix, "reduce", params.reduce)
    gam_r = tape.leaf(params.bn_reduce.gamma, f"{prefix}bn_reduce.gamma")
    bet_r = tape.leaf(params.bn_reduce.beta, f"{prefix}bn_reduce.beta")
    reduced = ops.relu_node(
        ops.batch_norm_node(ops.project_node(x, rw, rb), gam_r, bet_r,
                            params.bn_reduce, training)
    )
    off_w, off_b = _bind_proj(tape, prefix, "w_off", params.w_off)
    x_tilde = _repgraph_core(
        reduced, reduced, reduced, reduced, off_w, off_b, cfg.s,
        gs=gs, groups=groups, offsets=offsets, collect=collect,
    )
    expand_in = x_tilde if cfg.fusion == "sum" else ag.concat([x_tilde, reduced], axis=1)
    ew, eb = _bind_proj(tape, prefix, "expand", params.expand)
    gam_e = tape.leaf(params.bn_expand.gamma, f"{prefix}bn_expand.gamma")
    bet_e = tape.leaf(params.bn_expand.beta, f"{prefix}bn_expand.beta")
    branch = ops.batch_norm_node(ops.project_node(expand_in, ew, eb), gam_e, bet_e,
                                 params.bn_expand, training)
    out = ag.add(branch, x)
    if cfg.init_mode == "fresh":
        out = ops.relu_node(out)
    return out


def layer_forward_node(tape, x, params, cfg, training=False, offsets=None,
                       collect=None, gs=1, groups=1, prefix=""):
    if cfg.variant == "simple":
        return simple_forward_node(tape, x, params, cfg, offsets=offsets,
                                   collect=collect, gs=gs, groups=groups, prefix=prefix)
    return bottleneck_forward_node(tape, x, params, cfg, training=training,
                                   offsets=offsets, collect=collect, gs=gs,
                                   groups=groups, prefix=prefix)


def simple_repgraph_forward(x: Tensor4, params: SimpleRepGraphParams, cfg: LayerConfig,
                            offsets: Optional[OffsetField] = None,
                            collect: Optional[dict] = None) -> Tensor4:
    tape = Tape()
    y = simple_forward_node(tape, tape.leaf(x.data), params, cfg,
                            offsets=offsets, collect=collect)
    return Tensor4(y.value)


def bottleneck_repgraph_forward(x: Tensor4, params: BottleneckRepGraphParams,
                                cfg: LayerConfig, training: bool = False,
                                offsets: Optional[OffsetField] = None,
                                collect: Optional[dict] = None) -> Tensor4:
    tape = Tape()
    y = bottleneck_forward_node(tape, tape.leaf(x.data), params, cfg, training=training,
                                offsets=offsets, collect=collect)
    return Tensor4(y.value)


def repgraph_forward(x: Tensor4, params, cfg: LayerConfig, training: bool = False,
                     offsets: Optional[OffsetField] = None,
                     collect: Optional[dict] = None) -> Tensor4:
    if cfg.variant == "simple":
        return simple_repgraph_forward(x, params, cfg, offsets=offsets, collect=collect)
    return bottleneck_repgraph_forward(x, params, cfg, training=training,
                                       offsets=offsets, collect=collect)
