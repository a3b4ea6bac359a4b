"""Bridging Gate: depth-query cross-attention into semantic features, then self-attention.

Both blocks follow the same pattern::

    out = MLP(softmax(Q K^T / (tau * sqrt(d_head))) V)

with no residual path and no normalization unless ``residual`` is enabled on
the parameters. ``tau`` stays 1 for training; values above 1 flatten the
attention at inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from . import autodiff as ad
from .autodiff import MLPParams, Tensor
from .errors import DimensionError, ParameterError
from .features import FeatureMap

PROJECTIONS = ("wq_c", "wk_c", "wv_c", "wq_s", "wk_s", "wv_s")


@dataclass
class AttentionRecord:
    weights: np.ndarray  # (queries, keys), rows sum to 1
    block: str  # "cross" or "self"
    gate_index: int = 0
    head: int = 0


@dataclass
class GateParams:
    """Trainable weights of one gate. Projections are ``C x d``; both MLPs map ``d -> hidden -> C``."""

    wq_c: Tensor
    wk_c: Tensor
    wv_c: Tensor
    wq_s: Tensor
    wk_s: Tensor
    wv_s: Tensor
    mlp_c: MLPParams
    mlp_s: MLPParams
    heads: int = 1
    residual: bool = False

    def __post_init__(self):
        c, d = self.wq_c.shape
        for name in PROJECTIONS:
            if getattr(self, name).shape != (c, d):
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {(c, d)}")
        for mlp in (self.mlp_c, self.mlp_s):
            if mlp.in_dim != d or mlp.out_dim != c:
                raise DimensionError(f"gate MLP must map {d} -> {c}, got {mlp.in_dim} -> {mlp.out_dim}")
        if self.heads < 1 or d % self.heads:
            raise ParameterError(f"projection width {d} is not divisible into {self.heads} heads")

    @property
    def channels(self) -> int:
        return self.wq_c.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.wq_c.shape[1]

    def named_tensors(self) -> dict[str, Tensor]:
        out = {name: getattr(self, name) for name in PROJECTIONS}
        for block, mlp in (("mlp_c", self.mlp_c), ("mlp_s", self.mlp_s)):
            for part, t in zip(("w1", "b1", "w2", "b2"), mlp.tensors()):
                out[f"{block}.{part}"] = t
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def copy(self, requires_grad: bool | None = None) -> "GateParams":
        def clone(t: Tensor) -> Tensor:
            rg = t.requires_grad if requires_grad is None else requires_grad
            return Tensor(t.data, requires_grad=rg, name=t.name)

        return GateParams(
            *(clone(getattr(self, n)) for n in PROJECTIONS),
            mlp_c=MLPParams(*(clone(t) for t in self.mlp_c.tensors())),
            mlp_s=MLPParams(*(clone(t) for t in self.mlp_s.tensors())),
            heads=self.heads,
            residual=self.residual,
        )

    @classmethod
    def initialize(
        cls,
        channels: int,
        proj_dim: int,
        rng: np.random.Generator,
        hidden_ratio: int = 4,
        heads: int = 1,
        residual: bool = False,
        zero_output: bool = False,
        requires_grad: bool = True,
        prefix: str = "",
        gain: float = 1.0,
    ) -> "GateParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

        ``gain`` multiplies the bound of the six attention projections only.

        Values are rounded to float32-representable numbers so that parameters
        survive a float32 checkpoint round trip unchanged.
        """
        hidden = hidden_ratio * channels

        def uniform(rows, cols, name, gain=1.0):
            bound = gain / math.sqrt(rows)
            w = rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32).astype(np.float64)
            return Tensor(w, requires_grad=requires_grad, name=prefix + name)

        def zeros(shape, name):
            return Tensor(np.zeros(shape), requires_grad=requires_grad, name=prefix + name)

        proj = [uniform(channels, proj_dim, n, gain) for n in PROJECTIONS]
        mlps = []
        for block in ("mlp_c", "mlp_s"):
            w2 = zeros((hidden, channels), f"{block}.w2") if zero_output else uniform(hidden, channels, f"{block}.w2")
            mlps.append(MLPParams(
                uniform(proj_dim, hidden, f"{block}.w1"),
                zeros((hidden,), f"{block}.b1"),
                w2,
                zeros((channels,), f"{block}.b2"),
            ))
        return cls(*proj, mlp_c=mlps[0], mlp_s=mlps[1], heads=heads, residual=residual)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau >= 1.0:
        raise ParameterError(f"gate temperature must be >= 1, got {tau}")
    return tau


def _attend(q: Tensor, k: Tensor, v: Tensor, tau: float, heads: int):
    d = q.shape[1]
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    outputs, weights = [], []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh, kh, vh = (ad.columns(x, h * dh, (h + 1) * dh) for x in (q, k, v))
        logits = ad.mul(ad.matmul(qh, ad.transpose(kh)), scale)
        w = ad.softmax_rows(logits, tau)
        outputs.append(ad.matmul(w, vh))
        weights.append(w.data)
    return ad.concat_columns(outputs), weights


def cross_attention_block(
    f_d: FeatureMap, f_s: FeatureMap, p: GateParams, tau: float = 1.0, gate_index: int = 0
) -> tuple[FeatureMap, list[AttentionRecord]]:
    """Depth tokens query the aligned semantic tokens; semantic tokens give keys and values."""
    tau = _check_tau(tau)
    if f_d.data.shape != f_s.data.shape:
        raise DimensionError(
            f"cross attention needs matching token grids, got {f_d.data.shape} and {f_s.data.shape}"
        )
    if f_d.channels != p.channels:
        raise DimensionError(f"features have {f_d.channels} channels, gate expects {p.channels}")
    q = ad.matmul(f_d.data, p.wq_c)
    k = ad.matmul(f_s.data, p.wk_c)
    v = ad.matmul(f_s.data, p.wv_c)
    mixed, weights = _attend(q, k, v, tau, p.heads)
    out = ad.mlp_forward(mixed, p.mlp_c)
    if p.residual:
        out = ad.add(out, f_d.data)
    records = [AttentionRecord(w, "cross", gate_index, h) for h, w in enumerate(weights)]
    return FeatureMap(f_d.height, f_d.width, out), records


def self_attention_block(
    f_c: FeatureMap, p: GateParams, tau: float = 1.0, gate_index: int = 0
) -> tuple[FeatureMap, list[AttentionRecord]]:
    tau = _check_tau(tau)
    if f_c.channels != p.channels:
        raise DimensionError(f"features have {f_c.channels} channels, gate expects {p.channels}")
    q = ad.matmul(f_c.data, p.wq_s)
    k = ad.matmul(f_c.data, p.wk_s)
    v = ad.matmul(f_c.data, p.wv_s)
    mixed, weights = _attend(q, k, v, tau, p.heads)
    out = ad.mlp_forward(mixed, p.mlp_s)
    if p.residual:
        out = ad.add(out, f_c.data)
    records = [AttentionRecord(w, "self", gate_index, h) for h, w in enumerate(weights)]
    return FeatureMap(f_c.height, f_c.width, out), records


def gate_forward(
    f_d: FeatureMap, f_s: FeatureMap, p: GateParams, tau: float = 1.0, gate_index: int = 0
) -> tuple[FeatureMap, list[AttentionRecord]]:
    f_c, rec_c = cross_attention_block(f_d, f_s, p, tau, gate_index)
    f_sg, rec_s = self_attention_block(f_c, p, tau, gate_index)
    return f_sg, rec_c + rec_s


def attention_entropy(rec: AttentionRecord | np.ndarray) -> np.ndarray:
    """Per-row Shannon entropy in nats."""
    w = rec.weights if isinstance(rec, AttentionRecord) else np.asarray(rec, dtype=np.float64)
    return entr(w).sum(axis=1)
