"""End-to-end model with frozen stub encoders/decoder and four trainable gates.

The stand-in encoders expand a per-sample latent grid through fixed linear
maps, so depth and semantic features share structure. Targets come from a
hidden set of reference gates pushed through the same frozen decoder, which
makes an exact fit reachable: with the trainable gates equal to the
reference gates the training loss is zero.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .errors import ContractError, DegenerateInputError, NumericError, ParameterError
from .features import FeatureMap, align_semantic, resize_matrix
from .gate import AttentionRecord, GateParams, gate_forward
from .losses import combined_loss, minmax_normalize
from .maps import DepthMap, DisparityMap
from .metrics import MetricsReport, evaluate_depth
from .optim import OptimState, adamw_step

log = logging.getLogger(__name__)

N_LEVELS = 4

# independent RNG streams, keyed together with a user seed
_FROZEN_STREAM = 11
_REFERENCE_STREAM = 23
_GATE_STREAM = 37
_SAMPLE_STREAM = 53
_BATCH_STREAM = 71

TARGET_RETRIES = 3
_RETRY_STRIDE = 1_000_003

# synthetic ground-truth depth range used at evaluation
EVAL_NEAR, EVAL_FAR = 1.0, 10.0


@dataclass
class ModelConfig:
    channels: int = 16
    proj_dim: int = 16
    level_grids: tuple = ((8, 8),) * N_LEVELS
    semantic_grid: tuple = (16, 16)
    out_size: tuple = (32, 32)
    latent_grid: tuple = (4, 4)
    latent_dim: int = 8
    hidden_ratio: int = 4
    # With gain 1 and unit-scale features the attention logits are tiny, the
    # reference gates mix almost uniformly and targets collapse to round-off.
    init_gain: float = 2.0
    feature_scale: float = 3.0
    heads: int = 1
    residual: bool = False
    tau_inference: float = 2.5
    mode: str = "v2"
    n_scales: int = 4
    model_seed: int = 0

    def __post_init__(self):
        self.level_grids = tuple(tuple(int(v) for v in g) for g in self.level_grids)
        self.semantic_grid = tuple(int(v) for v in self.semantic_grid)
        self.out_size = tuple(int(v) for v in self.out_size)
        self.latent_grid = tuple(int(v) for v in self.latent_grid)
        self.mode = self.mode.lower()
        self.validate()

    def validate(self) -> None:
        if len(self.level_grids) != N_LEVELS:
            raise ParameterError(f"level_grids: exactly {N_LEVELS} levels required, got {len(self.level_grids)}")
        for name in ("level_grids", "semantic_grid", "out_size", "latent_grid"):
            grids = getattr(self, name)
            flat = [v for g in grids for v in g] if name == "level_grids" else list(grids)
            if any(v < 1 for v in flat) or (name != "level_grids" and len(flat) != 2):
                raise ParameterError(f"{name}: invalid grid {grids}")
        for name in ("channels", "proj_dim", "latent_dim", "hidden_ratio", "heads", "n_scales"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name}: must be >= 1")
        for name in ("init_gain", "feature_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name}: must be finite and positive, got {v}")
        if self.proj_dim % self.heads:
            raise ParameterError(f"heads: {self.heads} does not divide proj_dim {self.proj_dim}")
        if not self.tau_inference >= 1.0:
            raise ParameterError(f"tau_inference: must be >= 1, got {self.tau_inference}")
        if self.mode not in ("v1", "v2"):
            raise ParameterError(f"mode: must be v1 or v2, got {self.mode!r}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [list(g) for g in v] if f.name == "level_grids" else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    lr: float = 3e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 500
    train_pool: int = 16  # size of the fixed training set; 0 draws fresh samples every step

    def validate(self) -> None:
        if not self.lr > 0:
            raise ParameterError(f"lr: must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1/beta2: must lie in [0, 1)")
        if not self.eps > 0:
            raise ParameterError("eps: must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size: must be >= 1")
        if self.steps < 1:
            raise ParameterError("steps: must be >= 1")
        if self.train_pool < 0 or 0 < self.train_pool < self.batch_size:
            raise ParameterError("train_pool: must be 0 or at least batch_size")


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


@dataclass
class StubModel:
    cfg: ModelConfig
    depth_maps: list  # per level: (latent_dim, C)
    semantic_map: np.ndarray  # (latent_dim, C)
    readout: list  # per level: (C,)
    reference: list  # frozen GateParams used to synthesize targets
    gates: list  # trainable GateParams

    def frozen_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"encoder.depth{i}", w) for i, w in enumerate(self.depth_maps)]
        out.append(("encoder.semantic", self.semantic_map))
        out += [(f"decoder.readout{i}", v) for i, v in enumerate(self.readout)]
        for i, g in enumerate(self.reference):
            out += [(f"reference{i}.{n}", t.data) for n, t in g.named_tensors().items()]
        return out

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.frozen_arrays():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def trainable(self) -> list[Tensor]:
        return [t for g in self.gates for t in g.tensors()]

    def set_gates(self, gates: Sequence[GateParams]) -> None:
        if len(gates) != N_LEVELS:
            raise ParameterError(f"expected {N_LEVELS} gates, got {len(gates)}")
        self.gates = list(gates)


def init_gates(cfg: ModelConfig, seed: int, requires_grad: bool = True, stream: int = _GATE_STREAM,
               prefix: str = "gate", zero_output: bool = False) -> list[GateParams]:
    rng = np.random.default_rng([stream, seed])
    return [
        GateParams.initialize(
            cfg.channels, cfg.proj_dim, rng, cfg.hidden_ratio, cfg.heads, cfg.residual,
            requires_grad=requires_grad, prefix=f"{prefix}{i}.", gain=cfg.init_gain,
            zero_output=zero_output,
        )
        for i in range(N_LEVELS)
    ]


def build_model(cfg: ModelConfig, gate_seed: int = 0) -> StubModel:
    """Frozen parts come from ``cfg.model_seed``; trainable gates from ``gate_seed``."""
    rng = np.random.default_rng([_FROZEN_STREAM, cfg.model_seed])
    scale = cfg.feature_scale / math.sqrt(cfg.latent_dim)
    depth_maps = [_f32(rng.normal(0.0, scale, (cfg.latent_dim, cfg.channels))) for _ in range(N_LEVELS)]
    semantic_map = _f32(rng.normal(0.0, scale, (cfg.latent_dim, cfg.channels)))
    readout = [_f32(rng.normal(0.0, 1.0 / math.sqrt(cfg.channels), cfg.channels)) for _ in range(N_LEVELS)]
    reference = init_gates(cfg, cfg.model_seed, requires_grad=False, stream=_REFERENCE_STREAM, prefix="reference")
    return StubModel(cfg, depth_maps, semantic_map, readout, reference, init_gates(cfg, gate_seed))


def sample_latent(sample_seed: int, cfg: ModelConfig) -> np.ndarray:
    gh, gw = cfg.latent_grid
    rng = np.random.default_rng([_SAMPLE_STREAM, int(sample_seed)])
    return rng.normal(size=(gh * gw, cfg.latent_dim))


def stub_encoders(sample_seed: int, model: StubModel) -> tuple[list[FeatureMap], FeatureMap]:
    """Depth features for the four levels and the semantic feature of one synthetic sample.

    Every map is the latent grid bilinearly upsampled to its own grid and then
    mapped token-wise by a fixed ``latent_dim x C`` matrix.
    """
    cfg = model.cfg
    z = sample_latent(sample_seed, cfg)
    gh, gw = cfg.latent_grid

    def expand(grid, weights):
        up = resize_matrix(gh, gw, grid[0], grid[1]) @ z
        return FeatureMap(grid[0], grid[1], Tensor(up @ weights))

    f_d = [expand(g, w) for g, w in zip(cfg.level_grids, model.depth_maps)]
    return f_d, expand(cfg.semantic_grid, model.semantic_map)


def stub_decoder(fused: Sequence[FeatureMap], model: StubModel) -> Tensor:
    """Resize each level to the output raster, project channels with a fixed vector, sum levels."""
    cfg = model.cfg
    if len(fused) != N_LEVELS:
        raise ParameterError(f"decoder expects {N_LEVELS} levels, got {len(fused)}")
    oh, ow = cfg.out_size
    total = None
    for f, v in zip(fused, model.readout):
        reduced = ad.matmul(f.data, Tensor(v.reshape(-1, 1)))
        up = ad.matmul(Tensor(resize_matrix(f.height, f.width, oh, ow)), reduced)
        total = up if total is None else ad.add(total, up)
    return ad.reshape(total, (oh, ow))


def fuse(f_d: Sequence[FeatureMap], f_s: FeatureMap, gates: Sequence[GateParams], tau: float):
    aligned: dict[tuple[int, int], FeatureMap] = {}
    fused, records = [], []
    for i, (level, gate) in enumerate(zip(f_d, gates)):
        if level.grid not in aligned:
            aligned[level.grid] = align_semantic(f_s, level.grid)
        out, recs = gate_forward(level, aligned[level.grid], gate, tau, gate_index=i)
        fused.append(out)
        records += recs
    return fused, records


def forward(sample_seed: int, model: StubModel, tau: float = 1.0,
            gates: Sequence[GateParams] | None = None) -> tuple[Tensor, list[AttentionRecord]]:
    if not tau >= 1.0:
        raise ParameterError(f"tau must be >= 1, got {tau}")
    f_d, f_s = stub_encoders(sample_seed, model)
    fused, records = fuse(f_d, f_s, model.gates if gates is None else gates, tau)
    return stub_decoder(fused, model), records


def sample_target(sample_seed: int, model: StubModel) -> tuple[int, DisparityMap]:
    """Like :func:`make_target`, also returning the seed that produced the target."""
    seed = int(sample_seed)
    for attempt in range(TARGET_RETRIES + 1):
        used = seed + attempt * _RETRY_STRIDE
        raw, _ = forward(used, model, 1.0, gates=model.reference)
        try:
            return used, minmax_normalize(raw.data)
        except DegenerateInputError:
            log.warning("degenerate target for seed %d (attempt %d)", seed, attempt)
    raise DegenerateInputError(f"target for seed {seed} stayed degenerate after {TARGET_RETRIES} retries")


def make_target(sample_seed: int, model: StubModel) -> DisparityMap:
    """Normalized disparity produced by the reference gates at tau = 1.

    A degenerate (constant) raster is regenerated from a shifted seed, at most
    ``TARGET_RETRIES`` times.
    """
    return sample_target(sample_seed, model)[1]


def batch_loss(seeds: Sequence[int], model: StubModel, mode: str | None = None) -> Tensor:
    mode = model.cfg.mode if mode is None else mode
    total = None
    for s in seeds:
        s, target = sample_target(s, model)
        pred, _ = forward(s, model, 1.0)
        loss = combined_loss(pred, target, mode, model.cfg.n_scales)
        total = loss if total is None else ad.add(total, loss)
    return ad.div(total, float(len(seeds)))


@dataclass
class TrainResult:
    model: StubModel
    log: list = field(default_factory=list)  # (step, lr, loss)
    digest_before: str = ""
    digest_after: str = ""

    @property
    def gates(self) -> list[GateParams]:
        return self.model.gates


def train(cfg: ModelConfig, run_seed: int, steps: int | None = None, batch_size: int | None = None,
          tcfg: TrainConfig | None = None, model: StubModel | None = None, init: str = "random") -> TrainResult:
    """Optimize only the gate parameters; encoders, decoder and reference gates stay frozen.

    ``init`` is ``"random"`` (gates drawn from ``run_seed``), ``"reference"``
    (start at the hidden reference gates) or ``"keep"`` (use ``model.gates``).
    """
    tcfg = TrainConfig() if tcfg is None else tcfg
    steps = tcfg.steps if steps is None else steps
    batch_size = tcfg.batch_size if batch_size is None else batch_size
    if steps < 1 or batch_size < 1:
        raise ParameterError("steps and batch_size must be >= 1")
    tcfg.validate()
    model = build_model(cfg, run_seed) if model is None else model
    if init == "random":
        model.set_gates(init_gates(cfg, run_seed))
    elif init == "reference":
        model.set_gates([g.copy(requires_grad=True) for g in model.reference])
        for i, g in enumerate(model.gates):
            for name, t in g.named_tensors().items():
                t.name = f"gate{i}.{name}"
    elif init != "keep":
        raise ParameterError(f"unknown init {init!r}")

    params = model.trainable()
    state = OptimState(tcfg.lr, steps, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.eps)
    rng = np.random.default_rng([_BATCH_STREAM, int(run_seed)])
    result = TrainResult(model, digest_before=model.frozen_digest())

    pool = rng.integers(0, 2**31 - 1, size=tcfg.train_pool) if tcfg.train_pool else None
    for step in range(1, steps + 1):
        if pool is None:
            seeds = rng.integers(0, 2**31 - 1, size=batch_size)
        else:
            seeds = rng.choice(pool, size=batch_size, replace=False)
        with Graph() as graph:
            loss = batch_loss(seeds, model)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite training loss at step {step}")
        grads = graph.backward(loss)
        for p in params:
            grads.setdefault(p, np.zeros(p.shape))
        result.log.append((step, state.current_lr(), value))
        adamw_step(params, grads, state)

    # checkpoints hold float32; round once here so the returned model is exactly what gets saved
    for p in params:
        p.data = _f32(p.data)
    result.digest_after = model.frozen_digest()
    if result.digest_after != result.digest_before:
        raise ContractError("frozen parameters changed during training")
    return result


def prediction_depth(pred: np.ndarray) -> np.ndarray:
    """Map a disparity-like prediction to a depth-ordered quantity (larger = farther)."""
    return -np.asarray(pred, dtype=np.float64)


def target_depth(target: DisparityMap) -> DepthMap:
    """Synthetic ground-truth depth, affine in normalized disparity, spanning [EVAL_NEAR, EVAL_FAR]."""
    depth = EVAL_NEAR + (EVAL_FAR - EVAL_NEAR) * (1.0 - target.values)
    return DepthMap(depth, target.mask)


def evaluate_sample(sample_seed: int, model: StubModel, tau: float) -> MetricsReport:
    s, target = sample_target(sample_seed, model)
    pred, _ = forward(s, model, tau)
    return evaluate_depth(DepthMap(prediction_depth(pred.data), target.mask), target_depth(target))


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    n = len(reports)
    return MetricsReport(
        absrel=sum(r.absrel for r in reports) / n,
        delta1=sum(r.delta1 for r in reports) / n,
        scale=sum(r.scale for r in reports) / n,
        shift=sum(r.shift for r in reports) / n,
        n_valid=sum(r.n_valid for r in reports),
    )


def evaluate(model: StubModel, eval_seeds: Sequence[int], tau: float | None = None):
    """Per-sample and aggregate metrics at temperature ``tau`` (default: the config's inference tau)."""
    if len(eval_seeds) < 1:
        raise ParameterError("evaluate needs at least one seed")
    tau = model.cfg.tau_inference if tau is None else tau
    per_sample = [evaluate_sample(s, model, tau) for s in eval_seeds]
    return aggregate(per_sample), per_sample
