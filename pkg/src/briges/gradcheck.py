"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, MLPParams, Tensor
from .features import FeatureMap
from .gate import GateParams, gate_forward

FD_STEP = 1e-3
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)`` over one parameter tensor."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. each entry of ``param`` (evaluated without a graph)."""
    grad = np.zeros(param.shape)
    base = param.data
    flat = grad.reshape(-1)
    for i in range(base.size):
        plus = base.copy()
        plus.reshape(-1)[i] += h
        minus = base.copy()
        minus.reshape(-1)[i] -= h
        param.data = plus
        f_plus = loss_fn().item()
        param.data = minus
        f_minus = loss_fn().item()
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    param.data = base
    return grad


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> dict:
    with Graph() as g:
        loss = loss_fn()
    grads = g.backward(loss)
    return {id(p): grads.get(p, np.zeros(p.shape)) for p in params}


def compare(loss_fn: Callable[[], Tensor], named: dict[str, Tensor], h: float = FD_STEP) -> dict[str, float]:
    """Relative error per named parameter."""
    analytic = analytic_gradients(loss_fn, list(named.values()))
    return {name: relative_error(analytic[id(p)], numeric_gradient(loss_fn, p, h)) for name, p in named.items()}


@dataclass
class GateInstance:
    f_d: FeatureMap
    f_s: FeatureMap
    params: GateParams
    tau: float
    probe: np.ndarray

    def loss(self) -> Tensor:
        """Smooth scalar read-out of the gate output: a fixed random projection plus a quadratic."""
        out, _ = gate_forward(self.f_d, self.f_s, self.params, self.tau)
        lin = ad.sum_(ad.mul(out.data, self.probe))
        return ad.add(lin, ad.mul(ad.mean(ad.mul(out.data, out.data)), 0.5))


def random_gate_instance(rng: np.random.Generator, channels: int = 4, proj_dim: int = 4,
                         grid: tuple[int, int] = (2, 3), heads: int = 1, tau: float | None = None,
                         residual: bool = False) -> GateInstance:
    h, w = grid
    f_d = FeatureMap(h, w, Tensor(rng.normal(size=(h * w, channels))))
    f_s = FeatureMap(h, w, Tensor(rng.normal(size=(h * w, channels))))
    p = GateParams.initialize(channels, proj_dim, rng, heads=heads, residual=residual, gain=2.0)
    for mlp in (p.mlp_c, p.mlp_s):
        mlp.b1.data = rng.normal(0.0, 0.5, mlp.b1.shape)
        mlp.b2.data = rng.normal(0.0, 0.5, mlp.b2.shape)
    tau = float(rng.uniform(1.0, 4.0)) if tau is None else tau
    return GateInstance(f_d, f_s, p, tau, rng.normal(size=(h * w, channels)))


@dataclass
class GradcheckReport:
    worst_error: float
    worst_param: str
    errors: dict = field(default_factory=dict)  # param name -> worst error across instances
    instances: int = 0

    @property
    def passed(self) -> bool:
        return self.worst_error <= TOLERANCE


def check_gate_gradients(seed: int = 0, instances: int = 20, h: float = FD_STEP,
                         fault: str | None = None, **instance_kw) -> GradcheckReport:
    """Compare backprop against central differences on every gate parameter.

    ``fault`` names a parameter whose analytic gradient is doubled before the
    comparison; it exists to prove the check catches a wrong gradient.
    """
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for _ in range(instances):
        inst = random_gate_instance(rng, **instance_kw)
        named = inst.params.named_tensors()
        analytic = analytic_gradients(inst.loss, list(named.values()))
        for name, p in named.items():
            a = analytic[id(p)] * (2.0 if name == fault else 1.0)
            err = relative_error(a, numeric_gradient(inst.loss, p, h))
            errors[name] = max(errors.get(name, 0.0), err)
    worst = max(errors, key=errors.get)
    return GradcheckReport(errors[worst], worst, errors, instances)


def mlp_instance(rng: np.random.Generator, rows: int = 2, width: int = 2, hidden: int = 8):
    p = MLPParams(
        Tensor(rng.normal(size=(width, hidden)), requires_grad=True, name="w1"),
        Tensor(rng.normal(size=hidden), requires_grad=True, name="b1"),
        Tensor(rng.normal(size=(hidden, width)), requires_grad=True, name="w2"),
        Tensor(rng.normal(size=width), requires_grad=True, name="b2"),
    )
    x = Tensor(rng.normal(size=(rows, width)), requires_grad=True, name="x")
    return x, p
