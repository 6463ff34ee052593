"""Scalar-input MLP machinery.

Time derivatives are propagated forward as second-order jets ``(h, h', h'')``
through the encoding and every layer, so ``d/dt`` and ``d²/dt²`` of each
output are exact and cost about three forward passes. Parameter gradients use
torch reverse mode on top of whatever this module computes (including the jets
themselves, which the tight-coupling and acceleration losses need).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

DTYPE = torch.float64


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


# ------------------------------------------------------------------ encoding


@dataclass(frozen=True)
class EncodingConfig:
    """Time embedding.

    ``kind="sinusoidal"`` gives ``[t, sin(2^k pi t), cos(2^k pi t)]`` for
    ``k < bands``; ``kind="linear"`` gives ``[t]`` only. ``coarse_to_fine`` is
    the anneal progress alpha in ``[0, bands]``; ``None`` means all bands on.
    """

    kind: str = "sinusoidal"
    bands: int = 5
    coarse_to_fine: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("sinusoidal", "linear"):
            raise ValueError(f"unknown encoding kind {self.kind!r}")
        if self.bands < 0:
            raise ValueError("bands must be >= 0")
        if self.coarse_to_fine is not None and not 0.0 <= self.coarse_to_fine <= max(self.bands, 0):
            raise ValueError("coarse_to_fine progress must lie in [0, bands]")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "linear" else 1 + 2 * self.bands

    def with_progress(self, alpha: Optional[float]) -> "EncodingConfig":
        if alpha is not None:
            alpha = min(max(alpha, 0.0), float(self.bands))
        return EncodingConfig(self.kind, self.bands, alpha)


def band_weights(bands: int, alpha: Optional[float]) -> np.ndarray:
    """Cosine-eased per-band weights: 0 for k >= alpha, 1 for k + 1 <= alpha."""
    if alpha is None:
        return np.ones(bands)
    x = np.clip(alpha - np.arange(bands), 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(math.pi * x))


def _freqs(bands: int) -> np.ndarray:
    return (2.0 ** np.arange(bands)) * math.pi


def encode(t: float, cfg: EncodingConfig) -> np.ndarray:
    if cfg.kind == "linear" or cfg.bands == 0:
        return np.array([float(t)])
    f = _freqs(cfg.bands)
    w = band_weights(cfg.bands, cfg.coarse_to_fine)
    out = np.empty(1 + 2 * cfg.bands)
    out[0] = t
    out[1::2] = w * np.sin(f * t)
    out[2::2] = w * np.cos(f * t)
    return out


def encode_derivative(t: float, cfg: EncodingConfig) -> np.ndarray:
    if cfg.kind == "linear" or cfg.bands == 0:
        return np.array([1.0])
    f = _freqs(cfg.bands)
    w = band_weights(cfg.bands, cfg.coarse_to_fine)
    out = np.empty(1 + 2 * cfg.bands)
    out[0] = 1.0
    out[1::2] = w * f * np.cos(f * t)
    out[2::2] = -w * f * np.sin(f * t)
    return out


def encode_jet(t: torch.Tensor, cfg: EncodingConfig):
    """Batched encoding of times ``(N,)`` with first and second t-derivatives."""
    t = t.reshape(-1, 1)
    one = torch.ones_like(t)
    zero = torch.zeros_like(t)
    if cfg.kind == "linear" or cfg.bands == 0:
        return t, one, zero
    f = torch.as_tensor(_freqs(cfg.bands), dtype=t.dtype)
    w = torch.as_tensor(band_weights(cfg.bands, cfg.coarse_to_fine), dtype=t.dtype)
    s, c = torch.sin(f * t), torch.cos(f * t)
    # interleave (sin, cos) per band to match encode()
    e = torch.stack([w * s, w * c], dim=-1).flatten(1)
    de = torch.stack([w * f * c, -w * f * s], dim=-1).flatten(1)
    dde = torch.stack([-w * f * f * s, -w * f * f * c], dim=-1).flatten(1)
    return torch.cat([t, e], 1), torch.cat([one, de], 1), torch.cat([zero, dde], 1)


# ----------------------------------------------------------------------- MLP


@dataclass
class MlpParams:
    """``len(weights)`` linear layers; activation between them, none after the last."""

    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need matching, non-empty weight and bias lists")
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"bad layer shapes {tuple(w.shape)} / {tuple(b.shape)}")
            if prev is not None and w.shape[1] != prev:
                raise ShapeMismatch(f"layer expects {w.shape[1]} inputs, previous emits {prev}")
            prev = w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def shapes(self) -> list:
        return [tuple(w.shape) for w in self.weights]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def clone(self) -> "MlpParams":
        return MlpParams(
            [w.detach().clone().requires_grad_(w.requires_grad) for w in self.weights],
            [b.detach().clone().requires_grad_(b.requires_grad) for b in self.biases],
            self.activation,
        )


def init_mlp(
    in_dim: int,
    out_dim: int,
    layers: int = 8,
    width: int = 256,
    activation: str = "relu",
    seed: int = 0,
    zero_last: bool = True,
    last_bias: Optional[Sequence[float]] = None,
    init: str = "he",
    dtype=DTYPE,
) -> MlpParams:
    """Build ``layers`` linear layers: in -> width -> ... -> width -> out.

    Hidden layers use He-normal weights for relu (``init="he"``) or the
    uniform fan-in rule (``init="uniform"``); biases start at 0. With
    ``zero_last`` the head weights are zero so the net is constant at
    ``last_bias`` until trained.
    """
    if layers < 1:
        raise ValueError("need at least one layer")
    gen = torch.Generator().manual_seed(int(seed))
    dims = [in_dim] + [width] * (layers - 1) + [out_dim]
    ws, bs = [], []
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == layers - 1
        if last and zero_last:
            w = torch.zeros(fo, fi, dtype=dtype)
        elif init == "he":
            w = torch.randn(fo, fi, generator=gen, dtype=dtype) * math.sqrt(2.0 / fi)
        elif init == "uniform":
            bound = 1.0 / math.sqrt(fi)
            w = (torch.rand(fo, fi, generator=gen, dtype=dtype) * 2 - 1) * bound
        else:
            raise ValueError(f"unknown init {init!r}")
        b = torch.zeros(fo, dtype=dtype)
        if last and last_bias is not None:
            b = torch.as_tensor(np.asarray(last_bias, dtype=float), dtype=dtype).clone()
        ws.append(w.requires_grad_(True))
        bs.append(b.requires_grad_(True))
    return MlpParams(ws, bs, activation)


def _as_batch(t, dtype) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        return t.reshape(-1).to(dtype)
    return torch.as_tensor(np.atleast_1d(np.asarray(t, dtype=float)), dtype=dtype)


def mlp_apply(params: MlpParams, x: torch.Tensor) -> torch.Tensor:
    """Plain forward pass on an already-encoded batch ``(N, in_dim)``."""
    if x.shape[-1] != params.in_dim:
        raise ShapeMismatch(f"input width {x.shape[-1]} != {params.in_dim}")
    act = torch.relu if params.activation == "relu" else torch.sigmoid
    h = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < n - 1:
            h = act(h)
    return h


def forward(params: MlpParams, cfg: EncodingConfig, t) -> torch.Tensor:
    """Raw (pre-head-activation) outputs for times ``t``; shape ``(N, out_dim)``."""
    dtype = params.weights[0].dtype
    tt = _as_batch(t, dtype)
    if cfg.dim != params.in_dim:
        raise ShapeMismatch(f"encoding emits {cfg.dim} features, net expects {params.in_dim}")
    x, _, _ = encode_jet(tt, cfg)
    return mlp_apply(params, x)


def time_derivatives(params: MlpParams, cfg: EncodingConfig, t):
    """``(y, dy/dt, d²y/dt²)`` each ``(N, out_dim)``, via forward-mode jets.

    The relu second derivative is taken as 0 (the net is piecewise linear in
    its pre-activations); exact away from kinks, which have measure zero.
    """
    dtype = params.weights[0].dtype
    tt = _as_batch(t, dtype)
    if cfg.dim != params.in_dim:
        raise ShapeMismatch(f"encoding emits {cfg.dim} features, net expects {params.in_dim}")
    h, d1, d2 = encode_jet(tt, cfg)
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        d1 = d1 @ w.T
        d2 = d2 @ w.T
        if i == n - 1:
            break
        if params.activation == "relu":
            mask = (h > 0).to(dtype)
            h = h * mask
            d1 = d1 * mask
            d2 = d2 * mask
        else:
            s = torch.sigmoid(h)
            ds = s * (1 - s)
            dds = ds * (1 - 2 * s)
            h = s
            d2 = dds * d1 * d1 + ds * d2
            d1 = ds * d1
    return h, d1, d2


def loss_gradients(params_list, loss_fn: Callable[[], torch.Tensor]):
    """Evaluate ``loss_fn()`` and return ``(loss, grads)`` for every tensor in
    ``params_list`` (an ``MlpParams``, or a list of tensors / ``MlpParams``)."""
    tensors = _flatten_params(params_list)
    loss = loss_fn()
    if not torch.isfinite(loss).all():
        raise NonFiniteLoss(f"loss is {loss.item()}")
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(tensors, grads)]
    return float(loss.detach()), grads


def _flatten_params(obj) -> list:
    if isinstance(obj, MlpParams):
        return obj.parameters()
    if isinstance(obj, torch.Tensor):
        return [obj]
    out = []
    for o in obj:
        out += _flatten_params(o)
    return out


# ------------------------------------------------------------------ optimizer


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    final_lr: Optional[float] = None
    total_steps: int = 1
    warmup_steps: int = 0

    def __call__(self, step: int) -> float:
        """Exponential decay ``initial * (final/initial)^(step/total)``, with an
        optional linear warmup multiplier over the first ``warmup_steps``."""
        lr = self.initial_lr
        if self.final_lr is not None and self.total_steps > 0:
            frac = min(max(step / self.total_steps, 0.0), 1.0)
            lr = self.initial_lr * (self.final_lr / self.initial_lr) ** frac
        if self.warmup_steps > 0 and step < self.warmup_steps:
            lr *= (step + 1) / self.warmup_steps
        return lr


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors, **kw) -> "AdamState":
        tensors = _flatten_params(tensors)
        return cls([torch.zeros_like(p) for p in tensors], [torch.zeros_like(p) for p in tensors], **kw)


def adam_step(state: AdamState, params, grads, lr) -> None:
    """In-place bias-corrected Adam update.

    ``lr`` is a scalar or a per-tensor list (used to route different rates to
    TransNet and RotsNet).
    """
    tensors = _flatten_params(params)
    if not (len(tensors) == len(grads) == len(state.m)):
        raise ShapeMismatch("parameter, gradient and moment lists differ in length")
    lrs = list(lr) if isinstance(lr, (list, tuple)) else [lr] * len(tensors)
    if len(lrs) != len(tensors):
        raise ShapeMismatch("per-tensor lr list has wrong length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for p, g, m, v, a in zip(tensors, grads, state.m, state.v, lrs):
            if g.shape != p.shape or m.shape != p.shape:
                raise ShapeMismatch(f"gradient {tuple(g.shape)} vs parameter {tuple(p.shape)}")
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-a / c1)


# ----------------------------------------------------------------- checkpoint


def save_checkpoint(path, nets: dict, meta: Optional[dict] = None) -> None:
    """Write ``{name: MlpParams}`` as a JSON header line + little-endian float64
    payload. Header: per-net layer shapes and activation, plus ``meta``."""
    header = {"meta": meta or {}, "nets": {}}
    chunks = []
    for name, p in nets.items():
        header["nets"][name] = {"activation": p.activation, "shapes": p.shapes}
        for w, b in zip(p.weights, p.biases):
            chunks.append(w.detach().to(torch.float64).cpu().numpy().ravel())
            chunks.append(b.detach().to(torch.float64).cpu().numpy().ravel())
    payload = np.concatenate(chunks).astype("<f8") if chunks else np.zeros(0, "<f8")
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload.tobytes())


def load_checkpoint(path, dtype=DTYPE):
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    flat = np.frombuffer(raw[8 + n :], dtype="<f8")
    nets, off = {}, 0
    for name, spec in header["nets"].items():
        ws, bs = [], []
        for fo, fi in spec["shapes"]:
            w = flat[off : off + fo * fi].reshape(fo, fi)
            off += fo * fi
            b = flat[off : off + fo]
            off += fo
            ws.append(torch.tensor(w, dtype=dtype, requires_grad=True))
            bs.append(torch.tensor(b, dtype=dtype, requires_grad=True))
        nets[name] = MlpParams(ws, bs, spec["activation"])
    if off != flat.size:
        raise ShapeMismatch("checkpoint payload longer than its header describes")
    return nets, header["meta"]


def encoding_to_dict(cfg: EncodingConfig) -> dict:
    return asdict(cfg)
