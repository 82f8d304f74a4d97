"""Shared-backbone classifier with a semantic head and a one-hot head.

Parameters live in a torch module; the optimiser, EMA shadow and checkpoint
format are plain tensors/arrays so every update rule is explicit here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from .errors import DataError, NumericalError


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description, enough to rebuild a network from a checkpoint."""

    image_shape: tuple[int, int, int]  # H, W, C
    emb_dim: int
    num_classes: int
    backbone: str = "conv"  # "conv" or "mlp"
    channels: tuple[int, int] = (16, 32)
    hidden: int = 64
    dtype: str = "float32"


class TwoHeadNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        H, W, C = spec.image_shape
        if spec.backbone == "conv":
            c1, c2 = spec.channels
            self.backbone = nn.Sequential(
                nn.Conv2d(C, c1, 3, padding=1),
                nn.ReLU(),
                nn.MaxPool2d(2),
                nn.Conv2d(c1, c2, 3, padding=1),
                nn.ReLU(),
                nn.AdaptiveAvgPool2d(1),
                nn.Flatten(),
                nn.Linear(c2, spec.hidden),
                nn.ReLU(),
            )
        elif spec.backbone == "mlp":
            self.backbone = nn.Sequential(
                nn.Flatten(),
                nn.Linear(H * W * C, spec.hidden),
                nn.Tanh(),
            )
        else:
            raise ValueError(f"unknown backbone {spec.backbone!r}")
        self.sc_head = nn.Linear(spec.hidden, spec.emb_dim)
        self.oh_head = nn.Linear(spec.hidden, spec.num_classes)

    def forward(self, x):
        h = self.backbone(x)
        return self.sc_head(h), self.oh_head(h)


def _init_he(net: nn.Module, generator: torch.Generator):
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            with torch.no_grad():
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=generator, dtype=m.weight.dtype)
                    * np.sqrt(2.0 / fan_in)
                )
                m.bias.zero_()


@dataclass
class ModelState:
    spec: ModelSpec
    net: TwoHeadNet
    ema: dict[str, torch.Tensor]
    momentum_buf: dict[str, torch.Tensor]
    step: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.net.named_parameters()]

    def live(self) -> dict[str, torch.Tensor]:
        return dict(self.net.named_parameters())

    def num_params(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def flat_params(self, ema=False) -> np.ndarray:
        src = self.ema if ema else self.live()
        return torch.cat([src[n].detach().reshape(-1) for n in self.names]).numpy().copy()


@torch.no_grad()
def set_flat_params(state: ModelState, flat, ema=False) -> ModelState:
    """Overwrite live (or EMA) parameters from a flat vector in ``state.names`` order."""
    flat = torch.as_tensor(np.asarray(flat), dtype=next(state.net.parameters()).dtype)
    for name, chunk in _split(flat, state).items():
        (state.ema[name] if ema else state.live()[name]).copy_(chunk)
    return state


def init_state(spec: ModelSpec, seed: int = 0) -> ModelState:
    dtype = getattr(torch, spec.dtype)
    net = TwoHeadNet(spec).to(dtype)
    _init_he(net, torch.Generator().manual_seed(seed))
    ema = {n: p.detach().clone() for n, p in net.named_parameters()}
    buf = {n: torch.zeros_like(p) for n, p in net.named_parameters()}
    return ModelState(spec, net, ema, buf)


def to_tensor(batch, spec: ModelSpec) -> torch.Tensor:
    """n x H x W x C images in [0, 1] -> centred NCHW tensor."""
    arr = np.asarray(batch)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[0] == 0 or tuple(arr.shape[1:]) != tuple(spec.image_shape):
        raise DataError(
            f"expected a non-empty batch of {tuple(spec.image_shape)} images, got {arr.shape}"
        )
    x = torch.as_tensor(arr, dtype=getattr(torch, spec.dtype))
    return x.permute(0, 3, 1, 2) - 0.5


def forward(state: ModelState, batch, use_ema: bool = False):
    """Return ``(emb_preds, logits)`` from one backbone pass."""
    x = batch if isinstance(batch, torch.Tensor) else to_tensor(batch, state.spec)
    if use_ema:
        with torch.no_grad():
            return functional_call(state.net, state.ema, (x,))
    return state.net(x)


def gradients(state: ModelState, loss_fn: Callable[[], torch.Tensor]) -> torch.Tensor:
    """Flat reverse-mode gradient of ``loss_fn()`` w.r.t. all live parameters."""
    params = list(state.net.parameters())
    loss = loss_fn()
    if not isinstance(loss, torch.Tensor):
        loss = torch.as_tensor(float(loss))
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {float(loss)}")
    if not loss.requires_grad:
        return torch.zeros(sum(p.numel() for p in params), dtype=params[0].dtype)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat(
        [(torch.zeros_like(p) if g is None else g).reshape(-1) for g, p in zip(grads, params)]
    )


def _split(flat: torch.Tensor, state: ModelState) -> dict[str, torch.Tensor]:
    total = state.num_params()
    if flat.numel() != total:
        raise ValueError(f"vector has {flat.numel()} entries, model has {total} parameters")
    out, offset = {}, 0
    for name, p in state.net.named_parameters():
        out[name] = flat[offset : offset + p.numel()].view_as(p)
        offset += p.numel()
    return out


@torch.no_grad()
def sgd_step(state: ModelState, grads, lr, momentum=0.9, weight_decay=5e-4, nesterov=True):
    """One SGD step with (Nesterov) momentum and L2 weight decay added to the gradient."""
    grads = torch.as_tensor(grads, dtype=next(state.net.parameters()).dtype)
    if not torch.all(torch.isfinite(grads)):
        raise NumericalError("non-finite gradient")
    for name, g in _split(grads, state).items():
        p = state.live()[name]
        g = g + weight_decay * p
        buf = state.momentum_buf[name]
        buf.mul_(momentum).add_(g)
        p.sub_(lr * (g + momentum * buf if nesterov else buf))
        if not torch.all(torch.isfinite(p)):
            raise NumericalError(f"parameter {name} became non-finite")
    state.step += 1
    return state


@torch.no_grad()
def ema_update(state: ModelState, decay=0.999):
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    for name, p in state.net.named_parameters():
        state.ema[name].mul_(decay).add_((1.0 - decay) * p.detach())
    return state


# ---------------------------------------------------------------------------
# Checkpoints


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(state: ModelState, path, config: dict | None = None, extra=None):
    """Write parameters, EMA, momentum buffers and metadata to an ``.npz`` file."""
    config = config or {}
    arrays = {}
    for name, p in state.net.named_parameters():
        arrays[f"param/{name}"] = p.detach().numpy()
        arrays[f"ema/{name}"] = state.ema[name].numpy()
        arrays[f"momentum/{name}"] = state.momentum_buf[name].numpy()
    for key, value in (extra or {}).items():
        arrays[f"extra/{key}"] = np.asarray(value)
    header = {
        "spec": asdict(state.spec),
        "step": state.step,
        "config": config,
        "config_hash": config_hash(config),
        "meta": state.meta,
    }
    arrays["header"] = np.frombuffer(json.dumps(header, default=str).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelState, dict, dict]:
    """Return ``(state, header, extras)``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        raw = header["spec"]
        spec = ModelSpec(
            **{**raw, "image_shape": tuple(raw["image_shape"]), "channels": tuple(raw["channels"])}
        )
        state = init_state(spec)
        dtype = getattr(torch, spec.dtype)
        with torch.no_grad():
            for name, p in state.net.named_parameters():
                p.copy_(torch.as_tensor(data[f"param/{name}"], dtype=dtype))
                state.ema[name] = torch.as_tensor(data[f"ema/{name}"], dtype=dtype).clone()
                state.momentum_buf[name] = torch.as_tensor(
                    data[f"momentum/{name}"], dtype=dtype
                ).clone()
        extras = {k[len("extra/") :]: data[k] for k in data.files if k.startswith("extra/")}
    state.step = header["step"]
    state.meta = header.get("meta", {})
    return state, header, extras
