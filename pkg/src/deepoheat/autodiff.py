"""Exact spatial derivatives of the operator network and parameter gradients.

Spatial derivatives are pushed forward through the trunk as second-order
duals: each activation carries its value plus the first and pure second
derivative along each of the three input coordinates. Everything is ordinary
torch arithmetic, so reverse-mode autograd differentiates *through* the dual
pass when a PDE-residual loss is back-propagated to the parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

N_AXES = 3


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        super().__init__(message if layer is None else f"{message} (layer {layer})")


def _sigmoid(x):
    if isinstance(x, torch.Tensor):
        return torch.sigmoid(x)
    x = np.asarray(x, dtype=float)
    # branch-stable: never exponentiate a large positive number
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish(x):
    return x * _sigmoid(x)


def swish_derivs(x):
    """(value, first, second) derivative of x·σ(x)."""
    s = _sigmoid(x)
    value = x * s
    first = s * (1 + x * (1 - s))
    second = s * (1 - s) * (2 + x * (1 - 2 * s))
    return value, first, second


@dataclass
class Dual:
    """Activations with first/second derivatives along each input axis.

    ``value`` has shape (n, w); ``d1`` and ``d2`` have shape (3, n, w).
    """

    value: torch.Tensor
    d1: torch.Tensor
    d2: torch.Tensor

    def linear(self, weight: torch.Tensor, bias: torch.Tensor | None) -> "Dual":
        v = self.value @ weight.T
        if bias is not None:
            v = v + bias
        return Dual(v, self.d1 @ weight.T, self.d2 @ weight.T)

    def swish(self) -> "Dual":
        f, f1, f2 = swish_derivs(self.value)
        return Dual(f, f1 * self.d1, f2 * self.d1 ** 2 + f1 * self.d2)

    def all_finite(self) -> bool:
        return bool(torch.isfinite(self.value).all() and torch.isfinite(self.d1).all()
                    and torch.isfinite(self.d2).all())


def fourier_dual(coords: torch.Tensor, B: torch.Tensor) -> Dual:
    """Dual of [sin(2π·B·y), cos(2π·B·y)] seeded with the identity on y."""
    omega = 2 * math.pi * B  # (q, 3)
    z = coords @ omega.T  # (n, q)
    s, c = torch.sin(z), torch.cos(z)
    w = omega.T[:, None, :]  # (3, 1, q): dz/dy_a
    d1 = torch.cat([c * w, -s * w], dim=-1)
    d2 = torch.cat([-s * w ** 2, -c * w ** 2], dim=-1)
    return Dual(torch.cat([s, c], dim=-1), d1, d2)


@dataclass
class DualBatch:
    """Network output with its spatial derivatives.

    ``values`` has the output shape; ``d1``/``d2`` prepend an axis of length 3.
    """

    values: torch.Tensor
    d1: torch.Tensor
    d2: torch.Tensor

    def numpy(self):
        return tuple(t.detach().cpu().numpy() for t in (self.values, self.d1, self.d2))


def spatial_derivs(model, branch_inputs, coords) -> DualBatch:
    """Output of ``model`` and its exact first and pure second derivatives
    with respect to the (normalized) trunk coordinates.

    ``coords`` is (n, 3) shared by all functions or (nf, n, 3) per function.
    """
    coords = model.as_tensor(coords)
    if coords.numel() == 0:
        raise ValueError("empty coordinate batch")
    lead = coords.shape[:-1]
    trunk = model.trunk_dual(coords.reshape(-1, N_AXES))
    p = trunk.value.shape[-1]
    tv = trunk.value.reshape(*lead, p)
    td1 = trunk.d1.reshape(N_AXES, *lead, p)
    td2 = trunk.d2.reshape(N_AXES, *lead, p)
    per_function = coords.ndim == 3
    return DualBatch(model.combine(branch_inputs, tv, per_function=per_function),
                     model.combine(branch_inputs, td1, bias=False, per_function=per_function),
                     model.combine(branch_inputs, td2, bias=False, per_function=per_function))


def loss_param_grad(model, closure):
    """Evaluate ``closure(model)`` and return (loss, {name: gradient})."""
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    loss = closure(model)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    out = {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(params, grads)}
    return float(loss.detach()), out
