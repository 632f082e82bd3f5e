"""Multi-input DeepONet: k branch nets, a Fourier-feature trunk net, and a
Hadamard-product head.

    T(u, y) = bias + Σ_j (Π_i b_ij(u_i)) · t_j(y)

Layer counts in :class:`ModelSpec` count fully-connected layers including the
output projection. The Fourier mapping sits in front of the trunk's first
fully-connected layer and is never trained.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .autodiff import Dual, NonFiniteError, fourier_dual, swish

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    branch_in: tuple[int, ...] = (441,)
    branch_width: int = 256
    branch_depth: int = 9
    trunk_width: int = 128
    trunk_depth: int = 6
    p: int = 128
    n_fourier: int | None = None  # frequencies; defaults to trunk_width // 2
    fourier_sigma: float = 2 * math.pi
    # "angular": fourier_sigma is the std of the angular frequency 2π·B
    # "B": fourier_sigma is the std of B itself
    fourier_sigma_on: str = "angular"
    head_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branch_in", tuple(int(w) for w in self.branch_in))
        widths = (*self.branch_in, self.branch_width, self.trunk_width, self.p, self.q)
        if any(w <= 0 for w in widths) or self.branch_depth < 1 or self.trunk_depth < 1:
            raise ValueError("widths and depths must be positive")
        if self.fourier_sigma_on not in ("angular", "B"):
            raise ValueError("fourier_sigma_on must be 'angular' or 'B'")

    @property
    def q(self) -> int:
        return self.n_fourier if self.n_fourier is not None else max(1, self.trunk_width // 2)

    @property
    def k(self) -> int:
        return len(self.branch_in)

    @property
    def b_std(self) -> float:
        return self.fourier_sigma / (2 * math.pi) if self.fourier_sigma_on == "angular" else self.fourier_sigma

    def branch_widths(self, i: int) -> list[int]:
        return [self.branch_in[i]] + [self.branch_width] * (self.branch_depth - 1) + [self.p]

    def trunk_widths(self) -> list[int]:
        return [2 * self.q] + [self.trunk_width] * (self.trunk_depth - 1) + [self.p]


def experiment1_spec(**overrides) -> ModelSpec:
    """9×256 branch on a 21×21 map, 6×128 trunk, p = 128, σ = 2π."""
    return ModelSpec(**{**dict(branch_in=(441,), branch_width=256, branch_depth=9, trunk_width=128,
                               trunk_depth=6, p=128, fourier_sigma=2 * math.pi), **overrides})


def experiment2_spec(**overrides) -> ModelSpec:
    """Two 5×20 branches on scalar HTCs, 6×128 trunk, p = 50, σ = π."""
    return ModelSpec(**{**dict(branch_in=(1, 1), branch_width=20, branch_depth=5, trunk_width=128,
                               trunk_depth=6, p=50, fourier_sigma=math.pi), **overrides})


def _glorot_linear(n_in, n_out, gen, dtype) -> nn.Linear:
    lin = nn.Linear(n_in, n_out, dtype=dtype)
    std = math.sqrt(2.0 / (n_in + n_out))
    with torch.no_grad():
        lin.weight.copy_(torch.randn(n_out, n_in, generator=gen, dtype=dtype) * std)
        lin.bias.zero_()
    return lin


class OperatorModel(nn.Module):
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=torch.float64):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        gen = torch.Generator().manual_seed(int(seed))
        self.branches = nn.ModuleList()
        for i in range(spec.k):
            w = spec.branch_widths(i)
            self.branches.append(nn.ModuleList(_glorot_linear(a, b, gen, dtype) for a, b in zip(w, w[1:])))
        B = torch.randn(spec.q, 3, generator=gen, dtype=dtype) * spec.b_std
        self.register_buffer("B", B)
        w = spec.trunk_widths()
        self.trunk_layers = nn.ModuleList(_glorot_linear(a, b, gen, dtype) for a, b in zip(w, w[1:]))
        self.bias = nn.Parameter(torch.zeros((), dtype=dtype), requires_grad=spec.head_bias)

    def as_tensor(self, x) -> torch.Tensor:
        if isinstance(x, torch.Tensor):
            return x.to(self.dtype)
        return torch.as_tensor(np.array(x), dtype=self.dtype)

    # sub-networks ------------------------------------------------------------

    def branch(self, i: int, u) -> torch.Tensor:
        h = self.as_tensor(u)
        if h.shape[-1] != self.spec.branch_in[i]:
            raise ValueError(f"branch {i} expects width {self.spec.branch_in[i]}, got {h.shape[-1]}")
        layers = self.branches[i]
        for n, lin in enumerate(layers):
            h = lin(h)
            if n < len(layers) - 1:
                h = swish(h)
        return h

    def branch_product(self, encoded) -> torch.Tensor:
        if len(encoded) != self.spec.k:
            raise ValueError(f"model has {self.spec.k} branches, got {len(encoded)} inputs")
        out = None
        for i, u in enumerate(encoded):
            b = self.branch(i, u)
            out = b if out is None else out * b
        return out

    def trunk(self, coords) -> torch.Tensor:
        y = self.as_tensor(coords)
        z = 2 * math.pi * (y @ self.B.T)
        h = torch.cat([torch.sin(z), torch.cos(z)], dim=-1)
        for lin in self.trunk_layers:
            h = swish(lin(h))
        return h

    def trunk_dual(self, coords: torch.Tensor, check: bool = True) -> Dual:
        h = fourier_dual(coords, self.B)
        for n, lin in enumerate(self.trunk_layers):
            h = h.linear(lin.weight, lin.bias).swish()
            if check and not torch.isfinite(h.value).all():
                raise NonFiniteError("non-finite trunk activation", layer=n)
        if check and not h.all_finite():
            raise NonFiniteError("non-finite trunk derivative", layer=len(self.trunk_layers) - 1)
        return h

    def combine(self, encoded, feats: torch.Tensor, bias: bool = True, per_function: bool = False):
        """Contract trunk features (..., p) with the branch product.

        For a single function (1D branch inputs) the result has shape
        ``feats.shape[:-1]``. With nf functions and shared coordinates,
        (..., n, p) becomes (..., nf, n); with per-function coordinates
        (..., nf, n, p) becomes (..., nf, n).
        """
        b = self.branch_product(encoded)
        if b.ndim == 1:
            out = feats @ b
        elif per_function:
            out = torch.einsum("...fnp,fp->...fn", feats, b)
        else:
            out = torch.einsum("...np,fp->...fn", feats, b)
        if bias and self.spec.head_bias:
            out = out + self.bias
        return out

    def forward(self, encoded, coords) -> torch.Tensor:
        """Normalized temperature at ``coords`` for each encoded configuration.

        ``coords`` is (n, 3) shared across functions or (nf, n, 3).
        """
        y = self.as_tensor(coords)
        t = self.trunk(y.reshape(-1, 3)).reshape(*y.shape[:-1], -1)
        return self.combine(encoded, t, per_function=y.ndim == 3)


def init_model(spec: ModelSpec, seed: int = 0, dtype=torch.float64) -> OperatorModel:
    return OperatorModel(spec, seed=seed, dtype=dtype)


def fourier_features(coords, B) -> np.ndarray:
    """[sin(2π·B·y), cos(2π·B·y)] for each row y of ``coords``."""
    z = 2 * np.pi * np.asarray(coords, dtype=float) @ np.asarray(B, dtype=float).T
    return np.concatenate([np.sin(z), np.cos(z)], axis=-1)


def predict(model: OperatorModel, encoded, coords) -> np.ndarray:
    with torch.no_grad():
        return model(encoded, coords).cpu().numpy()


class FieldPredictor:
    """Fast repeated prediction on a fixed coordinate set.

    The trunk features depend only on the coordinates, so they are evaluated
    once; each new configuration then costs one branch pass and a
    matrix-vector product.
    """

    def __init__(self, model: OperatorModel, coords):
        self.model = model
        with torch.no_grad():
            self.features = model.trunk(coords)

    def __call__(self, encoded) -> np.ndarray:
        with torch.no_grad():
            return self.model.combine(encoded, self.features).cpu().numpy()


# checkpoints ------------------------------------------------------------------


def save_model(model: OperatorModel, path, extra: dict | None = None) -> None:
    """Write an ``.npz`` checkpoint.

    Layout: ``__meta__`` holds UTF-8 JSON bytes with the format ``version``,
    the model ``spec``, the parameter ``dtype`` and an ``extra`` dict (scaling
    and input-encoding settings written by the trainer); ``B`` is the Fourier
    matrix; every other entry is a parameter tensor under its module name.
    """
    arrays = {name: p.detach().cpu().numpy() for name, p in model.named_parameters()}
    arrays["B"] = model.B.cpu().numpy()
    meta = {"version": CHECKPOINT_VERSION, "spec": asdict(model.spec),
            "dtype": str(model.dtype).split(".")[-1], "extra": extra or {}}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[OperatorModel, dict]:
    """Model and the ``extra`` metadata dict stored with it."""
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path}: not a model checkpoint")
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        spec = ModelSpec(**meta["spec"])
        model = OperatorModel(spec, dtype=getattr(torch, meta["dtype"]))
        with torch.no_grad():
            model.B.copy_(torch.as_tensor(data["B"]))
            for name, p in model.named_parameters():
                p.copy_(torch.as_tensor(data[name]))
    return model, meta.get("extra", {})


def load_model(path) -> OperatorModel:
    return load_checkpoint(path)[0]
