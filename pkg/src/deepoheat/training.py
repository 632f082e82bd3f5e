"""Physics-informed training of the operator network.

The loss is an unweighted sum of mean-squared residuals, one term per region:
the heat equation on interior points (``L_r``), the heat equation with the
volumetric source on slab points (``L_slab``), and one boundary term per
surface. Everything is evaluated in nondimensional units (see ScalingMap).
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.interpolate import RegularGridInterpolator

from .autodiff import NonFiniteError, spatial_derivs
from .config import SURFACE_AXIS, SURFACES, ChipConfig, Convection, Dirichlet, Neumann, PowerMap, SlabPower
from .grf import GrfSampler, GrfSpec, rescale_to_power, sample_htc_pairs
from .operator import OperatorModel, save_model

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    def __init__(self, term: str, iteration: int, value: float):
        self.term, self.iteration, self.value = term, iteration, value
        super().__init__(f"non-finite loss term {term} = {value} at iteration {iteration}")


# --------------------------------------------------------------------------
# nondimensionalization


@dataclass(frozen=True)
class ScalingMap:
    """Physical ↔ nondimensional map.

    Coordinates go to the unit cube, temperature to τ = (T - t_ref)/t_scale.
    Flux residuals are divided by ``flux_scale`` (W/m²), heat-equation
    residuals by ``source_scale`` (W/m³).
    """

    origin: tuple[float, float, float]
    lengths: tuple[float, float, float]
    t_ref: float
    t_scale: float
    flux_scale: float
    source_scale: float

    def __post_init__(self):
        if min(self.lengths) <= 0 or self.t_scale <= 0 or self.flux_scale <= 0 or self.source_scale <= 0:
            raise ValueError("scales must be strictly positive")

    @classmethod
    def for_config(cls, config: ChipConfig, t_scale: float = 20.0) -> "ScalingMap":
        k = float(np.mean(config.conductivity))
        L = config.geometry.extent[2]
        return cls(config.geometry.origin, config.geometry.extent, config.ambient, t_scale,
                   k * t_scale / L, k * t_scale / L ** 2)

    @classmethod
    def identity(cls) -> "ScalingMap":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0, 1.0, 1.0, 1.0)

    def to_unit(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / np.asarray(self.lengths)

    def to_physical(self, unit_points) -> np.ndarray:
        return np.asarray(unit_points, dtype=float) * np.asarray(self.lengths) + np.asarray(self.origin)

    def temperature(self, tau):
        return self.t_ref + self.t_scale * tau

    def tau(self, T):
        return (T - self.t_ref) / self.t_scale


# --------------------------------------------------------------------------
# collocation


@dataclass
class CollocationSet:
    """Region tag → unit-cube coordinates, (n, 3) shared by every function or
    (nf, n, 3) drawn per function."""

    regions: dict
    scaling: ScalingMap

    @property
    def per_function(self) -> bool:
        return next(iter(self.regions.values())).ndim == 3

    def count(self, tag: str) -> int:
        return self.regions[tag].shape[-2]

    @property
    def n_points(self) -> int:
        return sum(self.count(t) for t in self.regions)

    def physical(self, tag: str) -> np.ndarray:
        return self.scaling.to_physical(self.regions[tag])

    def all_points(self) -> np.ndarray:
        return np.concatenate([self.regions[t] for t in self.regions], axis=-2)


def default_region_counts(n: int, has_slab: bool) -> dict:
    """Split ``n`` points: 1/14 per surface, 1/7 slab (if any), interior the rest."""
    per_surface = max(1, n // 14)
    counts = {s: per_surface for s in SURFACES}
    slab = max(1, n // 7) if has_slab else 0
    if has_slab:
        counts["slab"] = slab
    counts["interior"] = n - 6 * per_surface - slab
    return counts


def _mesh_regions(config: ChipConfig) -> dict:
    mesh = config.mesh
    coords = mesh.node_coords()
    claimed = np.zeros(mesh.counts, dtype=bool)
    regions = {}
    # z faces own their edges so the full power-map grid lands on its surface
    for s in ("zmin", "zmax", "ymin", "ymax", "xmin", "xmax"):
        mask = np.zeros(mesh.counts, dtype=bool)
        mask[mesh.surface_index(s)] = True
        mask &= ~claimed
        claimed |= mask
        regions[s] = coords[mask]
    inner = ~claimed
    slabs = config.slabs()
    if slabs:
        in_slab = np.zeros(mesh.counts, dtype=bool)
        for sl in slabs:
            in_slab |= sl.contains_z(coords[..., 2])
        regions["slab"] = coords[inner & in_slab]
        inner &= ~in_slab
    regions["interior"] = coords[inner]
    return regions


def _uniform_z_excluding(rng, n, z_lo, z_hi, holes):
    """Uniform samples on [z_lo, z_hi] minus the union of ``holes``."""
    pieces, cur = [], z_lo
    for a, b in sorted(holes):
        if a > cur:
            pieces.append((cur, min(a, z_hi)))
        cur = max(cur, b)
    if cur < z_hi:
        pieces.append((cur, z_hi))
    lengths = np.array([b - a for a, b in pieces])
    pick = rng.choice(len(pieces), size=n, p=lengths / lengths.sum())
    lo = np.array([pieces[i][0] for i in pick])
    return lo + rng.random(n) * lengths[pick]


def _random_regions(config: ChipConfig, counts: dict, rng) -> dict:
    o = np.asarray(config.geometry.origin)
    L = np.asarray(config.geometry.extent)
    regions = {}
    for s in SURFACES:
        m = counts.get(s, 0)
        pts = o + rng.random((m, 3)) * L
        axis, side = SURFACE_AXIS[s]
        pts[:, axis] = o[axis] + side * L[axis]
        regions[s] = pts
    slabs = config.slabs()
    if slabs:
        m = counts.get("slab", 0)
        pts = o + rng.random((m, 3)) * L
        which = rng.integers(len(slabs), size=m)
        z0 = np.array([slabs[i].z0 for i in which])
        z1 = np.array([slabs[i].z1 for i in which])
        pts[:, 2] = z0 + rng.random(m) * (z1 - z0)
        regions["slab"] = pts
    m = counts.get("interior", 0)
    pts = o + rng.random((m, 3)) * L
    if slabs:
        pts[:, 2] = _uniform_z_excluding(rng, m, o[2], o[2] + L[2], [(sl.z0, sl.z1) for sl in slabs])
    regions["interior"] = pts
    return regions


def build_collocation(config: ChipConfig, mode: str = "mesh", n: int | None = None, seed=None, rng=None,
                      counts: dict | None = None, n_sets: int | None = None,
                      scaling: ScalingMap | None = None) -> CollocationSet:
    """Region-tagged collocation points.

    ``mesh`` mode tags every mesh node exactly once. ``random`` mode draws
    uniform points with fixed per-region counts; with ``n_sets`` it draws an
    independent set per function, giving (n_sets, n, 3) arrays.
    """
    scaling = scaling or ScalingMap.for_config(config)
    if mode == "mesh":
        regions = _mesh_regions(config)
    elif mode == "random":
        rng = rng if rng is not None else np.random.default_rng(seed)
        counts = counts or default_region_counts(n or 7000, bool(config.slabs()))
        if n_sets is None:
            regions = _random_regions(config, counts, rng)
        else:
            sets = [_random_regions(config, counts, rng) for _ in range(n_sets)]
            regions = {t: np.stack([s[t] for s in sets]) for t in sets[0]}
    else:
        raise ValueError(f"unknown collocation mode {mode!r}")
    for tag, pts in regions.items():
        if pts.shape[-2] == 0:
            raise ValueError(f"collocation region {tag!r} has no points")
    return CollocationSet({t: scaling.to_unit(p) for t, p in regions.items()}, scaling)


# --------------------------------------------------------------------------
# boundary / source data per function


def _bilinear(axes, pts: np.ndarray, grids: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a stack of grids (nf, na, nb) at points (..., 2).

    Points are either shared, (n, 2), or per grid, (nf, n, 2). Returns (nf, n).
    """
    idx, frac = [], []
    for d, ax in enumerate(axes):
        x = np.clip(pts[..., d], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    (i, j), (fx, fy) = idx, frac
    f = np.arange(grids.shape[0])[:, None] if pts.ndim == 3 else slice(None)
    g = grids
    return (g[f, i, j] * (1 - fx) * (1 - fy) + g[f, i + 1, j] * fx * (1 - fy)
            + g[f, i, j + 1] * (1 - fx) * fy + g[f, i + 1, j + 1] * fx * fy)


def _surface_values(values, config: ChipConfig, surface: str, pts: np.ndarray) -> np.ndarray:
    """Evaluate per-function surface data (scalars or surface grids) at
    physical points on ``surface``. Returns (nf, n)."""
    n_pts = pts.shape[-2]
    if all(np.ndim(v) == 0 for v in values):
        return np.repeat(np.array(values, dtype=float)[:, None], n_pts, axis=1)
    shape = config.mesh.surface_shape(surface)
    grids = np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values])
    axis, _ = SURFACE_AXIS[surface]
    a, b = [i for i in range(3) if i != axis]
    axes = (config.mesh.axis_coords(a), config.mesh.axis_coords(b))
    return _bilinear(axes, pts[..., [a, b]], grids)


def _volume_source(config: ChipConfig, pts: np.ndarray) -> np.ndarray:
    q = np.zeros(pts.shape[:-1])
    for p in config.power:
        if isinstance(p, SlabPower):
            q += np.where(p.contains_z(pts[..., 2]), p.density(config.geometry.extent[:2]), 0.0)
        elif isinstance(p, PowerMap) and not p.is_surface:
            mesh = config.mesh
            grid = np.asarray(p.grid)
            if p.units == "unit":
                grid = grid * p.unit_power_watts / float(np.prod(mesh.spacing))
            axes = [mesh.axis_coords(a) for a in range(3)]
            lo = np.array([ax[0] for ax in axes])
            hi = np.array([ax[-1] for ax in axes])
            q += RegularGridInterpolator(axes, grid)(np.clip(pts, lo, hi))
    return q


@dataclass
class RegionData:
    kind: str  # "pde", "neumann", "convection", "dirichlet"
    values: np.ndarray  # q_V, q_n, h or T_d; shape (nf, n)
    ambient: np.ndarray | None = None  # (nf, 1) for convection


def region_data(configs, colloc: CollocationSet) -> dict:
    """Stack per-function source/BC data for every collocation region."""
    configs = list(configs)
    ref = configs[0]
    out = {}
    for tag in colloc.regions:
        pts = colloc.physical(tag)
        if tag in ("interior", "slab"):
            rows = [_volume_source(cfg, pts[f] if colloc.per_function else pts) for f, cfg in enumerate(configs)]
            out[tag] = RegionData("pde", np.stack(rows))
            continue
        kinds = {type(cfg.bcs[tag]) for cfg in configs}
        if len(kinds) != 1:
            raise ValueError(f"region {tag!r}: boundary-condition kind differs between functions")
        kind = kinds.pop()
        if kind is Neumann:
            vals = [cfg.surface_flux(tag) if cfg.power else cfg.bcs[tag].flux for cfg in configs]
            out[tag] = RegionData("neumann", _surface_values(vals, ref, tag, pts))
        elif kind is Convection:
            vals = [cfg.bcs[tag].htc for cfg in configs]
            ambs = np.array([cfg.bcs[tag].ambient for cfg in configs])[:, None]
            out[tag] = RegionData("convection", _surface_values(vals, ref, tag, pts), ambs)
        else:
            vals = [cfg.bcs[tag].temperature for cfg in configs]
            out[tag] = RegionData("dirichlet", _surface_values(vals, ref, tag, pts))
    return out


def _conductivity(config: ChipConfig) -> float:
    k = np.asarray(config.conductivity)
    if k.ndim and not np.all(k == k.flat[0]):
        raise ValueError("physics-informed training supports homogeneous conductivity only")
    return float(k.flat[0])


# --------------------------------------------------------------------------
# losses


@dataclass
class LossReport:
    total: float
    terms: dict
    iteration: int = 0

    def row(self) -> list:
        return [self.iteration, self.total, *self.terms.values()]


def term_name(tag: str) -> str:
    return "L_r" if tag == "interior" else f"L_{tag}"


def loss_terms(model: OperatorModel, encoded, colloc: CollocationSet, data: dict, conductivity: float,
               weights: dict | None = None) -> dict:
    """Weighted mean-squared residual per region, as differentiable tensors."""
    sc = colloc.scaling
    Ls = np.asarray(sc.lengths)
    k = conductivity
    order = ["interior"] + (["slab"] if "slab" in colloc.regions else []) + list(SURFACES)
    order = [t for t in order if t in colloc.regions]
    single = np.ndim(encoded[0]) == 1
    # one dual pass over all regions, then split
    sizes = [colloc.count(t) for t in order]
    dual = spatial_derivs(model, encoded, np.concatenate([colloc.regions[t] for t in order], axis=-2))
    splits = [torch.split(x, sizes, dim=-1) for x in (dual.values, dual.d1, dual.d2)]
    terms = {}
    for n, tag in enumerate(order):
        tau, d1, d2 = (x[n] for x in splits)
        d = data[tag]
        vals = model.as_tensor(d.values[0] if single else d.values)
        if d.kind == "pde":
            lap = sum(d2[a] * (sc.t_scale / Ls[a] ** 2) for a in range(3))
            r = (k * lap + vals) / sc.source_scale
        elif d.kind == "dirichlet":
            r = (sc.temperature(tau) - vals) / sc.t_scale
        else:
            axis, side = SURFACE_AXIS[tag]
            dT_dn = (1.0 if side else -1.0) * d1[axis] * (sc.t_scale / Ls[axis])
            if d.kind == "neumann":
                # prescribed flux is positive into the domain: k·∂T/∂n = q_n
                r = (k * dT_dn - vals) / sc.flux_scale
            else:
                amb = model.as_tensor(d.ambient[0] if single else d.ambient)
                r = (-k * dT_dn - vals * (sc.temperature(tau) - amb)) / sc.flux_scale
        w = 1.0 if weights is None else weights.get(term_name(tag), 1.0)
        terms[term_name(tag)] = w * torch.mean(r ** 2)
    return terms


def residual_losses(model: OperatorModel, encoded, colloc: CollocationSet, configs,
                    weights: dict | None = None, iteration: int = 0) -> LossReport:
    """Evaluate every loss term for the given encoded inputs and their configs.

    ``configs`` is one ChipConfig per encoded function (or a single config for
    1D branch inputs).
    """
    cfgs = [configs] if isinstance(configs, ChipConfig) else list(configs)
    data = region_data(cfgs, colloc)
    with torch.no_grad():
        terms = loss_terms(model, encoded, colloc, data, _conductivity(cfgs[0]), weights)
    vals = {n: float(t) for n, t in terms.items()}
    for n, v in vals.items():
        if not np.isfinite(v):
            raise TrainingError(n, iteration, v)
    total = 0.0
    for v in vals.values():
        total += v
    return LossReport(total, vals, iteration)


# --------------------------------------------------------------------------
# input families


class PowerMapFamily:
    """Surface power maps drawn from a GRF, min-max rescaled to [0, p_max]."""

    name = "powermap2d"

    def __init__(self, config: ChipConfig, length_scale: float = 0.3, p_max: float = 2.0,
                 surface: str = "zmax", rescale: bool = True, jitter: float = 1e-8):
        nx, ny = config.mesh.surface_shape(surface)
        if nx != ny:
            raise ValueError("GRF power maps need a square surface grid")
        self.config = config
        self.surface = surface
        self.p_max = p_max
        self.rescale = rescale
        self.grf = GrfSpec(nx, length_scale, jitter)
        self._sampler = None
        self.unit_power_watts = config.surface_power_maps()[0].unit_power_watts \
            if config.surface_power_maps() else 6.25e-6

    @property
    def branch_in(self) -> tuple[int, ...]:
        return (self.grf.m ** 2,)

    def maps(self, rng, n: int) -> np.ndarray:
        if self._sampler is None:
            self._sampler = GrfSampler(self.grf)
        self._sampler.rng = rng
        raw = self._sampler.sample(n)
        return rescale_to_power(raw, self.p_max) if self.rescale else raw

    def configs_for(self, maps) -> list[ChipConfig]:
        return [self.config.with_surface_power(self.surface, m, unit_power_watts=self.unit_power_watts,
                                               signed=not self.rescale) for m in maps]

    def sample(self, rng, n: int):
        maps = self.maps(rng, n)
        return [maps.reshape(n, -1)], self.configs_for(maps)

    def meta(self) -> dict:
        return {"experiment": self.name, "surface": self.surface, "p_max": self.p_max,
                "length_scale": self.grf.length_scale}

    def encode(self, config: ChipConfig) -> list[np.ndarray]:
        grids = [p for p in config.surface_power_maps() if p.surface == self.surface]
        if not grids:
            raise ValueError(f"config has no power map on {self.surface}")
        return [np.asarray(grids[0].grid).reshape(-1)]


class HtcFamily:
    """Uniform HTC pairs (top, bottom) on the two z surfaces."""

    name = "htc-dual"

    def __init__(self, config: ChipConfig, lo: float = 333.33, hi: float = 1000.0, htc_scale: float = 1000.0):
        self.config = config
        self.lo, self.hi = lo, hi
        self.htc_scale = htc_scale
        self.ambient = {s: config.bcs[s].ambient for s in ("zmax", "zmin")}

    branch_in = (1, 1)

    def config_for(self, h_top: float, h_bottom: float) -> ChipConfig:
        bcs = dict(self.config.bcs)
        bcs["zmax"] = Convection(h_top, self.ambient["zmax"])
        bcs["zmin"] = Convection(h_bottom, self.ambient["zmin"])
        return self.config.replace(bcs=bcs)

    def sample(self, rng, n: int):
        pairs = sample_htc_pairs(self.lo, self.hi, n, rng=rng)
        enc = [pairs[:, :1] / self.htc_scale, pairs[:, 1:] / self.htc_scale]
        return enc, [self.config_for(a, b) for a, b in pairs]

    def meta(self) -> dict:
        return {"experiment": self.name, "htc_scale": self.htc_scale, "htc_range": [self.lo, self.hi]}

    def encode(self, config: ChipConfig) -> list[np.ndarray]:
        return [np.array([float(np.mean(config.bcs["zmax"].htc)) / self.htc_scale]),
                np.array([float(np.mean(config.bcs["zmin"].htc)) / self.htc_scale])]


# --------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainSpec:
    iterations: int = 10000
    functions_per_iter: int = 50
    lr: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 500
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    collocation: str = "mesh"  # "random" (per function) or "shared" (one set per iteration), redrawn each time
    points_per_function: int = 7000
    t_scale: float = 20.0
    weights: dict | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.collocation not in ("mesh", "random", "shared"):
            raise ValueError(f"unknown collocation mode {self.collocation!r}")
        if self.lr <= 0 or self.t_scale <= 0 or self.lr_decay_every < 1:
            raise ValueError("learning rate, decay interval and scales must be positive")

    def lr_at(self, iteration: int) -> float:
        return self.lr * self.lr_decay ** (iteration // self.lr_decay_every)


@dataclass
class TrainResult:
    model: OperatorModel
    history: list = field(default_factory=list)
    scaling: ScalingMap | None = None


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if history:
            w.writerow(["iter", "total", *history[0].terms.keys()])
        for rep in history:
            w.writerow(rep.row())


def train(model: OperatorModel, config: ChipConfig, family, spec: TrainSpec, out_dir: str | None = None,
          callback=None) -> TrainResult:
    """Adam on the physics-informed loss; reproducible for a fixed ``spec.seed``."""
    scaling = ScalingMap.for_config(config, spec.t_scale)
    k = _conductivity(config)
    rng = np.random.default_rng(spec.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=spec.lr, betas=spec.betas, eps=spec.eps)
    fixed = build_collocation(config, "mesh", scaling=scaling) if spec.collocation == "mesh" else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    extra = {"t_scale": spec.t_scale, **(family.meta() if hasattr(family, "meta") else {})}
    history = []
    for it in range(spec.iterations):
        for g in opt.param_groups:
            g["lr"] = spec.lr_at(it)
        encoded, configs = family.sample(rng, spec.functions_per_iter)
        if fixed is not None:
            colloc = fixed
        else:
            n_sets = spec.functions_per_iter if spec.collocation == "random" else None
            colloc = build_collocation(config, "random", n=spec.points_per_function, rng=rng,
                                       n_sets=n_sets, scaling=scaling)
        data = region_data(configs, colloc)
        try:
            terms = loss_terms(model, encoded, colloc, data, k, spec.weights)
        except NonFiniteError as exc:
            raise TrainingError(str(exc), it, float("nan")) from exc
        total = sum(terms.values())
        vals = {n: float(t.detach()) for n, t in terms.items()}
        for n, v in vals.items():
            if not np.isfinite(v):
                raise TrainingError(n, it, v)
        report = LossReport(sum(vals.values()), vals, it)
        history.append(report)
        opt.zero_grad()
        total.backward()
        opt.step()
        if callback is not None:
            callback(report)
        if spec.checkpoint_every and out_dir and (it + 1) % spec.checkpoint_every == 0:
            save_model(model, os.path.join(out_dir, f"checkpoint_{it + 1:06d}.npz"), extra)
        if it % 100 == 0:
            log.info("iter %d  loss %.4e  lr %.2e", it, report.total, spec.lr_at(it))
    if out_dir:
        write_history(history, os.path.join(out_dir, "loss_history.csv"))
        save_model(model, os.path.join(out_dir, "model.npz"), extra)
    return TrainResult(model, history, scaling)
