"""Modular chip thermal configuration: geometry, mesh, boundary conditions,
power maps and conductivity, plus the ``key = value`` config document format.

All quantities are SI internally (m, W, K). Millimetre and milliwatt values
from config documents are converted at parse time.

Grid conventions
----------------
Nodal arrays are indexed ``[i, j, k]`` along ``(x, y, z)``. A surface grid is
indexed by the two in-plane axes in ascending order, e.g. ``[i, j]`` for the
z surfaces and ``[j, k]`` for the x surfaces. Matrix files store the transpose:
one line per index of the *second* in-plane axis (line 0 = y-min for a z
surface), columns along the first in-plane axis.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Union

import numpy as np

SURFACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")

# surface -> (normal axis, side): side 0 is the low face, 1 the high face
SURFACE_AXIS = {
    "xmin": (0, 0), "xmax": (0, 1),
    "ymin": (1, 0), "ymax": (1, 1),
    "zmin": (2, 0), "zmax": (2, 1),
}

MM = 1e-3
MW = 1e-3
EQ_RTOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending config path."""

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _values_equal(a, b) -> bool:
    if isinstance(a, (str, bool, type(None))) or isinstance(b, (str, bool, type(None))):
        return a == b
    # values pass through mm <-> m conversions, so compare to 1e-12 relative
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape and a.ndim and b.ndim:
        return False
    # a constant grid still equals the scalar it repeats
    return bool(np.all(np.isclose(a, b, rtol=EQ_RTOL, atol=0.0)))


class _ValueEq:
    _value_fields: tuple[str, ...] = ()

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(_values_equal(getattr(self, f), getattr(other, f)) for f in self._value_fields)

    def __hash__(self):
        return hash(type(self))


def _scalar_or_grid(value):
    if np.isscalar(value):
        return float(value)
    return _frozen(value)


def in_plane_axes(surface: str) -> tuple[int, int]:
    axis, _ = SURFACE_AXIS[surface]
    return tuple(a for a in range(3) if a != axis)


# --------------------------------------------------------------------------
# geometry and mesh


@dataclass(frozen=True, eq=False)
class Cuboid(_ValueEq):
    origin: tuple[float, float, float]
    extent: tuple[float, float, float]
    _value_fields = ("origin", "extent")

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if len(self.origin) != 3 or len(self.extent) != 3:
            raise ConfigError("geometry", "origin and extent must be 3-vectors")
        if any(not e > 0 for e in self.extent):
            raise ConfigError("geometry.extent", f"extents must be strictly positive, got {self.extent}")

    @property
    def top(self) -> float:
        return self.origin[2] + self.extent[2]


@dataclass(frozen=True)
class Geometry:
    """One or more cuboids stacked along z with a shared footprint."""

    cuboids: tuple[Cuboid, ...]

    def __post_init__(self):
        cubs = tuple(self.cuboids)
        object.__setattr__(self, "cuboids", cubs)
        if not cubs:
            raise ConfigError("geometry", "at least one cuboid is required")
        base = cubs[0]
        for n, (lower, upper) in enumerate(zip(cubs, cubs[1:]), start=1):
            if not (math.isclose(upper.origin[0], base.origin[0]) and math.isclose(upper.origin[1], base.origin[1])
                    and math.isclose(upper.extent[0], base.extent[0])
                    and math.isclose(upper.extent[1], base.extent[1])):
                raise ConfigError(f"geometry.cuboid.{n}", "stacked cuboids must share the x/y footprint")
            if not math.isclose(upper.origin[2], lower.top, rel_tol=1e-12, abs_tol=1e-15):
                raise ConfigError(f"geometry.cuboid.{n}", "stacked cuboids must be contiguous in z")

    @classmethod
    def box(cls, extent, origin=(0.0, 0.0, 0.0)) -> "Geometry":
        return cls((Cuboid(origin, extent),))

    @classmethod
    def stack(cls, footprint, thicknesses, origin=(0.0, 0.0, 0.0)) -> "Geometry":
        cubs, z = [], origin[2]
        for t in thicknesses:
            cubs.append(Cuboid((origin[0], origin[1], z), (footprint[0], footprint[1], t)))
            z += t
        return cls(tuple(cubs))

    @property
    def origin(self) -> tuple[float, float, float]:
        return self.cuboids[0].origin

    @property
    def extent(self) -> tuple[float, float, float]:
        c0 = self.cuboids[0]
        return (c0.extent[0], c0.extent[1], self.cuboids[-1].top - c0.origin[2])

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.extent)
        slack = tol * np.asarray(self.extent)
        return np.all((p >= lo - slack) & (p <= hi + slack), axis=1)


@dataclass(frozen=True, eq=False)
class Mesh(_ValueEq):
    """Uniform node grid over the bounding box of a geometry."""

    counts: tuple[int, int, int]
    origin: tuple[float, float, float]
    extent: tuple[float, float, float]
    _value_fields = ("counts", "origin", "extent")

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if len(counts) != 3 or any(c < 2 for c in counts):
            raise ConfigError("mesh.counts", f"each count ≥ 2 required, got {counts}")

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(e / (c - 1) for e, c in zip(self.extent, self.counts))

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.counts

    def axis_coords(self, axis: int) -> np.ndarray:
        i = np.arange(self.counts[axis])
        return self.origin[axis] + i * self.spacing[axis]

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (nx, ny, nz, 3)."""
        X, Y, Z = np.meshgrid(*(self.axis_coords(a) for a in range(3)), indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def surface_shape(self, surface: str) -> tuple[int, int]:
        a, b = in_plane_axes(surface)
        return (self.counts[a], self.counts[b])

    def surface_index(self, surface: str):
        """Index tuple selecting the nodes of ``surface`` from an (nx, ny, nz) array."""
        axis, side = SURFACE_AXIS[surface]
        idx = [slice(None)] * 3
        idx[axis] = 0 if side == 0 else self.counts[axis] - 1
        return tuple(idx)


# --------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True, eq=False)
class Dirichlet(_ValueEq):
    temperature: Union[float, np.ndarray]
    _value_fields = ("temperature",)

    def __post_init__(self):
        object.__setattr__(self, "temperature", _scalar_or_grid(self.temperature))
        if not np.all(np.asarray(self.temperature) > 0):
            raise ConfigError("bc.dirichlet", "temperature must be > 0 K")


@dataclass(frozen=True, eq=False)
class Neumann(_ValueEq):
    """Prescribed heat flux into the domain, W/m² (positive = heating)."""

    flux: Union[float, np.ndarray] = 0.0
    source: str | None = field(default=None, compare=False)
    _value_fields = ("flux",)

    def __post_init__(self):
        object.__setattr__(self, "flux", _scalar_or_grid(self.flux))
        if not np.all(np.isfinite(self.flux)):
            raise ConfigError("bc.neumann", "flux must be finite")

    @property
    def is_adiabatic(self) -> bool:
        return bool(np.all(np.asarray(self.flux) == 0.0))


def adiabatic() -> Neumann:
    """Insulated surface: a Neumann condition with zero flux."""
    return Neumann(0.0)


@dataclass(frozen=True, eq=False)
class Convection(_ValueEq):
    htc: Union[float, np.ndarray]
    ambient: float
    _value_fields = ("htc", "ambient")

    def __post_init__(self):
        object.__setattr__(self, "htc", _scalar_or_grid(self.htc))
        object.__setattr__(self, "ambient", float(self.ambient))
        if not np.all(np.asarray(self.htc) > 0):
            raise ConfigError("bc.convection", "heat transfer coefficient must be > 0")
        if not self.ambient > 0:
            raise ConfigError("bc.convection", "ambient temperature must be > 0 K")


BoundaryCondition = Union[Dirichlet, Neumann, Convection]


# --------------------------------------------------------------------------
# power


@dataclass(frozen=True, eq=False)
class PowerMap(_ValueEq):
    """Surface (2D) or volumetric (3D) power on nodal grid points.

    ``units`` is ``"unit"`` (multiples of ``unit_power_watts`` per tile),
    ``"W/m2"`` for surface maps or ``"W/m3"`` for volumetric maps.
    """

    grid: np.ndarray
    surface: str | None = None
    units: str = "unit"
    unit_power_watts: float = 6.25e-6
    source: str | None = field(default=None, compare=False)
    signed: bool = False  # allow negative entries (sinks); ablation only
    _value_fields = ("grid", "surface_key", "units", "unit_power_watts")

    def __post_init__(self):
        object.__setattr__(self, "grid", _frozen(self.grid))
        object.__setattr__(self, "unit_power_watts", float(self.unit_power_watts))
        key = f"power.surface.{self.surface}" if self.surface else "power.volume"
        if self.surface is not None and self.surface not in SURFACES:
            raise ConfigError(key, f"unknown surface {self.surface!r}")
        expected_ndim = 2 if self.surface else 3
        if self.grid.ndim != expected_ndim:
            raise ConfigError(key, f"expected a {expected_ndim}D grid, got shape {self.grid.shape}")
        allowed = ("unit", "W/m2") if self.surface else ("unit", "W/m3")
        if self.units not in allowed:
            raise ConfigError(key, f"units must be one of {allowed}")
        if not np.all(np.isfinite(self.grid)):
            raise ConfigError(key, "entries must be finite")
        if not self.signed and np.any(self.grid < 0):
            raise ConfigError(key, "entries must be nonnegative")

    @property
    def surface_key(self):
        return self.surface or ""

    @property
    def is_surface(self) -> bool:
        return self.surface is not None


@dataclass(frozen=True, eq=False)
class SlabPower(_ValueEq):
    """Uniform volumetric power ``total_w`` between heights ``z0`` and ``z1`` (m)."""

    z0: float
    z1: float
    total_w: float
    _value_fields = ("z0", "z1", "total_w")

    def __post_init__(self):
        if not self.z1 > self.z0:
            raise ConfigError("power.volume", "slab needs z1 > z0")
        if self.total_w < 0:
            raise ConfigError("power.volume", "total power must be ≥ 0")

    def density(self, footprint) -> float:
        return volumetric_power_density(self.total_w, (footprint[0], footprint[1], self.z1 - self.z0))

    def contains_z(self, z) -> np.ndarray:
        z = np.asarray(z)
        return (z >= self.z0) & (z <= self.z1)


def unit_power_to_flux(pmap: PowerMap, tile_area: float) -> PowerMap:
    """Convert a unit-power surface map to W/m² given the area of one tile."""
    if not tile_area > 0:
        raise ValueError(f"tile_area must be positive, got {tile_area}")
    if not pmap.is_surface or pmap.units != "unit":
        raise ValueError("expected a surface power map in unit-power units")
    return PowerMap(np.asarray(pmap.grid) * (pmap.unit_power_watts / tile_area), surface=pmap.surface,
                    units="W/m2", unit_power_watts=pmap.unit_power_watts)


def tile_to_grid(tiles) -> np.ndarray:
    """Interpolate tile-centred values to the (m+1)×(n+1) grid of tile corners.

    Interior nodes get the mean of their four neighbouring tiles (bilinear on a
    uniform layout); nodes on the border clamp to the nearest tiles.
    """
    t = np.asarray(tiles, dtype=float)
    if t.ndim != 2 or t.size == 0:
        raise ValueError("tiles must be a non-empty 2D matrix")
    p = np.pad(t, 1, mode="edge")
    return 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])


def volumetric_power_density(total: float, slab_extent) -> float:
    """Uniform power density (W/m³) of ``total`` watts spread over a box."""
    vol = float(np.prod(slab_extent))
    if not vol > 0:
        raise ValueError("slab volume must be positive")
    if total < 0:
        raise ValueError("total power must be ≥ 0")
    return total / vol


# --------------------------------------------------------------------------
# chip configuration


@dataclass(frozen=True, eq=False)
class ChipConfig:
    geometry: Geometry
    mesh: Mesh
    bcs: dict
    power: tuple = ()
    conductivity: Union[float, np.ndarray] = 0.1
    ambient: float = 298.15

    def __post_init__(self):
        bcs = dict(self.bcs)
        missing = [s for s in SURFACES if s not in bcs]
        if missing:
            raise ConfigError(f"bc.{missing[0]}", "every exterior surface needs a boundary condition")
        extra = [s for s in bcs if s not in SURFACES]
        if extra:
            raise ConfigError(f"bc.{extra[0]}", "unknown surface")
        object.__setattr__(self, "bcs", {s: bcs[s] for s in SURFACES})
        object.__setattr__(self, "power", tuple(self.power))
        object.__setattr__(self, "conductivity", _scalar_or_grid(self.conductivity))
        object.__setattr__(self, "ambient", float(self.ambient))

        if not all(math.isclose(a, b, rel_tol=1e-12) for a, b in zip(self.mesh.extent, self.geometry.extent)):
            raise ConfigError("mesh", "mesh extent must match the geometry bounding box")
        for s, bc in self.bcs.items():
            if isinstance(bc, (Dirichlet, Convection, Neumann)):
                for name, val in (("temperature", getattr(bc, "temperature", None)),
                                  ("htc", getattr(bc, "htc", None)), ("flux", getattr(bc, "flux", None))):
                    if isinstance(val, np.ndarray) and val.shape != self.mesh.surface_shape(s):
                        raise ConfigError(f"bc.{s}", f"{name} grid shape {val.shape} does not match "
                                                     f"surface mesh {self.mesh.surface_shape(s)}")
            else:
                raise ConfigError(f"bc.{s}", f"unsupported boundary condition {bc!r}")

        k = np.asarray(self.conductivity)
        if k.ndim and k.shape != self.mesh.counts:
            raise ConfigError("conductivity", f"field shape {k.shape} does not match mesh {self.mesh.counts}")
        if not np.all(k > 0):
            raise ConfigError("conductivity", "values must be strictly positive")

        seen = set()
        for p in self.power:
            if isinstance(p, PowerMap) and p.is_surface:
                key = f"power.surface.{p.surface}"
                if p.surface in seen:
                    raise ConfigError(key, "at most one surface power map per surface")
                seen.add(p.surface)
                if not isinstance(self.bcs[p.surface], Neumann):
                    raise ConfigError(key, "a surface carrying a power map must have a Neumann/adiabatic BC")
                if p.grid.shape != self.mesh.surface_shape(p.surface):
                    raise ConfigError(key, f"grid shape {p.grid.shape} does not match surface mesh "
                                           f"{self.mesh.surface_shape(p.surface)}")
            elif isinstance(p, PowerMap):
                if p.grid.shape != self.mesh.counts:
                    raise ConfigError("power.volume", f"grid shape {p.grid.shape} does not match mesh")
            elif isinstance(p, SlabPower):
                z_lo = self.geometry.origin[2]
                if p.z0 < z_lo - 1e-15 or p.z1 > z_lo + self.geometry.extent[2] + 1e-15:
                    raise ConfigError("power.volume", "slab lies outside the geometry")
            else:
                raise ConfigError("power", f"unsupported power entry {p!r}")

    def __eq__(self, other):
        if not isinstance(other, ChipConfig):
            return NotImplemented
        return (self.geometry == other.geometry and self.mesh == other.mesh and self.bcs == other.bcs
                and len(self.power) == len(other.power)
                and all(a == b for a, b in zip(self.power, other.power))
                and _values_equal(self.conductivity, other.conductivity)
                and _values_equal(self.ambient, other.ambient))

    __hash__ = None

    # convenience views -----------------------------------------------------

    @property
    def tile_area(self) -> float:
        dx, dy, _ = self.mesh.spacing
        return dx * dy

    def surface_tile_area(self, surface: str) -> float:
        a, b = in_plane_axes(surface)
        h = self.mesh.spacing
        return h[a] * h[b]

    def surface_flux(self, surface: str) -> np.ndarray:
        """Total prescribed inward flux (W/m²) on a Neumann surface, as a surface grid."""
        bc = self.bcs[surface]
        shape = self.mesh.surface_shape(surface)
        q = np.broadcast_to(np.asarray(bc.flux, dtype=float), shape).copy()
        for p in self.power:
            if isinstance(p, PowerMap) and p.surface == surface:
                if p.units == "W/m2":
                    q += p.grid
                else:
                    q += p.grid * (p.unit_power_watts / self.surface_tile_area(surface))
        return q

    def conductivity_grid(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.conductivity, dtype=float), self.mesh.counts)

    def surface_power_maps(self) -> list[PowerMap]:
        return [p for p in self.power if isinstance(p, PowerMap) and p.is_surface]

    def slabs(self) -> list[SlabPower]:
        return [p for p in self.power if isinstance(p, SlabPower)]

    def replace(self, **changes) -> "ChipConfig":
        fields = dict(geometry=self.geometry, mesh=self.mesh, bcs=self.bcs, power=self.power,
                      conductivity=self.conductivity, ambient=self.ambient)
        fields.update(changes)
        return ChipConfig(**fields)

    def with_bc(self, surface: str, bc) -> "ChipConfig":
        bcs = dict(self.bcs)
        bcs[surface] = bc
        return self.replace(bcs=bcs)

    def with_surface_power(self, surface: str, grid, units: str = "unit",
                           unit_power_watts: float | None = None, signed: bool = False) -> "ChipConfig":
        """Copy with the surface power map on ``surface`` replaced by ``grid``."""
        old = [p for p in self.power if isinstance(p, PowerMap) and p.surface == surface]
        upw = unit_power_watts if unit_power_watts is not None else (
            old[0].unit_power_watts if old else 6.25e-6)
        rest = [p for p in self.power if not (isinstance(p, PowerMap) and p.surface == surface)]
        return self.replace(power=tuple(rest) + (PowerMap(grid, surface=surface, units=units,
                                                          unit_power_watts=upw, signed=signed),))


# --------------------------------------------------------------------------
# matrix files


def read_matrix(path) -> np.ndarray:
    """Read a whitespace-separated matrix file. Blank lines separate z-slices
    of a 3D tensor."""
    with open(path) as fh:
        text = fh.read()
    blocks = [b for b in text.strip().split("\n\n") if b.strip()]
    mats = [np.array([[float(v) for v in line.split()] for line in b.strip().splitlines() if line.strip()])
            for b in blocks]
    if len(mats) == 1:
        return mats[0].T
    return np.stack([m.T for m in mats], axis=-1)


def write_matrix(path, grid) -> None:
    g = np.asarray(grid, dtype=float)
    slices = [g] if g.ndim == 2 else [g[:, :, k] for k in range(g.shape[2])]
    with open(path, "w") as fh:
        for n, s in enumerate(slices):
            if n:
                fh.write("\n")
            for row in s.T:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# --------------------------------------------------------------------------
# config document


def _floats(key, text, n=None):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError:
        raise ConfigError(key, f"expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(key, f"expected {n} values, got {len(vals)}")
    return vals


def _options(key, tokens):
    out = {}
    for tok in tokens:
        name, sep, val = tok.partition(":")
        if not sep:
            raise ConfigError(key, f"expected name:value, got {tok!r}")
        out[name] = val
    return out


def _load_file(key, ref, base_dir):
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    try:
        return read_matrix(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(key, f"cannot read matrix file {ref!r}: {exc}") from None


def parse_config(document: str, base_dir: str = ".") -> ChipConfig:
    """Parse a ``key = value`` config document into a validated ChipConfig.

    Relative ``file:`` references are resolved against ``base_dir``.
    """
    entries = {}
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key = key.strip()
        if key in entries:
            raise ConfigError(key, "duplicate key")
        entries[key] = value.strip()

    def need(key):
        if key not in entries:
            raise ConfigError(key, "missing key")
        return entries.pop(key)

    if "geometry.stack_mm" in entries:
        extent = _floats("geometry.extent_mm", need("geometry.extent_mm"), 3)
        layers = _floats("geometry.stack_mm", entries.pop("geometry.stack_mm"))
        if not math.isclose(sum(layers), extent[2], rel_tol=1e-9):
            raise ConfigError("geometry.stack_mm", "layer thicknesses must sum to the z extent")
        geometry = Geometry.stack((extent[0] * MM, extent[1] * MM), [t * MM for t in layers])
    else:
        extent = _floats("geometry.extent_mm", need("geometry.extent_mm"), 3)
        geometry = Geometry.box(tuple(e * MM for e in extent))

    counts_txt = need("mesh.counts").split()
    try:
        counts = tuple(int(c) for c in counts_txt)
    except ValueError:
        raise ConfigError("mesh.counts", f"expected integers, got {counts_txt}") from None
    if len(counts) != 3:
        raise ConfigError("mesh.counts", "expected 3 counts")
    mesh = Mesh(counts, geometry.origin, geometry.extent)

    ambient = None
    if "ambient" in entries:
        ambient = _floats("ambient", entries.pop("ambient"), 1)[0]

    bcs = {}
    for s in SURFACES:
        key = f"bc.{s}"
        tokens = need(key).split()
        kind, args = tokens[0].lower(), tokens[1:]
        if kind == "adiabatic":
            if args:
                raise ConfigError(key, "adiabatic takes no arguments")
            bcs[s] = adiabatic()
        elif kind == "dirichlet":
            bcs[s] = Dirichlet(_floats(key, " ".join(args), 1)[0])
        elif kind == "convection":
            if len(args) != 2:
                raise ConfigError(key, "expected 'convection <h> <T_amb>'")
            h_tok, t_amb = args
            h = _load_file(key, h_tok[5:], base_dir) if h_tok.startswith("file:") else _floats(key, h_tok, 1)[0]
            bcs[s] = Convection(h, _floats(key, t_amb, 1)[0])
        elif kind == "neumann":
            if len(args) != 1:
                raise ConfigError(key, "expected 'neumann <scalar>' or 'neumann file:<path>'")
            if args[0].startswith("file:"):
                bcs[s] = Neumann(_load_file(key, args[0][5:], base_dir), source=args[0][5:])
            else:
                bcs[s] = Neumann(_floats(key, args[0], 1)[0])
        else:
            raise ConfigError(key, f"unknown boundary condition {kind!r}")

    power = []
    for s in SURFACES:
        key = f"power.surface.{s}"
        if key not in entries:
            continue
        tokens = entries.pop(key).split()
        if not tokens or not tokens[0].startswith("file:"):
            raise ConfigError(key, "expected 'file:<path> unit_power_mw:<v>'")
        ref = tokens[0][5:]
        opts = _options(key, tokens[1:])
        grid = _load_file(key, ref, base_dir)
        if "unit_power_mw" in opts:
            upw = _floats(key, opts.pop("unit_power_mw"), 1)[0] * MW
            units = "unit"
        elif "units" in opts and opts["units"] == "W/m2":
            opts.pop("units")
            upw, units = 6.25e-6, "W/m2"
        else:
            raise ConfigError(key, "missing unit_power_mw:<v>")
        if opts:
            raise ConfigError(key, f"unknown options {sorted(opts)}")
        power.append(PowerMap(grid, surface=s, units=units, unit_power_watts=upw, source=ref))

    if "power.volume" in entries:
        key = "power.volume"
        tokens = entries.pop(key).split()
        if tokens and tokens[0] == "slab":
            opts = _options(key, tokens[1:])
            try:
                z0 = float(opts.pop("z0_mm")) * MM
                z1 = float(opts.pop("z1_mm")) * MM
                total = float(opts.pop("total_w"))
            except KeyError as exc:
                raise ConfigError(key, f"missing slab option {exc.args[0]}") from None
            except ValueError:
                raise ConfigError(key, "slab options must be numbers") from None
            if opts:
                raise ConfigError(key, f"unknown options {sorted(opts)}")
            power.append(SlabPower(z0 + geometry.origin[2], z1 + geometry.origin[2], total))
        elif tokens and tokens[0].startswith("file:"):
            ref = tokens[0][5:]
            power.append(PowerMap(_load_file(key, ref, base_dir), units="W/m3", source=ref))
        else:
            raise ConfigError(key, "expected 'slab z0_mm:<a> z1_mm:<b> total_w:<v>' or 'file:<path>'")

    cond_txt = need("conductivity")
    if cond_txt.startswith("file:"):
        conductivity = _load_file("conductivity", cond_txt[5:], base_dir)
    else:
        conductivity = _floats("conductivity", cond_txt, 1)[0]

    if entries:
        raise ConfigError(sorted(entries)[0], "unknown key")
    if ambient is None:
        ambs = [bc.ambient for bc in bcs.values() if isinstance(bc, Convection)]
        ambient = ambs[0] if ambs else 298.15
    return ChipConfig(geometry, mesh, bcs, tuple(power), conductivity, ambient)


def load_config(path) -> ChipConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def _num(v: float) -> str:
    return repr(float(v))


def serialize_config(config: ChipConfig, base_dir: str, stem: str = "chip") -> str:
    """Render ``config`` as a config document; grids go to files in ``base_dir``."""
    os.makedirs(base_dir, exist_ok=True)
    lines = []

    def grid_file(name, grid):
        fname = f"{stem}_{name}.txt"
        write_matrix(os.path.join(base_dir, fname), grid)
        return "file:" + fname

    g = config.geometry
    lines.append("geometry.extent_mm = " + " ".join(_num(e / MM) for e in g.extent))
    if len(g.cuboids) > 1:
        lines.append("geometry.stack_mm = " + " ".join(_num(c.extent[2] / MM) for c in g.cuboids))
    lines.append("mesh.counts = " + " ".join(str(c) for c in config.mesh.counts))
    lines.append(f"ambient = {_num(config.ambient)}")
    for s, bc in config.bcs.items():
        if isinstance(bc, Neumann):
            if isinstance(bc.flux, np.ndarray):
                val = "neumann " + grid_file(f"bc_{s}", bc.flux)
            elif bc.is_adiabatic:
                val = "adiabatic"
            else:
                val = f"neumann {_num(bc.flux)}"
        elif isinstance(bc, Dirichlet):
            if isinstance(bc.temperature, np.ndarray):
                raise ConfigError(f"bc.{s}", "grid-valued Dirichlet data has no document form")
            val = f"dirichlet {_num(bc.temperature)}"
        else:
            h = grid_file(f"htc_{s}", bc.htc) if isinstance(bc.htc, np.ndarray) else _num(bc.htc)
            val = f"convection {h} {_num(bc.ambient)}"
        lines.append(f"bc.{s} = {val}")
    for p in config.power:
        if isinstance(p, SlabPower):
            z0 = (p.z0 - g.origin[2]) / MM
            z1 = (p.z1 - g.origin[2]) / MM
            lines.append(f"power.volume = slab z0_mm:{_num(z0)} z1_mm:{_num(z1)} total_w:{_num(p.total_w)}")
        elif p.is_surface:
            ref = grid_file(f"power_{p.surface}", p.grid)
            if p.units == "unit":
                lines.append(f"power.surface.{p.surface} = {ref} unit_power_mw:{_num(p.unit_power_watts / MW)}")
            else:
                lines.append(f"power.surface.{p.surface} = {ref} units:W/m2")
        else:
            lines.append(f"power.volume = {grid_file('power_volume', p.grid)}")
    if isinstance(config.conductivity, np.ndarray):
        lines.append("conductivity = " + grid_file("conductivity", config.conductivity))
    else:
        lines.append(f"conductivity = {_num(config.conductivity)}")
    return "\n".join(lines) + "\n"


def save_config(config: ChipConfig, path) -> None:
    base = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    text = serialize_config(config, base, stem=stem)
    with open(path, "w") as fh:
        fh.write(text)
