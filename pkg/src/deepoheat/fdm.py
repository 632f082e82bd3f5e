"""Steady-state finite-difference reference solver for k∇²T + q_V = 0.

The 7-point stencil is assembled in conservative (control-volume) form: every
row is the ghost-node finite-difference equation multiplied by the node's
control volume (half cells on faces, quarter cells on edges, ...). This keeps
the matrix symmetric positive definite; ``row / volume`` recovers the usual
``k/h²`` stencil with ``2/h`` boundary terms.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .config import SURFACE_AXIS, SURFACES, ChipConfig, Convection, Dirichlet, Mesh, Neumann, PowerMap, SlabPower

log = logging.getLogger(__name__)


class SingularSystemError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    volumes: np.ndarray  # control volume per node, m³
    mesh: Mesh
    pinned: np.ndarray  # bool mask of Dirichlet nodes
    reference: float  # temperature offset used to precondition the solve, K

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class TemperatureField:
    values: np.ndarray  # (nx, ny, nz), K
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.mesh.counts)
        if not np.all(np.isfinite(v)):
            raise ValueError("temperature field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def points(self) -> np.ndarray:
        return self.mesh.node_coords().reshape(-1, 3)


def _widths(mesh: Mesh) -> list[np.ndarray]:
    ws = []
    for a in range(3):
        w = np.full(mesh.counts[a], mesh.spacing[a])
        w[[0, -1]] *= 0.5
        ws.append(w)
    return ws


def _slab_loads(mesh: Mesh, slab: SlabPower, q_v: float) -> np.ndarray:
    """Slab power per z node weighted by the node's hat function, W/m² of footprint.

    With these loads the 1D discretization is nodally exact for a slab whose
    edges fall between nodes.
    """
    z = mesh.axis_coords(2)
    h = mesh.spacing[2]
    loads = np.zeros_like(z)
    for k, zk in enumerate(z):
        lo = zk - h if k > 0 else zk
        hi = zk + h if k < len(z) - 1 else zk
        a, b = max(lo, slab.z0), min(hi, slab.z1)
        if b <= a:
            continue
        # antiderivative of the hat 1 - |t - zk|/h
        F = lambda t: t - np.abs(t - zk) * (t - zk) / (2 * h)  # noqa: E731
        loads[k] = q_v * (F(b) - F(a))
    return loads


def source_loads(config: ChipConfig) -> np.ndarray:
    """Volumetric power integrated per node (W), shape (nx, ny, nz)."""
    mesh = config.mesh
    wx, wy, wz = _widths(mesh)
    vol = wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
    loads = np.zeros(mesh.counts)
    for p in config.power:
        if isinstance(p, SlabPower):
            q_v = p.density(config.geometry.extent[:2])
            loads += (wx[:, None] * wy[None, :])[:, :, None] * _slab_loads(mesh, p, q_v)[None, None, :]
        elif isinstance(p, PowerMap) and not p.is_surface:
            grid = np.asarray(p.grid)
            if p.units == "unit":
                grid = grid * p.unit_power_watts / float(np.prod(mesh.spacing))
            loads += grid * vol
    return loads


def _surface_areas(mesh: Mesh, surface: str) -> np.ndarray:
    ws = _widths(mesh)
    axis, _ = SURFACE_AXIS[surface]
    a, b = [i for i in range(3) if i != axis]
    return ws[a][:, None] * ws[b][None, :]


def _expand(surface_grid: np.ndarray, mesh: Mesh, surface: str) -> np.ndarray:
    """Place a surface grid into a full nodal array (zeros elsewhere)."""
    full = np.zeros(mesh.counts)
    full[mesh.surface_index(surface)] = surface_grid
    return full


def _assemble_raw(config: ChipConfig):
    mesh = config.mesh
    shape = mesh.counts
    n = mesh.n_nodes
    idx = np.arange(n).reshape(shape)
    ws = _widths(mesh)
    vol = ws[0][:, None, None] * ws[1][None, :, None] * ws[2][None, None, :]
    kg = config.conductivity_grid()

    if not any(isinstance(bc, (Dirichlet, Convection)) for bc in config.bcs.values()):
        raise SingularSystemError("no Dirichlet or convection surface: temperature is only defined up to a constant")

    rows, cols, vals = [], [], []
    diag = np.zeros(shape)
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        k1, k2 = kg[lo], kg[hi]
        k_face = 2.0 * k1 * k2 / (k1 + k2)
        others = [b for b in range(3) if b != a]
        area = np.ones(shape)
        for b in others:
            sh = [1, 1, 1]
            sh[b] = -1
            area = area * ws[b].reshape(sh)
        g = k_face * area[lo] / mesh.spacing[a]
        i1, i2 = idx[lo].ravel(), idx[hi].ravel()
        rows += [i1, i2]
        cols += [i2, i1]
        vals += [-g.ravel(), -g.ravel()]
        diag[lo] += g
        diag[hi] += g

    rhs = source_loads(config).copy()
    pinned = np.zeros(shape, dtype=bool)
    pinned_val = np.zeros(shape)
    for s in SURFACES:
        bc = config.bcs[s]
        area = _surface_areas(mesh, s)
        if isinstance(bc, Neumann):
            rhs += _expand(config.surface_flux(s) * area, mesh, s)
        elif isinstance(bc, Convection):
            h = np.broadcast_to(bc.htc, area.shape)
            diag += _expand(h * area, mesh, s)
            rhs += _expand(h * area * bc.ambient, mesh, s)
    for s in SURFACES:
        bc = config.bcs[s]
        if isinstance(bc, Dirichlet):
            sel = mesh.surface_index(s)
            pinned[sel] = True
            pinned_val[sel] = np.broadcast_to(bc.temperature, mesh.surface_shape(s))

    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    A = (A + sp.diags(diag.ravel())).tocsr()
    return A, rhs.ravel(), pinned.ravel(), pinned_val.ravel(), vol.ravel()


def assemble(config: ChipConfig) -> LinearSystem:
    """Assemble the SPD finite-difference system for ``config``."""
    A, b, pin, pinned_val, vol = _assemble_raw(config)
    if pin.any():
        tp = pinned_val * pin
        b = b - A @ tp
        keep = sp.diags((~pin).astype(float))
        A = keep @ A @ keep + sp.diags(pin.astype(float))
        b = np.where(pin, pinned_val, b)
    A = A.tocsr()
    A.sum_duplicates()

    refs = [bc.ambient for bc in config.bcs.values() if isinstance(bc, Convection)]
    refs += [float(np.mean(bc.temperature)) for bc in config.bcs.values() if isinstance(bc, Dirichlet)]
    return LinearSystem(A, b, vol, config.mesh, pin, float(np.mean(refs)))


def pcg(A, b, x0=None, tol: float = 1e-10, max_iter: int = 10000, atol: float = 0.0):
    """Jacobi-preconditioned conjugate gradients. Returns (x, iterations, residual_norm)."""
    d = A.diagonal()
    if np.any(d <= 0):
        raise SingularSystemError("matrix has non-positive diagonal entries")
    minv = 1.0 / d
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    target = max(tol * bnorm, atol)
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x, 0, rnorm
    z = minv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SingularSystemError("matrix is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, it, rnorm
        z = minv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(f"PCG did not converge in {max_iter} iterations (residual {rnorm:.3e}, target {target:.3e})")


def solve(system: LinearSystem, tol: float = 1e-10, max_iter: int = 20000) -> TemperatureField:
    """Solve to relative residual ``tol``.

    The solve runs on the offset unknown ``T - reference``; its residual equals
    that of the original system, and the offset rhs is much smaller than the
    original one (which is dominated by ``h·T_amb``), so the returned field
    satisfies both relative-residual bounds.
    """
    A, b = system.matrix, system.rhs
    shift = np.where(system.pinned, 0.0, system.reference)
    b_shift = b - A @ shift
    target = tol * min(np.linalg.norm(b), np.linalg.norm(b_shift))
    y, iters, res = pcg(A, b_shift, tol=0.0, atol=target, max_iter=max_iter)
    log.debug("pcg converged in %d iterations, residual %.3e", iters, res)
    return TemperatureField((y + shift).reshape(system.mesh.counts), system.mesh)


def solve_config(config: ChipConfig, tol: float = 1e-10) -> TemperatureField:
    return solve(assemble(config), tol=tol)


def sample_field(field: TemperatureField, points) -> np.ndarray:
    """Trilinear interpolation of nodal values at ``points`` (n×3, metres)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = field.mesh
    axes = [mesh.axis_coords(a) for a in range(3)]
    lo = np.array([ax[0] for ax in axes])
    hi = np.array([ax[-1] for ax in axes])
    slack = 1e-9 * (hi - lo)
    outside = np.any((pts < lo - slack) | (pts > hi + slack), axis=1)
    if outside.any():
        raise ValueError(f"point {pts[outside][0]} lies outside the domain")
    pts = np.clip(pts, lo, hi)
    interp = RegularGridInterpolator(axes, field.values, method="linear")
    return interp(pts)


def energy_balance(config: ChipConfig, field: TemperatureField) -> tuple[float, float]:
    """(injected power, convective + Dirichlet outflow) in W."""
    mesh = config.mesh
    injected = float(source_loads(config).sum())
    outflow = 0.0
    T = field.values
    for s in SURFACES:
        bc = config.bcs[s]
        area = _surface_areas(mesh, s)
        Ts = T[mesh.surface_index(s)]
        if isinstance(bc, Neumann):
            injected += float((config.surface_flux(s) * area).sum())
        elif isinstance(bc, Convection):
            outflow += float((np.broadcast_to(bc.htc, area.shape) * area * (Ts - bc.ambient)).sum())
    A, b, pin, _, _ = _assemble_raw(config)
    if pin.any():
        # a pinned node's unbalanced equation is the heat absorbed by the reservoir
        residual = A @ field.flat - b
        outflow -= float(residual[pin].sum())
    return injected, outflow


def export_csv(field: TemperatureField, path) -> None:
    """Write ``x_mm,y_mm,z_mm,T_K`` rows, k slowest and i fastest."""
    mesh = field.mesh
    xs, ys, zs = (mesh.axis_coords(a) * 1e3 for a in range(3))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm", "T_K"])
        for k in range(mesh.counts[2]):
            for j in range(mesh.counts[1]):
                for i in range(mesh.counts[0]):
                    w.writerow([repr(float(xs[i])), repr(float(ys[j])), repr(float(zs[k])),
                                repr(float(field.values[i, j, k]))])


def read_csv(path, mesh: Mesh | None = None):
    """Read a field CSV. Returns a TemperatureField if ``mesh`` is given, else (points, values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts, vals = data[:, :3] * 1e-3, data[:, 3]
    if mesh is None:
        return pts, vals
    nx, ny, nz = mesh.counts
    return TemperatureField(vals.reshape(nz, ny, nx).transpose(2, 1, 0), mesh)


def field_from_csv(path) -> TemperatureField:
    """Read a field CSV written by :func:`export_csv`, recovering the mesh
    from the node coordinates."""
    pts, vals = read_csv(path)
    axes = [np.unique(np.round(pts[:, a], 15)) for a in range(3)]
    counts = tuple(len(ax) for ax in axes)
    if np.prod(counts) != len(vals):
        raise ValueError(f"{path}: points do not form a full node grid")
    mesh = Mesh(counts, tuple(ax[0] for ax in axes), tuple(ax[-1] - ax[0] for ax in axes))
    expected = mesh.node_coords().transpose(2, 1, 0, 3).reshape(-1, 3)
    if not np.allclose(expected, pts, rtol=0, atol=1e-9 * max(mesh.extent)):
        raise ValueError(f"{path}: points are not a uniform grid in k, j, i order")
    return TemperatureField(vals.reshape(counts[::-1]).transpose(2, 1, 0), mesh)
