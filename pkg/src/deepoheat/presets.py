"""Reference chip configurations for the two experiments.

``powermap2d``: 1×1×0.5 mm cuboid, adiabatic sides, convection bottom
(h = 500 W/m²K, T_amb = 298.15 K), a unit-power map on the top surface,
k = 0.1 W/mK, no volumetric power.

``htc-dual``: 1×1×0.55 mm cuboid, convection on top and bottom, adiabatic
sides, 0.625 mW spread uniformly over a 0.05 mm slab in the middle.
"""
from __future__ import annotations

import numpy as np

from .config import MM, ChipConfig, Convection, Geometry, Mesh, PowerMap, SlabPower, adiabatic

T_AMB = 298.15
CONDUCTIVITY = 0.1
HTC_BOTTOM = 500.0
# one unit of power on a 0.05 mm × 0.05 mm tile
UNIT_POWER_W = 6.25e-6
FULL_TILE_AREA = (0.05 * MM) ** 2
FLUX_PER_UNIT = UNIT_POWER_W / FULL_TILE_AREA  # 2500 W/m²

MESH_COUNTS = {
    "powermap2d": {"paper": (21, 21, 11), "desk": (11, 11, 6)},
    "htc-dual": {"paper": (21, 21, 23), "desk": (11, 11, 12)},
}

HTC_RANGE = (333.33, 1000.0)
HTC_TEST_PAIRS = ((1000.0, 333.33), (500.0, 500.0))
SLAB_TOTAL_W = 6.25e-4
SLAB_THICKNESS = 0.05 * MM


def _sides():
    return {s: adiabatic() for s in ("xmin", "xmax", "ymin", "ymax")}


def experiment1_config(scale: str = "paper", power=None, counts=None) -> ChipConfig:
    """Single cuboid with a top-surface power map (unit-power entries).

    The unit power is scaled with the tile area so that one unit is always
    2500 W/m², whatever the mesh resolution.
    """
    counts = counts or MESH_COUNTS["powermap2d"][scale]
    geom = Geometry.box((1.0 * MM, 1.0 * MM, 0.5 * MM))
    mesh = Mesh(counts, geom.origin, geom.extent)
    dx, dy, _ = mesh.spacing
    unit_w = FLUX_PER_UNIT * dx * dy
    if power is None:
        power = np.zeros(counts[:2])
    bcs = _sides()
    bcs["zmin"] = Convection(HTC_BOTTOM, T_AMB)
    bcs["zmax"] = adiabatic()
    pmap = PowerMap(power, surface="zmax", units="unit", unit_power_watts=unit_w)
    return ChipConfig(geom, mesh, bcs, (pmap,), CONDUCTIVITY, T_AMB)


def slab_bounds(height: float = 0.55 * MM, thickness: float = SLAB_THICKNESS) -> tuple[float, float]:
    mid = 0.5 * height
    return mid - 0.5 * thickness, mid + 0.5 * thickness


def experiment2_config(h_top: float = 500.0, h_bottom: float = 500.0, scale: str = "paper",
                       counts=None, slab=None) -> ChipConfig:
    counts = counts or MESH_COUNTS["htc-dual"][scale]
    geom = Geometry.box((1.0 * MM, 1.0 * MM, 0.55 * MM))
    mesh = Mesh(counts, geom.origin, geom.extent)
    z0, z1 = slab or slab_bounds()
    bcs = _sides()
    bcs["zmin"] = Convection(h_bottom, T_AMB)
    bcs["zmax"] = Convection(h_top, T_AMB)
    return ChipConfig(geom, mesh, bcs, (SlabPower(z0, z1, SLAB_TOTAL_W),), CONDUCTIVITY, T_AMB)
