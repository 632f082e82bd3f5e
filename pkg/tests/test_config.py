import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from deepoheat import presets
from deepoheat.config import (
    MM, ChipConfig, ConfigError, Convection, Dirichlet, Geometry, Mesh, Neumann, PowerMap, SlabPower,
    adiabatic, load_config, parse_config, read_matrix, save_config, serialize_config, tile_to_grid,
    unit_power_to_flux, volumetric_power_density, write_matrix,
)

EXP1_DOC = """
geometry.extent_mm = 1 1 0.5
mesh.counts = 21 21 11
bc.xmin = adiabatic
bc.xmax = adiabatic
bc.ymin = adiabatic
bc.ymax = adiabatic
bc.zmin = convection 500 298.15
bc.zmax = adiabatic
power.surface.zmax = file:top.txt unit_power_mw:0.00625
conductivity = 0.1
"""

EXP2_DOC = """
geometry.extent_mm = 1 1 0.55
mesh.counts = 21 21 23
bc.xmin = adiabatic
bc.xmax = adiabatic
bc.ymin = adiabatic
bc.ymax = adiabatic
bc.zmin = convection 500 298.15
bc.zmax = convection 500 298.15
power.volume = slab z0_mm:0.25 z1_mm:0.30 total_w:0.000625
conductivity = 0.1
"""


def _box(counts=(3, 3, 3), extent=(1e-3, 1e-3, 5e-4)):
    geom = Geometry.box(extent)
    return geom, Mesh(counts, geom.origin, geom.extent)


def test_parse_experiment1(tmp_path):
    grid = np.random.default_rng(0).uniform(0, 2, (21, 21))
    write_matrix(tmp_path / "top.txt", grid)
    cfg = parse_config(EXP1_DOC, base_dir=str(tmp_path))
    assert cfg.mesh.counts == (21, 21, 11)
    assert cfg.mesh.n_nodes == 4851
    assert np.allclose(cfg.geometry.extent, (1e-3, 1e-3, 5e-4))
    assert cfg.bcs["zmin"] == Convection(500.0, 298.15)
    for s in ("xmin", "xmax", "ymin", "ymax", "zmax"):
        assert cfg.bcs[s] == adiabatic()
    (pmap,) = cfg.power
    assert pmap.surface == "zmax" and pmap.units == "unit"
    assert pmap.unit_power_watts == pytest.approx(6.25e-6)
    assert np.array_equal(pmap.grid, grid)
    assert cfg.conductivity == 0.1
    # same chip as the reference preset, up to the unit power per tile
    ref = presets.experiment1_config("paper", power=grid)
    assert cfg.replace(power=ref.power) == ref


def test_parse_experiment2():
    cfg = parse_config(EXP2_DOC)
    assert cfg.bcs["zmax"] == Convection(500.0, 298.15)
    (slab,) = cfg.slabs()
    assert slab.z0 == pytest.approx(0.25e-3) and slab.z1 == pytest.approx(0.30e-3)
    assert slab.density(cfg.geometry.extent[:2]) == pytest.approx(1.25e7)
    assert cfg == presets.experiment2_config(scale="paper")


def test_mesh_count_below_two_rejected():
    doc = EXP2_DOC.replace("mesh.counts = 21 21 23", "mesh.counts = 21 21 1")
    with pytest.raises(ConfigError, match="each count ≥ 2") as err:
        parse_config(doc)
    assert err.value.key == "mesh.counts"


@pytest.mark.parametrize("edit, key", [
    (("conductivity = 0.1", ""), "conductivity"),
    (("bc.zmax = convection 500 298.15", "bc.zmax = convection -5 298.15"), "bc.convection"),
    (("bc.zmax = convection 500 298.15", "bc.zmax = dirichlet 0"), "bc.dirichlet"),
    (("bc.zmax = convection 500 298.15", "bc.zmax = radiation 1"), "bc.zmax"),
    (("mesh.counts = 21 21 23", "mesh.counts = 21 x 23"), "mesh.counts"),
    (("conductivity = 0.1", "conductivity = 0.1\nfoo = 1"), "foo"),
    (("conductivity = 0.1", "conductivity = -1"), "conductivity"),
])
def test_parse_errors_name_the_key(edit, key):
    with pytest.raises(ConfigError) as err:
        parse_config(EXP2_DOC.replace(*edit))
    assert err.value.key == key
    assert err.value.reason


def test_power_map_needs_neumann_surface(tmp_path):
    write_matrix(tmp_path / "top.txt", np.ones((21, 21)))
    doc = EXP1_DOC.replace("bc.zmax = adiabatic", "bc.zmax = convection 10 300")
    with pytest.raises(ConfigError, match="Neumann"):
        parse_config(doc, base_dir=str(tmp_path))


def test_power_map_shape_checked(tmp_path):
    write_matrix(tmp_path / "top.txt", np.ones((20, 20)))
    with pytest.raises(ConfigError, match="does not match"):
        parse_config(EXP1_DOC, base_dir=str(tmp_path))


def test_matrix_file_rows_are_y():
    # first line of the file is y-min, columns run along x
    grid = np.arange(6.0).reshape(3, 2)  # [i, j]
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.txt")
        write_matrix(path, grid)
        with open(path) as fh:
            first = [float(v) for v in fh.readline().split()]
        assert first == [0.0, 2.0, 4.0]
        assert np.array_equal(read_matrix(path), grid)


def test_adiabatic_is_zero_flux_neumann():
    assert adiabatic() == Neumann(0.0)
    assert adiabatic() == Neumann(np.zeros((4, 4)))
    assert adiabatic() != Neumann(1.0)
    assert adiabatic().is_adiabatic


def test_geometry_invariants():
    with pytest.raises(ConfigError, match="strictly positive"):
        Geometry.box((1e-3, 0.0, 1e-3))
    stack = Geometry.stack((1e-3, 1e-3), (2e-4, 3e-4))
    assert stack.extent[2] == pytest.approx(5e-4)
    from deepoheat.config import Cuboid
    with pytest.raises(ConfigError, match="contiguous"):
        Geometry((Cuboid((0, 0, 0), (1, 1, 1)), Cuboid((0, 0, 1.5), (1, 1, 1))))
    with pytest.raises(ConfigError, match="footprint"):
        Geometry((Cuboid((0, 0, 0), (1, 1, 1)), Cuboid((0, 0, 1), (2, 1, 1))))


def test_mesh_node_coordinates_exact():
    m = Mesh((3, 4, 5), (1.0, 2.0, 3.0), (2.0, 3.0, 4.0))
    c = m.node_coords()
    assert c.shape == (3, 4, 5, 3)
    assert np.array_equal(c[2, 3, 4], [1.0 + 2 * 1.0, 2.0 + 3 * 1.0, 3.0 + 4 * 1.0])
    assert m.spacing == (1.0, 1.0, 1.0)


# --------------------------------------------------------------------------
# unit conversions


@pytest.mark.parametrize("entry, flux", [(1.0, 2500.0), (0.0, 0.0), (4.0, 10000.0)])
def test_unit_power_to_flux(entry, flux):
    pm = PowerMap(np.full((2, 2), entry), surface="zmax", unit_power_watts=6.25e-6)
    out = unit_power_to_flux(pm, 2.5e-9)
    assert out.units == "W/m2"
    assert np.allclose(out.grid, flux, rtol=1e-12)


def test_unit_power_to_flux_rejects_bad_area():
    pm = PowerMap(np.ones((2, 2)), surface="zmax")
    with pytest.raises(ValueError):
        unit_power_to_flux(pm, 0.0)


@given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3))
def test_unit_power_to_flux_homogeneous(a, scale):
    pm = PowerMap(np.array([[a, 2 * a]]), surface="zmax")
    scaled = PowerMap(np.array([[a * scale, 2 * a * scale]]), surface="zmax")
    assert np.allclose(unit_power_to_flux(scaled, 2.5e-9).grid, scale * unit_power_to_flux(pm, 2.5e-9).grid,
                       rtol=1e-12, atol=0)


@pytest.mark.parametrize("total, thickness, expected", [
    (6.25e-4, 0.05e-3, 1.25e7), (0.0, 0.05e-3, 0.0), (6.25e-4, 0.10e-3, 6.25e6)])
def test_volumetric_power_density(total, thickness, expected):
    assert volumetric_power_density(total, (1e-3, 1e-3, thickness)) == pytest.approx(expected, rel=1e-12)


def test_volumetric_power_density_zero_volume():
    with pytest.raises(ValueError):
        volumetric_power_density(1.0, (1e-3, 0.0, 1e-3))


@given(st.floats(0, 10), st.floats(0, 10))
def test_volumetric_power_density_homogeneous(total, scale):
    ext = (1e-3, 1e-3, 5e-5)
    assert volumetric_power_density(total * scale, ext) == pytest.approx(
        scale * volumetric_power_density(total, ext), rel=1e-12, abs=1e-300)


# --------------------------------------------------------------------------
# tile_to_grid


def test_tile_to_grid_examples():
    assert np.array_equal(tile_to_grid(np.full((3, 3), 2.5)), np.full((4, 4), 2.5))
    g = tile_to_grid([[0.0, 0.0], [0.0, 4.0]])
    assert g.shape == (3, 3)
    assert g[1, 1] == 1.0
    assert [g[0, 0], g[0, 2], g[2, 0], g[2, 2]] == [0.0, 0.0, 0.0, 4.0]
    assert np.array_equal(tile_to_grid([[7.0]]), np.full((2, 2), 7.0))
    with pytest.raises(ValueError):
        tile_to_grid(np.zeros((0, 0)))


tiles = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
               elements=st.floats(-100, 100, allow_nan=False))


@given(tiles, st.floats(-5, 5), st.floats(-5, 5), st.data())
def test_tile_to_grid_linear(A, a, b, data):
    B = data.draw(arrays(np.float64, A.shape, elements=st.floats(-100, 100, allow_nan=False)))
    lhs = tile_to_grid(a * A + b * B)
    rhs = a * tile_to_grid(A) + b * tile_to_grid(B)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@given(tiles)
def test_tile_to_grid_range(A):
    g = tile_to_grid(A)
    assert g.shape == (A.shape[0] + 1, A.shape[1] + 1)
    assert A.min() - 1e-12 <= g.min() and g.max() <= A.max() + 1e-12


# --------------------------------------------------------------------------
# round trip


@st.composite
def configs(draw):
    counts = tuple(draw(st.integers(2, 5)) for _ in range(3))
    ext = tuple(draw(st.floats(0.1, 2.0)) * MM for _ in range(3))
    geom = Geometry.box(ext)
    mesh = Mesh(counts, geom.origin, geom.extent)
    bcs = {}
    for s in ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax"):
        kind = draw(st.sampled_from(["adiabatic", "neumann", "convection", "dirichlet"]))
        if kind == "adiabatic":
            bcs[s] = adiabatic()
        elif kind == "neumann":
            bcs[s] = Neumann(draw(st.floats(-1e4, 1e4)))
        elif kind == "convection":
            bcs[s] = Convection(draw(st.floats(1.0, 1e4)), draw(st.floats(250.0, 350.0)))
        else:
            bcs[s] = Dirichlet(draw(st.floats(250.0, 400.0)))
    power = []
    if isinstance(bcs["zmax"], Neumann) and draw(st.booleans()):
        grid = draw(arrays(np.float64, counts[:2], elements=st.floats(0, 5)))
        power.append(PowerMap(grid, surface="zmax", unit_power_watts=draw(st.floats(1e-7, 1e-4))))
    if draw(st.booleans()):
        z0 = draw(st.floats(0.0, 0.4)) * ext[2]
        power.append(SlabPower(z0, z0 + 0.5 * ext[2], draw(st.floats(0.0, 1e-3))))
    if draw(st.booleans()):
        k = draw(arrays(np.float64, counts, elements=st.floats(0.01, 10)))
    else:
        k = draw(st.floats(0.01, 400))
    return ChipConfig(geom, mesh, bcs, tuple(power), k, draw(st.floats(250.0, 350.0)))


@settings(max_examples=40, deadline=None)
@given(configs())
def test_config_round_trip(tmp_path_factory, cfg):
    d = tmp_path_factory.mktemp("rt")
    path = os.path.join(d, "chip.txt")
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_round_trip_presets(tmp_path):
    grid = np.random.default_rng(3).uniform(0, 2, (21, 21))
    for cfg in (presets.experiment1_config("paper", power=grid), presets.experiment2_config(scale="paper"),
                presets.experiment1_config("desk")):
        text = serialize_config(cfg, str(tmp_path))
        assert parse_config(text, base_dir=str(tmp_path)) == cfg


def test_stacked_geometry_round_trip(tmp_path):
    geom = Geometry.stack((1e-3, 1e-3), (2e-4, 3e-4))
    mesh = Mesh((3, 3, 6), geom.origin, geom.extent)
    bcs = {s: adiabatic() for s in ("xmin", "xmax", "ymin", "ymax", "zmax")}
    bcs["zmin"] = Convection(100.0, 300.0)
    cfg = ChipConfig(geom, mesh, bcs, (), 1.0, 300.0)
    path = tmp_path / "stack.txt"
    save_config(cfg, path)
    assert load_config(path) == cfg
