import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from deepoheat import presets
from deepoheat.config import ChipConfig, Convection, Dirichlet, Geometry, Mesh, Neumann, PowerMap, adiabatic
from deepoheat.fdm import (
    ConvergenceError, LinearSystem, SingularSystemError, TemperatureField, assemble, energy_balance,
    export_csv, field_from_csv, pcg, read_csv, sample_field, solve, solve_config,
)
from deepoheat.grf import GrfSampler, GrfSpec, rescale_to_power

T_AMB = 298.15


def uniform_flux_config(counts=(21, 21, 11)):
    return presets.experiment1_config("paper", power=np.ones(counts[:2]), counts=counts)


def slab_profile(z, L, a, b, qv, k, h_bot, h_top, t_amb):
    """Closed-form 1D temperature for a uniform source on [a, b] in [0, L]
    with convection on both ends (heat leaves through both faces)."""
    Q = qv * (b - a)
    G = qv * ((L - a) ** 2 - (L - b) ** 2) / 2
    F0 = (-Q - h_top * G / k) / (1 + h_top / h_bot + h_top * L / k)
    T0 = t_amb - F0 / h_bot
    z = np.asarray(z, dtype=float)
    g = np.where(z < a, 0.0, np.where(z <= b, 0.5 * (z - a) ** 2, (b - a) * (z - 0.5 * (a + b))))
    return T0 - (F0 * z + qv * g) / k


def test_uniform_flux_matches_1d_solution():
    cfg = uniform_flux_config()
    field = solve_config(cfg)
    z = cfg.mesh.node_coords()[..., 2]
    exact = T_AMB + 5.0 + 25000.0 * z
    assert np.max(np.abs(field.values - exact)) < 1e-6
    assert field.values[:, :, 0] == pytest.approx(303.15, abs=1e-6)
    assert field.values[:, :, -1] == pytest.approx(315.65, abs=1e-6)


@pytest.mark.parametrize("h_top, h_bot", [(500.0, 500.0), (1000.0, 333.33)])
def test_slab_source_matches_piecewise_quadratic(h_top, h_bot):
    cfg = presets.experiment2_config(h_top, h_bot, counts=(3, 3, 41))
    field = solve_config(cfg)
    (slab,) = cfg.slabs()
    z = cfg.mesh.axis_coords(2)
    exact = slab_profile(z, cfg.geometry.extent[2], slab.z0, slab.z1, 1.25e7, 0.1, h_bot, h_top, T_AMB)
    for i in range(3):
        for j in range(3):
            assert np.max(np.abs(field.values[i, j] - exact)) < 0.01


def test_slab_profile_oracle_is_self_consistent():
    # the hand solution satisfies its own boundary conditions
    L, a, b, qv, k, hb, ht = 0.55e-3, 0.25e-3, 0.30e-3, 1.25e7, 0.1, 333.33, 1000.0
    f = lambda z: slab_profile(z, L, a, b, qv, k, hb, ht, T_AMB)  # noqa: E731
    eps = 1e-9
    dTdz0 = (f(eps) - f(0.0)) / eps
    dTdzL = (f(L) - f(L - eps)) / eps
    assert k * dTdz0 == pytest.approx(hb * (f(0.0) - T_AMB), rel=1e-4)
    assert -k * dTdzL == pytest.approx(ht * (f(L) - T_AMB), rel=1e-4)
    # total outflow equals total source
    assert hb * (f(0.0) - T_AMB) + ht * (f(L) - T_AMB) == pytest.approx(qv * (b - a), rel=1e-10)


def test_energy_balance_on_grf_maps():
    sampler = GrfSampler(GrfSpec(21, 0.3), seed=11)
    maps = rescale_to_power(sampler.sample(20), 2.0)
    base = presets.experiment1_config("paper")
    for m in maps:
        cfg = base.with_surface_power("zmax", m)
        injected, outflow = energy_balance(cfg, solve_config(cfg))
        assert injected > 0
        assert abs(injected - outflow) <= 0.005 * injected


def test_energy_balance_with_dirichlet_reservoir():
    cfg = presets.experiment2_config(counts=(5, 5, 12))
    cfg = cfg.with_bc("zmax", Dirichlet(300.0))
    injected, outflow = energy_balance(cfg, solve_config(cfg))
    assert outflow == pytest.approx(injected, rel=1e-6)


def test_stencil_weights_interior():
    geom = Geometry.box((1e-3, 1e-3, 1e-3))
    mesh = Mesh((5, 5, 5), geom.origin, geom.extent)
    bcs = {s: Convection(10.0, 300.0) for s in ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")}
    cfg = ChipConfig(geom, mesh, bcs, (), 2.0, 300.0)
    sys = assemble(cfg)
    h = mesh.spacing[0]
    c = np.ravel_multi_index((2, 2, 2), mesh.counts)
    row = sys.matrix.getrow(c).toarray().ravel() / sys.volumes[c]
    # SPD sign convention: the negated 7-point Laplacian
    assert row[c] == pytest.approx(6 * 2.0 / h ** 2, rel=1e-12)
    nbrs = [np.ravel_multi_index(p, mesh.counts) for p in
            [(1, 2, 2), (3, 2, 2), (2, 1, 2), (2, 3, 2), (2, 2, 1), (2, 2, 3)]]
    assert row[nbrs] == pytest.approx(-2.0 / h ** 2, rel=1e-12)
    assert np.count_nonzero(row) == 7


def test_experiment1_system_is_spd():
    sys = assemble(presets.experiment1_config("paper", power=np.ones((21, 21))))
    assert sys.n == 4851
    A = sys.matrix
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    assert np.all(A.diagonal() > 0)
    # diagonally dominant everywhere (strictly on the convection face)
    off = np.asarray(abs(A).sum(axis=1)).ravel() - A.diagonal()
    assert np.all(A.diagonal() >= off - 1e-12 * A.diagonal())
    bottom = np.ravel_multi_index((10, 10, 0), (21, 21, 11))
    assert A.diagonal()[bottom] > off[bottom]


def test_all_adiabatic_is_singular():
    geom = Geometry.box((1e-3, 1e-3, 1e-3))
    mesh = Mesh((3, 3, 3), geom.origin, geom.extent)
    cfg = ChipConfig(geom, mesh, {s: adiabatic() for s in ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")})
    with pytest.raises(SingularSystemError):
        assemble(cfg)


def test_identity_system():
    mesh = Mesh((2, 2, 2), (0, 0, 0), (1, 1, 1))
    r = np.arange(1.0, 9.0)
    system = LinearSystem(sp.identity(8, format="csr"), r, np.ones(8), mesh, np.zeros(8, bool), 0.0)
    assert np.allclose(solve(system).flat, r, rtol=1e-12)


def test_equilibrium_without_power():
    cfg = presets.experiment2_config(counts=(5, 5, 6)).replace(power=())
    field = solve_config(cfg)
    assert np.allclose(field.values, T_AMB, atol=1e-9)


def test_pure_source_stays_above_ambient():
    cfg = presets.experiment1_config("desk", power=rescale_to_power(np.random.default_rng(1).normal(size=(11, 11)), 2))
    assert solve_config(cfg).values.min() >= T_AMB - 1e-8


def test_relative_residual_and_determinism():
    rng = np.random.default_rng(4)
    cfg = presets.experiment1_config("desk", power=rng.uniform(0, 2, (11, 11)))
    sys = assemble(cfg)
    f1 = solve(sys, tol=1e-10)
    f2 = solve(sys, tol=1e-10)
    assert np.array_equal(f1.values, f2.values)
    res = np.linalg.norm(sys.matrix @ f1.flat - sys.rhs) / np.linalg.norm(sys.rhs)
    assert res <= 1e-10


def test_non_convergence_raises():
    sys = assemble(uniform_flux_config((11, 11, 6)).with_surface_power(
        "zmax", np.random.default_rng(0).uniform(0, 2, (11, 11))))
    with pytest.raises(ConvergenceError):
        solve(sys, max_iter=2)


def test_pcg_matches_direct_solve():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(30, 30))
    A = sp.csr_matrix(M @ M.T + 30 * np.eye(30))
    b = rng.normal(size=30)
    x, iters, _ = pcg(A, b, tol=1e-12)
    assert np.allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-9, atol=1e-12)
    assert 0 < iters <= 60


def test_dirichlet_slab_is_linear_with_harmonic_faces():
    # two conductivities meeting midway between nodes: series resistance is exact
    geom = Geometry.box((1e-3, 1e-3, 1e-3))
    mesh = Mesh((2, 2, 11), geom.origin, geom.extent)
    k = np.ones(mesh.counts)
    k[:, :, 5:] = 4.0
    bcs = {s: adiabatic() for s in ("xmin", "xmax", "ymin", "ymax")}
    bcs["zmin"], bcs["zmax"] = Dirichlet(300.0), Dirichlet(310.0)
    field = solve_config(ChipConfig(geom, mesh, bcs, (), k, 300.0))
    h = mesh.spacing[2]
    # resistance per unit area of each node gap
    r = np.array([h / 1.0] * 4 + [h * 0.5 * (1 / 1.0 + 1 / 4.0)] + [h / 4.0] * 5)
    exact = 300.0 + 10.0 * np.concatenate([[0.0], np.cumsum(r)]) / r.sum()
    assert np.allclose(field.values[0, 0], exact, atol=1e-9)


def test_neumann_grid_flux_enters_domain():
    cfg = uniform_flux_config((5, 5, 6))
    cfg_bc = cfg.replace(power=()).with_bc("zmax", Neumann(np.full((5, 5), 2500.0)))
    assert np.allclose(solve_config(cfg_bc).values, solve_config(cfg).values, atol=1e-9)


# --------------------------------------------------------------------------
# sampling and CSV


def test_sample_field():
    cfg = uniform_flux_config((5, 5, 6))
    field = solve_config(cfg)
    nodes = cfg.mesh.node_coords()
    assert sample_field(field, nodes[1, 2, 3][None])[0] == pytest.approx(field.values[1, 2, 3], abs=1e-12)
    a, b = field.values[1, 1, 2], field.values[1, 1, 3]
    mid = 0.5 * (nodes[1, 1, 2] + nodes[1, 1, 3])
    assert sample_field(field, mid[None])[0] == pytest.approx(0.5 * (a + b), abs=1e-12)
    pts = np.random.default_rng(0).uniform(0, 1, (20, 3)) * np.array(cfg.geometry.extent)
    assert np.allclose(sample_field(field, pts), T_AMB + 5 + 25000 * pts[:, 2], atol=1e-6)
    with pytest.raises(ValueError, match="outside"):
        sample_field(field, [[0.0, 0.0, 1e-3]])


def test_csv_format_and_round_trip(tmp_path):
    cfg = uniform_flux_config((3, 4, 5))
    field = TemperatureField(np.random.default_rng(0).uniform(290, 320, (3, 4, 5)), cfg.mesh)
    path = tmp_path / "f.csv"
    export_csv(field, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x_mm,y_mm,z_mm,T_K"
    assert len(lines) == 1 + 60
    # node-major in (k, j, i): i varies fastest
    second = [float(v) for v in lines[2].split(",")]
    assert second[:3] == pytest.approx([0.5, 0.0, 0.0])
    back = read_csv(path, cfg.mesh)
    assert np.array_equal(back.values, field.values)
    inferred = field_from_csv(path)
    assert inferred.mesh.counts == (3, 4, 5)
    assert np.array_equal(inferred.values, field.values)


def test_field_rejects_non_finite():
    mesh = Mesh((2, 2, 2), (0, 0, 0), (1, 1, 1))
    with pytest.raises(ValueError):
        TemperatureField(np.full((2, 2, 2), np.nan), mesh)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 5000.0), st.floats(50.0, 2000.0))
def test_uniform_flux_linear_for_any_load(q, h):
    cfg = uniform_flux_config((3, 3, 6))
    cfg = cfg.replace(power=()).with_bc("zmax", Neumann(q)).with_bc("zmin", Convection(h, T_AMB))
    z = cfg.mesh.node_coords()[..., 2]
    exact = T_AMB + q / h + q * z / 0.1
    assert np.max(np.abs(solve_config(cfg).values - exact)) < 1e-6 * max(1.0, q / h)
