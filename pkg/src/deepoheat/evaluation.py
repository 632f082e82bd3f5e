"""Accuracy metrics against the FDM oracle, timing, slice export and the
held-out block-pattern test maps."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import ChipConfig, tile_to_grid
from .fdm import TemperatureField, assemble, solve
from .operator import FieldPredictor, OperatorModel


@dataclass
class EvalReport:
    mape: float = float("nan")  # percent
    pape: float = float("nan")  # percent
    n_points: int = 0
    pred_time_s: float = float("nan")
    oracle_time_s: float = float("nan")
    speedup: float = float("nan")
    name: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _values(x) -> np.ndarray:
    if isinstance(x, TemperatureField):
        return x.flat
    return np.asarray(x, dtype=float).ravel()


def evaluate(pred, ref, name: str = "") -> EvalReport:
    """MAPE and PAPE in percent of the absolute (Kelvin) reference temperature."""
    if isinstance(pred, TemperatureField) and isinstance(ref, TemperatureField):
        if pred.mesh != ref.mesh:
            raise ValueError("prediction and reference live on different meshes")
    p, r = _values(pred), _values(ref)
    if p.shape != r.shape:
        raise ValueError(f"point sets differ: {p.size} predicted vs {r.size} reference values")
    if r.size == 0:
        raise ValueError("empty point set")
    if np.any(r <= 0):
        raise ValueError("reference temperatures must be positive (Kelvin)")
    rel = np.abs(p - r) / r
    return EvalReport(float(100 * rel.mean()), float(100 * rel.max()), int(r.size), name=name)


def _median_time(fn, runs: int) -> float:
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def benchmark(model: OperatorModel, config: ChipConfig, encoded, scaling, runs: int = 5,
              cached: bool = True) -> EvalReport:
    """Median wall-clock time of one full-field prediction vs one oracle solve.

    With ``cached`` the trunk features of the mesh nodes are computed once up
    front (they do not depend on the configuration), so a prediction is one
    branch pass plus a matrix-vector product. Otherwise each prediction runs
    the full network.
    """
    runs = max(5, runs)
    coords = scaling.to_unit(config.mesh.node_coords().reshape(-1, 3))
    if cached:
        predictor = FieldPredictor(model, coords)
        pred = lambda: predictor(encoded)
    else:
        def pred():
            predictor = FieldPredictor(model, coords)
            return predictor(encoded)
    pred()  # warm-up
    solve_once = lambda: solve(assemble(config))
    solve_once()
    t_pred = _median_time(pred, runs)
    t_oracle = _median_time(solve_once, runs)
    return EvalReport(n_points=config.mesh.n_nodes, pred_time_s=t_pred, oracle_time_s=t_oracle,
                      speedup=t_oracle / t_pred)


def predict_field(model: OperatorModel, config: ChipConfig, encoded, scaling) -> TemperatureField:
    coords = scaling.to_unit(config.mesh.node_coords().reshape(-1, 3))
    tau = FieldPredictor(model, coords)(encoded)
    return TemperatureField(scaling.temperature(tau), config.mesh)


# --------------------------------------------------------------------------
# slice export


def _slice(field: TemperatureField, axis: int, index: int) -> np.ndarray:
    n = field.mesh.counts[axis]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} out of range for axis {axis} with {n} nodes")
    return np.take(field.values, index, axis=axis)


def to_gray(values) -> np.ndarray:
    """Min-max map to 0..255; a constant slice becomes mid-gray (128)."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.full(v.shape, 128, dtype=np.uint8)
    return np.rint(255 * (v - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary (P5) graymap; image rows are the first array axis."""
    g = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = g.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def export_slice(field: TemperatureField, axis: int, index: int, path) -> tuple[str, str]:
    """Write the slice at ``index`` along ``axis`` as ``<path>.pgm`` and ``<path>.csv``.

    The image has one row per node of the second in-plane axis and one column
    per node of the first, matching the matrix-file layout. The CSV lists the
    slice nodes as ``x_mm,y_mm,z_mm,T_K``.
    """
    if axis not in (0, 1, 2):
        raise IndexError(f"axis must be 0, 1 or 2, got {axis}")
    sl = _slice(field, axis, index)
    base = str(path)
    for ext in (".pgm", ".csv"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    pgm, csv_path = base + ".pgm", base + ".csv"
    write_pgm(pgm, to_gray(sl).T)
    mesh = field.mesh
    coords = np.take(mesh.node_coords(), index, axis=axis) * 1e3
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm", "T_K"])
        for j in range(sl.shape[1]):
            for i in range(sl.shape[0]):
                w.writerow([*(repr(float(c)) for c in coords[i, j]), repr(float(sl[i, j]))])
    return pgm, csv_path


# --------------------------------------------------------------------------
# held-out test maps


def _paint(tiles: np.ndarray, rng, n_blocks: int, size_range, power_range) -> None:
    m = tiles.shape[0]
    for _ in range(n_blocks):
        w, h = (max(1, int(round(rng.uniform(*size_range) * m))) for _ in range(2))
        i0 = rng.integers(0, m - w + 1)
        j0 = rng.integers(0, m - h + 1)
        tiles[i0:i0 + w, j0:j0 + h] = rng.uniform(*power_range)


def block_test_maps(m: int, seed: int = 2023, n_blocks=(1, 2, 2, 3, 4, 5, 6, 7, 8),
                    power_range=(0.5, 2.0)) -> list[np.ndarray]:
    """Held-out unit-power maps on an m×m node grid, in increasing complexity.

    Blocks are painted on the (m-1)×(m-1) tiles and moved to the nodes with
    :func:`tile_to_grid`. Map i carries ``n_blocks[i]`` rectangles whose side
    shrinks from 30-60 % of the die for the first map to 15-30 % for the
    last block map; the final map is a wiggly pattern of many small sources,
    one of them at the top of ``power_range``.
    """
    rng = np.random.default_rng(seed)
    t = m - 1
    maps = []
    for i, nb in enumerate(n_blocks):
        hi = 0.6 - 0.3 * i / max(1, len(n_blocks) - 1)
        tiles = np.zeros((t, t))
        _paint(tiles, rng, nb, (0.5 * hi, hi), power_range)
        maps.append(tile_to_grid(tiles))
    tiles = np.zeros((t, t))
    _paint(tiles, rng, 12, (0.05, 0.1), (power_range[0], 0.6 * power_range[1]))
    _paint(tiles, rng, 1, (0.05, 0.1), (power_range[1], power_range[1]))
    maps.append(tile_to_grid(tiles))
    return maps
