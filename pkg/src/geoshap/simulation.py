"""Synthetic ground-truth data on a 50x50 grid.

The response is the sum of an intrinsic location dome, two spatially varying
linear effects, one global linear effect, and one quadratic effect, plus
optional Gaussian noise.  True component surfaces are exported so recovered
effects can be scored against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

GRID_SIDE = 50
COORD_MAX = GRID_SIDE - 1

#: Canonical column order for the built-in true model.
TRUE_FEATURE_NAMES = ["u", "v", "X1", "X2", "X3", "X4"]
TRUE_GEO_NAMES = ["u", "v"]

CSV_COLUMNS = ["u", "v", "X1", "X2", "X3", "X4", "y_signal", "y", "f0", "beta1", "beta2"]


def _check_coords(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u > COORD_MAX) or np.any(v < 0) or np.any(v > COORD_MAX):
        raise DataError(f"coordinates must lie in [0, {COORD_MAX}]")
    return u, v


def intrinsic_surface(u, v):
    """Dome-shaped pure location effect; zero on the u=0 and v=0 edges."""
    u, v = _check_coords(u, v)
    scale = 6.0 / 12.0**4
    return scale * (12.5**2 - (12.5 - u / 2.0) ** 2) * (12.5**2 - (12.5 - v / 2.0) ** 2)


def beta1_surface(u, v):
    """South-west to north-east linear gradient with grid mean 3."""
    u, v = _check_coords(u, v)
    return 1.0 + (2.0 / 49.0) * (u + v)


def beta2_surface(u, v):
    """Mirror image of beta1 across the grid's vertical axis."""
    u, v = _check_coords(u, v)
    return 1.0 + (2.0 / 49.0) * ((49.0 - u) + v)


def dgp_components(u, v, x1, x2, x3, x4):
    """The five additive signal components at the given points."""
    f0 = intrinsic_surface(u, v)
    f1 = beta1_surface(u, v) * np.asarray(x1, dtype=np.float64)
    f2 = beta2_surface(u, v) * np.asarray(x2, dtype=np.float64)
    f3 = 2.0 * np.asarray(x3, dtype=np.float64)
    f4 = np.asarray(x4, dtype=np.float64) ** 2
    return f0, f1, f2, f3, f4


@dataclass
class SimulatedDataset:
    coords: np.ndarray
    X: np.ndarray
    y_signal: np.ndarray
    y: np.ndarray
    f0: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    seed: int
    noise_sd: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def feature_matrix(self) -> np.ndarray:
        """n x 6 matrix in TRUE_FEATURE_NAMES order, ready for explanation."""
        return np.hstack([self.coords, self.X])

    def theoretical_r2(self) -> float:
        """Share of response variance carried by the signal on this sample."""
        signal_var = float(np.var(self.y_signal))
        return signal_var / (signal_var + self.noise_sd**2)


def generate_dataset(seed: int, noise_sd: float = 1.0,
                     n_override: int | None = None) -> SimulatedDataset:
    """Draw features U(-2, 2) on the full grid and assemble the response.

    ``n_override`` keeps a without-replacement subsample of grid cells (in
    grid order) for fast runs; the full grid has 2,500 cells.
    """
    if noise_sd < 0:
        raise DataError("noise_sd must be non-negative")
    n_full = GRID_SIDE * GRID_SIDE
    if n_override is not None and not 1 <= n_override <= n_full:
        raise DataError(f"n_override must be in [1, {n_full}]")
    rng = np.random.default_rng(seed)
    u = np.repeat(np.arange(GRID_SIDE, dtype=np.float64), GRID_SIDE)
    v = np.tile(np.arange(GRID_SIDE, dtype=np.float64), GRID_SIDE)
    X = rng.uniform(-2.0, 2.0, size=(n_full, 4))
    noise = noise_sd * rng.standard_normal(n_full)
    if n_override is not None:
        keep = np.sort(rng.choice(n_full, size=n_override, replace=False))
        u, v, X, noise = u[keep], v[keep], X[keep], noise[keep]
    f0, f1, f2, f3, f4 = dgp_components(u, v, X[:, 0], X[:, 1], X[:, 2], X[:, 3])
    y_signal = f0 + f1 + f2 + f3 + f4
    return SimulatedDataset(
        coords=np.column_stack([u, v]),
        X=X,
        y_signal=y_signal,
        y=y_signal + noise,
        f0=f0,
        beta1=beta1_surface(u, v),
        beta2=beta2_surface(u, v),
        seed=seed,
        noise_sd=noise_sd,
    )


def dataset_to_csv(ds: SimulatedDataset, path) -> None:
    """Write the dataset with full round-trip precision (repr of each float)."""
    cols = np.column_stack([
        ds.coords[:, 0], ds.coords[:, 1], ds.X,
        ds.y_signal, ds.y, ds.f0, ds.beta1, ds.beta2,
    ])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in cols:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def surface_fidelity(recovered, truth, mask=None):
    """(r2, rmse) of a recovered surface against truth over unmasked entries."""
    recovered = np.asarray(recovered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recovered.shape != truth.shape:
        raise DataError("recovered and truth must have the same shape")
    if mask is None:
        mask = np.ones(truth.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    rec, tru = recovered[mask], truth[mask]
    if rec.size < 30:
        raise DataError(f"need at least 30 unmasked points, got {rec.size}")
    sst = float(np.sum((tru - tru.mean()) ** 2))
    if sst == 0.0:
        raise DataError("truth surface has no variance; fidelity undefined")
    sse = float(np.sum((rec - tru) ** 2))
    rmse = float(np.sqrt(np.mean((rec - tru) ** 2)))
    return 1.0 - sse / sst, rmse
