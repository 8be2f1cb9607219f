"""Constrained weighted least squares for one instance's coalition values.

The empty- and full-coalition rows carry infinite kernel weight, so they are
enforced exactly: the intercept is pinned to v(empty) and the joint location
coefficient is eliminated through the efficiency identity
sum(phi) = v(full).  The remaining unknowns are solved by weighted QR on the
finite-weight rows; no normal-equations inverse is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular

from .coalition import DesignSystem
from .errors import DataError, RankDeficiencyError


@dataclass
class WlsSolution:
    """Coefficients in design-column order [mains | interactions | GEO | intercept]."""

    phi: np.ndarray
    residual_norm: float
    condition_hint: float

    def split(self, k: int, interactions: bool):
        mains = self.phi[:k]
        if interactions:
            inters = self.phi[k : 2 * k]
        else:
            inters = np.zeros(k)
        return mains, inters, self.phi[-2], self.phi[-1]


class ReducedSolver:
    """Prefactorized solver for a fixed design, reused across instances.

    Building the QR factorization of the reduced weighted system once lets a
    batch of instances share all structural work; only the coalition-value
    vector changes per solve.
    """

    def __init__(self, system: DesignSystem):
        sizes = system.bits.sum(axis=1).astype(int)
        q = system.bits.shape[1]
        finite = np.isfinite(system.weights)
        expected_constrained = (sizes == 0) | (sizes == q)
        if not np.array_equal(~finite, expected_constrained):
            raise DataError("infinite-weight flags must sit exactly on the empty and full rows")
        self.system = system
        self.k = system.n_features
        self.interactions = system.interactions
        self.finite = finite
        self.empty_row = int(np.flatnonzero(sizes == 0)[0])
        self.full_row = int(np.flatnonzero(sizes == q)[0])

        geo = system.Z[finite, system.geo_column]
        cols = [system.Z[finite, j] - geo for j in range(self.k)]
        if self.interactions:
            cols += [system.Z[finite, self.k + j] - geo for j in range(self.k)]
        A = np.column_stack(cols)
        self._free_labels = [
            system.column_labels[j] for j in range(A.shape[1])
        ] if system.column_labels else [f"col{j}" for j in range(A.shape[1])]

        self.sqrt_w = np.sqrt(system.weights[finite])
        self.z_geo = geo
        self.Aw = A * self.sqrt_w[:, None]
        Q, R, piv = qr(self.Aw, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(self.Aw.shape) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
        rank = int(np.sum(diag > tol))
        if rank < A.shape[1]:
            deficient = [self._free_labels[j] for j in piv[rank:]]
            raise RankDeficiencyError(
                f"reduced WLS system is rank deficient (rank {rank} of {A.shape[1]}); "
                f"unidentifiable columns: {deficient}",
                columns=deficient,
            )
        self.Q, self.R, self.piv = Q, R, piv
        self.condition_hint = float(diag[0] / diag[-1]) if diag.size else 1.0

    def solve(self, v: np.ndarray) -> WlsSolution:
        v = np.asarray(v, dtype=np.float64)
        v0 = v[self.empty_row]
        v_full = v[self.full_row]
        rhs = v[self.finite] - v0 - self.z_geo * (v_full - v0)
        b = self.sqrt_w * rhs
        x_piv = solve_triangular(self.R, self.Q.T @ b)
        x = np.empty_like(x_piv)
        x[self.piv] = x_piv
        residual = b - self.Aw @ x
        phi_geo = v_full - v0 - x.sum()
        phi = np.concatenate([x, [phi_geo, v0]])
        return WlsSolution(
            phi=phi,
            residual_norm=float(np.linalg.norm(residual)),
            condition_hint=self.condition_hint,
        )


def solve_constrained_wls(system: DesignSystem) -> WlsSolution:
    """Solve one populated DesignSystem; see ReducedSolver for batch reuse."""
    if system.v is None:
        raise DataError("DesignSystem.v must be populated before solving")
    return ReducedSolver(system).solve(system.v)
