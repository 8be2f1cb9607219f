"""Coalition enumeration, design matrix construction, kernel weights, masking.

Location columns act as one joint player, so a model with p features and g
location columns has q = p - g + 1 effective players.  Coalitions are
enumerated exhaustively over the q players; the design matrix carries one
column per non-location main effect, one per location-feature interaction,
one for the joint location player, and an intercept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, DataError, PredictorError

MAX_PLAYERS = 25

#: Weight flag for the fully-constrained empty/full coalitions.  The solver
#: treats these rows as exact constraints, never as large finite weights.
INFINITE_WEIGHT = math.inf


@dataclass(frozen=True)
class GeoSpec:
    """Names the feature columns and which of them jointly form the location player."""

    feature_names: list[str]
    geo_indices: tuple[int, ...]

    def __post_init__(self):
        p = len(self.feature_names)
        geo = tuple(self.geo_indices)
        object.__setattr__(self, "geo_indices", geo)
        if not geo:
            raise DataError("at least one location column is required")
        if len(set(geo)) != len(geo):
            raise DataError(f"location column indices must be distinct, got {geo}")
        if any(i < 0 or i >= p for i in geo):
            raise DataError(f"location column index out of range for p={p}: {geo}")
        if len(geo) >= p:
            raise DataError("at least one non-location feature is required")

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def g(self) -> int:
        return len(self.geo_indices)

    @property
    def q(self) -> int:
        """Effective player count: non-location features plus the joint location player."""
        return self.p - self.g + 1

    @property
    def non_geo_indices(self) -> tuple[int, ...]:
        geo = set(self.geo_indices)
        return tuple(i for i in range(self.p) if i not in geo)

    @property
    def non_geo_names(self) -> list[str]:
        return [self.feature_names[i] for i in self.non_geo_indices]

    @property
    def geo_names(self) -> list[str]:
        return [self.feature_names[i] for i in self.geo_indices]


@dataclass(frozen=True)
class Coalition:
    """One subset of the q effective players.

    ``bits[i]`` for i < q-1 toggles the i-th non-location feature (in column
    order); ``bits[q-1]`` toggles the joint location player.
    """

    bits: tuple[int, ...]

    @property
    def size(self) -> int:
        return sum(self.bits)

    @property
    def q(self) -> int:
        return len(self.bits)

    @property
    def geo_present(self) -> bool:
        return bool(self.bits[-1])


def enumerate_coalitions(q: int) -> list[Coalition]:
    """All 2^q coalitions, ordered by ascending little-endian integer value of bits.

    The first coalition is empty and the last is full.  q may not exceed
    MAX_PLAYERS: cost is exponential in q.
    """
    if q < 1:
        raise CapacityError(f"need at least one player, got q={q}")
    if q > MAX_PLAYERS:
        raise CapacityError(
            f"q={q} exceeds the hard cap of {MAX_PLAYERS} effective players "
            f"(2^q coalition enumeration is exponential in q)"
        )
    return [
        Coalition(tuple((code >> i) & 1 for i in range(q)))
        for code in range(2**q)
    ]


def coalition_matrix(q: int) -> np.ndarray:
    """2^q x q binary matrix; row r holds enumerate_coalitions(q)[r].bits."""
    if q < 1 or q > MAX_PLAYERS:
        enumerate_coalitions(q)  # raise with the canonical message
    codes = np.arange(2**q, dtype=np.int64)
    return ((codes[:, None] >> np.arange(q)) & 1).astype(np.float64)


def kernel_weight(q: int, s: int) -> float:
    """Shapley kernel regression weight for a size-s coalition among q players.

    Returns (q-1) / (C(q,s) * s * (q-s)); the empty and full coalitions get
    the INFINITE_WEIGHT flag and are enforced exactly by the solver.
    """
    if s < 0 or s > q:
        raise DataError(f"coalition size s={s} out of range for q={q}")
    if s == 0 or s == q:
        return INFINITE_WEIGHT
    return (q - 1) / (math.comb(q, s) * s * (q - s))


@dataclass
class DesignSystem:
    """Binary design matrix, kernel weights, and (per instance) coalition values.

    Column layout with interactions (k = number of non-location features):
    [main_0 .. main_{k-1} | inter_0 .. inter_{k-1} | GEO | intercept];
    classic layout (``interactions=False``): [main_0 .. main_{k-1} | GEO | intercept].
    """

    Z: np.ndarray
    weights: np.ndarray
    n_features: int
    interactions: bool
    bits: np.ndarray
    v: np.ndarray | None = None
    column_labels: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.Z.shape[0]

    @property
    def geo_column(self) -> int:
        return 2 * self.n_features if self.interactions else self.n_features

    @property
    def intercept_column(self) -> int:
        return self.geo_column + 1

    def with_values(self, v: np.ndarray) -> "DesignSystem":
        """Light per-instance copy; Z/weights/bits are shared read-only."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_rows,):
            raise DataError(f"expected {self.n_rows} coalition values, got shape {v.shape}")
        return replace(self, v=v)


def build_design_matrix(
    coalitions: list[Coalition],
    spec: GeoSpec,
    interactions: bool = True,
) -> DesignSystem:
    """Expand coalitions into the regression design with interaction columns.

    An interaction column is 1 only where both the feature and the joint
    location player are present; the intercept column is all ones.
    """
    q = spec.q
    if any(c.q != q for c in coalitions):
        raise DataError("coalition length does not match spec.q")
    bits = np.array([c.bits for c in coalitions], dtype=np.float64)
    k = q - 1
    mains = bits[:, :k]
    geo = bits[:, k : k + 1]
    ones = np.ones((bits.shape[0], 1))
    if interactions:
        Z = np.hstack([mains, mains * geo, geo, ones])
        labels = (
            [f"main:{n}" for n in spec.non_geo_names]
            + [f"inter:{n}" for n in spec.non_geo_names]
            + ["geo", "intercept"]
        )
    else:
        Z = np.hstack([mains, geo, ones])
        labels = [f"main:{n}" for n in spec.non_geo_names] + ["geo", "intercept"]
    sizes = bits.sum(axis=1).astype(int)
    weights = np.array([kernel_weight(q, s) for s in sizes], dtype=np.float64)
    return DesignSystem(
        Z=Z,
        weights=weights,
        n_features=k,
        interactions=interactions,
        bits=bits,
        column_labels=labels,
    )


@dataclass(frozen=True)
class BackgroundData:
    """Reference rows representing feature absence, with mixture weights."""

    rows: np.ndarray
    row_weights: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        w = np.asarray(self.row_weights, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "row_weights", w)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise DataError(f"background must be a non-empty 2-D matrix, got shape {rows.shape}")
        if w.shape != (rows.shape[0],):
            raise DataError("background row_weights length must match row count")
        if np.any(w < 0):
            raise DataError("background row_weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DataError(f"background row_weights must sum to 1, got {w.sum()!r}")

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


def player_column_map(spec: GeoSpec) -> list[np.ndarray]:
    """For each effective player, the raw column indices it controls."""
    cols = [np.array([i]) for i in spec.non_geo_indices]
    cols.append(np.array(spec.geo_indices))
    return cols


def synthesize_masked_samples(
    instance: np.ndarray,
    coalition: Coalition,
    spec: GeoSpec,
    background: BackgroundData,
) -> np.ndarray:
    """Background rows with the coalition's columns overwritten by the instance.

    A set location bit replaces all g location columns at once; absent players
    keep the background values.
    """
    instance = np.asarray(instance, dtype=np.float64)
    if instance.shape != (spec.p,):
        raise DataError(f"instance must have length p={spec.p}, got shape {instance.shape}")
    if coalition.q != spec.q:
        raise DataError(f"coalition has {coalition.q} players, spec requires q={spec.q}")
    if background.p != spec.p:
        raise DataError(f"background has {background.p} columns, spec requires p={spec.p}")
    out = background.rows.copy()
    for player, cols in enumerate(player_column_map(spec)):
        if coalition.bits[player]:
            out[:, cols] = instance[cols]
    return out


def masked_matrix_all_coalitions(
    instance: np.ndarray,
    bits: np.ndarray,
    spec: GeoSpec,
    background: BackgroundData,
) -> np.ndarray:
    """Stack synthesize_masked_samples for every coalition row of ``bits``.

    Returns a (n_coalitions * m) x p matrix in coalition-major order; used to
    amortize predictor calls.
    """
    instance = np.asarray(instance, dtype=np.float64)
    n_rows, m = bits.shape[0], background.m
    out = np.tile(background.rows, (n_rows, 1))
    col_map = player_column_map(spec)
    for player, cols in enumerate(col_map):
        present = np.repeat(bits[:, player].astype(bool), m)
        for c in cols:
            out[present, c] = instance[c]
    return out


def coalition_value(predict, instance, coalition, spec, background) -> float:
    """Weighted mean prediction over the masked samples for one coalition."""
    samples = synthesize_masked_samples(instance, coalition, spec, background)
    try:
        y = np.asarray(predict(samples), dtype=np.float64).reshape(-1)
    except Exception as exc:
        raise PredictorError(
            f"predictor failed on coalition bits={coalition.bits}: {exc}"
        ) from exc
    if y.shape[0] != samples.shape[0]:
        raise PredictorError(
            f"predictor returned {y.shape[0]} values for {samples.shape[0]} rows "
            f"(coalition bits={coalition.bits})"
        )
    return float(y @ background.row_weights)
