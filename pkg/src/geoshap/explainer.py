"""Per-instance attribution orchestration and the sklearn-style estimator.

For each explained row the engine evaluates all 2^q coalition values against
the background, solves the constrained weighted least squares system, and
maps the coefficients onto the result arrays.  The coalition system and its
QR factorization are built once per batch and shared read-only across
workers, so output is independent of scheduling.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .background import BackgroundSpec, select_background
from .coalition import (
    BackgroundData,
    GeoSpec,
    build_design_matrix,
    enumerate_coalitions,
    masked_matrix_all_coalitions,
)
from .errors import ConfigError, DataError, PredictorError
from .models import Predictor, as_predictor
from .solver import ReducedSolver

DEFAULT_MAX_BATCH_ROWS = 65_536


@dataclass
class GeoShapleyResult:
    """Attribution components for a batch of instances.

    ``base_value`` is the single global empty-coalition value; per instance,
    the location effect, the per-feature main effects, and the per-feature
    location interactions sum with it to the model prediction (the signed
    gap is kept in ``reconstruction_residual``).
    """

    base_value: float
    phi_geo: np.ndarray
    phi_main: np.ndarray
    phi_geo_interaction: np.ndarray
    prediction: np.ndarray
    reconstruction_residual: np.ndarray
    spec: GeoSpec
    instances: np.ndarray
    metadata: dict = field(default_factory=dict)
    failed_indices: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.phi_geo.shape[0]

    @property
    def feature_names(self) -> list:
        return list(self.spec.feature_names)

    @property
    def non_geo_names(self) -> list:
        return self.spec.non_geo_names

    def efficiency_residuals(self) -> np.ndarray:
        """Relative gap between summed components and the prediction, per instance."""
        total = (self.base_value + self.phi_geo + self.phi_main.sum(axis=1)
                 + self.phi_geo_interaction.sum(axis=1))
        return np.abs(total - self.prediction) / np.maximum(1.0, np.abs(self.prediction))


def _resolve_workers(workers) -> int:
    if workers is None:
        workers = 0
    workers = int(workers)
    if workers < 0:
        raise ConfigError(f"workers must be >= 0, got {workers}")
    if workers == 0:
        return min(os.cpu_count() or 1, 8)
    return workers


class _InstanceEngine:
    """Shared per-batch state: design system, factorization, predictor gate."""

    def __init__(self, predictor: Predictor, spec: GeoSpec, background: BackgroundData,
                 max_batch_rows: int):
        if background.p != spec.p:
            raise DataError(
                f"background has {background.p} columns but the spec names {spec.p} features"
            )
        if predictor.arity != spec.p:
            raise ConfigError(
                f"predictor arity {predictor.arity} does not match feature count {spec.p}"
            )
        self.predictor = predictor
        self.spec = spec
        self.background = background
        self.system = build_design_matrix(enumerate_coalitions(spec.q), spec)
        self.reduced = ReducedSolver(self.system)
        self.coalitions_per_call = max(1, int(max_batch_rows) // background.m)
        self._gate = None if predictor.concurrency_safe else threading.Lock()

    def _predict(self, M: np.ndarray) -> np.ndarray:
        if self._gate is None:
            y = self.predictor.predict(M)
        else:
            with self._gate:
                y = self.predictor.predict(M)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != M.shape[0]:
            raise PredictorError(
                f"predictor returned {y.shape[0]} values for {M.shape[0]} rows"
            )
        return y

    def coalition_values(self, x: np.ndarray):
        """All 2^q coalition values plus the raw-instance prediction."""
        bits = self.system.bits
        m = self.background.m
        n_coal = bits.shape[0]
        v = np.empty(n_coal)
        pred = None
        for start in range(0, n_coal, self.coalitions_per_call):
            stop = min(start + self.coalitions_per_call, n_coal)
            M = masked_matrix_all_coalitions(x, bits[start:stop], self.spec, self.background)
            last = stop == n_coal
            if last:
                M = np.vstack([M, x[None, :]])
            y = self._predict(M)
            if last:
                pred = float(y[-1])
                y = y[:-1]
            v[start:stop] = y.reshape(stop - start, m) @ self.background.row_weights
        return v, pred

    def explain_one(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.spec.p,):
            raise DataError(f"instance must have length p={self.spec.p}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("instance contains non-finite values")
        v, pred = self.coalition_values(x)
        sol = self.reduced.solve(v)
        k = self.spec.q - 1
        mains, inters, phi_geo, phi0 = sol.split(k, interactions=True)
        resid = phi0 + phi_geo + mains.sum() + inters.sum() - pred
        return mains, inters, phi_geo, phi0, pred, resid


def explain_instance(predict, instance, spec: GeoSpec, background: BackgroundData,
                     max_batch_rows: int = DEFAULT_MAX_BATCH_ROWS) -> GeoShapleyResult:
    """Explain a single instance; see explain_batch for datasets."""
    instance = np.asarray(instance, dtype=np.float64).reshape(-1)
    return explain_batch(predict, instance[None, :], spec, background,
                         workers=1, max_batch_rows=max_batch_rows)


def explain_batch(predict, X, spec: GeoSpec, background: BackgroundData,
                  workers: int = 1, seed=None,
                  max_batch_rows: int = DEFAULT_MAX_BATCH_ROWS,
                  on_error: str = "raise",
                  background_descriptor: str | None = None) -> GeoShapleyResult:
    """Explain every row of X.

    Results are assembled by input index, so the output is identical for any
    worker count.  ``on_error='raise'`` aborts on the first (lowest-index)
    failing instance; ``'skip'`` records the index in ``failed_indices`` and
    leaves NaNs in that row.
    """
    if on_error not in ("raise", "skip"):
        raise ConfigError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.p:
        raise DataError(f"X must be n x {spec.p}, got shape {X.shape}")
    if X.shape[0] < 1:
        raise DataError("X must contain at least one row")
    predictor = predict if isinstance(predict, Predictor) else as_predictor(predict, spec.p)
    engine = _InstanceEngine(predictor, spec, background, max_batch_rows)

    n, k = X.shape[0], spec.q - 1
    phi_geo = np.full(n, np.nan)
    phi_main = np.full((n, k), np.nan)
    phi_inter = np.full((n, k), np.nan)
    prediction = np.full(n, np.nan)
    residual = np.full(n, np.nan)
    base = np.full(n, np.nan)
    errors: dict[int, Exception] = {}

    def run(i: int) -> None:
        try:
            mains, inters, pg, phi0, pred, resid = engine.explain_one(X[i])
        except Exception as exc:
            errors[i] = exc
            return
        phi_main[i] = mains
        phi_inter[i] = inters
        phi_geo[i] = pg
        prediction[i] = pred
        residual[i] = resid
        base[i] = phi0

    n_workers = _resolve_workers(workers)
    if n_workers == 1 and on_error == "raise":
        for i in range(n):
            run(i)
            if i in errors:
                break
    elif n_workers == 1:
        for i in range(n):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            stride = max(1, 4 * n_workers)
            for start in range(0, n, stride):
                list(pool.map(run, range(start, min(start + stride, n))))
                if errors and on_error == "raise":
                    break

    if errors and on_error == "raise":
        i = min(errors)
        raise PredictorError(f"explanation failed at instance {i}: {errors[i]}") from errors[i]

    ok = np.flatnonzero(~np.isnan(base))
    base_value = float(base[ok[0]]) if ok.size else float("nan")
    metadata = {
        "predictor": predictor.descriptor,
        "background": background_descriptor or f"rows:{background.m}",
        "background_rows": int(background.m),
        "seed": seed,
        "workers": int(workers) if workers is not None else 0,
        "max_batch_rows": int(max_batch_rows),
    }
    return GeoShapleyResult(
        base_value=base_value,
        phi_geo=phi_geo,
        phi_main=phi_main,
        phi_geo_interaction=phi_inter,
        prediction=prediction,
        reconstruction_residual=residual,
        spec=spec,
        instances=X.copy(),
        metadata=metadata,
        failed_indices=sorted(errors),
    )


class GeoShapleyExplainer(BaseEstimator):
    """Location-aware Shapley attribution as a scikit-learn style estimator.

    Parameters
    ----------
    model : callable, object with ``predict``, or Predictor
        Batch prediction function over the full feature matrix (including the
        location columns).
    geo_cols : sequence of str or int
        Columns that jointly form the location player.
    background : str, array, or BackgroundData, default "full"
        Background strategy string (``full``, ``sample:k:seed``,
        ``kmeans:k:seed``, ``single:mean``), an explicit matrix (uniform
        weights), or a prebuilt BackgroundData.
    feature_names : sequence of str, optional
        Required when X is a bare array and geo_cols are names.
    workers : int, default 1
        Instance-level parallelism; 0 picks a machine-dependent default.
    on_error : "raise" or "skip", default "raise"
        Whether a failing instance aborts the batch or is flagged and skipped.
    """

    def __init__(self, model=None, geo_cols=None, background="full",
                 feature_names=None, workers=1, seed=0,
                 max_batch_rows=DEFAULT_MAX_BATCH_ROWS, on_error="raise"):
        self.model = model
        self.geo_cols = geo_cols
        self.background = background
        self.feature_names = feature_names
        self.workers = workers
        self.seed = seed
        self.max_batch_rows = max_batch_rows
        self.on_error = on_error

    def _resolve_names(self, X):
        if hasattr(X, "columns"):
            return [str(c) for c in X.columns]
        if self.feature_names is not None:
            return [str(c) for c in self.feature_names]
        return [f"x{j}" for j in range(X.shape[1])]

    def fit(self, X, y=None):
        """Resolve the feature layout, the predictor, and the background from X."""
        names = self._resolve_names(X)
        X = check_array(X, dtype=np.float64)
        if len(names) != X.shape[1]:
            raise ConfigError(
                f"feature_names has {len(names)} entries for {X.shape[1]} columns"
            )
        if self.geo_cols is None:
            raise ConfigError("geo_cols is required: name the location columns")
        geo_indices = []
        for col in self.geo_cols:
            if isinstance(col, str):
                if col not in names:
                    raise ConfigError(f"location column {col!r} not found in {names}")
                geo_indices.append(names.index(col))
            else:
                geo_indices.append(int(col))
        self.spec_ = GeoSpec(feature_names=names, geo_indices=tuple(geo_indices))

        if self.model is None:
            raise ConfigError("model is required")
        self.predictor_ = as_predictor(self.model, self.spec_.p)

        bg = self.background
        if isinstance(bg, BackgroundData):
            self.background_ = bg
            self.background_descriptor_ = f"rows:{bg.m}"
        elif isinstance(bg, str):
            spec = BackgroundSpec.parse(bg)
            self.background_ = select_background(X, spec)
            self.background_descriptor_ = str(spec)
        else:
            rows = check_array(bg, dtype=np.float64)
            self.background_ = BackgroundData(
                rows=rows, row_weights=np.full(rows.shape[0], 1.0 / rows.shape[0])
            )
            self.background_descriptor_ = f"rows:{rows.shape[0]}"
        self.n_features_in_ = X.shape[1]
        return self

    def explain(self, X) -> GeoShapleyResult:
        """Full attribution result for every row of X."""
        check_is_fitted(self, "spec_")
        X = check_array(X, dtype=np.float64)
        return explain_batch(
            self.predictor_, X, self.spec_, self.background_,
            workers=self.workers, seed=self.seed,
            max_batch_rows=self.max_batch_rows, on_error=self.on_error,
            background_descriptor=self.background_descriptor_,
        )

    def transform(self, X) -> np.ndarray:
        """Attribution components as a flat matrix [geo | mains | interactions]."""
        res = self.explain(X)
        return np.hstack([res.phi_geo[:, None], res.phi_main, res.phi_geo_interaction])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        names = self.spec_.non_geo_names
        return np.asarray(
            ["phi_geo"] + [f"phi_{n}" for n in names] + [f"phi_geo_x_{n}" for n in names],
            dtype=object,
        )
