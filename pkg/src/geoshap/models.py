"""Prediction function abstraction and the built-in predictors.

A predictor is anything with an ``arity``, a ``descriptor``, a
``concurrency_safe`` flag, and a batch ``predict``.  Besides the built-in
ordinary-least-squares and true-model predictors, external model processes
can be attached over a newline-delimited JSON protocol on their standard
streams, which keeps the core free of any ML framework imports.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from . import simulation
from .errors import DataError, PredictorError, ProtocolError, RankDeficiencyError


class Predictor:
    """Base predictor contract; subclasses fill in predict()."""

    descriptor: str = "predictor"
    arity: int = 0
    concurrency_safe: bool = True

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.predict(X)

    def _check_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.arity:
            raise DataError(
                f"{self.descriptor} expects batches of shape (k, {self.arity}), got {X.shape}"
            )
        return X


class CallablePredictor(Predictor):
    """Wraps a plain batch function or an object exposing .predict."""

    def __init__(self, fn, arity: int, descriptor: str = "callable",
                 concurrency_safe: bool = True):
        self._fn = fn.predict if hasattr(fn, "predict") else fn
        self.arity = int(arity)
        self.descriptor = descriptor
        self.concurrency_safe = concurrency_safe

    def predict(self, X):
        X = self._check_batch(X)
        y = np.asarray(self._fn(X), dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise PredictorError(
                f"{self.descriptor} returned {y.shape[0]} predictions for {X.shape[0]} rows"
            )
        return y


def as_predictor(model, arity: int, descriptor: str = "callable",
                 concurrency_safe: bool = True) -> Predictor:
    if isinstance(model, Predictor):
        return model
    return CallablePredictor(model, arity, descriptor, concurrency_safe)


@dataclass
class OlsModel(Predictor):
    """Linear model with intercept: predict(X) = coefficients[0] + X @ coefficients[1:]."""

    coefficients: np.ndarray
    r_squared: float = float("nan")
    residual_variance: float = float("nan")
    feature_names: list = field(default_factory=list)
    concurrency_safe: bool = True

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        self.arity = self.coefficients.shape[0] - 1
        self.descriptor = f"builtin:ols(p={self.arity})"

    def predict(self, X):
        X = self._check_batch(X)
        return self.coefficients[0] + X @ self.coefficients[1:]


def ols_fit(X, y, feature_names=None) -> OlsModel:
    """Least squares with intercept via pivoted QR; exact on noiseless linear data.

    Collinear columns are reported by name rather than silently dropped.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise DataError("X must be 2-D")
    n, p = X.shape
    if y.shape[0] != n:
        raise DataError("X and y row counts differ")
    if n <= p:
        raise DataError(f"need more rows than features to fit, got n={n}, p={p}")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    design = np.hstack([np.ones((n, 1)), X])
    Q, R, piv = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(design.shape) * np.finfo(np.float64).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < p + 1:
        labels = ["intercept"] + names
        collinear = [labels[j] for j in piv[rank:]]
        raise RankDeficiencyError(
            f"design matrix is rank deficient; collinear columns: {collinear}",
            columns=collinear,
        )
    from scipy.linalg import solve_triangular

    beta_piv = solve_triangular(R, Q.T @ y)
    beta = np.empty_like(beta_piv)
    beta[piv] = beta_piv
    fitted = design @ beta
    sse = float(np.sum((y - fitted) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    resid_var = sse / (n - p - 1) if n > p + 1 else 0.0
    return OlsModel(coefficients=beta, r_squared=r2, residual_variance=resid_var,
                    feature_names=names)


def true_model_predict(inputs) -> np.ndarray:
    """Noiseless simulation response at (u, v, X1, X2, X3, X4) rows."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != 6:
        raise DataError(f"true model expects k x 6 inputs, got shape {inputs.shape}")
    parts = simulation.dgp_components(*(inputs[:, j] for j in range(6)))
    return np.sum(parts, axis=0)


class TrueModel(Predictor):
    """Closed-form simulation response as a predictor."""

    def __init__(self):
        self.arity = 6
        self.descriptor = "builtin:truemodel"
        self.concurrency_safe = True

    def predict(self, X):
        X = self._check_batch(X)
        return true_model_predict(X)


class BridgePredictor(Predictor):
    """Client side of the model-bridge wire protocol.

    Frames are newline-delimited JSON over the child's standard streams, with
    floats serialized as shortest round-trip decimals.  Requests carry
    monotonically increasing ids; unless the server advertises parallel
    capability, only one request is in flight at a time.
    """

    def __init__(self, command, arity: int, names=None, timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.arity = int(arity)
        self.descriptor = f"cmd:{' '.join(argv)}"
        self.timeout = timeout
        self._stderr_tail: deque = deque(maxlen=50)
        self._pending: dict[int, queue.Queue] = {}
        self._pending_lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._request_lock = threading.Lock()
        self._next_id = 0
        self._closed = False
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1,
            )
        except OSError as exc:
            raise PredictorError(f"could not launch bridge command {argv}: {exc}") from exc
        self._ready_queue: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._drainer = threading.Thread(target=self._drain_stderr, daemon=True)
        self._drainer.start()
        self._handshake(names)

    # -- wire helpers ------------------------------------------------------

    def _send(self, frame: dict) -> None:
        line = json.dumps(frame)
        with self._send_lock:
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as exc:
                raise PredictorError(
                    f"bridge server pipe closed ({self._stderr_context()})"
                ) from exc

    def _read_loop(self) -> None:
        for line in self._proc.stdout:
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                frame = json.loads(line)
                if not isinstance(frame, dict):
                    raise ValueError("frame is not an object")
            except ValueError:
                self._broadcast(ProtocolError(f"malformed bridge frame: {line!r}"))
                continue
            ftype = frame.get("type")
            if ftype in ("ready",):
                self._ready_queue.put(frame)
            elif ftype in ("prediction", "error"):
                fid = frame.get("id")
                with self._pending_lock:
                    slot = self._pending.get(fid)
                if slot is None:
                    self._broadcast(
                        ProtocolError(f"bridge reply with unknown id {fid!r}: {line!r}")
                    )
                else:
                    slot.put(frame)
            else:
                self._broadcast(ProtocolError(f"unexpected bridge frame type: {line!r}"))
        self._broadcast(PredictorError(
            f"bridge server closed its output stream ({self._stderr_context()})"
        ))

    def _drain_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _stderr_context(self) -> str:
        tail = "; ".join(self._stderr_tail) or "no diagnostics"
        return f"server stderr: {tail}"

    def _broadcast(self, exc: Exception) -> None:
        self._ready_queue.put(exc)
        with self._pending_lock:
            for slot in self._pending.values():
                slot.put(exc)

    @staticmethod
    def _take(q_: queue.Queue, timeout: float, what: str):
        try:
            item = q_.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError(f"timed out after {timeout}s waiting for {what}")
        if isinstance(item, Exception):
            raise item
        return item

    # -- protocol ----------------------------------------------------------

    def _handshake(self, names) -> None:
        names = list(names) if names is not None else [f"x{j}" for j in range(self.arity)]
        self._send({"type": "hello", "protocol": 1, "features": self.arity, "names": names})
        ready = self._take(self._ready_queue, self.timeout, "ready frame")
        if ready.get("type") != "ready":
            raise ProtocolError(f"expected ready frame, got {ready!r}")
        server_p = ready.get("features")
        if server_p != self.arity:
            raise ProtocolError(
                f"arity mismatch: client announced {self.arity} features, "
                f"server is ready with {server_p}"
            )
        self.concurrency_safe = bool(ready.get("parallel", False))

    def predict(self, X):
        X = self._check_batch(X)
        if self._closed:
            raise PredictorError("bridge handle already closed")
        if self.concurrency_safe:
            return self._request(X)
        with self._request_lock:
            return self._request(X)

    def _request(self, X) -> np.ndarray:
        slot: queue.Queue = queue.Queue()
        with self._pending_lock:
            fid = self._next_id
            self._next_id += 1
            self._pending[fid] = slot
        try:
            self._send({"type": "predict", "id": fid, "x": X.tolist()})
            reply = self._take(slot, self.timeout, f"prediction id={fid}")
        finally:
            with self._pending_lock:
                self._pending.pop(fid, None)
        if reply.get("type") == "error":
            raise PredictorError(f"bridge server error for id={fid}: {reply.get('message')}")
        y = np.asarray(reply.get("y", []), dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ProtocolError(
                f"bridge returned {y.shape[0]} predictions for {X.shape[0]} rows (id={fid})"
            )
        return y

    def close(self, timeout: float | None = None) -> int:
        """Send the shutdown frame and reap the server; returns its exit code."""
        if self._closed:
            return self._proc.returncode
        self._closed = True
        try:
            self._send({"type": "shutdown"})
        except PredictorError:
            pass
        try:
            return self._proc.wait(timeout=timeout or self.timeout)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            return self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


def bridge_connect(command, arity: int, names=None, timeout: float = 30.0) -> BridgePredictor:
    """Launch an external model process and complete the hello/ready handshake."""
    return BridgePredictor(command, arity, names=names, timeout=timeout)
