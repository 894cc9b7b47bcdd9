"""Linear -> FastLSTM -> Linear forecaster trained by truncated BPTT and Adam.

Arrays follow the feature-matrix convention at the public surface: inputs are
``(features, time)`` column blocks. Internally sequences are ``(time, batch,
features)`` so a batch of windows can be pushed through at once.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .pipeline import NormalizationStats

CELL_FORMS = ("standard", "paper_literal")
GATES = ("i", "f", "c", "o")
PARAM_NAMES = (
    "W_lin", "b_lin",
    "W_xi", "W_xf", "W_xc", "W_xo",
    "W_hi", "W_hf", "W_hc", "W_ho",
    "b_i", "b_f", "b_c", "b_o",
    "W_out", "b_out",
)  # fmt: skip
CHECKPOINT_SCHEMA_VERSION = 1


class NetworkError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Hyperparameters:
    input_dim: int = 11
    hidden_dim: int = 36
    output_dim: int = 4
    rho: int = 150
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init_range: float = 0.75
    max_epochs: int = 100
    early_stop_delta: float = 1e-6
    early_stop_patience: int = 5
    reset_state_each_epoch: bool = True
    seed: int = 0
    cell_form: str = "standard"

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim, self.rho) < 1:
            raise NetworkError("dimensions and rho must be >= 1")
        if not self.learning_rate > 0:
            raise NetworkError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise NetworkError("beta1 and beta2 must lie in [0, 1)")
        if self.init_range < 0:
            raise NetworkError("init_range must be >= 0")
        if self.max_epochs < 0:
            raise NetworkError("max_epochs must be >= 0")
        if self.cell_form not in CELL_FORMS:
            raise NetworkError(f"cell_form must be one of {CELL_FORMS}")

    def shapes(self) -> dict:
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        s = {"W_lin": (h, i), "b_lin": (h,), "W_out": (o, h), "b_out": (o,)}
        for g in GATES:
            s[f"W_x{g}"] = (h, h)
            s[f"W_h{g}"] = (h, h)
            s[f"b_{g}"] = (h,)
        return {name: s[name] for name in PARAM_NAMES}


@dataclass
class NetworkParameters:
    arrays: dict

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def items(self):
        return ((n, self.arrays[n]) for n in PARAM_NAMES)

    def copy(self) -> "NetworkParameters":
        return NetworkParameters({n: a.copy() for n, a in self.items()})

    @property
    def hidden_dim(self) -> int:
        return self.arrays["W_lin"].shape[0]

    def fused(self):
        """(W_x, W_h, b) with gate blocks stacked in i, f, c, o order."""
        a = self.arrays
        return (
            np.vstack([a[f"W_x{g}"] for g in GATES]),
            np.vstack([a[f"W_h{g}"] for g in GATES]),
            np.concatenate([a[f"b_{g}"] for g in GATES]),
        )

    def equals(self, other: "NetworkParameters") -> bool:
        return all(np.array_equal(a, other[n]) for n, a in self.items())


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: Optional[int] = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, p: NetworkParameters) -> "AdamState":
        return cls({n: np.zeros_like(a) for n, a in p.items()}, {n: np.zeros_like(a) for n, a in p.items()}, 0)


@dataclass
class TrainingLog:
    epoch_losses: list = field(default_factory=list)
    stopped_early: bool = False
    adam_state: Optional[AdamState] = None

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)


def init_params(h: Hyperparameters) -> NetworkParameters:
    """Uniform(-init_range, init_range) for every weight and bias, drawn in PARAM_NAMES order."""
    rng = np.random.default_rng(h.seed)
    r = float(h.init_range)
    return NetworkParameters({name: rng.uniform(-r, r, size=shape) for name, shape in h.shapes().items()})


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _check_finite(arr, layer: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NetworkError(f"non-finite values in {layer} layer")


def _forward(p: NetworkParameters, X: np.ndarray, state: LstmState, cell_form: str, keep: bool):
    """X: (T, B, in). Returns outputs (T, B, out), final state and (optionally) a cache."""
    Wx, Wh, b = p.fused()
    H = p.hidden_dim
    U = X @ p["W_lin"].T + p["b_lin"]
    _check_finite(U, "linear")
    Zx = U @ Wx.T + b
    T, B = X.shape[:2]
    h, c = state.h.reshape(B, H), state.c.reshape(B, H)
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    hs[0], cs[0] = h, c
    gates = np.empty((T, B, 4 * H)) if keep else None
    tanh_c = np.empty((T, B, H)) if keep else None
    literal = cell_form == "paper_literal"
    WhT = Wh.T
    for t in range(T):
        z = Zx[t] + h @ WhT
        act = np.empty_like(z)
        act[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        act[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        if literal:
            c = f * c + g
            tc = np.tanh(c)
            h = tc
        else:
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
        hs[t + 1], cs[t + 1] = h, c
        if keep:
            gates[t] = act
            tanh_c[t] = tc
    _check_finite(cs, "fastlstm")
    Y = hs[1:] @ p["W_out"].T + p["b_out"]
    _check_finite(Y, "output")
    final = LstmState(c.copy(), h.copy())
    cache = (X, U, hs, cs, gates, tanh_c) if keep else None
    return Y, final, cache


def _as_sequence(columns: np.ndarray) -> np.ndarray:
    cols = np.asarray(columns, dtype=float)
    if cols.ndim != 2:
        raise NetworkError("expected a (features, time) block")
    return cols.T[:, None, :]


def forward_step(p: NetworkParameters, s: LstmState, x, cell_form: str = "standard"):
    """One time step: ``(y, new_state)`` for a single input vector."""
    x = np.asarray(x, dtype=float)
    _check_finite(x, "input")
    Y, s2, _ = _forward(p, x.reshape(1, 1, -1), s, cell_form, keep=False)
    return Y[0, 0], LstmState(s2.c.reshape(-1), s2.h.reshape(-1))


def forward_sequence(p: NetworkParameters, columns, state: Optional[LstmState] = None, cell_form: str = "standard"):
    """Run over a ``(features, T)`` block; return outputs as ``(out, T)`` and the final state."""
    X = _as_sequence(columns)
    state = state or LstmState.zeros(p.hidden_dim)
    Y, s2, _ = _forward(p, X, state, cell_form, keep=False)
    return Y[:, 0, :].T, LstmState(s2.c.reshape(-1), s2.h.reshape(-1))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise NetworkError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def bptt_gradients(
    p: NetworkParameters,
    inputs,
    targets,
    *,
    rho: Optional[int] = None,
    state: Optional[LstmState] = None,
    cell_form: str = "standard",
    loss_scale: float = 1.0,
):
    """Exact gradients of ``loss_scale * mse(outputs, targets)`` over one window.

    ``inputs`` is ``(in, T)``, ``targets`` is ``(out, T)``. Gradient flow is cut
    at the window start (the incoming state is treated as a constant).
    Returns ``(grads, loss, final_state)`` where ``grads`` maps parameter names
    to arrays.
    """
    X = _as_sequence(inputs)
    Tgt = np.asarray(targets, dtype=float).T[:, None, :]
    T = X.shape[0]
    if rho is not None and T != rho:
        raise NetworkError(f"window has {T} columns, rho is {rho}")
    if Tgt.shape[0] != T:
        raise NetworkError("inputs and targets differ in length")
    H = p.hidden_dim
    state = state or LstmState.zeros(H)
    Y, final, (X, U, hs, cs, gates, tanh_c) = _forward(p, X, state, cell_form, keep=True)
    resid = Y - Tgt
    loss = loss_scale * float(np.mean(resid**2))
    dY = (2.0 * loss_scale / resid.size) * resid  # (T, B, out)

    Wx, Wh, _ = p.fused()
    W_out = p["W_out"]
    dHs = dY @ W_out  # (T, B, H)
    dZ = np.empty_like(gates)
    dh_next = np.zeros((1, H))
    dc_next = np.zeros((1, H))
    literal = cell_form == "paper_literal"
    for t in range(T - 1, -1, -1):
        act = gates[t]
        i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        tc = tanh_c[t]
        dh = dHs[t] + dh_next
        dz = dZ[t]
        if literal:
            dc = dh * (1.0 - tc * tc) + dc_next
            dz[:, :H] = 0.0
            dz[:, 2 * H : 3 * H] = dc * (1.0 - g * g)
            dz[:, 3 * H :] = 0.0
        else:
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        dh_next = dz @ Wh
        dc_next = dc * f

    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    dZf, Uf, Xf = flat(dZ), flat(U), flat(X)
    dWx = dZf.T @ Uf
    dWh = dZf.T @ flat(hs[:-1])
    db = dZf.sum(axis=0)
    dU = dZf @ Wx
    grads = {
        "W_lin": dU.T @ Xf,
        "b_lin": dU.sum(axis=0),
        "W_out": flat(dY).T @ flat(hs[1:]),
        "b_out": flat(dY).sum(axis=0),
    }
    for k, gname in enumerate(GATES):
        rows = slice(k * H, (k + 1) * H)
        grads[f"W_x{gname}"] = dWx[rows]
        grads[f"W_h{gname}"] = dWh[rows]
        grads[f"b_{gname}"] = db[rows]
    final = LstmState(final.c.reshape(-1), final.h.reshape(-1))
    return {n: grads[n] for n in PARAM_NAMES}, loss, final


def adam_step(p: NetworkParameters, g: dict, a: AdamState, h: Hyperparameters):
    """Bias-corrected Adam update; returns new ``(params, state)``."""
    t = a.t + 1
    b1, b2 = h.beta1, h.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, theta in p.items():
        grad = g[name]
        m = b1 * a.m[name] + (1.0 - b1) * grad
        v = b2 * a.v[name] + (1.0 - b2) * grad * grad
        m_hat = m / c1
        v_hat = v / c2
        new_p[name] = theta - h.learning_rate * m_hat / (np.sqrt(v_hat) + h.epsilon)
        new_m[name], new_v[name] = m, v
    return NetworkParameters(new_p), AdamState(new_m, new_v, t)


def window_starts(n_samples: int, rho: int) -> list[int]:
    """Contiguous stride-``rho`` windows aligned to the end of the data.

    Any remainder shorter than ``rho`` is dropped from the oldest end so the
    newest samples are always trained on.
    """
    w = n_samples // rho
    first = n_samples - w * rho
    return [first + k * rho for k in range(w)]


def _columns(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=float)


def train(
    m,
    h: Hyperparameters,
    *,
    params: Optional[NetworkParameters] = None,
    adam: Optional[AdamState] = None,
    max_epochs: Optional[int] = None,
):
    """Fit on a normalized ``(features, N)`` matrix; targets are the next column's OHLC rows.

    ``params``/``adam`` continue an earlier run instead of re-initialising.
    """
    values = _columns(m)
    if values.shape[0] != h.input_dim:
        raise NetworkError(f"matrix has {values.shape[0]} rows, input_dim is {h.input_dim}")
    n_samples = values.shape[1] - 1
    if n_samples < h.rho:
        raise NetworkError(f"training needs at least rho + 1 = {h.rho + 1} columns, got {values.shape[1]}")
    inputs = values[:, :-1]
    targets = values[: h.output_dim, 1:]
    p = params.copy() if params is not None else init_params(h)
    a = adam if adam is not None else AdamState.zeros_like(p)
    epochs = h.max_epochs if max_epochs is None else max_epochs
    log = TrainingLog(adam_state=a)
    starts = window_starts(n_samples, h.rho)
    state = LstmState.zeros(h.hidden_dim)
    for epoch in range(epochs):
        if h.reset_state_each_epoch or epoch == 0:
            state = LstmState.zeros(h.hidden_dim)
        losses = []
        for s in starts:
            grads, loss, state = bptt_gradients(
                p, inputs[:, s : s + h.rho], targets[:, s : s + h.rho], state=state, cell_form=h.cell_form
            )
            p, a = adam_step(p, grads, a, h)
            losses.append(loss)
        log.epoch_losses.append(float(np.mean(losses)))
        k = h.early_stop_patience
        if k and len(log.epoch_losses) > k and abs(log.epoch_losses[-1] - log.epoch_losses[-1 - k]) < h.early_stop_delta:
            log.stopped_early = True
            break
    log.adam_state = a
    return p, log


def predict_next(p: NetworkParameters, recent, *, rho: Optional[int] = None, cell_form: str = "standard") -> np.ndarray:
    """Output after running the last ``rho`` columns from a zero state (normalized diff space)."""
    cols = np.asarray(recent, dtype=float)
    if rho is not None and cols.shape[1] != rho:
        raise NetworkError(f"prediction window has {cols.shape[1]} columns, rho is {rho}")
    Y, _ = forward_sequence(p, cols, cell_form=cell_form)
    return Y[:, -1]


def predict_batch(p: NetworkParameters, windows, cell_form: str = "standard") -> np.ndarray:
    """Vectorized :func:`predict_next` over ``(B, features, rho)`` windows; returns ``(B, out)``."""
    W = np.asarray(windows, dtype=float)
    X = np.transpose(W, (2, 0, 1))  # (T, B, in)
    Y, _, _ = _forward(p, X, LstmState.zeros(p.hidden_dim, W.shape[0]), cell_form, keep=False)
    return Y[-1]


# --------------------------------------------------------------------------- checkpoints


@dataclass
class ModelBundle:
    params: NetworkParameters
    stats: NormalizationStats
    hyper: Hyperparameters
    adam: Optional[AdamState] = None
    extra: dict = field(default_factory=dict)

    def predict_next(self, recent) -> np.ndarray:
        return predict_next(self.params, recent, rho=self.hyper.rho, cell_form=self.hyper.cell_form)


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def _decode(d: dict, where: str) -> np.ndarray:
    for key in ("shape", "data"):
        if key not in d:
            raise CheckpointError(f"checkpoint: missing field '{where}.{key}'")
    arr = np.array(d["data"], dtype=float)
    if arr.size != math.prod(d["shape"]):
        raise CheckpointError(f"checkpoint: '{where}' data length does not match its shape")
    return arr.reshape(d["shape"])


def checkpoint_dict(p, stats, h, adam=None, extra=None) -> dict:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "hyperparameters": asdict(h),
        "normalization": stats.to_dict(),
        "weights": {n: _encode(a) for n, a in p.items()},
    }
    if adam is not None:
        doc["optimizer"] = {
            "t": adam.t,
            "m": {n: _encode(adam.m[n]) for n in PARAM_NAMES},
            "v": {n: _encode(adam.v[n]) for n in PARAM_NAMES},
        }
    if extra:
        doc["extra"] = extra
    return doc


def save_checkpoint(p: NetworkParameters, stats: NormalizationStats, h: Hyperparameters, path, adam=None, extra=None):
    """Write a versioned JSON checkpoint. Floats use shortest round-trip repr, so reload is bit exact."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(p, stats, h, adam, extra), fh, sort_keys=True)
        fh.write("\n")


def _require(doc: dict, key: str, where: str = "") -> object:
    if not isinstance(doc, dict) or key not in doc:
        raise CheckpointError(f"checkpoint: missing field '{where}{key}'")
    return doc[key]


def bundle_from_dict(doc: dict) -> ModelBundle:
    version = _require(doc, "schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(f"checkpoint: schema_version {version} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})")
    hp = _require(doc, "hyperparameters")
    known = {f.name for f in fields(Hyperparameters)}
    unknown = set(hp) - known
    if unknown:
        raise CheckpointError(f"checkpoint: unknown hyperparameter(s) {sorted(unknown)}")
    h = Hyperparameters(**hp)
    try:
        stats = NormalizationStats.from_dict(_require(doc, "normalization"))
    except ValueError as exc:
        raise CheckpointError(f"checkpoint: {exc}") from None
    weights = _require(doc, "weights")
    arrays = {n: _decode(_require(weights, n, "weights."), f"weights.{n}") for n in PARAM_NAMES}
    for name, shape in h.shapes().items():
        if arrays[name].shape != shape:
            raise CheckpointError(f"checkpoint: weights.{name} has shape {arrays[name].shape}, expected {shape}")
    adam = None
    if "optimizer" in doc:
        opt = doc["optimizer"]
        m = _require(opt, "m", "optimizer.")
        v = _require(opt, "v", "optimizer.")
        adam = AdamState(
            {n: _decode(_require(m, n, "optimizer.m."), f"optimizer.m.{n}") for n in PARAM_NAMES},
            {n: _decode(_require(v, n, "optimizer.v."), f"optimizer.v.{n}") for n in PARAM_NAMES},
            int(_require(opt, "t", "optimizer.")),
        )
    return ModelBundle(NetworkParameters(arrays), stats, h, adam, doc.get("extra", {}))


def load_checkpoint(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint: truncated or malformed JSON ({exc.msg} at char {exc.pos})") from None
    return bundle_from_dict(doc)
