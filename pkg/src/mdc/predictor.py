"""Mean-parameterization predictors ``mu(x_t, t)``.

Every predictor maps a batch of partially masked sequences ``xt`` (shape
``(B, N)``, ids in ``[0, m]``) and times ``t`` (shape ``(B,)``) to per-position
distributions over the ``m`` clean values. Positions that are not masked carry
their own value through (one-hot), regardless of the network output.

Gradients are hand-written: ``log_probs`` records what ``backward`` needs, and
``backward`` maps upstream gradients on the log-probabilities to a flat
gradient over ``params``.
"""

from __future__ import annotations

import math

import numpy as np


class NumericError(FloatingPointError):
    pass


class PredictorUsageError(RuntimeError):
    pass


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _batch(xt, t):
    xt = np.asarray(xt)
    squeeze = xt.ndim == 1
    if squeeze:
        xt = xt[None]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt.shape[0],))
    return xt, t, squeeze


class Predictor:
    """Base class. Subclasses implement ``_logits`` and ``_backward_logits``."""

    m: int
    params: np.ndarray

    def __init__(self):
        self._cache = None

    # subclass hooks ---------------------------------------------------------
    def _logits(self, xt: np.ndarray, t: np.ndarray):
        """Return ``(logits (B, N, m), cache)``."""
        raise NotImplementedError

    def _backward_logits(self, dlogits: np.ndarray, cache) -> np.ndarray:
        raise NotImplementedError

    # public API ---------------------------------------------------------------
    def log_probs(self, xt, t, temperature: float = 1.0) -> np.ndarray:
        """``log mu`` with carry-over; unmasked rows are ``log onehot(xt)``."""
        if not np.all(np.isfinite(self.params)):
            raise NumericError("predictor parameters are not finite")
        xt, t, squeeze = _batch(xt, t)
        logits, cache = self._logits(xt, t)
        lp = log_softmax(logits / temperature)
        masked = xt == self.m
        self._cache = (xt.shape, masked, np.exp(lp), temperature, cache)
        out = np.where(masked[..., None], lp, -np.inf)
        rows, cols = np.nonzero(~masked)
        out[rows, cols, xt[rows, cols]] = 0.0
        return out[0] if squeeze else out

    def raw_logits(self, xt, t) -> np.ndarray:
        """Network output before normalization and carry-over; records nothing."""
        xt, t, squeeze = _batch(xt, t)
        z = self._logits(xt, t)[0]
        return z[0] if squeeze else z

    def predict(self, xt, t, temperature: float = 1.0) -> np.ndarray:
        return np.exp(self.log_probs(xt, t, temperature))

    def backward(self, grad_logp) -> np.ndarray:
        """Gradient over ``params`` given d(loss)/d(log mu) from the last forward pass."""
        if self._cache is None:
            raise PredictorUsageError("backward called before a recorded forward pass")
        shape, masked, probs, temperature, cache = self._cache
        g = np.asarray(grad_logp, dtype=np.float64)
        if g.ndim == 2 and len(shape) == 2 and shape[0] == 1:
            g = g[None]
        if g.shape != shape + (self.m,):
            raise PredictorUsageError(f"upstream gradient shape {g.shape} does not match forward pass {shape + (self.m,)}")
        g = np.where(masked[..., None], g, 0.0)
        dz = (g - probs * g.sum(axis=-1, keepdims=True)) / temperature
        return self._backward_logits(dz, cache)

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat

    def arch(self) -> dict:
        raise NotImplementedError


# -----------------------------------------------------------------------------
# tabular
# -----------------------------------------------------------------------------

def _encode_full(xt, m):
    base = m + 1
    code = np.zeros(xt.shape[0], dtype=np.int64)
    for n in range(xt.shape[1]):
        code = code * base + xt[:, n]
    return code


def _nearest_unmasked(xt, m, max_dist, reverse=False):
    """State index of the nearest unmasked neighbour on one side.

    0 means none within ``max_dist``; otherwise ``1 + value * max_dist + (dist - 1)``.
    """
    B, N = xt.shape
    out = np.zeros((B, N), dtype=np.int64)
    last_val = np.full(B, -1)
    last_pos = np.zeros(B, dtype=np.int64)
    order = range(N - 1, -1, -1) if reverse else range(N)
    for n in order:
        dist = np.abs(n - last_pos)
        ok = (last_val >= 0) & (dist <= max_dist)
        out[:, n] = np.where(ok, 1 + np.maximum(last_val, 0) * max_dist + dist - 1, 0)
        seen = xt[:, n] != m
        last_val = np.where(seen, xt[:, n], last_val)
        last_pos = np.where(seen, n, last_pos)
    return out


class TabularPredictor(Predictor):
    """One logit vector per context key; time-independent.

    ``context`` selects how keys are formed:

    - ``shared``: a single logit vector for every position.
    - ``positional``: one vector per position.
    - ``full``: one vector per (position, full x_t); only for tiny ``m``, ``N``.
    - ``neighbor``: nearest unmasked value and distance on each side, capped at
      ``max_dist``. Sufficient for first-order Markov sources.
    """

    CONTEXTS = ("shared", "positional", "full", "neighbor")

    def __init__(self, m: int, seq_len: int = 1, context: str = "shared", max_dist: int = 8,
                 table=None):
        super().__init__()
        if context not in self.CONTEXTS:
            raise ValueError(f"unknown tabular context {context!r}")
        self.m, self.seq_len, self.context, self.max_dist = m, seq_len, context, max_dist
        if context == "shared":
            keys = 1
        elif context == "positional":
            keys = seq_len
        elif context == "full":
            keys = seq_len * (m + 1) ** seq_len
            if keys > 5_000_000:
                raise ValueError("full-context table too large")
        else:
            side = 1 + m * max_dist
            keys = side * side
        self.num_keys = keys
        self.params = np.zeros(keys * m)
        self.table = self.params.reshape(keys, m)
        if table is not None:
            self.set_params(np.asarray(table, dtype=np.float64).reshape(-1))

    def keys(self, xt: np.ndarray) -> np.ndarray:
        B, N = xt.shape
        if N != self.seq_len and self.context != "shared":
            raise ValueError(f"expected sequences of length {self.seq_len}, got {N}")
        if self.context == "shared":
            return np.zeros((B, N), dtype=np.int64)
        if self.context == "positional":
            return np.broadcast_to(np.arange(N), (B, N))
        if self.context == "full":
            code = _encode_full(xt, self.m)
            return np.arange(N)[None, :] * (self.m + 1) ** N + code[:, None]
        left = _nearest_unmasked(xt, self.m, self.max_dist)
        right = _nearest_unmasked(xt, self.m, self.max_dist, reverse=True)
        return left * (1 + self.m * self.max_dist) + right

    def _logits(self, xt, t):
        k = self.keys(xt)
        return self.table[k], k

    def _backward_logits(self, dz, keys):
        grad = np.zeros_like(self.table)
        np.add.at(grad, keys.reshape(-1), dz.reshape(-1, self.m))
        return grad.reshape(-1)

    def arch(self) -> dict:
        return {"kind": "tabular", "m": self.m, "seq_len": self.seq_len,
                "context": self.context, "max_dist": self.max_dist}


# -----------------------------------------------------------------------------
# MLP
# -----------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(u)
    y = 0.5 * x * (1.0 + th)
    dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return y, dy


def time_features(t: np.ndarray) -> np.ndarray:
    """(t, log t, clamped logit(1 - t)) scaled to O(1)."""
    t = np.clip(t, 1e-6, 1.0 - 1e-6)
    lam = np.clip(np.log1p(-t) - np.log(t), -12.0, 12.0)
    return np.stack([t, np.log(t) / 6.0, lam / 6.0], axis=-1)


class MlpPredictor(Predictor):
    """Token embeddings of the whole sequence plus time features -> GELU MLP -> N*m logits."""

    N_TIME = 3

    def __init__(self, m: int, seq_len: int, hidden: int = 128, layers: int = 2,
                 embed_dim: int = 16, seed: int = 0):
        super().__init__()
        self.m, self.seq_len, self.hidden, self.layers, self.embed_dim = m, seq_len, hidden, layers, embed_dim
        d_in = seq_len * embed_dim + self.N_TIME
        shapes = [("embed", (m + 1, embed_dim))]
        widths = [d_in] + [hidden] * layers
        for i in range(layers):
            shapes += [(f"W{i}", (widths[i], widths[i + 1])), (f"b{i}", (widths[i + 1],))]
        shapes += [("Wout", (widths[-1], seq_len * m)), ("bout", (seq_len * m,))]
        self._shapes = shapes
        self.params = np.zeros(sum(int(np.prod(s)) for _, s in shapes))
        self.p = {}
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.p[name] = self.params[off:off + size].reshape(shape)
            off += size
        self.init(seed)

    def init(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for name, shape in self._shapes:
            if name == "embed":
                self.p[name][...] = rng.normal(0.0, 1.0, shape)
            elif name.startswith("W"):
                self.p[name][...] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
            else:
                self.p[name][...] = 0.0
        self.p["Wout"][...] *= 0.1

    def _logits(self, xt, t):
        B, N = xt.shape
        if N != self.seq_len:
            raise ValueError(f"expected sequences of length {self.seq_len}, got {N}")
        h = np.concatenate([self.p["embed"][xt].reshape(B, -1), time_features(t)], axis=1)
        acts = [h]
        derivs = []
        for i in range(self.layers):
            z = h @ self.p[f"W{i}"] + self.p[f"b{i}"]
            h, dh = _gelu(z)
            acts.append(h)
            derivs.append(dh)
        out = h @ self.p["Wout"] + self.p["bout"]
        return out.reshape(B, N, self.m), (xt, acts, derivs)

    def _backward_logits(self, dz, cache):
        xt, acts, derivs = cache
        B, N = xt.shape
        g = {}
        d = dz.reshape(B, -1)
        g["Wout"] = acts[-1].T @ d
        g["bout"] = d.sum(axis=0)
        d = d @ self.p["Wout"].T
        for i in reversed(range(self.layers)):
            d = d * derivs[i]
            g[f"W{i}"] = acts[i].T @ d
            g[f"b{i}"] = d.sum(axis=0)
            d = d @ self.p[f"W{i}"].T
        d_emb = d[:, : N * self.embed_dim].reshape(B * N, self.embed_dim)
        g["embed"] = np.zeros_like(self.p["embed"])
        np.add.at(g["embed"], xt.reshape(-1), d_emb)
        return np.concatenate([g[name].reshape(-1) for name, _ in self._shapes])

    def arch(self) -> dict:
        return {"kind": "mlp", "m": self.m, "seq_len": self.seq_len, "hidden": self.hidden,
                "layers": self.layers, "embed_dim": self.embed_dim}


def build_predictor(arch: dict, seed: int = 0) -> Predictor:
    kind = arch.get("kind")
    if kind == "tabular":
        return TabularPredictor(arch["m"], arch.get("seq_len", 1), arch.get("context", "shared"),
                                arch.get("max_dist", 8))
    if kind == "mlp":
        return MlpPredictor(arch["m"], arch["seq_len"], arch.get("hidden", 128), arch.get("layers", 2),
                            arch.get("embed_dim", 16), seed=seed)
    raise ValueError(f"unknown predictor kind {kind!r}")
