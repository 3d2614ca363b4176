"""Training loop, likelihood evaluation and run configuration."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .forward import ForwardKernel
from .genmd4 import rloo_w_gradient
from .losses import ScoreView, boundary_terms, ce_terms, ctmc_terms, genmd4_terms, sample_times, score_terms
from .optim import AdamState, adamw_step, ema_update, learning_rate
from .predictor import Predictor, build_predictor
from .rng import stream
from .schedule import T_MIN, Schedule, VectorSchedule

LOSSES = ("ce", "ctmc", "score")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Raised when the loss or gradient stops being finite. ``snapshot`` holds the state at that step."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    loss: str = "ce"
    schedule: str = "linear"
    schedule_w: float = 1.0
    eps: float = 1e-4
    t_min: float = T_MIN
    predictor: str = "mlp"
    context: str = "positional"
    max_dist: int = 8
    hidden: int = 128
    layers: int = 2
    embed_dim: int = 16
    batch_size: int = 32
    steps: int = 1000
    lr: float = 1e-3
    warmup: int = 0
    cosine: bool = True
    weight_decay: float = 0.0
    ema_decay: float = 0.9999
    antithetic: bool = True
    genmd4: bool = False
    w_lr: float | None = None
    w_init: float = 1.0
    w_l2: float = 0.0
    seed: int = 0
    # data, used by the command line
    corpus: str = ""
    vocab_cap: int = 0
    chunk_len: int = 32
    valid_fraction: float = 0.02

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.genmd4 and self.loss != "ce":
            raise ConfigError("the vector schedule is trained with the cross-entropy form only")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        for name in ("lr", "w_init", "chunk_len"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.w_lr is not None and not self.w_lr > 0:
            raise ConfigError("w_lr must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")

    @property
    def w_rate(self) -> float:
        return self.w_lr if self.w_lr is not None else self.lr / 10.0

    def scalar_schedule(self) -> Schedule:
        return Schedule(self.schedule, eps=self.eps, w=self.schedule_w)

    def arch(self, m: int, seq_len: int) -> dict:
        if self.predictor == "tabular":
            return {"kind": "tabular", "m": m, "seq_len": seq_len, "context": self.context,
                    "max_dist": self.max_dist}
        if self.predictor == "mlp":
            return {"kind": "mlp", "m": m, "seq_len": seq_len, "hidden": self.hidden,
                    "layers": self.layers, "embed_dim": self.embed_dim}
        raise ConfigError(f"unknown predictor {self.predictor!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    if typ in ("bool",):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if typ == "int":
            return int(raw)
        if typ in ("float", "float | None"):
            return None if raw.lower() == "none" else float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config(text: str, **overrides) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {k}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {k}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def load_config(path, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


# -----------------------------------------------------------------------------
# training
# -----------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list = field(default_factory=list)


def _step_loss(cfg, x0, t, xt, pred, sched, v):
    if v is not None:
        return genmd4_terms(x0, xt, t, pred, v, grad=True)
    if cfg.loss == "ce":
        return ce_terms(x0, xt, t, pred, sched, grad=True)
    if cfg.loss == "ctmc":
        values, _, g = ctmc_terms(x0, xt, t, pred, sched, grad=True)
        return values, g
    return score_terms(x0, xt, t, ScoreView(pred, sched), grad=True)


def train(cfg: TrainConfig, chunks, vocab: dict | None = None, metrics_out=None,
          m: int | None = None) -> TrainResult:
    """Fit a predictor to ``chunks`` (int array ``(n, N)``).

    Each step draws its own stream ``stream(seed, "train", step)``, so a run is
    a pure function of the config and the data. ``metrics_out`` is an optional
    text stream receiving the CSV metrics.
    """
    chunks = np.asarray(chunks, dtype=np.int64)
    if chunks.ndim != 2 or len(chunks) == 0:
        raise ConfigError("training data must be a non-empty (n, N) array")
    if m is None:
        m = len(vocab["symbols"]) if vocab else int(chunks.max()) + 1
    if chunks.max() >= m or chunks.min() < 0:
        raise ConfigError("training data contains ids outside the vocabulary")
    N = chunks.shape[1]
    arch = cfg.arch(m, N)
    pred = build_predictor(arch, seed=cfg.seed)
    sched = cfg.scalar_schedule()
    log_w = np.full(m, math.log(cfg.w_init)) if cfg.genmd4 else None
    params = pred.get_params()
    ema = params.copy()
    opt = AdamState.zeros(params.size)
    scale = (1.0 - cfg.t_min) / N

    writer = None
    if metrics_out is not None:
        writer = csv.writer(metrics_out, lineterminator="\n")
        writer.writerow(["step", "loss_nats_per_token", "grad_norm"] + ([f"w_{i}" for i in range(m)] if cfg.genmd4 else []))
    metrics = []
    for step in range(cfg.steps):
        rng = stream(cfg.seed, "train", step)
        x0 = chunks[rng.integers(0, len(chunks), cfg.batch_size)]
        t = sample_times(rng, cfg.batch_size, cfg.t_min, cfg.antithetic, shuffle=True)
        v = VectorSchedule(np.exp(log_w)) if cfg.genmd4 else None
        kernel = ForwardKernel(v) if v is not None else ForwardKernel(sched, m)
        xt = kernel.sample_forward(x0, t, rng)
        values, grad = _step_loss(cfg, x0, t, xt, pred, sched, v)
        loss = float(values.mean() * scale)
        grad = grad * scale
        gnorm = float(np.sqrt(grad @ grad)) if np.all(np.isfinite(grad)) else float("nan")
        if not (math.isfinite(loss) and math.isfinite(gnorm)):
            raise DivergenceError(f"non-finite loss at step {step}", {
                "step": step, "loss": loss, "grad_norm": gnorm, "t": t.tolist(),
                "param_norm": float(np.linalg.norm(params)), "x0": x0.tolist(),
                "w": None if log_w is None else np.exp(log_w).tolist()})
        if v is not None:
            wg = rloo_w_gradient(x0, pred, v, rng, t_min=cfg.t_min)
            gw = wg.log_space(v.w) / N + cfg.w_l2 * log_w
            if not np.all(np.isfinite(gw)):
                raise DivergenceError(f"non-finite w-gradient at step {step}", {"step": step, "w": v.w.tolist()})
            log_w = log_w - cfg.w_rate * gw
        lr = learning_rate(step, cfg.lr, cfg.warmup, cfg.steps, cfg.cosine)
        params, opt = adamw_step(params, grad, opt, lr, cfg.weight_decay)
        pred.set_params(params)
        ema = ema_update(ema, params, cfg.ema_decay)
        row = {"step": step, "loss_nats_per_token": loss, "grad_norm": gnorm}
        if log_w is not None:
            row.update({f"w_{i}": float(x) for i, x in enumerate(np.exp(log_w))})
        metrics.append(row)
        if writer is not None:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row.values()])

    w = np.exp(log_w) if log_w is not None else None
    schedule_spec = VectorSchedule(w).spec() if w is not None else sched.spec()
    ckpt = Checkpoint(
        schedule=schedule_spec, arch=arch, params=params, ema=ema, opt_m=opt.m, opt_v=opt.v,
        opt_step=opt.step, step=cfg.steps, w=w, vocab=vocab,
        rng={"seed": cfg.seed, "rule": "stream(seed, 'train', step)", "next_step": cfg.steps},
        config=cfg.to_dict(),
    )
    return TrainResult(ckpt, metrics)


# -----------------------------------------------------------------------------
# evaluation
# -----------------------------------------------------------------------------

def schedule_from_spec(d: dict):
    if d.get("kind") == "vector":
        return VectorSchedule(np.asarray(d["w"], dtype=np.float64))
    return Schedule.from_spec(d)


def predictor_from_checkpoint(ckpt: Checkpoint, use_ema: bool = True) -> Predictor:
    pred = build_predictor(ckpt.arch)
    pred.set_params(ckpt.ema if use_ema else ckpt.params)
    return pred


def kernel_from_checkpoint(ckpt: Checkpoint) -> ForwardKernel:
    sched = schedule_from_spec(ckpt.schedule)
    return ForwardKernel(sched) if isinstance(sched, VectorSchedule) else ForwardKernel(sched, ckpt.arch["m"])


def chunk_nelbo(x0, predictor: Predictor, kernel: ForwardKernel, rng, draws: int = 1,
                t_min: float = T_MIN, batch: int = 4096) -> np.ndarray:
    """Negative ELBO estimate (nats) for every row of ``x0``, boundary terms included."""
    x0 = np.asarray(x0, dtype=np.int64)
    rows = np.repeat(x0, draws, axis=0)
    out = np.empty(len(rows))
    for lo in range(0, len(rows), batch):
        r = rows[lo:lo + batch]
        t = sample_times(rng, len(r), t_min)
        xt = kernel.sample_forward(r, t, rng)
        if kernel.vector:
            vals, _ = genmd4_terms(r, xt, t, predictor, kernel.schedule)
        else:
            vals, _ = ce_terms(r, xt, t, predictor, kernel.schedule)
        out[lo:lo + batch] = (1.0 - t_min) * vals
    rec, prior = boundary_terms(x0, kernel, t_min)
    return out.reshape(len(x0), draws).mean(axis=1) + rec + prior


def evaluate_nats(ckpt: Checkpoint, chunks, draws_per_chunk: int = 1, seed: int = 0,
                  t_min: float = T_MIN):
    """Mean negative ELBO per token, in nats, and its Monte Carlo standard error."""
    chunks = np.asarray(chunks, dtype=np.int64)
    if chunks.max() >= ckpt.arch["m"]:
        raise ValueError("evaluation data uses ids outside the checkpoint vocabulary")
    pred = predictor_from_checkpoint(ckpt)
    per = chunk_nelbo(chunks, pred, kernel_from_checkpoint(ckpt), stream(seed, "eval"),
                      draws_per_chunk, t_min) / chunks.shape[1]
    se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else 0.0
    return float(per.mean()), se


def evaluate_bpc(ckpt: Checkpoint, chunks, draws_per_chunk: int = 1, seed: int = 0,
                 t_min: float = T_MIN):
    """Bits per character of the negative ELBO with EMA parameters, and its standard error."""
    nats, se = evaluate_nats(ckpt, chunks, draws_per_chunk, seed, t_min)
    return nats / math.log(2.0), se / math.log(2.0)
