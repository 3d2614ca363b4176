"""Command line entry point: ``mdc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 self-check failure.
Every subcommand writes a JSON run manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import io
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import oracle, selfcheck
from .corpus import CHUNK_HEADER, IngestError, CorpusVocab, chunk, ingest, read_chunks, read_text, write_chunks
from .forward import ForwardKernel
from .losses import (ScoreView, boundary_terms, loss_continuous_ce, loss_ctmc, loss_discrete, loss_maskgit,
                     loss_score_entropy)
from .predictor import TabularPredictor
from .rng import resolve_seed, stream
from .sampler import SamplerConfig, render, trajectory
from .schedule import KINDS, T_MIN, Schedule
from .trainer import (ConfigError, DivergenceError, evaluate_bpc, kernel_from_checkpoint, parse_config,
                      predictor_from_checkpoint, train)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("scipy", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_manifest(path: Path, command: str, argv, config: dict, seed, outputs: list, started: float):
    manifest = {"subcommand": command, "argv": list(argv), "config": config, "seed": seed,
                "versions": _versions(), "outputs": [str(p) for p in outputs],
                "wall_clock_seconds": round(time.time() - started, 3)}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _manifest_path(out: str | None, command: str) -> Path:
    if out:
        return Path(str(out) + ".manifest.json")
    return Path(f"mdc-{command}.manifest.json")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -----------------------------------------------------------------------------
# subcommands
# -----------------------------------------------------------------------------

def cmd_schedule_dump(args):
    sched = Schedule(args.kind, eps=args.eps, w=args.w)
    ts = np.arange(1, args.points + 1) / (args.points + 1)
    buf = io.StringIO()
    buf.write("t,alpha,alpha_prime,ce_weight,log_snr\n")
    for t in ts:
        row = [t, sched.alpha(t), sched.alpha_prime(t), sched.ce_weight(t), sched.log_snr(t)]
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    _emit(buf.getvalue(), args.out)
    return {"kind": args.kind, "eps": args.eps, "w": args.w, "points": args.points}, None, [args.out] if args.out else []


def cmd_loss_compare(args):
    seed = resolve_seed(args.seed)
    m, N = args.m, args.len
    if (m + 1) ** N * N > 200_000:
        raise ConfigError("fixture too large for exact enumeration; use smaller --m or --len")
    sched = Schedule(args.schedule, eps=args.eps)
    kernel = ForwardKernel(sched, m)
    pred = TabularPredictor(m, N, "full")
    pred.set_params(stream(seed, "loss-compare-init").normal(size=pred.params.size))
    x0 = stream(seed, "loss-compare-data").integers(0, m, N)
    rng = stream(seed, "loss-compare")
    D = args.draws
    exact_ce = oracle.exact_ce(x0, pred, kernel)
    ctmc_v, ctmc_k = oracle.exact_ctmc(x0, pred, kernel)
    rows = []

    def add(name, est, exact, shift=0.0):
        rows.append((name, est.value - shift, est.variance, est.per_draw.size, exact))

    add("L_inf_ce", loss_continuous_ce(x0, pred, kernel, rng, D), exact_ce)
    add("L_inf_ce_antithetic", loss_continuous_ce(x0, pred, kernel, rng, D, antithetic=True), exact_ce)
    est = loss_ctmc(x0, pred, kernel, rng, D)
    add("L_ctmc_minus_known", est, ctmc_v - ctmc_k, est.offset_known_constant)
    est = loss_ctmc(x0, pred, kernel, rng, D, doubly_stochastic=True)
    add("L_ctmc_ds_minus_known", est, ctmc_v - ctmc_k, est.offset_known_constant)
    add("L_score", loss_score_entropy(x0, ScoreView(pred, sched), kernel, rng, D),
        oracle.exact_score(x0, ScoreView(pred, sched), kernel))
    add("L_maskgit", loss_maskgit(x0, pred, kernel, rng, D), oracle.exact_maskgit(x0, pred, kernel))
    add(f"L_T(T={args.T})", loss_discrete(x0, args.T, pred, kernel, rng, D), oracle.exact_discrete(x0, args.T, pred, kernel))
    rec, prior = boundary_terms(x0, kernel)
    buf = io.StringIO()
    buf.write("estimator,mean,variance,draws,exact\n")
    for name, value, var, n, exact in rows:
        buf.write(f"{name},{value!r},{var!r},{n},{float(exact)!r}\n")
    _emit(buf.getvalue(), args.out)
    cfg = {"m": m, "len": N, "schedule": args.schedule, "eps": args.eps, "draws": D, "T": args.T,
           "x0": x0.tolist(), "reconstruction": rec, "prior_kl": prior, "t_min": T_MIN,
           "note": "continuous-time estimators draw t from U(t_min, 1); [0, t_min) is in the reconstruction term"}
    return cfg, seed, [args.out] if args.out else []


def _load_training_data(cfg, config_path: Path, data: str | None):
    if data:
        m, chunks = read_chunks(data)
        return chunks, None, m, None
    if not cfg.corpus:
        raise ConfigError("no training data: set 'corpus' in the config or pass --data")
    corpus = Path(cfg.corpus)
    if not corpus.is_absolute():
        corpus = config_path.parent / corpus
    vocab, train_chunks, valid_chunks = ingest(corpus, cfg.vocab_cap or None, cfg.chunk_len, cfg.valid_fraction)
    return train_chunks, vocab.to_dict(), vocab.m, valid_chunks


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(args):
    config_path = Path(args.config)
    if not config_path.is_file():
        raise FileNotFoundError(f"config file not found: {config_path}")
    text = config_path.read_text(encoding="utf-8")
    text += "".join(f"\n{k} = {v}" for k, v in _parse_sets(args.set).items())
    seed = resolve_seed(args.seed, default=-1)
    cfg = parse_config(text, seed=seed if seed >= 0 else None)
    chunks, vocab, m, valid = _load_training_data(cfg, config_path, args.data)
    metrics_path = Path(args.metrics) if args.metrics else Path(str(args.out) + ".metrics.csv")
    with metrics_path.open("w", encoding="utf-8", newline="") as fh:
        result = train(cfg, chunks, vocab=vocab, metrics_out=fh, m=m)
    ckpt_io.save(result.checkpoint, args.out)
    outputs = [args.out, metrics_path]
    if valid is not None and len(valid):
        valid_path = Path(str(args.out) + ".valid.chunks")
        write_chunks(valid_path, valid, m)
        outputs.append(valid_path)
    last = result.metrics[-1]["loss_nats_per_token"] if result.metrics else float("nan")
    print(f"trained {cfg.steps} steps; final loss {last:.6f} nats/token; checkpoint {args.out}")
    return cfg.to_dict(), cfg.seed, outputs


def _eval_chunks(path: str, ckpt):
    raw = Path(path).read_bytes()[: len(CHUNK_HEADER)]
    if raw == CHUNK_HEADER.encode():
        return read_chunks(path)[1]
    if ckpt.vocab is None:
        raise ConfigError("checkpoint has no vocabulary; evaluate on a chunk fixture instead")
    vocab = CorpusVocab.from_dict(ckpt.vocab)
    return chunk(vocab.encode(read_text(path)), ckpt.arch["seq_len"])


def cmd_eval(args):
    seed = resolve_seed(args.seed)
    ckpt = ckpt_io.load(args.checkpoint)
    chunks = _eval_chunks(args.data, ckpt)
    if len(chunks) == 0:
        raise ConfigError("no complete chunks to evaluate")
    bpc, se = evaluate_bpc(ckpt, chunks, args.draws, seed)
    report = {"bpc": bpc, "stderr": se, "chunks": int(len(chunks)), "draws_per_chunk": args.draws}
    _emit(json.dumps(report, sort_keys=True) + "\n", args.out)
    cfg = {"checkpoint": args.checkpoint, "data": args.data, "draws": args.draws}
    return cfg, seed, [args.out] if args.out else []


def cmd_sample(args):
    seed = resolve_seed(args.seed)
    ckpt = ckpt_io.load(args.checkpoint)
    pred = predictor_from_checkpoint(ckpt)
    N = args.len if args.len is not None else ckpt.arch["seq_len"]
    if N != ckpt.arch["seq_len"] and not (ckpt.arch["kind"] == "tabular" and ckpt.arch.get("context") == "shared"):
        raise ConfigError(f"this predictor was trained on length {ckpt.arch['seq_len']}, not {N}")
    sched = kernel_from_checkpoint(ckpt).schedule
    stride = args.snapshot_stride or args.steps
    cfg = SamplerConfig(args.steps, sched, seed, args.temperature)
    snaps = trajectory(pred, pred.m, N, cfg, stream(seed, "sample"), num=args.num, stride=stride)
    if ckpt.vocab is not None:
        vocab = CorpusVocab.from_dict(ckpt.vocab)
        lines = lambda x: render(x, lambda i: vocab.symbols[i], pred.m)  # noqa: E731
    else:
        lines = lambda x: [" ".join("?" if v == pred.m else str(int(v)) for v in row) for row in x]  # noqa: E731
    out = Path(args.out)
    out.write_text("\n".join(lines(snaps[-1])) + "\n", encoding="utf-8")
    outputs = [out]
    if args.snapshot_stride:
        for k, snap in enumerate(snaps):
            p = out.with_name(f"{out.name}.snap{k * stride:06d}.txt")
            p.write_text("\n".join(lines(snap)) + "\n", encoding="utf-8")
            outputs.append(p)
    conf = {"checkpoint": args.checkpoint, "steps": args.steps, "len": N, "num": args.num,
            "snapshot_stride": args.snapshot_stride, "temperature": args.temperature}
    return conf, seed, outputs


def cmd_selfcheck(args):
    results = selfcheck.run(args.inject_fault)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} observed={r.observed:.6g} tolerance={r.tolerance:.3g} {r.detail}".rstrip())
    if args.json:
        Path(args.json).write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n", encoding="utf-8")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selfcheck failed: {', '.join(failed)}", file=sys.stderr)
    conf = {"inject_fault": args.inject_fault}
    return conf, None, [args.json] if args.json else [], (EXIT_SELFCHECK if failed else EXIT_OK)


# -----------------------------------------------------------------------------
# parser
# -----------------------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    parser = _Parser(prog="mdc", description="Masked discrete diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = sub.add_parser("schedule-dump", help="tabulate a masking schedule as CSV")
    p.add_argument("--kind", choices=KINDS, default="linear")
    p.add_argument("--w", type=float, default=1.0, help="polynomial exponent")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--points", type=_positive_int, default=11, help="number of interior time points")
    p.add_argument("--out")
    subs["schedule-dump"] = p

    p = sub.add_parser("loss-compare", help="Monte Carlo estimators against exact values on a tiny fixture")
    p.add_argument("--m", type=_positive_int, default=3)
    p.add_argument("--len", type=_positive_int, default=2)
    p.add_argument("--schedule", choices=KINDS, default="linear")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--draws", type=_positive_int, default=10000)
    p.add_argument("--T", type=_positive_int, default=16, help="steps for the discrete-time bound")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    subs["loss-compare"] = p

    p = sub.add_parser("train", help="train a predictor from a key = value config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="chunk fixture to train on instead of the config's corpus")
    p.add_argument("--out", default="model.mdck")
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    subs["train"] = p

    p = sub.add_parser("eval", help="bits per character of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="chunk fixture or UTF-8 text")
    p.add_argument("--draws", type=_positive_int, default=1, help="Monte Carlo draws per chunk")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    subs["eval"] = p

    p = sub.add_parser("sample", help="draw samples by iterative unmasking")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=_positive_int, default=1000)
    p.add_argument("--len", type=_positive_int)
    p.add_argument("--num", type=_positive_int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--snapshot-stride", type=_positive_int)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", required=True)
    subs["sample"] = p

    p = sub.add_parser("selfcheck", help="run the property-oracle suite")
    p.add_argument("--inject-fault", choices=selfcheck.FAULTS)
    p.add_argument("--json", help="write the machine-readable report here")
    subs["selfcheck"] = p
    return parser, subs


HANDLERS = {"schedule-dump": cmd_schedule_dump, "loss-compare": cmd_loss_compare, "train": cmd_train,
            "eval": cmd_eval, "sample": cmd_sample, "selfcheck": cmd_selfcheck}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    started = time.time()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
        if extra:
            subs[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
        out = HANDLERS[args.command](args)
        code = EXIT_OK
        if len(out) == 4:
            conf, seed, outputs, code = out
        else:
            conf, seed, outputs = out
        target = getattr(args, "out", None) or getattr(args, "json", None)
        _write_manifest(_manifest_path(target, args.command), args.command, argv, conf, seed, outputs, started)
        return code
    except UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except DivergenceError as e:
        print(f"error: {e}; snapshot: {json.dumps(e.snapshot)[:2000]}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ckpt_io.CheckpointError, IngestError, RuntimeError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
