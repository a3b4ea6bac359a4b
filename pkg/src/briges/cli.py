"""Command-line entry points.

Exit codes: 0 success, 2 usage/config, 3 numeric failure, 4 I/O or corrupt
file, 5 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as bio
from . import report
from .errors import ConfigError, DegenerateInputError, FormatError, NumericError, ParameterError
from .gate import attention_entropy
from .gradcheck import FD_STEP, TOLERANCE, check_gate_gradients
from .metrics import average_rank
from .pipeline import evaluate, forward, sample_target, train

log = logging.getLogger("briges")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4, 5

DEFAULT_EVAL_SEEDS = "1000:1016"
DEFAULT_TAUS = "2,2.5,3,3.5,4"

CHECKPOINT_NAME = "checkpoint.bgck"
LOSS_LOG_NAME = "loss_log.csv"
DIGEST_NAME = "freeze_digest.txt"


def parse_seeds(text: str) -> list[int]:
    """``"a:b"`` is the half-open range a..b-1; otherwise a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":", 1))
            seeds = list(range(lo, hi))
        else:
            seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse seed list {text!r}") from None
    if not seeds:
        raise ParameterError(f"seed list {text!r} is empty")
    return seeds


def parse_taus(text: str) -> list[float]:
    try:
        taus = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse temperature list {text!r}") from None
    unique = list(dict.fromkeys(taus))
    if len(unique) != len(taus):
        log.warning("duplicate temperatures removed: %s -> %s", taus, unique)
    if any(t < 1.0 for t in unique):
        raise ParameterError(f"temperatures must be >= 1, got {unique}")
    if len(unique) < 2:
        raise ParameterError("the ablation needs at least two distinct temperatures")
    return unique


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    mcfg, tcfg = bio.load_config(args.config)
    if args.mode:
        mcfg.mode = args.mode
    if args.tau is not None:
        mcfg.tau_inference = args.tau
    if args.steps is not None:
        tcfg.steps = args.steps
    try:
        mcfg.validate()
        tcfg.validate()
    except ParameterError as exc:
        key, _, msg = str(exc).partition(":")
        raise ConfigError(key, msg.strip()) from None
    out = _out_dir(args.out)
    result = train(mcfg, args.seed, tcfg=tcfg, init=args.init)
    (out / LOSS_LOG_NAME).write_text(report.loss_log_csv(result.log))
    bio.save_checkpoint(out / CHECKPOINT_NAME, result.model,
                        extra={"run_seed": args.seed, "steps": tcfg.steps, "init": args.init})
    (out / DIGEST_NAME).write_text(
        f"before {result.digest_before}\nafter {result.digest_after}\n"
        f"status {'unchanged' if result.digest_before == result.digest_after else 'CHANGED'}\n"
    )
    (out / "config.cfg").write_text(bio.format_config(mcfg, tcfg))
    first, last = result.log[0][2], result.log[-1][2]
    print(f"steps={len(result.log)} first_loss={first:.6g} final_loss={last:.6g} ratio={last / first:.4f}")
    return EXIT_OK


def _tau(args, model) -> float:
    return model.cfg.tau_inference if args.tau is None else args.tau


def cmd_eval(args) -> int:
    model = bio.load_checkpoint(args.ckpt)
    seeds = parse_seeds(args.seeds)
    tau = _tau(args, model)
    agg, per_sample = evaluate(model, seeds, tau)
    rows = [(f"seed{s}", r) for s, r in zip(seeds, per_sample)] + [("aggregate", agg)]
    text = report.metrics_csv(rows)
    path = Path(args.report) if args.report else _out_dir(args.out) / "eval_report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"tau={tau:g} absrel={agg.absrel:.6g} delta1={agg.delta1:.6g} n={len(seeds)}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = bio.load_checkpoint(args.ckpt)
    tau = _tau(args, model)
    seed, _ = sample_target(args.seed, model)
    pred, _ = forward(seed, model, tau)
    out = _out_dir(args.out)
    bio.write_raster(out / f"pred_seed{args.seed}.dmap", pred.data)
    print(f"wrote {out / f'pred_seed{args.seed}.dmap'} ({pred.shape[0]}x{pred.shape[1]}, tau={tau:g})")
    return EXIT_OK


def ablation_table(model, taus, seeds, groups: int):
    """Per-tau metrics over seed groups; columns alternate absrel_g<k>, delta1_g<k>."""
    chunks = [list(c) for c in np.array_split(np.asarray(seeds), groups) if len(c)]
    columns, lower = [], []
    for k in range(len(chunks)):
        columns += [f"absrel_g{k}", f"delta1_g{k}"]
        lower += [True, False]
    table = np.zeros((len(taus), len(columns)))
    for i, tau in enumerate(taus):
        for k, chunk in enumerate(chunks):
            agg, _ = evaluate(model, [int(s) for s in chunk], tau)
            table[i, 2 * k] = agg.absrel
            table[i, 2 * k + 1] = agg.delta1
    return columns, lower, table


def cmd_ablate_tau(args) -> int:
    taus = parse_taus(args.taus)
    model = bio.load_checkpoint(args.ckpt)
    seeds = parse_seeds(args.seeds)
    if args.groups < 1:
        raise ParameterError("--groups must be >= 1")
    columns, lower, table = ablation_table(model, taus, seeds, args.groups)
    ranks = average_rank(table, lower)
    out = _out_dir(args.out)
    (out / "ablation.csv").write_text(report.ablation_csv(taus, columns, table, ranks))
    display = report.format_rank_table(taus, ranks)
    (out / "ablation_rank.md").write_text(display)
    print(display, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = check_gate_gradients(args.seed, args.instances, args.h, fault=args.inject_fault,
                               channels=args.channels, proj_dim=args.channels, heads=args.heads)
    print(f"worst relative error {res.worst_error:.3e} ({res.worst_param}) over "
          f"{res.instances} instances, tolerance {TOLERANCE:g}")
    if not res.passed:
        print(f"gradient check FAILED for {res.worst_param}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_dump_attn(args) -> int:
    model = bio.load_checkpoint(args.ckpt)
    tau = _tau(args, model)
    seed, _ = sample_target(args.seed, model)
    _, records = forward(seed, model, tau)
    out = _out_dir(args.out)
    lines = ["gate,block,head,row,entropy"]
    for rec in records:
        bio.write_raster(out / f"gate{rec.gate_index}_{rec.block}_h{rec.head}.dmap", rec.weights)
        for row, h in enumerate(attention_entropy(rec)):
            lines.append(f"{rec.gate_index},{rec.block},{rec.head},{row},{report.fmt(h)}")
    (out / "entropy.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(records)} attention maps to {out} (tau={tau:g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="briges", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="."):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default)
        p.add_argument("--tau", type=float, default=None,
                       help="attention temperature (default: the checkpoint's tau_inference, 2.5)")

    p = sub.add_parser("train", help="train the gates with frozen encoders/decoder")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--mode", choices=("v1", "v2"), default=None)
    p.add_argument("--init", choices=("random", "reference"), default="random")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot metrics over synthetic samples")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seeds", default=DEFAULT_EVAL_SEEDS)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write the predicted raster for one sample")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate-tau", help="metric table and average rank over temperatures")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--taus", default=DEFAULT_TAUS)
    p.add_argument("--seeds", default=DEFAULT_EVAL_SEEDS)
    p.add_argument("--groups", type=int, default=4, help="number of seed groups treated as datasets")
    p.set_defaults(func=cmd_ablate_tau)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gate gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--h", type=float, default=FD_STEP)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-attn", help="write attention maps and per-row entropies")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_dump_attn)
    return parser


def _thread_limit():
    value = os.environ.get("BRIGES_THREADS")
    if value is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, DegenerateInputError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
