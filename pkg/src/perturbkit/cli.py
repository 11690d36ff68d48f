"""Command-line interface.

Subcommands: `attack` (per-example JSON lines), `sweep` (CSV of fooling
ratio or mean PSNR over an eps grid), `robustness` (rho1/rho2/min-eps
JSON), and `train-toy` (fit and save a small model). Identical
invocations produce byte-identical output; per-example seeds derive
from --seed and the example index.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

import argparse
import json
import math
import sys

from perturbkit.errors import DivergenceError, PerturbkitError
from perturbkit.metrics import MetricError
from perturbkit.model import (
    load_dataset,
    load_model,
    save_model,
)
from perturbkit.regress import load_partition
from perturbkit.runner import (
    ATTACK_NAMES,
    build_attack,
    resolve_kind,
    robustness_summary,
    run_attack_over_dataset,
    sweep,
    validate_report,
)
from perturbkit.train import NetSpec, train_toy


def parse_p(raw: str) -> float:
    """Accepts 'inf', a float, or a rational like '4/3'."""
    raw = raw.strip().lower()
    if raw in ("inf", "infinity"):
        return math.inf
    if "/" in raw:
        num, den = raw.split("/", 1)
        value = float(num) / float(den)
    else:
        value = float(raw)
    if value < 1:
        raise ValueError(f"p must be >= 1, got {value}")
    return value


def parse_loss(raw: str | None) -> tuple[str | None, int | None]:
    """Returns (loss_kind, target); 'cross-entropy' maps to the internal tag."""
    if raw is None:
        return None, None
    raw = raw.strip()
    if raw.startswith("targeted:"):
        return "targeted", int(raw.split(":", 1)[1])
    mapping = {
        "margin": "margin",
        "simplified": "simplified",
        "cross-entropy": "cross_entropy",
        "cross_entropy": "cross_entropy",
    }
    if raw not in mapping:
        raise ValueError(
            f"unknown loss {raw!r}; expected margin, simplified, "
            "cross-entropy, or targeted:<l>"
        )
    return mapping[raw], None


def _float_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip() != ""]


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _add_common_attack_flags(sub):
    sub.add_argument("--model", required=True, help="model JSON file")
    sub.add_argument("--data", required=True, help="dataset JSON file")
    sub.add_argument("--p", default="inf", help="norm exponent: 1, 2, inf, or a/b")
    sub.add_argument("--T", type=int, default=None, help="iteration count")
    sub.add_argument(
        "--dither",
        default=None,
        help="dither schedule: none, first=eps, first=<x>, all=<x>, or T radii",
    )
    sub.add_argument("--partition", default=None, help="partition JSON file")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="output path (default stdout)")
    sub.add_argument(
        "--loss",
        default=None,
        help="margin | simplified | cross-entropy | targeted:<l>",
    )
    sub.add_argument("--early-stop", choices=("on", "off"), default="on")
    sub.add_argument("--max-iter", type=int, default=50, help="deepfool iteration cap")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perturbkit",
        description="Adversarial perturbations and robustness metrics for "
        "small dense networks.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    atk = subs.add_parser("attack", help="run one attack over a dataset (JSONL)")
    _add_common_attack_flags(atk)
    atk.add_argument("--attack", required=True, help=f"one of: {', '.join(ATTACK_NAMES)}")
    atk.add_argument("--eps", type=float, default=0.1)

    swp = subs.add_parser("sweep", help="fooling ratio / PSNR over an eps grid (CSV)")
    _add_common_attack_flags(swp)
    swp.add_argument(
        "--attack", required=True, help="comma-separated attack names"
    )
    swp.add_argument("--eps-list", required=True, help="comma-separated eps values")
    swp.add_argument("--peak", type=float, default=1.0, help="PSNR peak value")

    rob = subs.add_parser("robustness", help="rho1, rho2, min fooled>99%% eps (JSON)")
    rob.add_argument("--model", required=True)
    rob.add_argument("--data", required=True)
    rob.add_argument("--p", default="inf")
    rob.add_argument("--eps-list", required=True, help="eps grid for min_eps_99")
    rob.add_argument("--seed", type=int, default=0)
    rob.add_argument("--out", default=None)
    rob.add_argument("--max-iter", type=int, default=50)

    trn = subs.add_parser("train-toy", help="fit a small dense net and save it")
    trn.add_argument("--sizes", required=True, help="layer sizes, e.g. 2,16,2")
    trn.add_argument("--activation", default="relu")
    trn.add_argument("--out-activation", default=None)
    trn.add_argument("--data", required=True)
    trn.add_argument("--epochs", type=int, default=500)
    trn.add_argument("--lr", type=float, default=0.1)
    trn.add_argument("--seed", type=int, default=0)
    trn.add_argument("--out", required=True, help="model JSON destination")
    return parser


def _cmd_attack(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    loss, target = parse_loss(args.loss)
    p = parse_p(args.p)
    kind = resolve_kind(args.attack, dataset)
    partition = (
        load_partition(args.partition, model.input_dim) if args.partition else None
    )
    fn = build_attack(
        args.attack, kind=kind, p=p, eps=args.eps, T=args.T, dither=args.dither,
        loss=loss, target=target, early_stop=args.early_stop == "on",
        partition=partition, max_iter=args.max_iter,
    )
    reports = run_attack_over_dataset(model, dataset, fn, kind, args.seed)
    out, close = _open_out(args.out)
    try:
        for idx, rep in enumerate(reports):
            try:
                validate_report(
                    args.attack, rep, eps=args.eps, p=p, partition=partition, T=args.T
                )
            except PerturbkitError as exc:
                raise PerturbkitError(f"example {idx}: {exc}") from exc
            record = {"index": idx, "attack": args.attack, "eps": args.eps}
            record.update(rep.to_record())
            out.write(json.dumps(record) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_sweep(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    loss, target = parse_loss(args.loss)
    p = parse_p(args.p)
    names = [n.strip() for n in args.attack.split(",") if n.strip()]
    for name in names:
        resolve_kind(name, dataset)  # fail fast on unknown names
    partition = (
        load_partition(args.partition, model.input_dim) if args.partition else None
    )
    eps_values = _float_list(args.eps_list)
    metric, rows = sweep(
        model, dataset, names, eps_values, base_seed=args.seed, p=p, T=args.T,
        dither=args.dither, loss=loss, target=target, partition=partition,
        peak=args.peak, max_iter=args.max_iter,
    )
    out, close = _open_out(args.out)
    try:
        out.write(f"# one row per (attack, eps); {metric} aggregated over {args.data}\n")
        out.write(f"attack,eps,{metric}\n")
        for row in rows:
            out.write(f"{row['attack']},{row['eps']!r},{row[metric]!r}\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_robustness(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    summary = robustness_summary(
        model, dataset, parse_p(args.p), _float_list(args.eps_list),
        base_seed=args.seed, max_iter=args.max_iter,
    )
    out, close = _open_out(args.out)
    try:
        out.write(json.dumps(summary) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_train_toy(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    spec = NetSpec(sizes, args.activation, args.out_activation)
    dataset = load_dataset(args.data)
    result = train_toy(spec, dataset, args.epochs, args.lr, args.seed)
    save_model(result.model, args.out)
    line = f"final_loss={result.final_loss!r}"
    if result.accuracy is not None:
        line += f" accuracy={result.accuracy!r}"
    print(line)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "attack": _cmd_attack,
        "sweep": _cmd_sweep,
        "robustness": _cmd_robustness,
        "train-toy": _cmd_train_toy,
    }
    try:
        return handlers[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PerturbkitError, MetricError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
