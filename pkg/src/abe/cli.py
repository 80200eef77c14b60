"""Command-line entry point.

Subcommands: decode (single model), ensemble, interpolate, sample, rank,
oracle-check, serve-toy. Decoding commands read one UTF-8 source segment
per input line and write one output line per segment; exactly one leading
space is stripped at output time, and the empty-string fallback prints an
empty line. Exit codes: 0 success, 1 usage, 2 model or protocol failure,
3 oracle-check mismatch.
"""

from __future__ import annotations

import argparse
import sys
from typing import Any, Sequence

import numpy as np

from .baseline import InterpolationEnsemble, decode_single
from .decoder import EnsembleConfig, decode, sample_decode
from .errors import AdapterError
from .model import ModelAdapter, load_scenario, sequence_score
from .remote import RemoteModel, serve_toy
from .testing import check_decode_vs_oracle, make_agreement_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2
EXIT_MISMATCH = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _add_model_args(p: argparse.ArgumentParser, multiple: bool = True) -> None:
    p.add_argument(
        "--model",
        action="append",
        required=True,
        metavar="SPEC",
        help="scenario:PATH, spawn:COMMAND, or remote:HOST:PORT"
        + ("; repeatable" if multiple else ""),
    )


def _add_decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", help="comma-separated, normalized to sum 1")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--pop-cap", type=int, default=65536, help="0 means unbounded")
    p.add_argument("--seed", type=int)
    p.add_argument("--input", help="default stdin")
    p.add_argument("--output", help="default stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (
        ("decode", "beam-search a single model"),
        ("ensemble", "agreement-based ensemble decoding"),
        ("interpolate", "probability-interpolation ensemble (same vocabulary)"),
        ("sample", "agreement-based ensemble sampling"),
    ):
        p = sub.add_parser(name, help=blurb)
        _add_model_args(p)
        _add_decode_args(p)

    p = sub.add_parser("rank", help="score candidate strings under each model")
    _add_model_args(p)
    p.add_argument("--input", help="candidate strings, one per line; default stdin")
    p.add_argument("--output", help="default stdout")

    p = sub.add_parser("oracle-check", help="randomized decode-vs-brute-force check")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve-toy", help="serve a scenario model over the wire protocol")
    p.add_argument("--scenario", required=True)
    p.add_argument("--stdio", action="store_true")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    return parser


def _parse_weights(spec: str | None, n: int) -> tuple[float, ...] | None:
    if spec is None:
        return None
    parts = [float(x) for x in spec.split(",")]
    if len(parts) != n:
        raise _UsageError(f"{len(parts)} weights for {n} models")
    if any(w < 0 for w in parts):
        raise _UsageError("weights must be nonnegative")
    total = sum(parts)
    if total <= 0:
        raise _UsageError("weights must not all be zero")
    return tuple(w / total for w in parts)


def _load_models(specs: Sequence[str]) -> list[ModelAdapter]:
    models: list[ModelAdapter] = []
    for spec in specs:
        if spec.startswith("scenario:"):
            models.append(load_scenario(spec[len("scenario:") :]))
        elif spec.startswith("spawn:"):
            models.append(RemoteModel.connect(spec))
        elif spec.startswith("remote:"):
            models.append(RemoteModel.connect("tcp:" + spec[len("remote:") :]))
        else:
            raise _UsageError(f"unknown model spec {spec!r}")
    return models


def _close_models(models: Sequence[ModelAdapter]) -> None:
    for m in models:
        close = getattr(m, "close", None)
        if close:
            try:
                close()
            except (AdapterError, OSError):
                pass


def _io(args) -> tuple[Any, Any]:
    fin = open(args.input, "rb") if args.input else sys.stdin.buffer
    fout = open(args.output, "wb") if args.output else sys.stdout.buffer
    return fin, fout


def _print_line(fout, text: bytes) -> None:
    if text.startswith(b" "):
        text = text[1:]
    fout.write(text + b"\n")
    fout.flush()


def _run_decode(args) -> int:
    models = _load_models(args.model)
    try:
        weights = _parse_weights(args.weights, len(models))
        cfg = EnsembleConfig(
            weights=weights,
            beam_size=args.beam,
            max_len=args.max_len,
            pop_cap=args.pop_cap if args.pop_cap > 0 else None,
            mode="sample" if args.command == "sample" else "beam",
            rng_seed=args.seed,
        )
        if args.command == "sample" and args.seed is None:
            raise _UsageError("sample requires --seed")
        if args.command == "decode" and len(models) != 1:
            raise _UsageError("decode takes exactly one --model")
        if args.command == "interpolate":
            if len(models) < 2:
                raise _UsageError("interpolate needs at least two --model")
            mixture = InterpolationEnsemble(models, weights)
        fin, fout = _io(args)
        for raw in fin:
            line = raw.rstrip(b"\n").decode("utf-8")
            conds = [{"source": line}] * len(models)
            if args.command == "decode":
                hyps = decode_single(
                    models[0], conds[0], beam_size=args.beam, max_len=args.max_len
                )
                out = hyps[0].text
            elif args.command == "ensemble":
                out = decode(models, conds, cfg)[0].text
            elif args.command == "interpolate":
                hyps = decode_single(
                    mixture, conds[0], beam_size=args.beam, max_len=args.max_len
                )
                out = hyps[0].text
            else:
                out = sample_decode(models, conds, cfg)
            _print_line(fout, out)
        return EXIT_OK
    finally:
        _close_models(models)


def _run_rank(args) -> int:
    models = _load_models(args.model)
    try:
        fin, fout = _io(args)
        candidates = [raw.rstrip(b"\n") for raw in fin]
        for model in models:
            vocab = model.vocabulary
            scores = []
            for cand in candidates:
                ids = vocab.tokenize_greedy(b" " + cand) + [vocab.eos_id]
                scores.append(sequence_score(model, ids))
            best = int(np.argmax(scores)) if scores else -1
            line = "\t".join(
                [model.identity, ",".join(repr(s) for s in scores), f"best={best}"]
            )
            fout.write(line.encode("utf-8") + b"\n")
        fout.flush()
        return EXIT_OK
    finally:
        _close_models(models)


def _run_oracle_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    for trial in range(args.trials):
        scenario = make_agreement_scenario(rng)
        ok, detail = check_decode_vs_oracle(scenario)
        if not ok:
            failures += 1
            print(f"trial {trial}: MISMATCH {detail}", file=sys.stderr)
    print(f"oracle-check: {args.trials - failures}/{args.trials} matched")
    return EXIT_OK if failures == 0 else EXIT_MISMATCH


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("decode", "ensemble", "interpolate", "sample"):
            return _run_decode(args)
        if args.command == "rank":
            return _run_rank(args)
        if args.command == "oracle-check":
            return _run_oracle_check(args)
        if args.command == "serve-toy":
            serve_toy(
                load_scenario(args.scenario),
                stdio=args.stdio,
                host=args.host,
                port=args.port,
            )
            return EXIT_OK
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AdapterError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
