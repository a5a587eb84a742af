"""Command-line surface: insert, extract, train-*, attack, sweep, eval.

Every run with an identical invocation and inputs produces identical
outputs. JSON artifacts embed a run manifest; plain-text artifacts
(generated or cropped code) get a `<path>.manifest.json` sidecar so the
code bytes the extractor scores stay untouched.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bundled import corpus_texts
from .core import (
    CodemarkError,
    GenerationContext,
    GenerationParams,
    PRESETS,
    WatermarkConfig,
    WatermarkKey,
    WatermarkMessage,
    Vocabulary,
    decode_message,
    encode_message,
    load_config,
)
from .decode import generate, generate_unwatermarked
from .evalkit import (
    CodeBleuWeights,
    Pipeline,
    SweepPlan,
    bleu_proxy,
    crop_attack,
    plot_data_files,
    rows_to_csv,
    rows_to_json,
    run_sweep,
)
from .extract import extract_parallel
from .lexing import build_type_map, minilang_lexer, TypeVocabMap
from .lmsource import ExternalProvider, NgramLM, greedy_encode, train_ngram
from .typepred import PredictorTrainingConfig, TypeGuide, TypePredictor, train_predictor

DEFAULT_KEY_HEX = "000102030405060708090a0b0c0d0e0f"

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_LEXERS = {"mini": minilang_lexer()}


class _DataError(Exception):
    pass


def _lexer_for(name: str):
    if name not in _LEXERS:
        raise _DataError(f"unknown lexer {name!r}; available: {sorted(_LEXERS)}")
    return _LEXERS[name]


def _read_corpus(spec: str) -> list[str]:
    if spec == "bundled":
        return list(corpus_texts().values())
    root = Path(spec)
    if not root.is_dir():
        raise _DataError(f"corpus directory {spec!r} does not exist")
    texts = [p.read_text(encoding="utf-8") for p in sorted(root.iterdir()) if p.is_file()]
    if not texts:
        raise _DataError(f"corpus directory {spec!r} has no files")
    return texts


def _config_dict(args) -> dict[str, str]:
    if getattr(args, "config", None):
        return load_config(args.config)
    return {}


def _opt(args, config: dict, name: str, cast, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        raw = config[name]
        return cast(raw)
    return default


def _manifest(args, command: str, inputs: dict) -> dict:
    return {
        "schema_version": 1,
        "tool": "codemark",
        "version": __version__,
        "command": command,
        "seed": getattr(args, "seed", None) or 0,
        "inputs": {k: v for k, v in sorted(inputs.items()) if v is not None},
    }


def _write_text_artifact(path: str | None, text: str, manifest: dict) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    Path(path).write_text(text, encoding="utf-8")
    Path(path + ".manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _write_json_artifact(path: str | None, payload: dict) -> None:
    blob = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(blob)
    else:
        Path(path).write_text(blob, encoding="utf-8")


def _load_source(args):
    """Logit source from --lm or --provider-cmd."""
    if getattr(args, "lm", None):
        return NgramLM.load(args.lm), None
    if getattr(args, "provider_cmd", None):
        provider = ExternalProvider.from_command(args.provider_cmd)
        return provider, provider
    raise _DataError("need --lm MODEL or --provider-cmd COMMAND")


def _encode_prompt(args, source, lexer, text: str) -> list[int]:
    if isinstance(source, NgramLM):
        return source.encode_text(lexer, text)
    return greedy_encode(source.vocabulary(), text)


def _message(args, config, bits: int) -> WatermarkMessage:
    message = _opt(args, config, "message", int, None)
    message_text = _opt(args, config, "message_text", str, None)
    if message is not None and message_text is not None:
        raise _DataError("give either --message or --message-text, not both")
    if message_text is not None:
        return encode_message(message_text, bits)
    if message is None:
        raise _DataError("need --message INT or --message-text TEXT")
    return WatermarkMessage(int(message), bits)


def _key(args, config) -> WatermarkKey:
    return WatermarkKey.from_hex(_opt(args, config, "key", str, DEFAULT_KEY_HEX))


def _tokenizer_vocab(args) -> Vocabulary:
    if getattr(args, "lm", None):
        return NgramLM.load(args.lm).vocabulary()
    if getattr(args, "vocab", None):
        return Vocabulary.load(args.vocab)
    if getattr(args, "provider_cmd", None):
        with ExternalProvider.from_command(args.provider_cmd) as provider:
            return provider.vocabulary()
    raise _DataError("need --lm, --vocab, or --provider-cmd to resolve the vocabulary")


def cmd_insert(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    bits = _opt(args, config, "bits", int, 20)
    preset = _opt(args, config, "preset", str, None)
    if preset is not None and preset not in PRESETS:
        raise _DataError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    preset_beta, preset_gamma = PRESETS[preset] if preset else PRESETS["default"]
    beta = _opt(args, config, "beta", float, preset_beta)
    gamma = _opt(args, config, "gamma", float, preset_gamma)
    green = _opt(args, config, "green_fraction", float, 0.5)
    seed = _opt(args, config, "seed", int, 0)

    if args.prompt_file:
        prompt_text = Path(args.prompt_file).read_text(encoding="utf-8")
    elif args.prompt is not None:
        prompt_text = args.prompt
    else:
        raise _DataError("need --prompt-file or --prompt")

    message = _message(args, config, bits)
    key = _key(args, config)
    wm = WatermarkConfig(message, key, beta, gamma, green)
    params = GenerationParams(
        max_new_tokens=_opt(args, config, "max_new_tokens", int, 200),
        temperature=_opt(args, config, "temperature", float, 0.75),
        repetition_penalty=_opt(args, config, "repetition_penalty", float, 1.2),
        no_repeat_ngram=_opt(args, config, "no_repeat_ngram", int, 10),
        sampling_mode=_opt(args, config, "sampling_mode", str, "greedy"),
    )

    source, provider = _load_source(args)
    try:
        guide = None
        if args.predictor and args.type_map:
            guide = TypeGuide(
                TypePredictor.load(args.predictor),
                TypeVocabMap.load(args.type_map),
                lexer,
                continuation_allowance=not args.no_continuation,
            )
        elif args.predictor or args.type_map:
            raise _DataError("--predictor and --type-map must be given together")

        prompt_ids = _encode_prompt(args, source, lexer, prompt_text)
        if not prompt_ids:
            raise _DataError("prompt is empty after tokenization")
        ctx = GenerationContext(tuple(prompt_ids))
        result = generate(source, ctx, wm, guide, params, seed=seed)
    finally:
        if provider is not None:
            provider.close()

    text = source.vocabulary().decode(result.ids)
    manifest = _manifest(
        args,
        "insert",
        {
            "message": message.value,
            "bits": bits,
            "beta": beta,
            "gamma": gamma,
            "green_fraction": green,
            "lm": getattr(args, "lm", None),
            "provider_cmd": getattr(args, "provider_cmd", None),
            "predictor": args.predictor,
            "type_map": args.type_map,
            "prompt_file": args.prompt_file,
            "max_new_tokens": params.max_new_tokens,
            "error": result.error,
        },
    )
    _write_text_artifact(args.out, text, manifest)
    if args.trace:
        _write_json_artifact(
            args.trace,
            {
                "schema_version": 1,
                "manifest": manifest,
                "prompt_ids": list(ctx.prompt_ids),
                "generated_ids": list(result.ids),
                "traces": [t.to_dict() for t in result.traces],
                "error": result.error,
            },
        )
    return 0 if result.error is None else EXIT_DATA


def cmd_extract(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    bits = _opt(args, config, "bits", int, 20)
    key = _key(args, config)
    green = _opt(args, config, "green_fraction", float, 0.5)
    text = Path(args.input).read_text(encoding="utf-8")

    if getattr(args, "lm", None):
        lm = NgramLM.load(args.lm)
        ids = lm.encode_text(lexer, text)
    else:
        ids = greedy_encode(_tokenizer_vocab(args), text)

    result = extract_parallel(
        ids,
        key,
        bits=bits,
        workers=args.workers,
        mode=args.mode,
        green_fraction=green,
    )
    payload = result.to_dict()
    payload["decoded"] = decode_message(result.best_message)
    payload["schema_version"] = 1
    payload["manifest"] = _manifest(
        args,
        "extract",
        {
            "input": args.input,
            "bits": bits,
            "mode": args.mode,
            "workers": args.workers,
            "lm": getattr(args, "lm", None),
            "vocab": getattr(args, "vocab", None),
        },
    )
    _write_json_artifact(args.out, payload)
    return 0


def cmd_train_lm(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    texts = _read_corpus(args.corpus)
    lm = train_ngram(
        texts,
        lexer,
        order=args.order,
        eps=args.eps,
        tokenizer=args.tokenizer,
    )
    lm.save(args.out)
    _write_json_artifact(
        None,
        {
            "schema_version": 1,
            "model": args.out,
            "order": lm.order,
            "tokenizer": lm.tokenizer,
            "vocab_size": lm.vocab.size,
            "manifest": _manifest(args, "train-lm", {"corpus": args.corpus}),
        },
    )
    return 0


def cmd_train_predictor(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    seed = _opt(args, config, "seed", int, 0)
    texts = _read_corpus(args.corpus)
    cfg = PredictorTrainingConfig(
        corpus=texts,
        context_window=args.context,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=seed,
    )
    pred = train_predictor(cfg, lexer)
    pred.save(args.out)
    _write_json_artifact(
        None,
        {
            "schema_version": 1,
            "predictor": args.out,
            "held_out_accuracy": pred.accuracy,
            "context_window": pred.n,
            "manifest": _manifest(args, "train-predictor", {"corpus": args.corpus}),
        },
    )
    return 0


def cmd_build_type_map(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    vocab = _tokenizer_vocab(args)
    tmap = build_type_map(vocab, lexer)
    tmap.save(args.out)
    sizes = {t.name.title(): len(tmap.ids(t)) for t in sorted(tmap._sets)}
    _write_json_artifact(
        None,
        {
            "schema_version": 1,
            "type_map": args.out,
            "vocab_size": vocab.size,
            "set_sizes": sizes,
            "manifest": _manifest(args, "build-type-map", {"lm": getattr(args, "lm", None)}),
        },
    )
    return 0


def cmd_attack(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    seed = _opt(args, config, "seed", int, 0)
    text = Path(args.input).read_text(encoding="utf-8")
    spans = [l.text for l in lexer.lexemes(text)]
    kept = crop_attack(spans, args.crop_rate, args.crop_mode, seed=seed)
    cropped = "".join(kept)
    manifest = _manifest(
        args,
        "attack",
        {"input": args.input, "crop_rate": args.crop_rate, "crop_mode": args.crop_mode},
    )
    _write_text_artifact(args.out, cropped, manifest)
    return 0


def cmd_sweep(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    seed = _opt(args, config, "seed", int, 0)
    key = _key(args, config)
    lm = NgramLM.load(args.lm)
    predictor = TypePredictor.load(args.predictor) if args.predictor else None
    tmap = TypeVocabMap.load(args.type_map) if args.type_map else None
    pipeline = Pipeline(lm, lexer, predictor, tmap)
    texts = _read_corpus(args.corpus)

    grid = [float(v) for v in args.grid.split(",")]
    if args.axis == "length":
        grid = [int(v) for v in grid]
    fixed = {
        "bits": _opt(args, config, "bits", int, 16),
        "beta": _opt(args, config, "beta", float, 5.0),
        "gamma": _opt(args, config, "gamma", float, 3.0),
        "length": _opt(args, config, "length", int, 120),
        "green_fraction": _opt(args, config, "green_fraction", float, 0.5),
        "crop_mode": args.crop_mode,
        "use_tp": predictor is not None,
        "workers": args.workers,
    }
    plan = SweepPlan(axis=args.axis, grid=grid, trials=args.trials, fixed=fixed, seed=seed)
    rows = run_sweep(plan, pipeline, texts, key)
    manifest = _manifest(
        args,
        "sweep",
        {"axis": args.axis, "grid": args.grid, "trials": args.trials, "lm": args.lm},
    )
    if args.out and args.out.endswith(".csv"):
        Path(args.out).write_text(rows_to_csv(rows), encoding="utf-8")
        Path(args.out + ".manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    else:
        _write_json_artifact(args.out, json.loads(rows_to_json(rows, manifest)))
    if args.emit_plot_data:
        outdir = Path(args.emit_plot_data)
        outdir.mkdir(parents=True, exist_ok=True)
        for name, blob in plot_data_files(rows).items():
            (outdir / name).write_text(blob, encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    config = _config_dict(args)
    lexer = _lexer_for(_opt(args, config, "lexer", str, "mini"))
    eta, lam, mu, xi = (float(v) for v in args.weights.split(","))
    weights = CodeBleuWeights(eta, lam, mu, xi)
    candidate = Path(args.candidate).read_text(encoding="utf-8")
    reference = Path(args.reference).read_text(encoding="utf-8")
    _write_json_artifact(
        args.out,
        {
            "schema_version": 1,
            "bleu_proxy": bleu_proxy(candidate, reference, lexer, weights),
            "weights": {"eta": eta, "lam": lam, "mu": mu, "xi": xi},
            "note": "syntax/dataflow match terms not computed; eta+lam renormalized",
            "manifest": _manifest(
                args, "eval", {"candidate": args.candidate, "reference": args.reference}
            ),
        },
    )
    return 0


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--lexer", default=None, help="lexer name (default mini)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codemark",
        description="Insert and extract multi-bit watermarks in generated code.",
    )
    parser.add_argument("--version", action="version", version=f"codemark {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("insert", help="generate watermarked code")
    _add_common(p)
    p.add_argument("--prompt-file")
    p.add_argument("--prompt")
    p.add_argument("--lm")
    p.add_argument("--provider-cmd")
    p.add_argument("--predictor")
    p.add_argument("--type-map")
    p.add_argument("--no-continuation", action="store_true",
                   help="disable the mid-lexeme continuation allowance")
    p.add_argument("--message", type=int, default=None)
    p.add_argument("--message-text", default=None)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--key", default=None)
    p.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--green-fraction", type=float, default=None)
    p.add_argument("--max-new-tokens", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--repetition-penalty", type=float, default=None)
    p.add_argument("--no-repeat-ngram", type=int, default=None)
    p.add_argument("--sampling-mode", default=None, choices=["greedy", "multinomial"])
    p.add_argument("--out", default=None, help="output code file (default stdout)")
    p.add_argument("--trace", default=None, help="optional JSON trace file")
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("extract", help="recover the message from code")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--lm")
    p.add_argument("--vocab")
    p.add_argument("--provider-cmd")
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--key", default=None)
    p.add_argument("--green-fraction", type=float, default=None)
    p.add_argument("--mode", default="from_start", choices=["from_start", "cropped"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-lm", help="train the bundled n-gram logit source")
    _add_common(p)
    p.add_argument("--corpus", default="bundled")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tokenizer", default="lexeme_ws", choices=["lexeme", "lexeme_ws", "char_pair"])
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-predictor", help="train the next-type predictor")
    _add_common(p)
    p.add_argument("--corpus", default="bundled")
    p.add_argument("--out", required=True)
    p.add_argument("--context", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=8e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("build-type-map", help="partition a vocabulary by token type")
    _add_common(p)
    p.add_argument("--lm")
    p.add_argument("--vocab")
    p.add_argument("--provider-cmd")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_type_map)

    p = sub.add_parser("attack", help="crop a code file")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--crop-rate", type=float, required=True)
    p.add_argument("--crop-mode", default="suffix_keep",
                   choices=["suffix_keep", "prefix_keep", "random_window"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run a parameter or robustness study")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=["beta", "gamma", "length", "crop_rate"])
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    p.add_argument("--trials", type=int, default=60)
    p.add_argument("--lm", required=True)
    p.add_argument("--predictor")
    p.add_argument("--type-map")
    p.add_argument("--corpus", default="bundled")
    p.add_argument("--key", default=None)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--green-fraction", type=float, default=None)
    p.add_argument("--crop-mode", default="suffix_keep",
                   choices=["suffix_keep", "prefix_keep", "random_window"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help=".csv or .json report path (default stdout JSON)")
    p.add_argument("--emit-plot-data", default=None, help="directory for per-figure data files")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="compare candidate code against a reference")
    _add_common(p)
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--weights", default="0.10,0.10,0.40,0.40")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (_DataError, CodemarkError, FileNotFoundError, ValueError) as exc:
        json.dump(
            {"error": {"category": "data", "type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover
        json.dump(
            {"error": {"category": "internal", "type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
