"""Command-line front end: data generation, training, evaluation, prediction,
ablation sweeps, and the finite-difference audit.

Every command is a pure function of (argv, input files, seed). Options may
also come from a key=value config file; explicit flags win over the file,
which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .data import (
    DEFAULT_FEATURE_VALUES,
    FEATURE_DIMENSIONS,
    AnnotatedUtterance,
    CorpusError,
    IntentSpan,
    MaskedExample,
    build_vocabularies,
    load_corpus,
    masked_examples,
    save_corpus,
    utterance_from_json,
    utterance_to_json,
)
from .encoders import EncoderConfig
from .evaluation import (
    classifier_accuracy,
    compare_models,
    evaluate_feature_model,
    evaluate_intent_tagger,
    feature_span_f1,
    intent_span_f1,
    merge_reports,
    report_to_json_text,
)
from .gradcheck import report_lines, run_gradient_checks
from .models import (
    ARCHITECTURES,
    FeatureTaggerCascaded,
    FeatureTaggerFlat,
    GlobalLocalClassifier,
    GlobalLocalConfig,
    IntentTagger,
    ModelError,
    SpanCnnClassifier,
    SpanCnnConfig,
    load_model,
    serialize_model,
)
from .synthetic import SyntheticConfig, generate_synthetic
from .training import TrainingError, history_lines, recipe_for, train

TAGGER_ARCHS = ("intent-tagger", "feature-tagger-flat", "feature-tagger-cascaded")
CLASSIFIER_ARCHS = ("span-cnn", "global-local")
DEFAULT_SEED = 13


class CliError(ValueError):
    """Bad flag combination or unusable option value."""


def _resolve_seed(value: int | None, default: int = DEFAULT_SEED) -> int:
    if value is not None:
        return value
    env = os.environ.get("SPANFEAT_SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise CliError(f"SPANFEAT_SEED must be an integer, got {env!r}") from None


def _read_config_file(path: str) -> dict:
    """key = value lines; values parse as JSON where possible, else strings."""
    overrides = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read config file: {err}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def _dimension_choices():
    return sorted(FEATURE_DIMENSIONS)


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="spanfeat",
        description="Intent-span tagging and intent-feature models over token sequences.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def command(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key = value defaults file; flags override it")
        sub.add_argument("--seed", type=int, default=None,
                         help="random seed (falls back to SPANFEAT_SEED, then 13)")
        subparsers[name] = sub
        return sub

    gen = command("gen-data", "write synthetic train/dev/test corpora")
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--train-size", type=int, default=2000)
    gen.add_argument("--dev-size", type=int, default=500)
    gen.add_argument("--test-size", type=int, default=500)
    gen.add_argument("--rho", type=float, default=0.5,
                     help="probability that a span carries its own feature cue")
    gen.add_argument("--rho-dim", action="append", default=None, metavar="DIM=RHO",
                     help="per-dimension override of --rho; repeatable")
    gen.add_argument("--max-spans", type=int, default=3)

    tr = command("train", "train one model and save its bundle")
    tr.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES))
    tr.add_argument("--train", required=True, dest="train_path")
    tr.add_argument("--dev", dest="dev_path")
    tr.add_argument("--model", required=True, help="output bundle path")
    tr.add_argument("--dimension", choices=_dimension_choices())
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--history", help="write per-epoch loss/metric lines here")
    tr.add_argument("--word-dim", type=int, default=None, help="tagger word embedding size")
    tr.add_argument("--lstm-hidden", type=int, default=None, help="tagger LSTM size per direction")
    tr.add_argument("--embedding-dim", type=int, default=None, help="classifier embedding size")
    tr.add_argument("--filters", type=int, default=None, help="classifier filters per width")
    tr.add_argument("--boundary-dim", type=int, default=None,
                    help="boundary embedding size (cascaded tagger only)")
    tr.add_argument("--constrain-training", action="store_true",
                    help="apply transition constraints inside the training loss (taggers)")
    tr.add_argument("--no-global-context", action="store_true",
                    help="global-local ablation: restrict the global view to the span")
    tr.add_argument("--no-shared-embedding", action="store_true",
                    help="global-local ablation: separate global/local embedding tables")
    tr.add_argument("--share-pooling", action="store_true",
                    help="global-local variant: one conv/pool stack for both views")

    ev = command("eval", "score a saved model on a corpus")
    ev.add_argument("--model", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--pipeline", action="store_true",
                    help="feed the feature model spans predicted by --intent-model")
    ev.add_argument("--intent-model", help="intent tagger bundle for --pipeline")
    ev.add_argument("--out", help="also write the report as JSON here")

    pr = command("predict", "annotate utterances from stdin to stdout")
    pr.add_argument("--model", required=True)

    ab = command("ablate", "train global-local, both ablations, and span-cnn; compare")
    ab.add_argument("--train", required=True, dest="train_path")
    ab.add_argument("--test", required=True, dest="test_path")
    ab.add_argument("--dimension", choices=_dimension_choices(), action="append",
                    default=None, help="repeatable; defaults to all six dimensions")
    ab.add_argument("--epochs", type=int, default=3)
    ab.add_argument("--embedding-dim", type=int, default=None)
    ab.add_argument("--filters", type=int, default=None)
    ab.add_argument("--out", help="also write the comparison table as JSON here")

    gc = command("grad-check", "finite-difference audit of primitives and models")

    return parser, subparsers


def _apply_config_overrides(argv, parser, subparsers):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    overrides = _read_config_file(known.config)
    known_dests = set()
    for sub in subparsers.values():
        known_dests.update(action.dest for action in sub._actions)
    for key in overrides:
        if key not in known_dests:
            raise CliError(f"unknown config key {key!r}")
    for sub in subparsers.values():
        dests = {action.dest for action in sub._actions}
        sub.set_defaults(**{k: v for k, v in overrides.items() if k in dests})


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    rho_by_dimension = {}
    for item in args.rho_dim or ():
        key, sep, value = str(item).partition("=")
        if not sep:
            raise CliError(f"--rho-dim expects DIM=RHO, got {item!r}")
        try:
            rho_by_dimension[key.strip()] = float(value)
        except ValueError:
            raise CliError(f"--rho-dim value must be a number, got {value!r}") from None
    config = SyntheticConfig(
        train_size=args.train_size,
        dev_size=args.dev_size,
        test_size=args.test_size,
        seed=_resolve_seed(args.seed, default=7),
        rho=args.rho,
        rho_by_dimension=rho_by_dimension,
        max_spans=args.max_spans,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = generate_synthetic(config)
    for name, corpus in zip(("train", "dev", "test"), parts):
        save_corpus(corpus, out_dir / f"{name}.jsonl")
        print(f"wrote {out_dir / f'{name}.jsonl'} ({len(corpus)} utterances)")
    return 0


def _check_train_flags(args) -> None:
    arch = args.arch
    if arch == "intent-tagger":
        if args.dimension:
            raise CliError("--dimension applies to feature models, not intent-tagger")
    elif not args.dimension:
        raise CliError(f"--dimension is required for {arch}")
    for flag in ("no_global_context", "no_shared_embedding", "share_pooling"):
        if getattr(args, flag) and arch != "global-local":
            raise CliError(f"--{flag.replace('_', '-')} requires --arch global-local")
    if args.constrain_training and arch not in TAGGER_ARCHS:
        raise CliError("--constrain-training applies to tagger architectures only")
    if args.boundary_dim is not None and arch != "feature-tagger-cascaded":
        raise CliError("--boundary-dim applies to feature-tagger-cascaded only")


def _encoder_config(args) -> EncoderConfig:
    base = EncoderConfig()
    return dataclasses.replace(
        base,
        word_embedding_dims=[args.word_dim] if args.word_dim else base.word_embedding_dims,
        lstm_hidden=args.lstm_hidden or base.lstm_hidden,
    )


def _classifier_kwargs(args) -> dict:
    out = {}
    if args.embedding_dim:
        out["embedding_dim"] = args.embedding_dim
    if args.filters:
        out["filters_per_width"] = args.filters
    return out


def _build_model(args, seed, word_vocab, char_vocab, intents):
    arch = args.arch
    if arch == "intent-tagger":
        return IntentTagger(
            word_vocab, char_vocab, intents, _encoder_config(args),
            seed=seed, constrain_training=args.constrain_training,
        )
    if arch == "feature-tagger-flat":
        return FeatureTaggerFlat(
            word_vocab, char_vocab, args.dimension, _encoder_config(args),
            seed=seed, constrain_training=args.constrain_training,
        )
    if arch == "feature-tagger-cascaded":
        return FeatureTaggerCascaded(
            word_vocab, char_vocab, args.dimension, _encoder_config(args),
            seed=seed, constrain_training=args.constrain_training,
            boundary_dim=args.boundary_dim or 10,
        )
    if arch == "span-cnn":
        return SpanCnnClassifier(
            word_vocab, args.dimension, SpanCnnConfig(**_classifier_kwargs(args)), seed=seed,
        )
    config = GlobalLocalConfig(
        share_encoder_embedding=not args.no_shared_embedding,
        use_global_context=not args.no_global_context,
        share_pooling_params=args.share_pooling,
        **_classifier_kwargs(args),
    )
    return GlobalLocalClassifier(word_vocab, args.dimension, config, seed=seed)


def _train_one(model, train_corpus, dev_corpus, epochs, seed, batch_size=None, lr=None):
    """Wire a model to its stock optimizer recipe and run the loop."""
    config, clip = recipe_for(model.architecture, epochs=epochs, seed=seed)
    replacements = {}
    if batch_size:
        replacements["batch_size"] = batch_size
    if lr:
        replacements["learning_rate"] = lr
    if replacements:
        config = dataclasses.replace(config, **replacements)

    if model.architecture in CLASSIFIER_ARCHS:
        examples = masked_examples(train_corpus, model.dimension)
        dev = masked_examples(dev_corpus, model.dimension) if dev_corpus else None
        metric = classifier_accuracy
    else:
        examples = train_corpus
        dev = dev_corpus
        metric = intent_span_f1 if isinstance(model, IntentTagger) else feature_span_f1
    history = train(model, examples, config, dev_examples=dev, metric=metric, grad_clip=clip)
    return history


def _cmd_train(args) -> int:
    _check_train_flags(args)
    seed = _resolve_seed(args.seed)
    require = args.arch != "intent-tagger"
    train_corpus = load_corpus(args.train_path, require_features=require)
    dev_corpus = load_corpus(args.dev_path, require_features=require) if args.dev_path else None
    if not train_corpus:
        raise CliError(f"no utterances in {args.train_path}")
    word_vocab, char_vocab = build_vocabularies(train_corpus)
    intents = sorted({s.intent for u in train_corpus for s in u.spans})
    if args.arch == "intent-tagger" and not intents:
        raise CliError("training corpus has no intent spans")

    model = _build_model(args, seed, word_vocab, char_vocab, intents)
    history = _train_one(
        model, train_corpus, dev_corpus, args.epochs, seed,
        batch_size=args.batch_size, lr=args.lr,
    )
    serialize_model(model, args.model)
    if args.history:
        Path(args.history).write_text(history_lines(history), encoding="utf-8")
    last = history[-1]
    best = max((r.dev_metric for r in history if r.dev_metric is not None), default=None)
    summary = f"trained {args.arch} for {len(history)} epochs; final train_loss={last.train_loss:.4f}"
    if best is not None:
        summary += f" best_dev_metric={best:.4f}"
    print(f"{summary}; saved to {args.model}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    corpus_tag = Path(args.corpus).name
    if args.pipeline and not args.intent_model:
        raise CliError("--pipeline needs --intent-model")
    if isinstance(model, IntentTagger):
        if args.pipeline:
            raise CliError("--pipeline applies to feature models, not intent-tagger")
        corpus = load_corpus(args.corpus, require_features=False)
        report = evaluate_intent_tagger(model, corpus, corpus_tag=corpus_tag)
    else:
        corpus = load_corpus(args.corpus)
        tagger = None
        if args.pipeline:
            tagger = load_model(args.intent_model)
            if not isinstance(tagger, IntentTagger):
                raise CliError("--intent-model must be an intent-tagger bundle")
        report = evaluate_feature_model(model, corpus, corpus_tag=corpus_tag, intent_tagger=tagger)
    sys.stdout.write(report.to_text())
    if args.out:
        Path(args.out).write_text(report_to_json_text(report), encoding="utf-8")
    return 0


def _full_features(span: IntentSpan, dimension: str | None = None, label: str | None = None) -> dict:
    features = dict(DEFAULT_FEATURE_VALUES)
    features.update(span.features)
    if dimension is not None:
        features[dimension] = label
    return features


def _predict_utterance(model, u: AnnotatedUtterance) -> AnnotatedUtterance:
    if isinstance(model, IntentTagger):
        spans = [
            IntentSpan(s.start, s.end, s.intent, dict(DEFAULT_FEATURE_VALUES))
            for s in model.tag(u.tokens)
        ]
        return AnnotatedUtterance(tokens=u.tokens, spans=spans)
    if isinstance(model, (FeatureTaggerFlat, FeatureTaggerCascaded)):
        labels = model.labels_for(u.tokens, u.spans)
    else:
        labels = []
        for s in u.spans:
            mask = [0] * len(u.tokens)
            for i in s.token_range():
                mask[i] = 1
            example = MaskedExample(tokens=u.tokens, mask=mask, gold=0)
            labels.append(model.labels[model.classify(example)])
    spans = [
        IntentSpan(s.start, s.end, s.intent, _full_features(s, model.dimension, label))
        for s, label in zip(u.spans, labels)
    ]
    return AnnotatedUtterance(tokens=u.tokens, spans=spans)


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    for lineno, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        try:
            utterance = utterance_from_json(json.loads(line))
        except (json.JSONDecodeError, CorpusError) as err:
            raise CorpusError(f"stdin:{lineno}: {err}") from None
        annotated = _predict_utterance(model, utterance)
        sys.stdout.write(json.dumps(utterance_to_json(annotated), ensure_ascii=False) + "\n")
    return 0


ABLATION_ROLES = (
    ("global-local", {}),
    ("span-cnn", {}),
    ("no-global-context", {"use_global_context": False}),
    ("no-shared-embedding", {"share_encoder_embedding": False}),
)


def _cmd_ablate(args) -> int:
    seed = _resolve_seed(args.seed)
    train_corpus = load_corpus(args.train_path)
    test_corpus = load_corpus(args.test_path)
    word_vocab, _ = build_vocabularies(train_corpus)
    dimensions = args.dimension or _dimension_choices()
    size = {}
    if args.embedding_dim:
        size["embedding_dim"] = args.embedding_dim
    if args.filters:
        size["filters_per_width"] = args.filters

    reports = {}
    for role, tweaks in ABLATION_ROLES:
        sections = []
        for dimension in dimensions:
            if role == "span-cnn":
                model = SpanCnnClassifier(word_vocab, dimension, SpanCnnConfig(**size), seed=seed)
            else:
                model = GlobalLocalClassifier(
                    word_vocab, dimension, GlobalLocalConfig(**size, **tweaks), seed=seed,
                )
            _train_one(model, train_corpus, None, args.epochs, seed)
            sections.append(
                evaluate_feature_model(model, test_corpus, corpus_tag=Path(args.test_path).name)
            )
            print(
                f"{role:<22} {dimension:<24} micro_f1="
                f"{sections[-1].dimensions[dimension].micro_f1:.4f}",
                flush=True,
            )
        reports[role] = merge_reports(sections, model_tag=role)

    result = compare_models(reports)
    sys.stdout.write(result.to_text())
    if args.out:
        payload = {
            "micro_f1": result.micro_table,
            "failures": result.failures,
            "verdict": result.verdict,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0 if result.verdict == "PASS" else 1


def _cmd_grad_check(args) -> int:
    results = run_gradient_checks(seed=_resolve_seed(args.seed))
    for line in report_lines(results):
        print(line)
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "grad-check": _cmd_grad_check,
}


def run(argv: list[str]) -> int:
    parser, subparsers = _build_parser()
    try:
        _apply_config_overrides(argv, parser, subparsers)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (CliError, CorpusError, ModelError, TrainingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err.filename or err} not found", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
