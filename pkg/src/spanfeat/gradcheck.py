"""Finite-difference audits for every primitive and every model family.

Each check builds a small deterministic instance, computes the analytic
gradient on the tape, and compares against central differences. Primitives
get a tighter budget than whole models because the model checks compound
hundreds of operations and accumulate legitimate floating-point noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crf import CrfParams, build_iobes_constraints, crf_nll, log_partition
from .data import FEATURE_DIMENSIONS, AnnotatedUtterance, IntentSpan, MaskedExample, Vocabulary
from .encoders import EncoderConfig
from .models import (
    FeatureTaggerCascaded,
    FeatureTaggerFlat,
    GlobalLocalClassifier,
    GlobalLocalConfig,
    IntentTagger,
    SpanCnnClassifier,
    SpanCnnConfig,
)
from .tensor import (
    Tensor,
    add,
    concat,
    conv1d_same,
    gather_rows,
    grad_check,
    lstm_cell,
    matmul,
    max_over_time,
    relu,
    scale,
    softmax_cross_entropy,
    stack_rows,
    sub,
    unstack_rows,
)

__all__ = [
    "CheckResult",
    "PRIMITIVE_BUDGET",
    "MODEL_BUDGET",
    "check_primitives",
    "check_architectures",
    "run_gradient_checks",
    "report_lines",
]

PRIMITIVE_BUDGET = 1e-5
MODEL_BUDGET = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float
    budget: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.budget

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:<5} {self.name:<34} max_rel_err={self.max_error:.3e} budget={self.budget:.0e}"


def _away_from_zero(rng, shape) -> Tensor:
    """Magnitudes in [0.2, 1.0] with random signs, so ReLU kinks and max ties
    sit far outside the finite-difference step."""
    return Tensor(rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))


def _dot(v: Tensor, probe: Tensor) -> Tensor:
    return matmul(v, probe)


def _pin(m: Tensor, left: Tensor, right: Tensor) -> Tensor:
    """Scalarize a matrix with fixed probe vectors; asymmetric weights keep
    transposition mistakes visible."""
    return matmul(matmul(left, m), right)


def check_primitives(seed: int = 13) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, function, inputs):
        results.append(CheckResult(name, grad_check(function, inputs), PRIMITIVE_BUDGET))

    a, b = _away_from_zero(rng, (3, 4)), _away_from_zero(rng, (4, 2))
    u3, v2 = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=2))
    run("matmul", lambda: _pin(matmul(a, b), u3, v2), [a, b])

    c, d = _away_from_zero(rng, (3, 4)), _away_from_zero(rng, (3, 4))
    v4 = Tensor(rng.normal(size=4))
    run("add", lambda: _pin(add(c, d), u3, v4), [c, d])
    bias = _away_from_zero(rng, 4)
    run("add-bias", lambda: _pin(add(c, bias), u3, v4), [c, bias])
    run("sub", lambda: _pin(sub(c, d), u3, v4), [c, d])
    run("scale", lambda: _pin(scale(c, -1.7), u3, v4), [c])
    run("relu", lambda: _pin(relu(c), u3, v4), [c])

    e, f = _away_from_zero(rng, (3, 2)), _away_from_zero(rng, (3, 3))
    v5 = Tensor(rng.normal(size=5))
    run("concat", lambda: _pin(concat([e, f]), u3, v5), [e, f])
    run(
        "stack-unstack",
        lambda: _pin(stack_rows(list(reversed(unstack_rows(c)))), u3, v4),
        [c],
    )

    table = _away_from_zero(rng, (5, 3))
    u4 = Tensor(rng.normal(size=4))
    run("gather-rows", lambda: _pin(gather_rows(table, [0, 2, 2, 4]), u4, u3), [table])

    seq = _away_from_zero(rng, (6, 3))
    filters = Tensor(rng.normal(size=(3, 3, 4)) * 0.5)
    cbias = Tensor(rng.normal(size=4) * 0.1)
    u6 = Tensor(rng.normal(size=6))
    run("conv1d-same", lambda: _pin(conv1d_same(seq, filters, cbias), u6, v4), [seq, filters, cbias])
    run("max-over-time", lambda: _dot(max_over_time(seq), u3), [seq])

    x, h, cs = _away_from_zero(rng, 3), _away_from_zero(rng, 4), _away_from_zero(rng, 4)
    wx = Tensor(rng.normal(size=(3, 16)) * 0.4)
    wh = Tensor(rng.normal(size=(4, 16)) * 0.4)
    gb = Tensor(rng.normal(size=16) * 0.2)
    probes = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))

    def lstm_scalar():
        h_new, c_new = lstm_cell(x, h, cs, wx, wh, gb)
        return add(_dot(h_new, probes[0]), _dot(c_new, probes[1]))

    run("lstm-cell", lstm_scalar, [x, h, cs, wx, wh, gb])

    logits = Tensor(rng.normal(size=5))
    run("softmax-cross-entropy", lambda: softmax_cross_entropy(logits, 2), [logits])

    tags = build_iobes_constraints(["O", "B-x", "I-x", "E-x", "S-x"])
    params = CrfParams(5)
    params.transitions.values[:] = rng.normal(size=params.transitions.shape) * 0.3
    emissions = Tensor(rng.normal(size=(4, 5)))
    run("crf-log-partition", lambda: log_partition(emissions, params), [emissions, params.transitions])
    run(
        "crf-log-partition-constrained",
        lambda: log_partition(emissions, params, tags),
        [emissions, params.transitions],
    )
    gold = [1, 2, 3, 0]  # B-x I-x E-x O
    run(
        "crf-nll-constrained",
        lambda: crf_nll(emissions, params, gold, tags),
        [emissions, params.transitions],
    )
    return results


_TOKENS = ["please", "install", "the", "printer", "now"]
_FEATURES = {
    "communicative_function": "request-action",
    "attr_cf": "self",
    "attr_ev": "other",
    "negation": "positive",
    "tense": "future",
    "modality": "other",
}


def _tiny_setup():
    word = Vocabulary.build([_TOKENS], min_count=1)
    char = Vocabulary.build([list(t) for t in _TOKENS], min_count=1)
    encoder = EncoderConfig(
        word_embedding_dims=[5], char_embedding_dim=3, char_filters=3,
        char_filter_width=2, lstm_hidden=4,
    )
    utterance = AnnotatedUtterance(
        tokens=_TOKENS,
        spans=[
            IntentSpan(0, 2, "install", dict(_FEATURES)),
            IntentSpan(2, 5, "cancel", dict(_FEATURES, tense="past")),
        ],
    )
    example = MaskedExample(
        tokens=_TOKENS, mask=[0, 1, 1, 1, 0],
        gold=FEATURE_DIMENSIONS["tense"].index("future"),
    )
    return word, char, encoder, utterance, example


def check_architectures(seed: int = 13) -> list[CheckResult]:
    word, char, encoder, utterance, example = _tiny_setup()
    span_config = SpanCnnConfig(embedding_dim=5, filter_widths=[2, 3], filters_per_width=3)
    gl_config = GlobalLocalConfig(embedding_dim=5, filter_widths=[2, 3], filters_per_width=3)
    models = [
        (IntentTagger(word, char, ["install", "cancel"], encoder, seed=seed), utterance),
        (FeatureTaggerFlat(word, char, "tense", encoder, seed=seed), utterance),
        (FeatureTaggerCascaded(word, char, "tense", encoder, seed=seed, boundary_dim=3), utterance),
        (SpanCnnClassifier(word, "tense", span_config, seed=seed), example),
        (GlobalLocalClassifier(word, "tense", gl_config, seed=seed), example),
    ]
    results = []
    for model, instance in models:
        inputs = list(model.parameters().values())
        error = grad_check(lambda m=model, i=instance: m.loss(i), inputs)
        results.append(CheckResult(model.architecture, error, MODEL_BUDGET))
    return results


def run_gradient_checks(seed: int = 13) -> list[CheckResult]:
    return check_primitives(seed) + check_architectures(seed)


def report_lines(results: list[CheckResult]) -> list[str]:
    lines = [r.line() for r in results]
    worst = max(results, key=lambda r: r.max_error / r.budget)
    verdict = "all gradient checks passed" if all(r.passed for r in results) else "GRADIENT CHECKS FAILED"
    lines.append(f"{verdict} (worst: {worst.name} at {worst.max_error:.3e})")
    return lines
