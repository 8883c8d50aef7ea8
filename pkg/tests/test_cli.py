"""End-to-end command coverage through run(argv): every command, the error
paths, config-file precedence, and reproducibility."""

import io
import json

import pytest

from spanfeat.cli import run
from spanfeat.data import DEFAULT_FEATURE_VALUES, load_corpus, utterance_to_json
from spanfeat.models import load_model


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code = run([
        "gen-data", "--out-dir", str(root), "--train-size", "40",
        "--dev-size", "10", "--test-size", "10", "--seed", "7",
    ])
    assert code == 0
    return root


TINY_TAGGER = ["--word-dim", "12", "--lstm-hidden", "6", "--epochs", "1"]
TINY_CLASSIFIER = ["--embedding-dim", "12", "--filters", "3", "--epochs", "1"]


def train_args(arch, corpus_dir, model_path, *extra):
    return [
        "train", "--arch", arch, "--train", str(corpus_dir / "train.jsonl"),
        "--model", str(model_path), *extra,
    ]


class TestGenData:
    def test_writes_three_partitions(self, corpus_dir):
        for name, size in (("train", 40), ("dev", 10), ("test", 10)):
            rows = load_corpus(corpus_dir / f"{name}.jsonl")
            assert len(rows) == size

    def test_same_seed_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run([
                "gen-data", "--out-dir", str(tmp_path / sub), "--train-size", "15",
                "--dev-size", "3", "--test-size", "3", "--seed", "21",
            ]) == 0
        for name in ("train", "dev", "test"):
            assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == \
                (tmp_path / "b" / f"{name}.jsonl").read_bytes()

    def test_rho_dim_override(self, tmp_path):
        assert run([
            "gen-data", "--out-dir", str(tmp_path), "--train-size", "5",
            "--dev-size", "2", "--test-size", "2", "--rho-dim", "tense=0.0",
        ]) == 0

    def test_malformed_rho_dim(self, tmp_path, capsys):
        assert run([
            "gen-data", "--out-dir", str(tmp_path), "--rho-dim", "tense",
        ]) == 1
        assert "DIM=RHO" in capsys.readouterr().err

    def test_unknown_rho_dim_dimension(self, tmp_path, capsys):
        assert run([
            "gen-data", "--out-dir", str(tmp_path), "--rho-dim", "mood=0.5",
        ]) == 1
        assert "mood" in capsys.readouterr().err


class TestTrain:
    def test_classifier_bundle_round_trips(self, corpus_dir, tmp_path):
        model_path = tmp_path / "gl.json"
        code = run(train_args(
            "global-local", corpus_dir, model_path, "--dimension", "negation",
            "--dev", str(corpus_dir / "dev.jsonl"), *TINY_CLASSIFIER,
        ))
        assert code == 0
        model = load_model(model_path)
        assert model.architecture == "global-local"
        assert model.dimension == "negation"

    def test_history_file_one_line_per_epoch(self, corpus_dir, tmp_path):
        model_path, history_path = tmp_path / "cnn.json", tmp_path / "history.txt"
        code = run(train_args(
            "span-cnn", corpus_dir, model_path, "--dimension", "tense",
            "--embedding-dim", "12", "--filters", "3", "--epochs", "2",
            "--history", str(history_path),
        ))
        assert code == 0
        lines = history_path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch=1 train_loss=")

    def test_tagger_trains_and_saves(self, corpus_dir, tmp_path):
        model_path = tmp_path / "intent.json"
        code = run(train_args("intent-tagger", corpus_dir, model_path, *TINY_TAGGER))
        assert code == 0
        assert load_model(model_path).architecture == "intent-tagger"

    def test_cascaded_with_boundary_dim(self, corpus_dir, tmp_path):
        model_path = tmp_path / "casc.json"
        code = run(train_args(
            "feature-tagger-cascaded", corpus_dir, model_path,
            "--dimension", "negation", "--boundary-dim", "4", *TINY_TAGGER,
        ))
        assert code == 0
        assert load_model(model_path).boundary_dim == 4

    def test_dimension_on_intent_tagger_rejected(self, corpus_dir, tmp_path, capsys):
        code = run(train_args(
            "intent-tagger", corpus_dir, tmp_path / "x.json", "--dimension", "tense",
        ))
        assert code == 1
        assert "--dimension" in capsys.readouterr().err

    def test_missing_dimension_rejected(self, corpus_dir, tmp_path, capsys):
        code = run(train_args("span-cnn", corpus_dir, tmp_path / "x.json"))
        assert code == 1
        assert "--dimension is required" in capsys.readouterr().err

    def test_ablation_flag_needs_global_local(self, corpus_dir, tmp_path, capsys):
        code = run(train_args(
            "span-cnn", corpus_dir, tmp_path / "x.json", "--dimension", "tense",
            "--no-global-context",
        ))
        assert code == 1
        assert "global-local" in capsys.readouterr().err

    def test_constrain_training_needs_tagger(self, corpus_dir, tmp_path, capsys):
        code = run(train_args(
            "global-local", corpus_dir, tmp_path / "x.json", "--dimension", "tense",
            "--constrain-training",
        ))
        assert code == 1
        assert "tagger" in capsys.readouterr().err

    def test_boundary_dim_needs_cascaded(self, corpus_dir, tmp_path, capsys):
        code = run(train_args(
            "feature-tagger-flat", corpus_dir, tmp_path / "x.json",
            "--dimension", "tense", "--boundary-dim", "4",
        ))
        assert code == 1
        assert "cascaded" in capsys.readouterr().err

    def test_missing_corpus_file(self, tmp_path, capsys):
        code = run([
            "train", "--arch", "span-cnn", "--train", str(tmp_path / "nope.jsonl"),
            "--model", str(tmp_path / "x.json"), "--dimension", "tense",
        ])
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_same_seed_same_bundle(self, corpus_dir, tmp_path):
        paths = [tmp_path / "a.json", tmp_path / "b.json"]
        for path in paths:
            assert run(train_args(
                "span-cnn", corpus_dir, path, "--dimension", "tense",
                "--seed", "5", *TINY_CLASSIFIER,
            )) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestConfigFile:
    def test_file_supplies_defaults_flags_win(self, corpus_dir, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("epochs = 5\nfilters = 3\nembedding-dim = 12  # inline note\n")
        model_path, history_path = tmp_path / "m.json", tmp_path / "h.txt"
        code = run(train_args(
            "span-cnn", corpus_dir, model_path, "--dimension", "tense",
            "--config", str(config), "--epochs", "1", "--history", str(history_path),
        ))
        assert code == 0
        # explicit --epochs 1 beat the file's 5
        assert len(history_path.read_text().splitlines()) == 1
        # the file's embedding size reached the model
        assert load_model(model_path).config.embedding_dim == 12

    def test_unknown_key_rejected(self, corpus_dir, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("learning_rate_warmup = 5\n")
        code = run(train_args(
            "span-cnn", corpus_dir, tmp_path / "m.json", "--dimension", "tense",
            "--config", str(config),
        ))
        assert code == 1
        assert "learning_rate_warmup" in capsys.readouterr().err

    def test_malformed_line_rejected(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("just some words\n")
        assert run(["gen-data", "--out-dir", str(tmp_path), "--config", str(config)]) == 1
        assert "key = value" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    intent, cnn = root / "intent.json", root / "cnn.json"
    assert run(train_args("intent-tagger", corpus_dir, intent, *TINY_TAGGER)) == 0
    assert run(train_args(
        "span-cnn", corpus_dir, cnn, "--dimension", "tense", *TINY_CLASSIFIER,
    )) == 0
    return {"intent": intent, "cnn": cnn}


class TestEval:
    def test_intent_report_text(self, corpus_dir, trained, capsys):
        code = run([
            "eval", "--model", str(trained["intent"]),
            "--corpus", str(corpus_dir / "test.jsonl"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "spans: P=" in out and "boundary-disagreement:" in out

    def test_feature_report_with_json_out(self, corpus_dir, trained, tmp_path, capsys):
        out_path = tmp_path / "report.json"
        code = run([
            "eval", "--model", str(trained["cnn"]),
            "--corpus", str(corpus_dir / "test.jsonl"), "--out", str(out_path),
        ])
        assert code == 0
        assert "micro-F1" in capsys.readouterr().out
        blob = json.loads(out_path.read_text())
        assert blob["span_mode"] == "gold"
        assert "tense" in blob["dimensions"]

    def test_pipeline_mode(self, corpus_dir, trained, capsys):
        code = run([
            "eval", "--model", str(trained["cnn"]),
            "--corpus", str(corpus_dir / "test.jsonl"),
            "--pipeline", "--intent-model", str(trained["intent"]),
        ])
        assert code == 0
        assert "spans=pipeline" in capsys.readouterr().out

    def test_pipeline_needs_intent_model(self, corpus_dir, trained, capsys):
        code = run([
            "eval", "--model", str(trained["cnn"]),
            "--corpus", str(corpus_dir / "test.jsonl"), "--pipeline",
        ])
        assert code == 1
        assert "--intent-model" in capsys.readouterr().err

    def test_pipeline_rejects_intent_tagger_target(self, corpus_dir, trained, capsys):
        code = run([
            "eval", "--model", str(trained["intent"]),
            "--corpus", str(corpus_dir / "test.jsonl"),
            "--pipeline", "--intent-model", str(trained["intent"]),
        ])
        assert code == 1
        assert "feature models" in capsys.readouterr().err

    def test_intent_model_must_be_tagger(self, corpus_dir, trained, capsys):
        code = run([
            "eval", "--model", str(trained["cnn"]),
            "--corpus", str(corpus_dir / "test.jsonl"),
            "--pipeline", "--intent-model", str(trained["cnn"]),
        ])
        assert code == 1
        assert "intent-tagger" in capsys.readouterr().err


class TestPredict:
    def _feed(self, monkeypatch, corpus):
        text = "".join(json.dumps(utterance_to_json(u)) + "\n" for u in corpus)
        monkeypatch.setattr("sys.stdin", io.StringIO(text))

    def test_intent_output_reparses_with_full_features(
        self, corpus_dir, trained, tmp_path, monkeypatch, capsys
    ):
        corpus = load_corpus(corpus_dir / "test.jsonl")[:3]
        self._feed(monkeypatch, corpus)
        assert run(["predict", "--model", str(trained["intent"])]) == 0
        out_path = tmp_path / "predicted.jsonl"
        out_path.write_text(capsys.readouterr().out)
        rows = load_corpus(out_path)  # require_features=True: schema closure
        assert len(rows) == 3
        for u in rows:
            for s in u.spans:
                assert set(s.features) == set(DEFAULT_FEATURE_VALUES)

    def test_feature_model_fills_dimension(
        self, corpus_dir, trained, tmp_path, monkeypatch, capsys
    ):
        corpus = load_corpus(corpus_dir / "test.jsonl")[:2]
        stripped = [
            {"tokens": u.tokens,
             "spans": [{"start": s.start, "end": s.end, "intent": s.intent} for s in u.spans]}
            for u in corpus
        ]
        text = "".join(json.dumps(row) + "\n" for row in stripped)
        monkeypatch.setattr("sys.stdin", io.StringIO(text))
        assert run(["predict", "--model", str(trained["cnn"])]) == 0
        out_path = tmp_path / "predicted.jsonl"
        out_path.write_text(capsys.readouterr().out)
        rows = load_corpus(out_path)
        assert [len(u.spans) for u in rows] == [len(u.spans) for u in corpus]

    def test_blank_lines_skipped(self, trained, monkeypatch, capsys):
        monkeypatch.setattr("sys.stdin", io.StringIO("\n\n"))
        assert run(["predict", "--model", str(trained["intent"])]) == 0
        assert capsys.readouterr().out == ""

    def test_bad_json_names_line(self, trained, monkeypatch, capsys):
        monkeypatch.setattr("sys.stdin", io.StringIO('{"tokens": ["hi"], "spans": []}\nnot json\n'))
        assert run(["predict", "--model", str(trained["intent"])]) == 1
        assert "stdin:2" in capsys.readouterr().err


class TestAblate:
    def test_runs_and_reports_verdict(self, corpus_dir, tmp_path, capsys):
        out_path = tmp_path / "table.json"
        code = run([
            "ablate", "--train", str(corpus_dir / "train.jsonl"),
            "--test", str(corpus_dir / "test.jsonl"), "--dimension", "negation",
            "--epochs", "1", "--embedding-dim", "12", "--filters", "3",
            "--out", str(out_path),
        ])
        out = capsys.readouterr().out
        assert "ordering verdict:" in out
        blob = json.loads(out_path.read_text())
        assert set(blob["micro_f1"]["negation"]) == {
            "global-local", "span-cnn", "no-global-context", "no-shared-embedding",
        }
        assert (code == 0) == (blob["verdict"] == "PASS")


class TestSeedsAndErrors:
    def test_env_seed_fallback(self, corpus_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SPANFEAT_SEED", "77")
        model_path = tmp_path / "m.json"
        assert run(train_args(
            "span-cnn", corpus_dir, model_path, "--dimension", "tense", *TINY_CLASSIFIER,
        )) == 0
        assert json.loads(model_path.read_text())["config"]["seed"] == 77

    def test_flag_beats_env_seed(self, corpus_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SPANFEAT_SEED", "77")
        model_path = tmp_path / "m.json"
        assert run(train_args(
            "span-cnn", corpus_dir, model_path, "--dimension", "tense",
            "--seed", "5", *TINY_CLASSIFIER,
        )) == 0
        assert json.loads(model_path.read_text())["config"]["seed"] == 5

    def test_bad_env_seed(self, corpus_dir, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SPANFEAT_SEED", "many")
        assert run(train_args(
            "span-cnn", corpus_dir, tmp_path / "m.json", "--dimension", "tense",
        )) == 1
        assert "SPANFEAT_SEED" in capsys.readouterr().err

    def test_unknown_command_exits_nonzero(self):
        with pytest.raises(SystemExit):
            run(["serve"])
