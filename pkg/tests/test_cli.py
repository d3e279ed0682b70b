import json
import os

import pytest

from setkp.cli import main
from setkp.config import RunConfig, load_run_config, parse_config_file
from setkp.corpus import load_jsonl
from setkp.inference import load_portraits, load_predictions

TINY_CFG = """\
# desk test setup
d = 16
n_heads = 2
ffn_width = 32
n_slots = 4
n_control_keywords = 1
epochs = 3
e1 = 2
batch_size = 4
probe_docs = 2
n_docs = 6
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end run shared by the per-command assertions."""
    root = tmp_path_factory.mktemp("pipe")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CFG, encoding="utf-8")
    paths = {
        "cfg": cfg,
        "corpus": root / "corpus.jsonl",
        "ckpt": root / "model.ckpt",
        "loss": root / "loss.csv",
        "preds": root / "preds.jsonl",
        "portraits": root / "portraits.jsonl",
        "eval": root / "eval.csv",
        "analysis": root / "analysis.csv",
    }
    c = str(cfg)
    steps = [
        ["gen-corpus", "--config", c, "--out", str(paths["corpus"]), "--seed", "3"],
        ["train", "--config", c, "--corpus", str(paths["corpus"]),
         "--out-ckpt", str(paths["ckpt"]), "--loss-csv", str(paths["loss"]), "--seed", "3"],
        ["generate", "--config", c, "--ckpt", str(paths["ckpt"]),
         "--corpus", str(paths["corpus"]), "--out", str(paths["preds"]), "--seed", "3"],
        ["portrait", "--config", c, "--ckpt", str(paths["ckpt"]),
         "--corpus", str(paths["corpus"]), "--out", str(paths["portraits"]), "--seed", "3"],
        ["eval", "--config", c, "--predictions", str(paths["preds"]),
         "--corpus", str(paths["corpus"]), "--out", str(paths["eval"]), "--seed", "3"],
        ["analyze", "--config", c, "--portraits", str(paths["portraits"]),
         "--corpus", str(paths["corpus"]), "--out", str(paths["analysis"]), "--seed", "3"],
    ]
    for argv in steps:
        assert main(argv) == 0, argv[0]
    return paths


def test_gen_corpus_output(pipeline):
    docs = load_jsonl(pipeline["corpus"], 32)
    assert len(docs) == 6
    assert all(d.label for d in docs)
    assert all(2 <= len(d.segments) <= 3 for d in docs)


def test_gen_corpus_deterministic(tmp_path, pipeline):
    out = tmp_path / "again.jsonl"
    assert main(["gen-corpus", "--config", str(pipeline["cfg"]),
                 "--out", str(out), "--seed", "3"]) == 0
    assert out.read_bytes() == pipeline["corpus"].read_bytes()


def test_train_outputs(pipeline):
    assert pipeline["ckpt"].exists()
    lines = pipeline["loss"].read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 1 + 3  # header + one row per epoch
    assert lines[1].startswith("1,stage1,")
    assert lines[3].startswith("3,stage23,")
    # probe columns filled when probe_docs > 0
    assert lines[1].split(",")[5] != ""


def test_generate_rows_cover_corpus(pipeline):
    rows = load_predictions(pipeline["preds"])
    docs = load_jsonl(pipeline["corpus"], 32)
    assert [r["id"] for r in rows] == [d.doc_id for d in docs]
    for row, doc in zip(rows, docs):
        assert [s["level"] for s in row["segments"]] == [s.level for s in doc.segments]
        for seg in row["segments"]:
            assert len(seg["slots"]) == 4
            for s in seg["slots"]:
                assert set(s) == {"text", "null", "group", "confidence"}


def test_generate_deterministic(tmp_path, pipeline):
    out = tmp_path / "again.jsonl"
    assert main(["generate", "--config", str(pipeline["cfg"]), "--ckpt", str(pipeline["ckpt"]),
                 "--corpus", str(pipeline["corpus"]), "--out", str(out), "--seed", "3"]) == 0
    assert out.read_bytes() == pipeline["preds"].read_bytes()


def test_generate_threads_match_serial(tmp_path, pipeline):
    out = tmp_path / "threaded.jsonl"
    assert main(["generate", "--config", str(pipeline["cfg"]), "--ckpt", str(pipeline["ckpt"]),
                 "--corpus", str(pipeline["corpus"]), "--out", str(out),
                 "--seed", "3", "--threads", "3"]) == 0
    assert out.read_bytes() == pipeline["preds"].read_bytes()


def test_portrait_output(pipeline):
    ps = load_portraits(pipeline["portraits"])
    docs = load_jsonl(pipeline["corpus"], 32)
    assert [p.doc_id for p in ps] == [d.doc_id for d in docs]
    for p, d in zip(ps, docs):
        assert [r.level for r in p.levels] == [s.level for s in d.segments]


def test_eval_csv_has_macro_row(pipeline):
    lines = pipeline["eval"].read_text(encoding="utf-8").strip().splitlines()
    assert lines[0].startswith("doc_id,")
    assert len(lines) == 1 + 6 + 1  # header, per-doc rows, macro
    assert lines[-1].startswith("MACRO,")
    for cell in lines[-1].split(",")[1:]:
        assert 0.0 <= float(cell) <= 1.0


def test_analyze_csv_all_modes(pipeline):
    lines = pipeline["analysis"].read_text(encoding="utf-8").strip().splitlines()
    assert [ln.split(",")[0] for ln in lines] == ["mode", "original", "pure", "augmented"]


def test_analyze_single_mode_and_levels(tmp_path, pipeline):
    out = tmp_path / "one.csv"
    assert main(["analyze", "--config", str(pipeline["cfg"]), "--portraits", str(pipeline["portraits"]),
                 "--corpus", str(pipeline["corpus"]), "--out", str(out),
                 "--mode", "original", "--levels", "1,2", "--seed", "3"]) == 0
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith('original,"1,2",')


# ------------------------------------------------------------------- failures


def test_eval_unknown_doc_id_fails(tmp_path, pipeline, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "nope", "segments": []}) + "\n", encoding="utf-8")
    rc = main(["eval", "--config", str(pipeline["cfg"]), "--predictions", str(bad),
               "--corpus", str(pipeline["corpus"]), "--out", str(tmp_path / "e.csv")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_analyze_missing_portraits_fails(tmp_path, pipeline, capsys):
    empty = tmp_path / "none.jsonl"
    empty.write_text("", encoding="utf-8")
    rc = main(["analyze", "--config", str(pipeline["cfg"]), "--portraits", str(empty),
               "--corpus", str(pipeline["corpus"]), "--out", str(tmp_path / "a.csv")])
    assert rc == 1
    assert "portraits missing" in capsys.readouterr().err


def test_bad_levels_flag_fails(tmp_path, pipeline, capsys):
    rc = main(["analyze", "--config", str(pipeline["cfg"]), "--portraits", str(pipeline["portraits"]),
               "--corpus", str(pipeline["corpus"]), "--out", str(tmp_path / "a.csv"),
               "--levels", "one,two"])
    assert rc == 1
    assert "expected e.g. 1,2" in capsys.readouterr().err


def test_missing_checkpoint_fails(tmp_path, pipeline, capsys):
    rc = main(["generate", "--ckpt", str(tmp_path / "absent.ckpt"),
               "--corpus", str(pipeline["corpus"]), "--out", str(tmp_path / "p.jsonl")])
    assert rc == 1


# --------------------------------------------------------------------- config


def test_parse_config_file_values(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("epochs = 5  # comment\nuse_keyword_padding = off\nlr = 1e-3\n", encoding="utf-8")
    got = parse_config_file(p)
    assert got == {"epochs": 5, "use_keyword_padding": False, "lr": 1e-3}


def test_parse_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("nonsense = 1\n", encoding="utf-8")
    with pytest.raises(ValueError):
        parse_config_file(p)


def test_parse_config_rejects_bad_bool(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("use_keyword_padding = maybe\n", encoding="utf-8")
    with pytest.raises(ValueError):
        parse_config_file(p)


def test_config_precedence_flags_over_env_over_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("epochs = 5\nbatch_size = 2\nd = 16\n", encoding="utf-8")
    rc = load_run_config(p, {"epochs": 9}, environ={"SETKP_EPOCHS": "7", "SETKP_BATCH_SIZE": "4"})
    assert rc.epochs == 9  # flag wins
    assert rc.batch_size == 4  # env beats file
    assert rc.d == 16  # file beats default


def test_config_none_flags_ignored():
    rc = load_run_config(None, {"epochs": None, "seed": 11}, environ={})
    assert rc.epochs == RunConfig().epochs
    assert rc.seed == 11


def test_run_config_builds_model_and_train_configs():
    rc = RunConfig(d=16, n_heads=2, n_slots=4, n_control_keywords=1, ffn_width=32,
                   epochs=4, e1=2, seed=9)
    mc = rc.model_config(vocab_size=50)
    assert mc.vocab_size == 50 and mc.d == 16 and mc.n_slots == 4
    tc = rc.train_config()
    assert tc.epochs == 4 and tc.e1 == 2 and tc.seed == 9
