import csv
import json

import pytest

from emostrength.cli import main, resolve_seed
from emostrength.corpus import load_corpus


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-corpus", "--seed", "0", "--n-per-emotion", "10", "--neutral-factor", "1",
                 "--out", str(root / "corpus")]) == 0
    assert main(["train", "--corpus", str(root / "corpus"), "--out", str(root / "run"), "--steps", "2",
                 "--batch-size", "2"]) == 0
    return root


def test_gen_corpus_and_train_outputs(workdir):
    assert len(load_corpus(workdir / "corpus")) == 70
    lines = (workdir / "run" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["step"] for x in lines] == [1, 2]
    assert (workdir / "run" / "final.ckpt").exists()


def test_synthesize_sweep_writes_warning(workdir):
    item = json.loads((workdir / "corpus" / "manifest.jsonl").read_text().splitlines()[3])
    out = workdir / "syn"
    with pytest.warns(UserWarning):
        rc = main(["synthesize", "--checkpoint", str(workdir / "run" / "final.ckpt"), "--ref", item["id"],
                   "--corpus", str(workdir / "corpus"), "--text", "hello", "--sweep", "0.5,3.5",
                   "--max-frames", "6", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(open(out / "features.csv")))
    assert [float(r["alpha"]) for r in rows] == [0.5, 3.5]
    assert len((out / "warnings.jsonl").read_text().splitlines()) == 1
    assert (out / "alpha_0.5.f32").exists()


def test_eval_confusion(workdir):
    out = workdir / "ev"
    assert main(["eval", "confusion", "--checkpoint", str(workdir / "run" / "final.ckpt"),
                 "--corpus", str(workdir / "corpus"), "--out", str(out), "--max-frames", "6"]) == 0
    summary = json.loads((out / "confusion.jsonl").read_text())
    assert 0.0 <= summary["macro_accuracy"] <= 1.0 and summary["total"] == 70


def test_errors_become_exit_codes(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 1
    assert main(["eval", "ordering", "--corpus", str(tmp_path), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_gradcheck_ops_only(capsys):
    assert main(["gradcheck", "--ops-only", "--points", "1"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("EMOS_SEED", "17")
    assert resolve_seed(3) == 17
    monkeypatch.delenv("EMOS_SEED")
    assert resolve_seed(3) == 3
