import subprocess
import sys
from pathlib import Path

import pytest

from trdec.cli import main
from trdec.corpus import BpeModel, read_bracketed_trees, read_lines
from trdec.tree import is_formed

DATA = Path(__file__).parent / "data"


def head(src, dst, n):
    dst.write_text("".join(src.read_text().splitlines(keepends=True)[:n]))
    return str(dst)


@pytest.fixture
def toy(tmp_path):
    return {
        "src": head(DATA / "toy.src", tmp_path / "src", 4),
        "en": head(DATA / "toy.en", tmp_path / "en", 4),
        "trees": head(DATA / "toy.en.trees", tmp_path / "trees", 4),
        "dir": tmp_path,
    }


def small_config(path, **kw):
    opts = {"hidden": 8, "embed": 8, "epochs": 2, "dtype": "float64", "log_every": 2, **kw}
    path.write_text("".join(f"{k} = {v}\n" for k, v in opts.items()))
    return str(path)


def test_bpe_commands(toy):
    d = toy["dir"]
    assert main(["learn-bpe", "--input", toy["en"], "--merges", "20", "--out", str(d / "bpe")]) == 0
    assert len(BpeModel.load(d / "bpe").merges) == 20
    main(["apply-bpe", "--bpe", str(d / "bpe"), "--input", toy["en"], "--out", str(d / "en.bpe")])
    pieces = read_lines(d / "en.bpe")
    assert all(p[0].startswith("_") for p in pieces)
    assert ["".join(p).replace("_", " ").split() for p in pieces] == read_lines(toy["en"])


@pytest.mark.parametrize("variant", ["con", "con-null", "binary"])
def test_build_trees(toy, variant):
    out = toy["dir"] / f"{variant}.trees"
    assert main(["build-trees", "--variant", variant, "--trees", toy["trees"], "--out", str(out)]) == 0
    trees = read_bracketed_trees(out)
    assert len(trees) == (8 if variant == "binary" else 4)
    assert all(is_formed(t) for t in trees)


def test_build_dependency_trees(tmp_path):
    deps = tmp_path / "deps.conll"
    deps.write_text("1\tthe\t2\n2\tcat\t3\n3\tsat\t0\n\n")
    out = tmp_path / "dep.trees"
    main(["build-trees", "--variant", "dep", "--deps", str(deps), "--out", str(out)])
    assert read_bracketed_trees(out)[0].leaves() == ["the", "cat", "sat"]


def test_build_trees_needs_input(tmp_path):
    with pytest.raises(SystemExit):
        main(["build-trees", "--variant", "con", "--out", str(tmp_path / "x")])


@pytest.mark.parametrize("mode", ["trdec", "seq2seq", "lin"])
def test_train_translate_evaluate(toy, mode, capsys):
    d = toy["dir"]
    main(["build-trees", "--variant", "con", "--trees", toy["trees"], "--out", str(d / "t")])
    ckpt, log = d / "m.ckpt", d / "log.tsv"
    args = ["train", "--config", small_config(d / "cfg"), "--mode", mode, "--src", toy["src"],
            "--log", str(log), "--out", str(ckpt)]
    args += ["--tgt", toy["en"]] if mode == "seq2seq" else ["--trees", str(d / "t")]
    assert main(args) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "step\tloss\tdev_loss"
    # header, a periodic line every 2 of the 8 updates, one line per epoch
    assert len(lines) == 1 + 4 + 2
    hyp = d / "hyp"
    main(["translate", "--checkpoint", str(ckpt), "--src", toy["src"], "--beam", "2",
          "--out", str(hyp), "--dump-trees", str(d / "hyp.trees")])
    assert len(hyp.read_text().splitlines()) == 4
    assert len((d / "hyp.trees").read_text().splitlines()) == 4
    capsys.readouterr()
    main(["evaluate", "--hyp", str(hyp), "--ref", toy["en"]])
    assert capsys.readouterr().out.startswith("bleu\t")


def test_train_with_dev_set(toy):
    d = toy["dir"]
    main(["build-trees", "--variant", "con-null", "--trees", toy["trees"], "--out", str(d / "t")])
    main(["train", "--config", small_config(d / "cfg", epochs=1), "--src", toy["src"], "--trees", str(d / "t"),
          "--dev-src", toy["src"], "--dev-trees", str(d / "t"), "--log", str(d / "log"), "--out", str(d / "m")])
    last = (d / "log").read_text().splitlines()[-1].split("\t")
    assert float(last[2]) > 0


def test_binary_training_pairs_each_sentence_with_two_trees(toy, capsys):
    d = toy["dir"]
    main(["build-trees", "--variant", "binary", "--text", toy["en"], "--out", str(d / "b")])
    main(["train", "--config", small_config(d / "cfg", epochs=1), "--src", toy["src"], "--trees", str(d / "b"),
          "--log", str(d / "log"), "--out", str(d / "m")])
    assert "trained 8 examples" in capsys.readouterr().err


def test_analyze_length(tmp_path):
    ref = tmp_path / "ref"
    ref.write_text("a b c d e\n" + " ".join("w" for _ in range(15)) + "\n")
    hyp = tmp_path / "hyp"
    hyp.write_text("a b c d e\n" + " ".join("w" for _ in range(12)) + "\n")
    out = tmp_path / "out"
    main(["analyze-length", "--hyp", str(hyp), "--ref", str(ref), "--baseline-hyp", str(ref),
          "--buckets", "10,20", "--out", str(out)])
    text = out.read_text().splitlines()
    assert text[0] == "bucket\tcount\tbleu\tbaseline_bleu\tgain"
    assert text[1].startswith("1-10\t1\t100.00\t100.00\t0.00")
    assert text[2].startswith("11-20\t1\t")
    assert text[-2:] == ["-3\t1", "0\t1"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "trdec.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("learn-bpe", "apply-bpe", "build-trees", "train", "translate", "evaluate", "analyze-length"):
        assert cmd in r.stdout
