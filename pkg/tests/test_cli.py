import json
import os

import pytest

from morse import cli
from morse.data import parse_trmor
from morse.model import CHECKPOINT_MAGIC, load_checkpoint

from conftest import TOY, data_path

SMALL = """\
train = toy.trmor
dev = toy.trmor
format = trmor
hidden_size = 8
char_embed_size = 4
feat_embed_size = 4
max_epochs = 3
seed = 1
"""


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.TEST_MODE_ENV, "1")
    (tmp_path / "toy.trmor").write_text(TOY, encoding="utf-8")
    (tmp_path / "small.cfg").write_text(SMALL, encoding="utf-8")
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


class TestExitCodes:
    def test_no_command(self):
        assert run() == 1

    def test_unknown_flag(self, work):
        assert run("train", "--config", work / "small.cfg", "--bogus") == 1

    def test_missing_config(self, work):
        assert run("train", "--config", work / "nope.cfg", "--out", work / "o") == 1

    def test_unknown_key(self, work):
        (work / "bad.cfg").write_text(SMALL + "colour = red\n")
        assert run("train", "--config", work / "bad.cfg", "--out", work / "o") == 1

    def test_bad_value(self, work):
        (work / "bad.cfg").write_text(SMALL.replace("hidden_size = 8", "hidden_size = many"))
        assert run("train", "--config", work / "bad.cfg", "--out", work / "o") == 1

    def test_missing_train_file_leaves_no_checkpoint(self, work):
        (work / "miss.cfg").write_text(SMALL.replace("train = toy.trmor", "train = gone.trmor"))
        out = work / "o"
        assert run("train", "--config", work / "miss.cfg", "--out", out) == 2
        assert not (out / "model.ckpt").exists()
        assert not [f for f in os.listdir(out) if f.startswith(".tmp-")]

    def test_malformed_corpus(self, work):
        (work / "toy.trmor").write_text("kitap kitap\n")
        assert run("train", "--config", work / "small.cfg", "--out", work / "o") == 2

    def test_gradcheck_ok(self, work):
        assert run("gradcheck", "--mode", "whole_tag", "--out", work / "g") == 0
        lines = (work / "g" / "gradcheck.tsv").read_text().splitlines()
        assert lines[-1] == "status\tpass"
        assert float(lines[-2].split("\t")[1]) < 1e-4

    def test_gradcheck_failure_is_numeric(self, work, monkeypatch):
        class Bad:
            passed, max_error = False, 1.0

            def lines(self):
                return ["max_rel_error\t1", "status\tfail"]
        monkeypatch.setattr(cli, "gradcheck_report", lambda *a, **k: Bad())
        assert run("gradcheck", "--out", work / "g") == 3

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning",
                                "ignore:invalid value encountered:RuntimeWarning")
    def test_nan_training_is_numeric(self, work):
        (work / "nan.cfg").write_text(SMALL + "lr = 1e300\n")
        assert run("train", "--config", work / "nan.cfg", "--out", work / "o") == 3


class TestTrain:
    def test_outputs_and_overwrite(self, work, capsys):
        out = work / "o"
        assert run("train", "--config", work / "small.cfg", "--out", out) == 0
        for name in ("model.ckpt", "history.tsv", "history.png", "dev_report.tsv", "manifest.json"):
            assert (out / name).is_file(), name
        hist = (out / "history.tsv").read_text().splitlines()
        assert hist[0].startswith("# epoch") and len(hist) == 4
        m = manifest(out)
        assert m["command"] == "train" and m["seed"] == 1
        assert set(m["outputs"]) >= {"model.ckpt", "history.tsv"}
        assert all(len(v) == 64 for v in m["inputs"].values())
        # refuse to overwrite, then succeed with --force
        before = (out / "model.ckpt").read_bytes()
        assert run("train", "--config", work / "small.cfg", "--out", out) == 1
        assert (out / "model.ckpt").read_bytes() == before
        assert run("train", "--config", work / "small.cfg", "--out", out, "--force") == 0

    def test_byte_identical_reruns(self, work):
        for d in ("a", "b"):
            assert run("train", "--config", work / "small.cfg", "--out", work / d) == 0
        for name in ("model.ckpt", "history.tsv", "dev_report.tsv", "manifest.json", "history.png"):
            assert (work / "a" / name).read_bytes() == (work / "b" / name).read_bytes(), name

    def test_test_key_reported(self, work):
        (work / "t.cfg").write_text(SMALL + "test = toy.trmor\n")
        assert run("train", "--config", work / "t.cfg", "--out", work / "t") == 0
        rows = dict(x.split("\t") for x in (work / "t" / "dev_report.tsv").read_text().splitlines())
        assert 0.0 <= float(rows["test_acc"]) <= 100.0

    def test_seed_override(self, work):
        assert run("train", "--config", work / "small.cfg", "--out", work / "a", "--seed", 7) == 0
        assert manifest(work / "a")["seed"] == 7

    def test_default_dims_echoed(self, work):
        (work / "d.cfg").write_text("train = toy.trmor\ndev = toy.trmor\nmax_epochs = 1\n")
        assert run("train", "--config", work / "d.cfg", "--out", work / "o") == 0
        cfg = manifest(work / "o")["config"]
        assert (cfg["hidden_size"], cfg["char_embed_size"], cfg["feat_embed_size"]) == (512, 64, 256)
        assert cfg["lr"] == 1.6
        assert load_checkpoint(work / "o" / "model.ckpt").config.hidden_size == 512


class TestPredictEval:
    @pytest.fixture
    def trained(self, work):
        assert run("train", "--config", work / "small.cfg", "--out", work / "m") == 0
        return work / "m" / "model.ckpt"

    def test_predict_counts(self, work, trained):
        (work / "in.txt").write_text("masalı yaz\nmavi masalı oda\n")
        assert run("predict", "--checkpoint", trained, "--input", work / "in.txt",
                   "--out", work / "p") == 0
        lines = [x for x in (work / "p" / "predictions.txt").read_text().splitlines() if x]
        assert len(lines) == 5
        first = (work / "p" / "predictions.txt").read_bytes()
        assert run("predict", "--checkpoint", trained, "--input", work / "in.txt",
                   "--out", work / "p", "--force", "--threads", 3) == 0
        assert (work / "p" / "predictions.txt").read_bytes() == first

    def test_predict_empty(self, work, trained):
        (work / "empty.txt").write_text("\n")
        assert run("predict", "--checkpoint", trained, "--input", work / "empty.txt",
                   "--out", work / "p") == 0
        assert (work / "p" / "predictions.txt").read_text() == ""

    def test_predict_bad_checkpoint(self, work, trained):
        raw = trained.read_bytes()
        start = raw.index(b'"vocab_hash": "') + len(b'"vocab_hash": "')
        bad = raw[:start] + (b"0" if raw[start:start + 1] != b"0" else b"1") + raw[start + 1:]
        (work / "bad.ckpt").write_bytes(bad)
        (work / "in.txt").write_text("oda\n")
        assert run("predict", "--checkpoint", work / "bad.ckpt", "--input", work / "in.txt",
                   "--out", work / "p") == 2
        (work / "junk.ckpt").write_bytes(b"NOTACKPT" + raw[len(CHECKPOINT_MAGIC):])
        assert run("predict", "--checkpoint", work / "junk.ckpt", "--input", work / "in.txt",
                   "--out", work / "q") == 2

    def test_eval_gold_vs_gold(self, work, capsys):
        pred = work / "gold.pred"
        from morse.evaluation import write_predictions
        pred.write_text(write_predictions(parse_trmor(TOY)))
        assert run("eval", "--pred", pred, "--gold", work / "toy.trmor", "--train", work / "toy.trmor",
                   "--out", work / "e") == 0
        rows = dict(line.split("\t") for line in (work / "e" / "report.tsv").read_text().splitlines())
        assert rows["lemma_tag_acc"] == rows["tag_acc"] == rows["feature_f1"] == "100.00"
        for b in ("count=0", "count<100", "count>=100"):
            assert f"tag.{b}.tokens" in rows
        assert (work / "e" / "buckets.png").is_file()
        assert json.loads((work / "e" / "report.json").read_text())["tag_acc"] == 100.0

    def test_eval_hand_fixture(self, work):
        gold = "".join(f"w{k} w{k}+Noun+A3sg\n" for k in range(10))
        pred = gold.replace("w1 w1+Noun+A3sg", "w1\tw1+Verb").replace(
            "w4 w4+Noun+A3sg", "w4\tzz+Noun+A3sg").replace("w8 w8+Noun+A3sg", "w8\tw8+A3sg+Noun")
        (work / "g.trmor").write_text(gold)
        (work / "p.txt").write_text(pred.replace(" ", "\t"))
        assert run("eval", "--pred", work / "p.txt", "--gold", work / "g.trmor",
                   "--out", work / "e") == 0
        rows = dict(line.split("\t") for line in (work / "e" / "report.tsv").read_text().splitlines())
        # 7 exact; 8 tag-only; features: 18 hits, 19 predicted, 20 gold
        assert rows["lemma_tag_acc"] == "70.00"
        assert rows["tag_acc"] == "80.00"
        assert rows["feature_f1"] == f"{100 * 2 * 18 / (19 + 20):.2f}" == "92.31"

    def test_eval_misaligned(self, work):
        (work / "p.txt").write_text("oda\toda+Noun\n")
        assert run("eval", "--pred", work / "p.txt", "--gold", work / "toy.trmor",
                   "--out", work / "e") == 2

    def test_eval_missing_pred(self, work):
        assert run("eval", "--pred", work / "none.txt", "--gold", work / "toy.trmor",
                   "--out", work / "e") == 2


class TestDisamb:
    def test_single_candidates(self, work):
        assert run("train", "--config", work / "small.cfg", "--out", work / "m") == 0
        from morse.evaluation import write_candidates
        sents = parse_trmor(TOY)
        cands = [[[(t.lemma, t.features)] for t in s] for s in sents]
        (work / "c.cand").write_text(write_candidates(sents, cands))
        assert run("disamb", "--checkpoint", work / "m" / "model.ckpt", "--candidates",
                   work / "c.cand", "--out", work / "d") == 0
        rows = dict(line.split("\t") for line in (work / "d" / "report.tsv").read_text().splitlines())
        assert rows["unambiguous.acc"] == "100.00" and rows["total.acc"] == "100.00"
        assert rows["ambiguous.tokens"] == "0"


class TestStats:
    def test_fixture(self, work):
        (work / "tr.trmor").write_text("a x+A+B\n" * 6 + "b y+C+D\n")
        (work / "te.trmor").write_text("a x+A+B\nb y+C+D\nc z+E+F\n")
        assert run("stats", "--train", work / "tr.trmor", "--test", work / "te.trmor",
                   "--threshold", 1, "--threshold", 5, "--out", work / "s") == 0
        st = json.loads((work / "s" / "stats.json").read_text())
        assert st["distinct_tags"] == 2
        assert st["unseen_tag_pct"] == pytest.approx(33.33, abs=0.01)
        assert (work / "s" / "rare_tags.png").is_file()

    def test_train_equals_test(self, work):
        assert run("stats", "--train", data_path("canonical.trmor"), "--test",
                   data_path("canonical.trmor"), "--out", work / "s") == 0
        st = json.loads((work / "s" / "stats.json").read_text())
        assert st["unseen_tag_pct"] == 0.0
        n = sum(len(s) for s in parse_trmor(open(data_path("canonical.trmor")).read()))
        assert st["train_tokens"] == st["test_tokens"] == n

    def test_conllu(self, work):
        assert run("stats", "--train", data_path("rich.conllu"), "--test", data_path("rich.conllu"),
                   "--format", "conllu", "--out", work / "s") == 0


class TestSynthTransfer:
    def test_synth_files(self, work):
        (work / "s.cfg").write_text("n_sentences = 60\nseed = 3\nunseen_pct = -1\n")
        assert run("synth", "--config", work / "s.cfg", "--out", work / "s") == 0
        sizes = manifest(work / "s")["config"]["split_sizes"]
        assert sum(sizes.values()) == 60
        for part in ("train", "dev", "test"):
            assert len(parse_trmor((work / "s" / f"{part}.trmor").read_text())) == sizes[part]
        assert run("synth", "--config", work / "s.cfg", "--out", work / "s2") == 0
        for f in ("train.trmor", "test.cand", "grammar.json", "manifest.json"):
            assert (work / "s" / f).read_bytes() == (work / "s2" / f).read_bytes()

    def test_synth_unreachable_is_data_error(self, work):
        (work / "s.cfg").write_text("n_sentences = 30\nunseen_pct = 99\n")
        assert run("synth", "--config", work / "s.cfg", "--out", work / "s") == 2

    def test_transfer(self, work):
        (work / "hr.cfg").write_text(SMALL.replace("max_epochs = 3", "max_epochs = 2"))
        (work / "lr.trmor").write_text("mavi mavi+Adj\noda oda+Noun+A3sg+Pnon+Nom\n\nev ev+Noun+A3sg+Pnon+Nom\n")
        (work / "lr.cfg").write_text(SMALL.replace("toy.trmor", "lr.trmor").replace("max_epochs = 3",
                                                                                    "max_epochs = 2"))
        assert run("transfer", "--hr-config", work / "hr.cfg", "--lr-config", work / "lr.cfg",
                   "--out", work / "t") == 0
        hist = (work / "t" / "hr_history.tsv").read_text().splitlines()
        assert len(hist) == 1 + cli.HR_EPOCHS
        assert [int(line.split("\t")[0]) for line in hist[1:]] == list(range(1, 11))
        assert load_checkpoint(work / "t" / "model.ckpt").vocab.chars != \
            load_checkpoint(work / "t" / "hr_model.ckpt").vocab.chars

    def test_transfer_dim_mismatch(self, work):
        (work / "lr.cfg").write_text(SMALL.replace("hidden_size = 8", "hidden_size = 9"))
        assert run("transfer", "--hr-config", work / "small.cfg", "--lr-config", work / "lr.cfg",
                   "--out", work / "t") == 1
