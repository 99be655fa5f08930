"""Command-line entry point: ``morse <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from . import __version__
from . import kernels as K
from .config import (SYNTH_KEYS, TRAIN_KEYS, ConfigError, load_config,
                     model_config, parse_config, train_config)
from .data import (CorpusFormatError, Sentence, Token, build_vocab, composite_tag, corpus_stats,
                   parse_trmor, read_corpus, tag_counts, write_trmor)
from .evaluation import (disambiguate, evaluate, read_candidates, read_predictions,
                         write_candidates, write_predictions)
from .model import (CheckpointError, MorseConfig, MorseParams, forward_sentence_train, load_checkpoint,
                    predict_sentence, save_checkpoint)
from .training import EpochRecord, TrainConfig, exact_match_accuracy, train, transfer_init
from . import synthlang

log = logging.getLogger("morse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
HR_EPOCHS = 10
# set to make manifests byte-reproducible (wall-clock duration reported as 0)
TEST_MODE_ENV = "MORSE_TEST_MODE"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    duration_s: float = 0.0
    version: str = __version__

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory bookkeeping: overwrite protection, atomic writes, manifest."""

    def __init__(self, args, command, config=None, config_path=None, seed=None):
        self.out = args.out
        self.force = args.force
        self.t0 = time.perf_counter()
        self.manifest = RunManifest(command, config_path, dict(config or {}), seed)
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def claim(self, *names):
        """Fail before any work if outputs exist and --force is not set."""
        for name in list(names) + ["manifest.json"]:
            if os.path.exists(self.path(name)) and not self.force:
                raise UsageError(f"{self.path(name)} exists; pass --force to overwrite")

    def add_input(self, path):
        if path is None:
            return
        if not os.path.isfile(path):
            raise DataError(f"input file not found: {path}")
        self.manifest.inputs[path] = sha256_file(path)

    def write_text(self, name, text):
        self._atomic(name, lambda fh: fh.write(text.encode("utf-8")))

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    def write_checkpoint(self, name, params):
        final = self.path(name)
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".tmp-")
        os.close(fd)
        try:
            save_checkpoint(params, tmp)
            os.replace(tmp, final)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self._record(name)

    def wrote(self, name):
        self._record(name)

    def _atomic(self, name, writer):
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                writer(fh)
            os.replace(tmp, self.path(name))
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self._record(name)

    def _record(self, name):
        if name not in self.manifest.outputs:
            self.manifest.outputs.append(name)

    def finish(self):
        dur = time.perf_counter() - self.t0
        self.manifest.duration_s = 0.0 if os.environ.get(TEST_MODE_ENV) else round(dur, 3)
        self.manifest.write(self.path("manifest.json"))


# ---------------------------------------------------------------- helpers

def _tsv(rows) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in rows)


def _read(path, fmt):
    if path is None:
        raise UsageError("a required corpus path is not set")
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    return read_corpus(path, fmt)


def _load_train_config(args, required=("train", "dev")):
    if args.config is None:
        raise UsageError("--config is required")
    if not os.path.isfile(args.config):
        raise UsageError(f"config file not found: {args.config}")
    values = load_config(args.config, TRAIN_KEYS)
    if args.seed is not None:
        values["seed"] = args.seed
    for key in required:
        if not values.get(key):
            raise ConfigError(f"{args.config}: '{key}' must be set")
    if values["format"] not in ("conllu", "trmor"):
        raise ConfigError(f"format must be conllu or trmor, got {values['format']!r}")
    return values


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _predict(params, sentences, threads):
    def one(sent):
        return Sentence([Token(t.form, p.lemma, p.features)
                         for t, p in zip(sent, predict_sentence(sent, params))])
    return _map(one, sentences, threads)


def _history_header():
    return "# epoch\ttrain_loss\tdev_acc\tlr\n"


def _fit(run, values, train_s, dev_s, prefix="", params=None, max_epochs=None, stop_early=True):
    """Train with the history log appended one line per epoch; returns the TrainResult."""
    cfg = train_config(values)
    if max_epochs is not None:
        cfg = TrainConfig(**{**asdict(cfg), "max_epochs": max_epochs})
    if params is None:
        vocab = build_vocab(train_s)
        params = MorseParams.init(model_config(values), vocab, K.make_rng(values["seed"]))
    hist_name = prefix + "history.tsv"
    hist_path = run.path(hist_name)
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write(_history_header())

    def on_epoch(rec: EpochRecord, state):
        with open(hist_path, "a", encoding="utf-8") as fh:
            fh.write(rec.line() + "\n")

    run.wrote(hist_name)
    result = train(params, train_s, dev_s, cfg, on_epoch=on_epoch, stop_early=stop_early)
    _plot(run, prefix + "history.png", "plot_history", result.history, title=prefix.rstrip("/_") or "training")
    return result


def _plot(run, name, fn, *a, **kw):
    from . import plotting
    if getattr(plotting, fn)(*a, run.path(name), **kw) is not False:
        run.wrote(name)


# ---------------------------------------------------------------- commands

def cmd_train(args):
    values = _load_train_config(args)
    run = Run(args, "train", values, args.config, values["seed"])
    run.claim("model.ckpt", "history.tsv", "history.png", "dev_report.tsv")
    for key in ("train", "dev"):
        run.add_input(values[key])
    train_s = _read(values["train"], values["format"])
    dev_s = _read(values["dev"], values["format"])
    result = _fit(run, values, train_s, dev_s)
    run.write_checkpoint("model.ckpt", result.best)
    rows = [("best_epoch", result.state.best_epoch), ("best_dev_acc", f"{result.state.best_acc:.4f}"),
            ("epochs", result.state.epoch), ("final_lr", f"{result.state.lr:.10g}"),
            ("n_parameters", result.best.n_parameters())]
    if values["test"]:
        run.add_input(values["test"])
        rows.append(("test_acc", f"{exact_match_accuracy(result.best, _read(values['test'], values['format'])):.4f}"))
    run.write_text("dev_report.tsv", _tsv(rows))
    run.finish()
    sys.stdout.write(_tsv(rows))


def cmd_predict(args):
    run = Run(args, "predict", {"checkpoint": args.checkpoint, "input": args.input, "format": args.format})
    run.claim("predictions.txt")
    run.add_input(args.checkpoint)
    run.add_input(args.input)
    params = load_checkpoint(args.checkpoint)
    with open(args.input, encoding="utf-8") as fh:
        blank = not fh.read().strip()
    sents = [] if blank else _read(args.input, args.format)
    preds = _predict(params, sents, args.threads)
    run.write_text("predictions.txt", write_predictions(preds))
    run.finish()


def _eval_outputs(run, report):
    run.write_text("report.tsv", _tsv(report.rows()))
    run.write_json("report.json", report.to_dict())
    if report.buckets:
        _plot(run, "buckets.png", "plot_buckets", report)
    sys.stdout.write(_tsv(report.rows()))


def cmd_eval(args):
    run = Run(args, "eval", {"pred": args.pred, "gold": args.gold, "train": args.train,
                             "candidates": args.candidates, "format": args.format,
                             "mask": not args.no_mask})
    run.claim("report.tsv", "report.json", "buckets.png")
    for p in (args.pred, args.gold, args.train, args.candidates):
        run.add_input(p)
    with open(args.pred, encoding="utf-8") as fh:
        preds = read_predictions(fh.read())
    gold = _read(args.gold, args.format)
    train_s = _read(args.train, args.format) if args.train else None
    cands = None
    if args.candidates:
        with open(args.candidates, encoding="utf-8") as fh:
            _, cands = read_candidates(fh.read())
    report = evaluate(preds, gold, train=train_s, candidates=cands, mask=not args.no_mask)
    _eval_outputs(run, report)
    run.finish()


def cmd_disamb(args):
    run = Run(args, "disamb", {"checkpoint": args.checkpoint, "candidates": args.candidates,
                               "train": args.train, "format": args.format})
    run.claim("choices.txt", "report.tsv", "report.json", "buckets.png")
    for p in (args.checkpoint, args.candidates, args.train):
        run.add_input(p)
    params = load_checkpoint(args.checkpoint)
    with open(args.candidates, encoding="utf-8") as fh:
        gold, cands = read_candidates(fh.read())
    chosen = _map(lambda sc: disambiguate(params, sc[0], sc[1]), list(zip(gold, cands)), args.threads)
    preds = [Sentence([Token(t.form, lemma, feats) for t, (lemma, feats) in zip(s, ch)])
             for s, ch in zip(gold, chosen)]
    run.write_text("choices.txt", write_predictions(preds))
    train_s = _read(args.train, args.format) if args.train else None
    report = evaluate(preds, gold, train=train_s, candidates=cands)
    _eval_outputs(run, report)
    run.finish()


def cmd_transfer(args):
    if not args.hr_config or not args.lr_config:
        raise UsageError("transfer needs --hr-config and --lr-config")
    hr_args = argparse.Namespace(config=args.hr_config, seed=args.seed)
    lr_args = argparse.Namespace(config=args.lr_config, seed=args.seed)
    hr_vals = _load_train_config(hr_args)
    lr_vals = _load_train_config(lr_args)
    dims = ("hidden_size", "char_embed_size", "feat_embed_size")
    if any(hr_vals[k] != lr_vals[k] for k in dims):
        raise UsageError("HR and LR configs disagree on hidden_size/char_embed_size/feat_embed_size")
    run = Run(args, "transfer", {"hr": hr_vals, "lr": lr_vals, "hr_epochs": HR_EPOCHS},
              f"{args.hr_config},{args.lr_config}", lr_vals["seed"])
    run.claim("hr_model.ckpt", "hr_history.tsv", "hr_history.png", "model.ckpt", "history.tsv",
              "history.png", "dev_report.tsv")
    for vals in (hr_vals, lr_vals):
        run.add_input(vals["train"])
        run.add_input(vals["dev"])
    hr_train = _read(hr_vals["train"], hr_vals["format"])
    hr_dev = _read(hr_vals["dev"], hr_vals["format"])
    lr_train = _read(lr_vals["train"], lr_vals["format"])
    lr_dev = _read(lr_vals["dev"], lr_vals["format"])
    hr = _fit(run, hr_vals, hr_train, hr_dev, prefix="hr_", max_epochs=HR_EPOCHS, stop_early=False)
    run.write_checkpoint("hr_model.ckpt", hr.final)
    init = transfer_init(hr.final, build_vocab(lr_train), model_config(lr_vals),
                         K.make_rng(lr_vals["seed"]))
    lr = _fit(run, lr_vals, lr_train, lr_dev, params=init)
    run.write_checkpoint("model.ckpt", lr.best)
    rows = [("hr_epochs", hr.state.epoch), ("hr_final_dev_acc", f"{hr.history[-1].dev_acc:.4f}"),
            ("best_epoch", lr.state.best_epoch), ("best_dev_acc", f"{lr.state.best_acc:.4f}"),
            ("epochs", lr.state.epoch)]
    run.write_text("dev_report.tsv", _tsv(rows))
    run.finish()
    sys.stdout.write(_tsv(rows))


def cmd_stats(args):
    thresholds = args.threshold or [5]
    run = Run(args, "stats", {"train": args.train, "test": args.test, "format": args.format,
                              "thresholds": thresholds})
    run.claim("stats.tsv", "stats.json", "rare_tags.png")
    run.add_input(args.train)
    run.add_input(args.test)
    train_s = _read(args.train, args.format)
    test_s = _read(args.test, args.format)
    if not train_s or not test_s:
        raise DataError("stats needs non-empty train and test splits")
    st = corpus_stats(train_s, test_s, thresholds)
    run.write_text("stats.tsv", _tsv(st.rows()))
    run.write_json("stats.json", st.to_dict())
    _plot(run, "rare_tags.png", "plot_rare_tags", tag_counts(train_s),
          [composite_tag(t) for s in test_s for t in s])
    run.finish()
    sys.stdout.write(_tsv(st.rows()))


def cmd_synth(args):
    values = load_config(args.config, SYNTH_KEYS) if args.config else parse_config("", SYNTH_KEYS)
    if args.seed is not None:
        values["seed"] = args.seed
    run = Run(args, "synth", values, args.config, values["seed"])
    names = ["grammar.json", "train.trmor", "dev.trmor", "test.trmor", "train.cand", "dev.cand", "test.cand"]
    run.claim(*names)
    if values["grammar"]:
        run.add_input(values["grammar"])
        try:
            spec = synthlang.GrammarSpec.load(values["grammar"])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"bad grammar file {values['grammar']}: {exc}") from None
    else:
        spec = synthlang.default_grammar(values["grammar_seed"])
    spec.sentence_length = (values["min_len"], values["max_len"])
    corpus = synthlang.generate(spec, values["n_sentences"], seed=values["seed"])
    sents = corpus.sentences
    if values["unseen_pct"] >= 0:
        rest, test = synthlang.split_with_unseen_tags(sents, values["unseen_pct"], values["test_fraction"],
                                                      seed=values["seed"])
    else:
        order = K.make_rng(values["seed"]).permutation(len(sents))
        n_test = int(round(values["test_fraction"] * len(sents)))
        test = [sents[k] for k in order[:n_test]]
        rest = [sents[k] for k in order[n_test:]]
    n_dev = max(1, int(round(values["dev_fraction"] * len(sents))))
    splits = {"train": rest[n_dev:], "dev": rest[:n_dev], "test": test}
    run.write_text("grammar.json", json.dumps(spec.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    for name, part in splits.items():
        run.write_text(f"{name}.trmor", write_trmor(part))
        run.write_text(f"{name}.cand", write_candidates(part, synthlang.candidates_for(spec, part)))
    run.manifest.config["split_sizes"] = {k: len(v) for k, v in splits.items()}
    run.finish()


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    run = Run(args, "gradcheck", {"hidden_size": 8, "char_embed_size": 4, "feat_embed_size": 4,
                                  "mode": args.mode, "sentences": 2}, None, seed)
    run.claim("gradcheck.tsv")
    report = gradcheck_report(args.mode, seed)
    run.write_text("gradcheck.tsv", "".join(line + "\n" for line in report.lines()))
    run.finish()
    sys.stdout.write("".join(line + "\n" for line in report.lines()))
    if not report.passed:
        raise K.NumericalError(f"gradient check failed: max relative error {report.max_error:.3g}")


GRADCHECK_CORPUS = """\
masalı masal+Noun+A3sg+Pnon+Acc
yaz yaz+Verb+Pos+Imp+A2sg

mavi mavi+Adj
masalı masa+Noun+A3sg+Pnon+Nom^DB+Adj+With
oda oda+Noun+A3sg+Pnon+Nom
"""


def gradcheck_report(mode="joint", seed=0, **overrides):
    """Finite-difference check of the full model on a 2-sentence toy corpus."""
    sents = parse_trmor(GRADCHECK_CORPUS)
    cfg = MorseConfig(hidden_size=8, char_embed_size=4, feat_embed_size=4, mode=mode, **overrides)
    params = MorseParams.init(cfg, build_vocab(sents), K.make_rng(seed))
    # move off the relu kink at zero; the word-only ablation puts W_d c + W_db exactly there
    if "W_db" in params.tensors:
        params.tensors["W_db"][:] = K.make_rng(seed + 1).uniform(-0.5, 0.5, params.tensors["W_db"].shape)

    def loss_and_grads(_):
        total, grads = 0.0, {}
        for s in sents:
            loss, g = forward_sentence_train(s, params)
            total += loss
            for k, v in g.items():
                grads[k] = grads.get(k, 0) + v
        return total, grads

    def value(_):
        return sum(forward_sentence_train(s, params, backward=False)[0] for s in sents)

    return K.grad_check(loss_and_grads, params.tensors, value_fn=value)


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, default=1, help="worker threads for prediction")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="morse", description="Morse morphological analyzer")
    p.add_argument("--version", action="version", version=f"morse {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("train", parents=[common], help="train a model from a config")

    s = sub.add_parser("predict", parents=[common], help="analyze a corpus with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--format", default="text", choices=("text", "trmor", "conllu"))

    s = sub.add_parser("eval", parents=[common], help="score predictions against gold")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--train", help="training corpus, enables frequency buckets")
    s.add_argument("--candidates", help="candidate file, enables the ambiguity split")
    s.add_argument("--format", default="trmor", choices=("trmor", "conllu"))
    s.add_argument("--no-mask", action="store_true", help="skip digit/Prop masking")

    s = sub.add_parser("disamb", parents=[common], help="choose among analyzer candidates")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--candidates", required=True)
    s.add_argument("--train", help="training corpus, enables frequency buckets")
    s.add_argument("--format", default="trmor", choices=("trmor", "conllu"))

    s = sub.add_parser("transfer", parents=[common], help="HR pretraining then LR fine-tuning")
    s.add_argument("--hr-config", required=True)
    s.add_argument("--lr-config", required=True)

    s = sub.add_parser("stats", parents=[common], help="corpus statistics |T|, |F|, |R|")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--format", default="trmor", choices=("trmor", "conllu"))
    s.add_argument("--threshold", type=int, action="append", help="rare-tag threshold (repeatable)")

    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--mode", default="joint", choices=("joint", "tag_only", "whole_tag"))
    return p


COMMANDS = {
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "disamb": cmd_disamb,
    "transfer": cmd_transfer, "stats": cmd_stats, "synth": cmd_synth, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"morse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except K.NumericalError as exc:
        print(f"morse {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorpusFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"morse {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
