"""Command line front end.

    nabu [--seed N] [--config FILE] [--manifest FILE] <command> ...

Commands: prepare, train-tokenizer, train, generate, score, reify.  Corpus
directories hold ``<LANG>/train.txt``, ``dev.txt`` and ``test.txt`` triple
files.  Relative default locations live under ``$NABU_DATA_DIR`` (or the
working directory).  Every command records its inputs, outputs and config in
a JSON manifest and refuses to run when an input no longer matches the hash
the manifest remembers for it.
"""

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .checkpoint import load_checkpoint, load_model
from .config import RunConfig, load_config
from .decoding import format_jsonl
from .errors import ManifestMismatch, MissingLanguageData, NabuError
from .graph import format_triple_file, node_feature_labels, parse_triple_file, reify
from .metrics import score
from .model import NabuModel
from .synthetic import synthetic_records
from .tokenizer import Vocabulary, train_bpe
from .training import Trainer, build_corpus, generate, kfold_split, read_records

log = logging.getLogger("nabu")

SPLITS = ("train", "dev", "test")


def data_root():
    return Path(os.environ.get("NABU_DATA_DIR", "."))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Accumulating record of every step run against one data root."""

    def __init__(self, path):
        self.path = Path(path)
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"tool_version": __version__, "artifacts": {}, "steps": []}

    def check_inputs(self, paths):
        known = self.data["artifacts"]
        for p in paths:
            key = str(Path(p).resolve())
            if key in known and known[key] != sha256_file(p):
                raise ManifestMismatch(f"{p} changed since it was recorded in {self.path}")

    def record(self, command, run, seed, inputs, outputs, extra=None):
        ins = {str(Path(p).resolve()): sha256_file(p) for p in inputs}
        outs = {str(Path(p).resolve()): sha256_file(p) for p in outputs}
        step = {"command": command, "seed": seed, "tool_version": __version__,
                "config": _config_snapshot(run), "inputs": ins, "outputs": outs}
        step.update(extra or {})
        self.data["steps"].append(step)
        self.data["artifacts"].update(ins)
        self.data["artifacts"].update(outs)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _config_snapshot(run):
    d = asdict(run)
    d["model"]["languages"] = list(d["model"]["languages"])
    d["train"]["languages"] = list(d["train"]["languages"])
    return d


def _split_path(root, lang, split):
    return Path(root) / lang / f"{split}.txt"


def _write_records(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_triple_file(records), encoding="utf-8")


# commands ---------------------------------------------------------------------

def cmd_prepare(args, run, manifest):
    """Split raw per-language files into train/dev/test.

    Missing dev or test splits are carved from train with seeded k-fold
    (fold 0 of k).  With ``--synthetic N`` the raw directory is first filled
    with N templated graphs per language, train split only.
    """
    languages = run.train.languages
    raw, out = Path(args.raw), Path(args.out)
    if args.synthetic:
        records = synthetic_records(args.synthetic, languages, seed=run.train.seed)
        for lang in languages:
            _write_records(_split_path(raw, lang, "train"), [r for r in records if r.lang == lang])
    inputs, outputs = [], []
    merged = []
    for lang in languages:
        splits = {}
        for split in SPLITS:
            p = _split_path(raw, lang, split)
            if p.exists():
                inputs.append(p)
                splits[split] = read_records(p, run.model.languages)
        if "train" not in splits:
            raise MissingLanguageData(f"no {_split_path(raw, lang, 'train')}")
        manifest.check_inputs(inputs)
        if "test" not in splits:
            splits["train"], splits["test"] = kfold_split(splits["train"], run.kfold, 0, run.train.seed)
            log.info("%s: carved test fold of %d from %d", lang, len(splits["test"]),
                     len(splits["train"]) + len(splits["test"]))
        if "dev" not in splits:
            splits["train"], splits["dev"] = kfold_split(splits["train"], run.kfold, 0, run.train.seed + 1)
        for split in SPLITS:
            p = _split_path(out, lang, split)
            _write_records(p, splits[split])
            outputs.append(p)
        merged += splits["train"]
    if run.train.task == "multi":
        order = np.random.default_rng(run.train.seed).permutation(len(merged))
        p = out / "multi" / "train.txt"
        _write_records(p, [merged[i] for i in order])
        outputs.append(p)
    manifest.record("prepare", run, run.train.seed, inputs, outputs)
    for p in outputs:
        print(p)
    return 0


def tokenizer_corpus(records):
    texts = [t for r in records for t in r.texts]
    for r in records:
        g = reify(r.triples, r.lang)
        texts += [" ".join(words) for words, kind in zip(node_feature_labels(g), g.kinds) if kind != "lang"]
    return texts


def _train_files(data, languages):
    files = [_split_path(data, lang, "train") for lang in languages]
    for f in files:
        if not f.exists():
            raise MissingLanguageData(f"no training file {f}")
    return files


def cmd_train_tokenizer(args, run, manifest):
    files = _train_files(args.data, run.train.languages)
    manifest.check_inputs(files)
    records = [r for f in files for r in read_records(f, run.model.languages)]
    size = args.size or run.tokenizer_size
    vocab = train_bpe(tokenizer_corpus(records), size, run.model.languages)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    manifest.record("train-tokenizer", run, run.train.seed, files, [out],
                    {"vocabulary_hash": vocab.digest(), "vocabulary_size": len(vocab)})
    print(f"{out}: {len(vocab)} entries, {len(vocab.merges)} merges")
    return 0


def cmd_train(args, run, manifest):
    languages = run.train.languages
    files = _train_files(args.data, languages)
    vocab_path = Path(args.vocab)
    manifest.check_inputs([*files, vocab_path])
    ad.set_dtype(run.train.precision)
    vocab = Vocabulary.load(vocab_path)
    model_cfg = replace(run.model, vocab_size=len(vocab))
    if args.encoder:
        model_cfg = replace(model_cfg, encoder=args.encoder)
    train_cfg = replace(run.train, epochs=args.epochs or run.train.epochs)
    records = {lang: read_records(f, model_cfg.languages) for lang, f in zip(languages, files)}
    corpus = build_corpus(records, languages, vocab, train_cfg.seed, model_cfg.max_decode_len,
                          model_cfg.shared_predicates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log_path, vocab_copy = out / "model.ckpt", out / "train_log.csv", out / "vocab.txt"
    shutil.copyfile(vocab_path, vocab_copy)
    model = NabuModel(model_cfg, seed=train_cfg.seed)
    trainer = Trainer(model, vocab, train_cfg)
    start = time.perf_counter()
    history = trainer.fit(corpus, log_path=log_path, checkpoint_path=ckpt)
    elapsed = time.perf_counter() - start
    run = replace(run, model=model_cfg, train=train_cfg)
    manifest.record("train", run, train_cfg.seed, [*files, vocab_path], [ckpt, log_path, vocab_copy],
                    {"checkpoint": str(ckpt.resolve()), "vocabulary_hash": vocab.digest(),
                     "epochs_run": len(history), "wall_seconds": round(elapsed, 3)})
    last = history[-1]
    print(f"{ckpt}: {len(history)} epochs, loss {last.mean_loss:.4f}, token accuracy {last.token_acc:.4f}")
    return 0


def _load_for_generation(args, manifest):
    ckpt = Path(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else ckpt.parent / "vocab.txt"
    manifest.check_inputs([ckpt, vocab_path, args.input])
    _, store = load_checkpoint(ckpt)
    ad.set_dtype(next(iter(store.state_dict().values())).dtype)
    model = load_model(ckpt)
    return model, Vocabulary.load(vocab_path), ckpt, vocab_path


def cmd_generate(args, run, manifest):
    model, vocab, ckpt, vocab_path = _load_for_generation(args, manifest)
    records = read_records(args.input, model.cfg.languages)
    lines = []
    beam = args.beam or run.beam_size
    for rec in records:
        graph = reify(rec.triples, rec.lang, model.cfg.shared_predicates)
        text, logprob, copies = generate(model, vocab, graph, lang=args.lang, beam_size=beam,
                                         alpha=run.length_penalty, copy=run.copy and not args.no_copy)
        lines.append(format_jsonl(text, logprob, copies) if args.jsonl else text)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    manifest.record("generate", run, run.train.seed, [ckpt, vocab_path, args.input], [out],
                    {"checkpoint": str(ckpt.resolve()), "language_override": args.lang})
    print(f"{out}: {len(lines)} lines")
    return 0


def read_references(path):
    """A triple file's ``text=`` lines (several per graph allowed) or plain
    one-reference-per-line text."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("lang="):
        return [rec.texts for rec in parse_triple_file(text, path=str(path), languages=_all_languages(text))]
    return text.splitlines()


def _all_languages(text):
    return tuple(sorted({line[5:].strip() for line in text.splitlines() if line.startswith("lang=")}))


def cmd_score(args, run, manifest):
    manifest.check_inputs([args.hyp, args.ref])
    hyps = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    if hyps and hyps[0].startswith("{"):
        hyps = [json.loads(h)["text"] for h in hyps]
    report = score(hyps, read_references(args.ref))
    text = report.to_json()
    outputs = []
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        outputs.append(args.out)
    if args.per_segment:
        Path(args.per_segment).write_text(report.segment_csv(), encoding="utf-8")
        outputs.append(args.per_segment)
    manifest.record("score", run, run.train.seed, [args.hyp, args.ref], outputs,
                    {"bleu": report.bleu, "chrfpp": report.chrfpp})
    print(text)
    return 0


def cmd_reify(args, run, manifest):
    manifest.check_inputs([args.input])
    records = read_records(args.input, run.model.languages)
    blocks = []
    for i, rec in enumerate(records):
        g = reify(rec.triples, args.lang or rec.lang, args.shared_predicates or run.model.shared_predicates)
        blocks.append(f"# graph {rec.graph_id or i} lang={g.lang}\n{g.dump()}")
    text = "\n\n".join(blocks) + "\n"
    outputs = []
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        outputs.append(args.out)
    manifest.record("reify", run, run.train.seed, [args.input], outputs)
    sys.stdout.write(text)
    return 0


# argument parsing -------------------------------------------------------------

def build_parser():
    root = data_root()
    p = argparse.ArgumentParser(prog="nabu", description="Multilingual RDF graph verbaliser.")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--manifest", help=f"run manifest (default {root / 'manifest.json'})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="split raw triple files into train/dev/test")
    s.add_argument("--raw", default=str(root / "raw"))
    s.add_argument("--out", default=str(root / "corpus"))
    s.add_argument("--task", choices=("mono", "bi", "multi"))
    s.add_argument("--languages", help="comma-separated, e.g. ENG,GER")
    s.add_argument("--kfold", type=int)
    s.add_argument("--synthetic", type=int, metavar="N", help="first write N synthetic graphs per language")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train-tokenizer", help="learn the shared BPE vocabulary")
    s.add_argument("--data", default=str(root / "corpus"))
    s.add_argument("--size", type=int, help="target vocabulary size (default from config)")
    s.add_argument("--out", default=str(root / "vocab.txt"))
    s.add_argument("--task", choices=("mono", "bi", "multi"))
    s.add_argument("--languages")
    s.set_defaults(func=cmd_train_tokenizer)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", default=str(root / "corpus"))
    s.add_argument("--vocab", default=str(root / "vocab.txt"))
    s.add_argument("--out", default=str(root / "run"))
    s.add_argument("--encoder", choices=("gat", "linearized-transformer"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--task", choices=("mono", "bi", "multi"))
    s.add_argument("--languages")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="verbalise every graph of a triple file")
    s.add_argument("--checkpoint", default=str(root / "run" / "model.ckpt"))
    s.add_argument("--vocab", help="defaults to vocab.txt next to the checkpoint")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lang", help="override the language node of every graph")
    s.add_argument("--beam", type=int)
    s.add_argument("--no-copy", action="store_true")
    s.add_argument("--jsonl", action="store_true", help="write {text, score, copies} records")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("score", help="BLEU and chrF++ of a hypothesis file")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True, help="plain lines or a triple file with text= lines")
    s.add_argument("--out", help="also write the JSON report here")
    s.add_argument("--per-segment", metavar="CSV")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("reify", help="dump reified graphs")
    s.add_argument("--input", required=True)
    s.add_argument("--lang")
    s.add_argument("--shared-predicates", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_reify)
    return p


def resolve_config(args):
    run = load_config(args.config) if args.config else RunConfig()
    train, model = run.train, run.model
    languages = tuple(args.languages.split(",")) if getattr(args, "languages", None) else None
    task = getattr(args, "task", None)
    if languages or task:
        languages = languages or train.languages
        task = task or {1: "mono", 2: "bi", 3: "multi"}.get(len(languages), train.task)
        train = replace(train, task=task, languages=languages)
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "kfold", None):
        run = replace(run, kfold=args.kfold)
    if not set(train.languages) <= set(model.languages):
        model = replace(model, languages=tuple(dict.fromkeys(model.languages + train.languages)))
    if args.command == "train":
        # a model only ever speaks the languages it is trained on
        model = replace(model, languages=train.languages)
    return replace(run, train=train, model=model)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = resolve_config(args)
        manifest = Manifest(args.manifest or data_root() / "manifest.json")
        return args.func(args, run, manifest)
    except NabuError as err:
        print(f"nabu {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"nabu {args.command}: {err}", file=sys.stderr)
        return 3
    finally:
        ad.set_dtype("float32")


if __name__ == "__main__":
    sys.exit(main())
