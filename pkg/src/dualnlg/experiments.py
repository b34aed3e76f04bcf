"""Prepared data directories, run directories and the scenario runner.

A prepared directory holds a copy of the corpus, the shared vocabulary and
the scenario split manifests::

    prepared.json          domains, default domain, corpus hash, vocabulary fingerprint
    vocab.json
    corpus/<domain>/{train,valid,test}.jsonl
    scenarios/<domain>/<scenario>.json

A run directory holds everything needed to score or repeat one training run::

    manifest.json          config, seed, scenario, corpus hash, vocabulary fingerprint
    metrics.csv            per-step training log plus per-epoch validation scores
    best.ckpt              parameters of the selected epoch
    scores.csv             test-set BLEU and ERR
    pretrain.csv           source-domain log (adaptation only)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import shutil
import time
from pathlib import Path

from .checkpoint import load_params, save_params
from .corpus import SPLITS, ScenarioSpec, Vocabulary, corpus_hash, load_dataset, make_scenario, parse_da
from .metrics import MetricsReport
from .synthetic import CLOSE_PAIRS, DOMAINS, write_corpus
from .training import MODEL_KINDS, Generation, Model, TrainConfig, fine_tune, generate_all, score_generations, train

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
STANDARD_SCENARIOS = ("scr10", "scr30", "scr100", "semi-U50-L10")
SCORE_FIELDS = ("domain", "scenario", "model", "seed", "split", "n", "bleu", "err")


class ExperimentError(RuntimeError):
    pass


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExperimentError(f"missing file: {path}") from None


# preparation -------------------------------------------------------------------------------


def prepare(out, data=None, domains=None, synthetic=False, n_train=2000, n_valid=200, n_test=200,
            corpus_seed=0, split_seed=0, scenarios=STANDARD_SCENARIOS):
    """Copy (or synthesise) a corpus into ``out`` and write vocabulary and split manifests."""
    out = Path(out)
    corpus = out / "corpus"
    if synthetic:
        domains = list(domains or DOMAINS)
        write_corpus(corpus, domains, n_train, n_valid, n_test, seed=corpus_seed)
    else:
        if data is None:
            raise ExperimentError("prepare needs --data or --synthetic")
        data = Path(data)
        if domains is None:
            domains = sorted(p.name for p in data.iterdir() if (p / "train.jsonl").is_file())
        if not domains:
            raise ExperimentError(f"no domains found under {data}")
        for d in domains:
            for s in SPLITS:
                src = data / d / f"{s}.jsonl"
                if not src.is_file():
                    raise ExperimentError(f"missing split file {src}")
                (corpus / d).mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, corpus / d / f"{s}.jsonl")
    dataset = load_dataset(corpus, domains)
    vocab = Vocabulary.build([ex for d in domains for ex in dataset[d]["train"]])
    dump_json(out / "vocab.json", vocab.to_json())
    for d in domains:
        sdir = out / "scenarios" / d
        sdir.mkdir(parents=True, exist_ok=True)
        for name in scenarios:
            _, manifest = make_scenario(dataset, ScenarioSpec.from_name(name, d, seed=split_seed))
            dump_json(sdir / f"{name}.json", manifest)
    info = {
        "domains": list(domains),
        "default_domain": "tv" if synthetic and "tv" in domains else domains[0],
        "close_pairs": {d: CLOSE_PAIRS[d] for d in domains if synthetic and CLOSE_PAIRS.get(d) in domains},
        "split_seed": split_seed,
        "corpus_hash": corpus_hash(corpus, domains),
        "vocab_fingerprint": vocab.fingerprint(),
        "sizes": {d: {s: len(dataset[d][s]) for s in SPLITS} for d in domains},
    }
    dump_json(out / "prepared.json", info)
    return info


class Prepared:
    """Read side of a prepared directory."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.info = load_json(self.root / "prepared.json")
        self.vocab = Vocabulary.from_json(load_json(self.root / "vocab.json"))
        if self.vocab.fingerprint() != self.info["vocab_fingerprint"]:
            raise ExperimentError("vocab.json does not match prepared.json")
        self._dataset = None

    @property
    def domains(self):
        return self.info["domains"]

    def resolve_domain(self, name):
        if name in (None, "synthetic"):
            return self.info["default_domain"]
        if name not in self.domains:
            raise ExperimentError(f"unknown domain {name!r}; prepared domains: {', '.join(self.domains)}")
        return name

    def source_for(self, domain, sources=None):
        if sources:
            return [self.resolve_domain(s) for s in sources]
        pair = self.info.get("close_pairs", {}).get(domain)
        if pair is None:
            raise ExperimentError(f"no close source domain recorded for {domain!r}; pass --source")
        return [pair]

    @property
    def dataset(self):
        if self._dataset is None:
            self._dataset = load_dataset(self.root / "corpus", self.domains)
        return self._dataset

    def corpus_hash(self):
        return corpus_hash(self.root / "corpus", self.domains)

    def check(self, manifest):
        if manifest["corpus_hash"] != self.corpus_hash():
            raise ExperimentError("corpus content differs from the one recorded in the manifest")
        if manifest["vocab_fingerprint"] != self.vocab.fingerprint():
            raise ExperimentError("vocabulary differs from the one recorded in the manifest")


# configs -----------------------------------------------------------------------------------------


def load_config(path):
    """``(TrainConfig overrides, fine-tune overrides)`` from a TOML or JSON file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(text)
    finetune = raw.pop("finetune", {})
    TrainConfig.from_dict(raw | {"model": raw.get("model", "crossvae")})
    return raw, finetune


# runs ------------------------------------------------------------------------------------------


def run_dir(out, domain, scenario, model, seed):
    return Path(out) / domain / scenario / model / f"seed{seed}"


def _save_model(path, model, config):
    meta = {"kind": model.kind, "seed": model.seed, "config": config.to_dict(), "vocab": model.vocab.to_json()}
    save_params(path, model.state(), meta)


def load_model(path, vocab=None):
    arrays, meta = load_params(path)
    ckpt_vocab = Vocabulary.from_json(meta["vocab"])
    if vocab is not None and vocab.fingerprint() != ckpt_vocab.fingerprint():
        raise ExperimentError(f"{path}: checkpoint vocabulary does not match the data vocabulary")
    config = TrainConfig.from_dict(meta["config"])
    model = Model(meta["kind"], ckpt_vocab, meta["seed"], config)
    model.load_state(arrays)
    return model, config


def build_manifest(prepared, domain, scenario, model, seed, config, finetune=None, sources=None):
    if model not in MODEL_KINDS:
        raise ExperimentError(f"unknown model kind {model!r}")
    domain = prepared.resolve_domain(domain)
    srcs = prepared.source_for(domain, sources) if scenario.startswith("adapt") else ()
    spec = ScenarioSpec.from_name(scenario, domain, srcs, prepared.info["split_seed"])
    if spec.kind == "semi" and model not in ("dualvae", "crossvae"):
        raise ExperimentError("semi-supervised scenarios need a dualvae or crossvae model")
    cfg = TrainConfig.from_dict((config or {}) | {"model": model})
    ft = cfg.replace(**(finetune or {})) if spec.kind == "adaptation" else None
    _, splits = make_scenario(prepared.dataset, spec)
    return {
        "version": MANIFEST_VERSION,
        "data": str(prepared.root),
        "domain": domain,
        "scenario": scenario,
        "source_domains": list(spec.source_domains),
        "model": model,
        "seed": seed,
        "config": cfg.to_dict(),
        "finetune_config": ft.to_dict() if ft else None,
        "corpus_hash": prepared.corpus_hash(),
        "vocab_fingerprint": prepared.vocab.fingerprint(),
        "splits": splits,
    }


def execute(manifest, out_dir, prepared=None):
    """Train, select, checkpoint and test one run described by ``manifest``."""
    prepared = prepared or Prepared(manifest["data"])
    prepared.check(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = ScenarioSpec.from_name(manifest["scenario"], manifest["domain"], manifest["source_domains"],
                                  prepared.info["split_seed"])
    splits, split_manifest = make_scenario(prepared.dataset, spec)
    if split_manifest != manifest["splits"]:
        raise ExperimentError("scenario splits differ from the manifest")
    cfg = TrainConfig.from_dict(manifest["config"])
    seed = manifest["seed"]
    dump_json(out_dir / "manifest.json", manifest)
    model = Model(manifest["model"], prepared.vocab, seed, cfg)
    started = time.perf_counter()
    diverged = []
    if spec.kind == "adaptation":
        source_valid = [ex for d in spec.source_domains for ex in prepared.dataset[d]["valid"]]
        pre = train(model, splits["train"], source_valid, cfg, seed, out_dir / "pretrain.csv")
        diverged.append(pre.diverged)
        ft_cfg = TrainConfig.from_dict(manifest["finetune_config"])
        result = fine_tune(model, splits["finetune"], splits["valid"], ft_cfg, seed, out_dir / "metrics.csv")
    else:
        result = train(model, splits["train"], splits["valid"], cfg, seed, out_dir / "metrics.csv",
                       unlabeled=splits["unlabeled"] or None)
    diverged.append(result.diverged)
    _save_model(out_dir / "best.ckpt", model, cfg)
    gens = generate_all(model, [e.da for e in splits["test"]], cfg.beam_width, cfg.max_len)
    row = score_row(manifest, "test", splits["test"], [g.tokens for g in gens])
    write_scores(out_dir / "scores.csv", [row])
    status = {
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "steps": result.steps,
        "diverged": [d for d in diverged if d],
        "seconds": round(time.perf_counter() - started, 1),
        "final_kl": result.final_parts.get("kl"),
    }
    dump_json(out_dir / "status.json", status)
    return row, status


def score_row(manifest, split, examples, generated):
    b, e = score_generations([ex.da for ex in examples], generated, [ex.refs for ex in examples])
    return {
        "domain": manifest["domain"],
        "scenario": manifest["scenario"],
        "model": manifest["model"],
        "seed": manifest["seed"],
        "split": split,
        "n": len(examples),
        "bleu": b,
        "err": e,
    }


def format_scores(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, SCORE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_scores(path, rows):
    Path(path).write_text(format_scores(rows), encoding="utf-8")


def read_scores(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"], r["n"] = int(r["seed"]), int(r["n"])
        r["bleu"], r["err"] = float(r["bleu"]), float(r["err"])
    return rows


# generation files ------------------------------------------------------------------------------------


def split_examples(prepared, manifest, split):
    if split not in SPLITS:
        raise ExperimentError(f"unknown split {split!r}")
    return prepared.dataset[manifest["domain"]][split]


def generate_file(run, out_path, split="test", top_k=1):
    run = Path(run)
    manifest = load_json(run / "manifest.json")
    prepared = Prepared(manifest["data"])
    prepared.check(manifest)
    model, cfg = load_model(run / "best.ckpt", prepared.vocab)
    examples = split_examples(prepared, manifest, split)
    gens = generate_all(model, [e.da for e in examples], cfg.beam_width, cfg.max_len, top_k)
    head = {k: manifest[k] for k in ("data", "domain", "scenario", "model", "seed")}
    with open(out_path, "w", encoding="utf-8") as fh:
        for ex, g in zip(examples, gens):
            line = {
                "run": head,
                "split": split,
                "index": ex.index,
                "da": ex.da.serialize(),
                "top_k": [{"tokens": toks, "score": score} for toks, score in g.top_k],
            }
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    return len(gens)


def evaluate_run(run, split="test"):
    run = Path(run)
    manifest = load_json(run / "manifest.json")
    prepared = Prepared(manifest["data"])
    prepared.check(manifest)
    model, cfg = load_model(run / "best.ckpt", prepared.vocab)
    examples = split_examples(prepared, manifest, split)
    gens = generate_all(model, [e.da for e in examples], cfg.beam_width, cfg.max_len)
    return score_row(manifest, split, examples, [g.tokens for g in gens])


def evaluate_generations(path, data=None):
    lines = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
    if not lines:
        raise ExperimentError(f"{path}: no generations")
    head, split = lines[0]["run"], lines[0]["split"]
    if any(x["run"] != head or x["split"] != split for x in lines):
        raise ExperimentError(f"{path}: generations from more than one run or split")
    prepared = Prepared(data or head["data"])
    examples = split_examples(prepared, head, split)
    picked = []
    for x in lines:
        ex = examples[x["index"]]
        if parse_da(x["da"]) != ex.da:
            raise ExperimentError(f"{path}: line for example {x['index']} does not match the corpus")
        picked.append(ex)
    gens = [Generation(ex.da, x["top_k"][0]["tokens"], x["top_k"]) for ex, x in zip(picked, lines)]
    return score_row(head, split, picked, [g.tokens for g in gens])


# reports ----------------------------------------------------------------------------------------------


def collect_scores(root):
    rows = []
    for path in sorted(Path(root).rglob("scores.csv")):
        rows.extend(read_scores(path))
    return rows


def build_report(rows):
    report = MetricsReport()
    for r in sorted(rows, key=lambda r: (r["domain"], r["scenario"], MODEL_KINDS.index(r["model"]), r["seed"])):
        report.add(r["domain"], r["scenario"], r["model"], r["bleu"], r["err"])
    return report
