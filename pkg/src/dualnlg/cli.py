"""Command-line entry point: ``dualnlg {prepare,train,generate,evaluate,report}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .checkpoint import CheckpointError
from .corpus import DAParseError
from .training import MODEL_KINDS


def _seeds(text):
    """``5`` means seeds 0..4; ``1,3,7`` lists them."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--seeds needs a positive count")
    return list(range(n))


def build_parser():
    p = argparse.ArgumentParser(prog="dualnlg", description="Train and evaluate dual latent variable NLG models.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("prepare", help="ingest a corpus, build the vocabulary and scenario manifests")
    s.add_argument("--data", help="corpus root with <domain>/{train,valid,test}.jsonl")
    s.add_argument("--synthetic", action="store_true", help="generate the synthetic four-domain corpus instead")
    s.add_argument("--domain", action="append", help="restrict to these domains (repeatable)")
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-valid", type=int, default=200)
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--seed", type=int, default=0, help="corpus generation seed")
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--out", required=True, help="prepared directory to create")

    s = sub.add_parser("train", help="train one model on one scenario for one or more seeds")
    s.add_argument("--data", help="prepared directory")
    s.add_argument("--domain", default="synthetic", help="target domain; 'synthetic' picks the default one")
    s.add_argument("--scenario", default="scr10", help="scr10, scr30, scr100, adapt, semi-U50-L10, ...")
    s.add_argument("--model", choices=MODEL_KINDS, default="crossvae")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", type=_seeds, help="a count (5 -> 0..4) or a comma list")
    s.add_argument("--source", action="append", help="source domain for adaptation (repeatable)")
    s.add_argument("--config", help="TOML or JSON training config")
    s.add_argument("--manifest", help="repeat the run recorded in this manifest.json")
    s.add_argument("--out", required=True, help="runs root (or the run directory with --manifest)")

    s = sub.add_parser("generate", help="decode a split with a trained run")
    s.add_argument("--run", required=True, help="run directory")
    s.add_argument("--split", default="test")
    s.add_argument("--top-k", type=int, default=1)
    s.add_argument("--out", required=True, help="generation JSON-lines file")

    s = sub.add_parser("evaluate", help="score a run directory or a generation file")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="run directory (decodes with the checkpoint)")
    src.add_argument("--generations", help="file written by 'generate'")
    s.add_argument("--split", default="test", help="split to decode with --run")
    s.add_argument("--data", help="prepared directory, overriding the one recorded in the generations")
    s.add_argument("--out", help="CSV output (default: stdout)")

    s = sub.add_parser("report", help="aggregate scores.csv files into seed-averaged tables")
    s.add_argument("--runs", required=True, help="runs root to search")
    s.add_argument("--out", help="output prefix; writes <out>.md and <out>.csv (default: Markdown to stdout)")
    return p


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_prepare(a):
    if bool(a.data) == a.synthetic:
        raise ex.ExperimentError("prepare needs exactly one of --data or --synthetic")
    info = ex.prepare(a.out, a.data, a.domain, a.synthetic, a.n_train, a.n_valid, a.n_test, a.seed, a.split_seed)
    print(f"prepared {', '.join(info['domains'])} in {a.out} (corpus {info['corpus_hash'][:12]})")
    return 0


def cmd_train(a):
    if a.manifest:
        manifest = ex.load_json(a.manifest)
        prepared = ex.Prepared(a.data or manifest["data"])
        manifest["data"] = str(prepared.root)
        runs = [(manifest, Path(a.out))]
    else:
        if not a.data:
            raise ex.ExperimentError("train needs --data (or --manifest)")
        prepared = ex.Prepared(a.data)
        config, finetune = ex.load_config(a.config) if a.config else ({}, {})
        seeds = [a.seed] if a.seed is not None else a.seeds or list(config.get("seeds", [0]))
        runs = []
        for seed in seeds:
            m = ex.build_manifest(prepared, a.domain, a.scenario, a.model, seed, config, finetune, a.source)
            runs.append((m, ex.run_dir(a.out, m["domain"], m["scenario"], m["model"], seed)))
        group = runs[0][1].parent
        group.mkdir(parents=True, exist_ok=True)
        ex.dump_json(group / "manifest.json", {"runs": [str(d.name) for _, d in runs], "seeds": seeds,
                                             "template": runs[0][0] | {"seed": None}})
    failed = []
    for manifest, out_dir in runs:
        row, status = ex.execute(manifest, out_dir, prepared)
        print(f"{out_dir}: BLEU {row['bleu']:.4f} ERR {row['err']:.2f}% "
              f"(best epoch {status['best_epoch']}, {status['seconds']}s)")
        if status["diverged"]:
            failed.append(f"{out_dir}: {'; '.join(status['diverged'])}")
    if failed:
        raise ex.ExperimentError("diverged runs:\n  " + "\n  ".join(failed))
    return 0


def cmd_generate(a):
    n = ex.generate_file(a.run, a.out, a.split, a.top_k)
    print(f"wrote {n} generations to {a.out}")
    return 0


def cmd_evaluate(a):
    row = ex.evaluate_generations(a.generations, a.data) if a.generations else ex.evaluate_run(a.run, a.split)
    _emit(ex.format_scores([row]), a.out)
    return 0


def cmd_report(a):
    rows = ex.collect_scores(a.runs)
    if not rows:
        raise ex.ExperimentError(f"no scores.csv found under {a.runs}")
    report = ex.build_report(rows)
    if a.out:
        Path(f"{a.out}.md").write_text(report.to_markdown(), encoding="utf-8")
        table = report.to_rows()
        with open(f"{a.out}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, list(table[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(table)
    else:
        sys.stdout.write(report.to_markdown())
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ex.ExperimentError, CheckpointError, DAParseError, ValueError, OSError) as exc:
        print(f"dualnlg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
