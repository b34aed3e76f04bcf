import json

import pytest

from dualnlg import experiments as ex
from dualnlg.cli import main

from conftest import TINY

TINY_TOML = "\n".join(
    f"{k} = {json.dumps(list(v) if isinstance(v, tuple) else v)}" for k, v in TINY.items()
) + "\nmax_epochs = 2\npatience = 2\nkl_warmup_steps = 10\nalpha_decay_steps = 10\n\n[finetune]\nmax_epochs = 1\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    prepared = root / "prep"
    assert main(["prepare", "--synthetic", "--domain", "tv", "--domain", "laptop", "--n-train", "30",
                 "--n-valid", "3", "--n-test", "4", "--out", str(prepared)]) == 0
    cfg = root / "tiny.toml"
    cfg.write_text(TINY_TOML)
    runs = root / "runs"
    assert main(["train", "--data", str(prepared), "--domain", "synthetic", "--scenario", "scr10",
                 "--model", "crossvae", "--seeds", "2", "--config", str(cfg), "--out", str(runs)]) == 0
    return root, prepared, cfg, runs


def test_prepare_layout(workspace):
    _, prepared, _, _ = workspace
    info = json.loads((prepared / "prepared.json").read_text())
    assert info["domains"] == ["tv", "laptop"] and info["default_domain"] == "tv"
    assert info["close_pairs"] == {"tv": "laptop", "laptop": "tv"}
    scr10 = json.loads((prepared / "scenarios" / "tv" / "scr10.json").read_text())
    assert len(scr10["train"]) == 3
    semi = json.loads((prepared / "scenarios" / "tv" / "semi-U50-L10.json").read_text())
    assert not set(semi["train"]) & set(semi["unlabeled"])


def test_train_writes_one_directory_per_seed(workspace):
    _, _, _, runs = workspace
    group = runs / "tv" / "scr10" / "crossvae"
    assert sorted(p.name for p in group.iterdir() if p.is_dir()) == ["seed0", "seed1"]
    assert json.loads((group / "manifest.json").read_text())["seeds"] == [0, 1]
    for seed in (0, 1):
        d = group / f"seed{seed}"
        assert {"manifest.json", "metrics.csv", "best.ckpt", "scores.csv"} <= {p.name for p in d.iterdir()}
        m = json.loads((d / "manifest.json").read_text())
        assert m["seed"] == seed and m["config"]["max_epochs"] == 2 and len(m["corpus_hash"]) == 64


def test_generate_then_evaluate_matches_direct_evaluation(workspace, tmp_path):
    _, _, _, runs = workspace
    run = runs / "tv" / "scr10" / "crossvae" / "seed0"
    gens = tmp_path / "gens.jsonl"
    assert main(["generate", "--run", str(run), "--top-k", "2", "--out", str(gens)]) == 0
    lines = [json.loads(x) for x in gens.read_text().splitlines()]
    assert len(lines) == 4 and all(1 <= len(x["top_k"]) <= 2 for x in lines)
    assert main(["evaluate", "--generations", str(gens), "--out", str(tmp_path / "a.csv")]) == 0
    assert main(["evaluate", "--run", str(run), "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    # the checkpoint reproduces the scores recorded at training time
    assert (tmp_path / "b.csv").read_bytes() == (run / "scores.csv").read_bytes()


def test_rerun_from_manifest_is_bit_identical(workspace, tmp_path):
    _, _, _, runs = workspace
    run = runs / "tv" / "scr10" / "crossvae" / "seed1"
    assert main(["train", "--manifest", str(run / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("metrics.csv", "scores.csv", "best.ckpt"):
        assert (tmp_path / "again" / name).read_bytes() == (run / name).read_bytes()


def test_adaptation_and_semi_runs(workspace, tmp_path):
    _, prepared, cfg, _ = workspace
    assert main(["train", "--data", str(prepared), "--domain", "tv", "--scenario", "adapt", "--model", "ralstm",
                 "--seed", "0", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    d = tmp_path / "tv" / "adapt" / "ralstm" / "seed0"
    m = json.loads((d / "manifest.json").read_text())
    assert m["source_domains"] == ["laptop"] and m["finetune_config"]["max_epochs"] == 1
    assert (d / "pretrain.csv").is_file() and (d / "metrics.csv").is_file()
    # fine-tuning validates the source model before its first update
    first = (d / "metrics.csv").read_text().splitlines()[1].split(",")
    assert first[:2] == ["0", "0"]
    assert main(["train", "--data", str(prepared), "--domain", "tv", "--scenario", "semi-U50-L10",
                 "--model", "dualvae", "--seed", "0", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    header, *rows = (tmp_path / "tv" / "semi-U50-L10" / "dualvae" / "seed0" / "metrics.csv").read_text().splitlines()
    col = header.split(",").index("unlabeled")
    assert any(r.split(",")[col] not in ("", "0.0") for r in rows)


def test_report(workspace, tmp_path, capsys):
    _, _, _, runs = workspace
    assert main(["report", "--runs", str(runs), "--out", str(tmp_path / "table")]) == 0
    md = (tmp_path / "table.md").read_text()
    assert "crossvae" in md and "tv scr10 BLEU" in md and "(n=2)" in md
    rows = (tmp_path / "table.csv").read_text().splitlines()
    assert rows[0].startswith("domain,scenario,model,seeds") and len(rows) == 2


def test_usage_errors_exit_2(capsys):
    for argv in ([], ["frobnicate"], ["report"], ["train", "--bogus", "1", "--out", "x"],
                 ["train", "--model", "gpt", "--out", "x"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    _, prepared, _, runs = workspace
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert main(["train", "--data", str(prepared), "--domain", "hotel", "--out", str(tmp_path)]) == 1
    assert main(["train", "--data", str(prepared), "--scenario", "semi-U50-L10", "--model", "ralstm",
                 "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"modle": "x"}')
    assert main(["train", "--data", str(prepared), "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert main(["prepare", "--out", str(tmp_path / "p")]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_checkpoint_vocabulary_mismatch(workspace, tmp_path):
    _, _, _, runs = workspace
    run = runs / "tv" / "scr10" / "crossvae" / "seed0"
    other = tmp_path / "other"
    ex.prepare(other, synthetic=True, domains=["hotel"], n_train=10, n_valid=2, n_test=2)
    with pytest.raises(ex.ExperimentError, match="vocabulary"):
        ex.load_model(run / "best.ckpt", ex.Prepared(other).vocab)
