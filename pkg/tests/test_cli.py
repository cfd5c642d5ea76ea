"""End-to-end CLI coverage on a tiny synthetic problem.

The search fixture runs once per module; evaluation, ablation, and report
tests reuse its artifacts. Reruns must be byte-identical so the audit trail
(manifest + config) can reconstruct every emitted number.
"""
import gzip
import hashlib
import json
import struct

import numpy as np
import pytest

from seal.cli import METRIC_COLUMNS, TRAJECTORY_COLUMNS, main

CONFIG = """
[dataset]
kind = synthetic
classes = 4
train_samples = 160
test_samples = 80
side = 8
noise = 0.15
seed = 3

[stream]
tasks = 2
tau = 0.2

[train]
epochs = 1
lr = 0.05
momentum = 0.9
batch_size = 16

[space]
blocks = 2
depth_levels = 1,2
width_levels = 1.0,2.0
kernel_levels = 3,5
resolution_levels = 8
base_channels = 2,3
in_channels = 1
classes = 4

[bank]
epochs = 1
seed = 5

[search]
n_start = 8
iterations = 1
infill = 2
population = 8
generations = 2
top_m = 3
cv_folds = 4

[flatness]
sigma = 0.05
draws = 2

[run]
seeds = 0,1
tradeoff = knee
warmup_fraction = 0.25
search_fraction = 0.5
"""

ITER_HEADER = ("iteration,error_surrogate,flatness_surrogate,front_size,"
               "hypervolume,evaluated,failures,"
               "error_tau_rbf_interpolator,error_tau_k_nearest,"
               "error_tau_ridge_linear,error_tau_tree_ensemble,"
               "flatness_tau_rbf_interpolator,flatness_tau_k_nearest,"
               "flatness_tau_ridge_linear,flatness_tau_tree_ensemble")


@pytest.fixture(scope="module")
def ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "exp.ini"
    path.write_text(CONFIG)
    return str(path)


@pytest.fixture(scope="module")
def run_dir(ini, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["search", "--config", ini, "--seed", "0", "--out", str(out)])
    assert rc == 0
    return out


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_search_artifacts(run_dir):
    for name in ("archive.jsonl", "topm.jsonl", "iterations.csv",
                 "manifest.json"):
        assert (run_dir / name).exists()
    archive = [json.loads(ln) for ln in
               (run_dir / "archive.jsonl").read_text().splitlines()]
    assert len(archive) == 8 + 1 * 2    # n_start + iterations * infill
    assert all(set(e) == {"genome", "error", "flatness", "seed", "aa_final",
                          "param_count", "expansions"} for e in archive)
    header = (run_dir / "iterations.csv").read_text().splitlines()[0]
    assert header == ITER_HEADER
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "search"
    assert len(manifest["config_sha256"]) == 64
    assert manifest["archive_size"] == len(archive)
    assert "iterations.csv" in manifest["artifacts"]


def test_search_rerun_is_byte_identical(ini, run_dir, tmp_path):
    rc = main(["search", "--config", ini, "--seed", "0",
               "--out", str(tmp_path)])
    assert rc == 0
    for name in ("archive.jsonl", "topm.jsonl", "iterations.csv"):
        assert (tmp_path / name).read_bytes() == \
            (run_dir / name).read_bytes()


def test_evaluate_schema_and_aggregation(ini, run_dir):
    rc = main(["evaluate", "--config", ini, "--out", str(run_dir)])
    assert rc == 0
    header, rows = read_rows(run_dir / "metrics.csv")
    assert tuple(header) == METRIC_COLUMNS
    assert [r[0] for r in rows] == ["seal[seed=0]", "seal[seed=1]", "seal"]
    per_seed = rows[:2]
    # std cells stay empty on per-seed rows
    assert all(r[2] == "" and r[4] == "" and r[6] == "" for r in per_seed)
    accs = [float(r[1]) for r in per_seed]
    agg = rows[2]
    assert float(agg[1]) == pytest.approx(np.mean(accs), abs=1e-12)
    assert float(agg[2]) == pytest.approx(np.std(accs, ddof=1), abs=1e-12)
    assert json.loads((run_dir / "manifest_evaluate.json").read_text())[
        "seeds"] == [0, 1]


def test_evaluate_rerun_is_byte_identical(ini, run_dir, tmp_path):
    first = (run_dir / "metrics.csv").read_bytes()
    rc = main(["evaluate", "--config", ini, "--out", str(run_dir)])
    assert rc == 0
    assert (run_dir / "metrics.csv").read_bytes() == first


def test_evaluate_repeats_extend_seeds(ini, run_dir):
    rc = main(["evaluate", "--config", ini, "--out", str(run_dir),
               "--repeats", "3"])
    assert rc == 0
    _, rows = read_rows(run_dir / "metrics.csv")
    assert [r[0] for r in rows[:-1]] == [
        "seal[seed=0]", "seal[seed=1]", "seal[seed=2]"]
    # restore the two-seed artifact for later tests
    assert main(["evaluate", "--config", ini, "--out", str(run_dir)]) == 0


def test_evaluate_without_search_artifacts(ini, tmp_path):
    rc = main(["evaluate", "--config", ini, "--out", str(tmp_path)])
    assert rc == 2
    assert not (tmp_path / "metrics.csv").exists()


def test_baselines_rows(ini, run_dir):
    rc = main(["baselines", "--config", ini, "--out", str(run_dir),
               "--seed", "0", "naive", "joint"])
    assert rc == 0
    header, rows = read_rows(run_dir / "baselines.csv")
    assert tuple(header) == METRIC_COLUMNS
    assert [r[0] for r in rows] == ["naive[seed=0]", "naive",
                                    "joint[seed=0]", "joint"]
    for row in rows[2:]:    # joint training has no forgetting or transfer
        assert row[3] == "" and row[5] == ""
    for row in rows[:2]:
        assert row[3] != ""


def test_baselines_rejects_unknown_kind(ini, tmp_path):
    rc = main(["baselines", "--config", ini, "--out", str(tmp_path),
               "--seed", "0", "replay"])
    assert rc == 2


def test_ablate_distill(ini, run_dir):
    rc = main(["ablate", "--config", ini, "--out", str(run_dir),
               "--seed", "0", "distill"])
    assert rc == 0
    header, summary = read_rows(run_dir / "ablate_distill.csv")
    assert tuple(header) == METRIC_COLUMNS
    assert [r[0] for r in summary] == ["distill[seed=0]", "distill",
                                       "alpha0[seed=0]", "alpha0"]
    t_header, t_full = read_rows(run_dir / "ablate_distill_distill.csv")
    _, t_plain = read_rows(run_dir / "ablate_distill_alpha0.csv")
    assert tuple(t_header) == TRAJECTORY_COLUMNS
    assert len(t_full) == 2 and len(t_plain) == 2    # one row per task
    # both arms share the task stream, so the pre-expansion row matches
    assert t_full[0] == t_plain[0]


def test_ablate_rejects_unknown_axis(ini, run_dir):
    with pytest.raises(SystemExit):    # argparse choices
        main(["ablate", "--config", ini, "--out", str(run_dir), "dropout"])


def test_report_prints_summary(run_dir, capsys):
    rc = main(["report", "--out", str(run_dir)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "archive: 10 entries" in text
    assert "top genome=" in text
    assert "metrics.csv" in text


def test_gradcheck_subcommand(capsys):
    rc = main(["gradcheck"])
    assert rc == 0
    assert "pass" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[dataset]\nkind = synthetic\n[stream]\ntasks = 1\ntau = 0.2\n")
    assert main(["search", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_dataset_is_format_error_without_outputs(tmp_path):
    cfg = tmp_path / "missing.ini"
    cfg.write_text("""
[dataset]
kind = idx
train_images = gone-train.idx
train_labels = gone-labels.idx
test_images = gone-test.idx
test_labels = gone-tlabels.idx

[stream]
tasks = 2
tau = 0.2
""")
    assert main(["search", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists()


def _idx_pair(root, prefix, n, side, classes, seed):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(n, side, side), dtype=np.uint8)
    labels = (np.arange(n) % classes).astype(np.uint8)
    ip = root / f"{prefix}-images.gz"
    lp = root / f"{prefix}-labels.gz"
    with gzip.open(ip, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, side, side))
        fh.write(pixels.tobytes())
    with gzip.open(lp, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.tobytes())
    return ip, lp


def test_cli_does_not_mutate_input_datasets(tmp_path):
    tri, trl = _idx_pair(tmp_path, "train", 120, 8, 4, 0)
    tei, tel = _idx_pair(tmp_path, "test", 60, 8, 4, 1)
    cfg = tmp_path / "idx.ini"
    cfg.write_text(f"""
[dataset]
kind = idx
train_images = {tri}
train_labels = {trl}
test_images = {tei}
test_labels = {tel}

[stream]
tasks = 2
tau = 0.2

[train]
epochs = 1
batch_size = 16

[space]
blocks = 2
depth_levels = 1,2
width_levels = 1.0,2.0
kernel_levels = 3,5
resolution_levels = 8
base_channels = 2,3
in_channels = 1
classes = 4

[bank]
epochs = 1

[run]
warmup_fraction = 0.25
""")
    digests = {p: hashlib.sha256(p.read_bytes()).hexdigest()
               for p in (tri, trl, tei, tel)}
    rc = main(["baselines", "--config", str(cfg),
               "--out", str(tmp_path / "o"), "--seed", "0", "naive"])
    assert rc == 0
    for p, before in digests.items():
        assert hashlib.sha256(p.read_bytes()).hexdigest() == before
