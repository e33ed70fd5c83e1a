from __future__ import annotations

import numpy as np
import pytest

from proclearn.cli import (
    ConfigError,
    build_parser,
    main,
    parse_config_file,
    resolve_config,
)
from proclearn.core import load_assignment_file, load_manifest

TINY = [
    "--k", "2",
    "--num_videos", "2",
    "--frames_per_video", "20",
    "--feature_dim", "4",
    "--steps", "3",
    "--hidden_dim", "8",
    "--embed_dim", "4",
    "--kmeans_restarts", "2",
    "--seed", "3",
]


def _run(command, out, *extra):
    return main([command, "--out", str(out), *TINY, *extra])


def _tree(root):
    return {
        path.relative_to(root).as_posix(): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


# ---------------------------------------------------------------------------
# Configuration parsing
# ---------------------------------------------------------------------------


def test_config_file_accepts_comments_and_blanks(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(
        "# training\n"
        "\n"
        "steps = 12\n"
        "pair_strategy = random-pair\n"
        "noise_sigma=0.2\n"
    )
    raw = parse_config_file(config)
    assert raw == {"steps": "12", "pair_strategy": "random-pair", "noise_sigma": "0.2"}


@pytest.mark.parametrize(
    "text",
    [
        "mystery = 1\n",
        "steps = 1\nsteps = 2\n",
        "steps 12\n",
    ],
)
def test_config_file_rejects_bad_lines(tmp_path, text):
    config = tmp_path / "run.cfg"
    config.write_text(text)
    with pytest.raises(ConfigError):
        parse_config_file(config)


def test_flags_beat_file_beats_default(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("seed = 11\nsteps = 9\n")
    args = build_parser().parse_args(
        ["train", "--config", str(config), "--seed", "12"]
    )
    values, explicit = resolve_config(args)
    assert values["seed"] == 12
    assert values["steps"] == 9
    assert values["learning_rate"] == 0.01
    assert explicit == {"seed", "steps"}


@pytest.mark.parametrize(
    "flags",
    [
        ["--seed", "not-a-number"],
        ["--seed", "-1"],
        ["--steps", "3.5"],
        ["--noise_sigma", "inf"],
        ["--pair_strategy", "alternating"],
    ],
)
def test_unparseable_values_exit_with_usage_error(tmp_path, flags):
    assert main(["synth", "--out", str(tmp_path), *flags]) == 2


def test_config_error_in_file_exits_with_usage_error(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("bogus = 1\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(config)]) == 2


def test_unknown_flag_raises_argparse_exit():
    with pytest.raises(SystemExit) as excinfo:
        main(["synth", "--bogus", "1"])
    assert excinfo.value.code == 2


def test_help_documents_exit_codes(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    assert "exit codes:" in out
    assert "foreground_ratio_target" in out


# ---------------------------------------------------------------------------
# Pipeline commands
# ---------------------------------------------------------------------------


def test_synth_writes_manifest_features_annotations(tmp_path):
    out = tmp_path / "out"
    assert _run("synth", out) == 0
    manifest = load_manifest(out / "manifest.csv")
    assert manifest.K == 2
    assert [entry.video_id for entry in manifest.entries] == ["video_00", "video_01"]
    sequences = manifest.load_feature_sequences()
    assert all(seq.features.shape == (20, 4) for seq in sequences)
    assert manifest.load_annotation().K == 2


def test_train_then_localize_then_downstream(tmp_path):
    out = tmp_path / "out"
    assert _run("synth", out) == 0
    assert _run("train", out) == 0
    assert (out / "params.cncp").exists()
    trace_lines = (out / "loss_trace.csv").read_text().splitlines()
    assert trace_lines[0] == "step,loss"
    assert len(trace_lines) == 1 + 3

    assert _run("localize", out) == 0
    labels = load_assignment_file(out / "assignments" / "video_00.csv")
    assert labels.shape == (20,)
    assert labels.min() >= 0 and labels.max() <= 2

    assert _run("order", out) == 0
    order_line = (out / "order.csv").read_text()
    assert order_line.startswith("order,")

    assert _run("evaluate", out) == 0
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert any(line.startswith("summary,mean_f1,") for line in metrics)

    assert _run("stats", out) == 0
    stats = (out / "stats.csv").read_text().splitlines()
    assert stats[0] == "stat,value"


def test_localize_defaults_to_manifest_k(tmp_path):
    out = tmp_path / "out"
    assert _run("synth", out) == 0
    assert _run("train", out) == 0
    args = [arg for pair in zip(TINY[::2], TINY[1::2]) if pair[0] != "--k" for arg in pair]
    assert main(["localize", "--out", str(out), *args]) == 0
    labels = load_assignment_file(out / "assignments" / "video_00.csv")
    assert labels.max() <= 2


def test_custom_manifest_path(tmp_path):
    out = tmp_path / "out"
    manifest = tmp_path / "elsewhere" / "my_manifest.csv"
    assert _run("synth", out, "--manifest", str(manifest)) == 0
    assert manifest.exists()
    assert not (out / "manifest.csv").exists()
    assert _run("stats", out, "--manifest", str(manifest)) == 0


def test_run_all_produces_every_artifact(tmp_path):
    out = tmp_path / "out"
    assert _run("run-all", out) == 0
    for name in (
        "manifest.csv",
        "params.cncp",
        "loss_trace.csv",
        "order.csv",
        "metrics.csv",
        "stats.csv",
        "benchmark.csv",
    ):
        assert (out / name).exists(), name
    benchmark = (out / "benchmark.csv").read_text().splitlines()
    assert benchmark[0].startswith("method,")
    assert [line.split(",")[0] for line in benchmark[1:]] == ["cnc", "cluster_all", "random"]


def test_run_all_is_byte_reproducible(tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert _run("run-all", first) == 0
    assert _run("run-all", second) == 0
    assert _tree(first) == _tree(second)


def test_no_temp_files_left_behind(tmp_path):
    out = tmp_path / "out"
    assert _run("run-all", out) == 0
    stray = [p for p in out.rglob(".*") if p.is_file()]
    assert stray == []


# ---------------------------------------------------------------------------
# Failure exit codes
# ---------------------------------------------------------------------------


def test_missing_manifest_exits_3(tmp_path):
    assert _run("train", tmp_path / "void") == 3


def test_malformed_manifest_exits_4(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "manifest.csv").write_text("not,a,manifest\njunk\n")
    assert _run("stats", out) == 4


def test_invalid_domain_exits_5(tmp_path):
    out = tmp_path / "out"
    assert main(["synth", "--out", str(out), "--k", "0"]) == 5
    assert _run("synth", out) == 0
    assert _run("train", out) == 0
    assert _run("localize", out, "--k", "0") == 5


def test_numeric_failure_exits_6(tmp_path):
    out = tmp_path / "out"
    assert _run("synth", out) == 0
    with np.errstate(all="ignore"):
        code = _run("train", out, "--temperature", "5e-324")
    assert code == 6
