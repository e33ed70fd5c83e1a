"""Command-line front end.

Subcommands cover the whole pipeline: synth, train, localize, order,
evaluate, stats, and run-all. Every configuration key has a documented
default, may appear in a "key = value" config file (full-line # comments),
and may be overridden by a flag of the same name; flags beat the file, the
file beats defaults. Outputs are written atomically (temp file then rename),
and a fixed seed makes every command byte-reproducible.

Stage seeding: generation uses the seed as given, training uses seed + 1,
and localization (cut clustering and baselines) uses seed + 2, so stages
draw from unrelated streams.

Exit codes: 0 success; 2 usage or config error; 3 missing file; 4 malformed
file; 5 invalid value or domain error; 6 numeric failure; 1 unexpected
error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .core import (
    FileFormatError,
    KeyStepAssignment,
    ManifestEntry,
    TaskManifest,
    load_assignment_file,
    load_manifest,
    save_annotation_file,
    save_assignment_file,
    save_features,
    save_manifest,
    segments_to_frame_labels,
)
from .embed import (
    TrainConfig,
    embed_sequence,
    format_loss_trace,
    load_params,
    save_params,
    train_embedder,
)
from .metrics import dataset_stats, format_report, format_stats, full_report
from .order import format_order, keystep_order
from .procut import PcmConfig, localize
from .synthbench import (
    SynthSpec,
    annotation_to_assignment,
    compare_methods,
    format_benchmark,
    generate,
)

__all__ = ["main", "run"]

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_FORMAT = 4
EXIT_INVALID = 5
EXIT_NUMERIC = 6


class ConfigError(Exception):
    """Unknown key, bad syntax, or unparseable value in configuration."""


# ---------------------------------------------------------------------------
# Configuration keys
# ---------------------------------------------------------------------------


def _parse_int(text: str) -> int:
    try:
        return int(text.strip(), 10)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _parse_u64(text: str) -> int:
    value = _parse_int(text)
    if not (0 <= value < 2**64):
        raise ConfigError(f"expected an unsigned 64-bit integer, got {value}")
    return value


def _parse_float(text: str) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {text!r}")
    return value


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ConfigError(f"expected one of {options}, got {value!r}")
        return value

    return parse


@dataclass(frozen=True)
class KeySpec:
    name: str
    parse: Callable[[str], object]
    default: object
    help: str


KEY_SPECS: tuple[KeySpec, ...] = (
    KeySpec("out", _parse_str, ".", "output directory"),
    KeySpec("manifest", _parse_str, "", "manifest path (default: <out>/manifest.csv)"),
    KeySpec("seed", _parse_u64, 7, "global seed; stages derive their own streams"),
    KeySpec("task_name", _parse_str, "synthetic", "task name for generated data"),
    KeySpec("k", _parse_int, 5, "number of key-steps (localize/order default to the manifest's)"),
    KeySpec("num_videos", _parse_int, 5, "videos per generated task"),
    KeySpec("frames_per_video", _parse_int, 200, "frames in each generated video"),
    KeySpec("feature_dim", _parse_int, 16, "raw feature dimensionality"),
    KeySpec("foreground_ratio_target", _parse_float, 0.6, "target key-step frame fraction"),
    KeySpec("missing_prob", _parse_float, 0.1, "chance each video drops each step"),
    KeySpec("repeat_prob", _parse_float, 0.1, "chance each video duplicates a step"),
    KeySpec("order_jitter", _parse_float, 0.1, "chance of swapping each adjacent step pair"),
    KeySpec("noise_sigma", _parse_float, 0.05, "feature noise scale"),
    KeySpec("steps", _parse_int, 500, "training steps"),
    KeySpec("learning_rate", _parse_float, 0.01, "gradient descent rate"),
    KeySpec("temperature", _parse_float, 0.1, "cycle-consistency softmax temperature"),
    KeySpec("variance_weight", _parse_float, 0.001, "weight of the log-variance term"),
    KeySpec("variance_floor", _parse_float, 1e-6, "lower bound on the regression variance"),
    KeySpec("cidm_window", _parse_int, 5, "temporal neighborhood radius"),
    KeySpec("cidm_margin", _parse_float, 2.0, "hinge margin for far frame pairs"),
    KeySpec("cidm_weight", _parse_float, 1.0, "weight of the temporal-coherence term"),
    KeySpec("pair_strategy", _parse_choice("all-pairs", "random-pair"), "all-pairs",
            "video pair schedule: all-pairs or random-pair"),
    KeySpec("hidden_dim", _parse_int, 32, "embedder hidden width"),
    KeySpec("embed_dim", _parse_int, 16, "embedding dimensionality"),
    KeySpec("smoothness", _parse_float, 0.5, "n-link capacity between adjacent frames"),
    KeySpec("background_bias", _parse_float, 0.0, "unary offset raising background prevalence"),
    KeySpec("kmeans_restarts", _parse_int, 8, "k-means restarts for foreground clustering"),
)

_KEYS = {spec.name: spec for spec in KEY_SPECS}


def parse_config_file(path: Path) -> dict[str, str]:
    """Read ``key = value`` lines; full-line # comments and blanks allowed."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def resolve_config(args: argparse.Namespace) -> tuple[dict[str, object], set[str]]:
    """Merge defaults, config file, and flags; flags win, file beats defaults.

    Returns the typed configuration plus the set of keys given explicitly
    (by file or flag).
    """
    values: dict[str, object] = {spec.name: spec.default for spec in KEY_SPECS}
    explicit: set[str] = set()
    if args.config is not None:
        for key, text in parse_config_file(Path(args.config)).items():
            values[key] = _KEYS[key].parse(text)
            explicit.add(key)
    for spec in KEY_SPECS:
        flag_value = getattr(args, spec.name)
        if flag_value is not None:
            values[spec.name] = spec.parse(flag_value)
            explicit.add(spec.name)
    return values, explicit


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    """Write through a temp file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _atomic_text(path: Path, content: str) -> None:
    _atomic_write(path, lambda tmp: tmp.write_text(content))


def _out_dir(cfg: dict[str, object]) -> Path:
    return Path(str(cfg["out"]))


def _manifest_path(cfg: dict[str, object]) -> Path:
    custom = str(cfg["manifest"])
    return Path(custom) if custom else _out_dir(cfg) / "manifest.csv"


def _synth_spec(cfg: dict[str, object]) -> SynthSpec:
    return SynthSpec(
        K=int(cfg["k"]),
        num_videos=int(cfg["num_videos"]),
        frames_per_video=int(cfg["frames_per_video"]),
        feature_dim=int(cfg["feature_dim"]),
        foreground_ratio_target=float(cfg["foreground_ratio_target"]),
        missing_prob=float(cfg["missing_prob"]),
        repeat_prob=float(cfg["repeat_prob"]),
        order_jitter=float(cfg["order_jitter"]),
        noise_sigma=float(cfg["noise_sigma"]),
        seed=int(cfg["seed"]),
    )


def _train_config(cfg: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        steps=int(cfg["steps"]),
        temperature=float(cfg["temperature"]),
        variance_weight=float(cfg["variance_weight"]),
        variance_floor=float(cfg["variance_floor"]),
        cidm_window=int(cfg["cidm_window"]),
        cidm_margin=float(cfg["cidm_margin"]),
        cidm_weight=float(cfg["cidm_weight"]),
        seed=int(cfg["seed"]) + 1,
        pair_strategy=str(cfg["pair_strategy"]),
        hidden_dim=int(cfg["hidden_dim"]),
        embed_dim=int(cfg["embed_dim"]),
    )


def _pcm_config(cfg: dict[str, object], K: int) -> PcmConfig:
    return PcmConfig(
        K=K,
        smoothness=float(cfg["smoothness"]),
        background_bias=float(cfg["background_bias"]),
        kmeans_restarts=int(cfg["kmeans_restarts"]),
        seed=int(cfg["seed"]) + 2,
    )


def _resolved_k(cfg: dict[str, object], explicit: set[str], manifest: TaskManifest) -> int:
    return int(cfg["k"]) if "k" in explicit else manifest.K


def _load_embeddings(cfg: dict[str, object], manifest: TaskManifest):
    params = load_params(_out_dir(cfg) / "params.cncp")
    sequences = manifest.load_feature_sequences()
    embeddings = {seq.video_id: embed_sequence(params, seq) for seq in sequences}
    return sequences, embeddings


def _load_assignments(cfg: dict[str, object], manifest: TaskManifest, K: int) -> KeyStepAssignment:
    assignments_dir = _out_dir(cfg) / "assignments"
    per_video = {
        entry.video_id: load_assignment_file(assignments_dir / f"{entry.video_id}.csv")
        for entry in manifest.entries
    }
    return KeyStepAssignment(per_video=per_video, K=K)


def _gt_assignment(manifest: TaskManifest) -> KeyStepAssignment:
    annotation = manifest.load_annotation()
    sequences = manifest.load_feature_sequences()
    per_video = {
        seq.video_id: segments_to_frame_labels(
            annotation, seq.video_id, seq.num_frames, seq.fps
        )
        for seq in sequences
    }
    return KeyStepAssignment(per_video=per_video, K=annotation.K)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict[str, object], explicit: set[str]) -> None:
    out = _out_dir(cfg)
    spec = _synth_spec(cfg)
    sequences, annotation = generate(spec, task_name=str(cfg["task_name"]))
    entries = []
    for seq in sequences:
        feature_path = out / "features" / f"{seq.video_id}.feat"
        annotation_path = out / "annotations" / f"{seq.video_id}.csv"
        _atomic_write(feature_path, lambda tmp, s=seq: save_features(tmp, s))
        _atomic_write(
            annotation_path,
            lambda tmp, segs=annotation.per_video[seq.video_id]: save_annotation_file(tmp, segs),
        )
        entries.append(
            ManifestEntry(
                video_id=seq.video_id,
                feature_path=feature_path,
                annotation_path=annotation_path,
            )
        )
    manifest = TaskManifest(task_name=annotation.task_name, K=spec.K, entries=entries)
    # The temp file shares the manifest's directory, so relative paths match.
    _atomic_write(_manifest_path(cfg), lambda tmp: save_manifest(tmp, manifest))


def cmd_train(cfg: dict[str, object], explicit: set[str]) -> None:
    out = _out_dir(cfg)
    manifest = load_manifest(_manifest_path(cfg))
    sequences = manifest.load_feature_sequences()
    result = train_embedder(sequences, _train_config(cfg))
    _atomic_write(out / "params.cncp", lambda tmp: save_params(tmp, result.params))
    _atomic_text(out / "loss_trace.csv", format_loss_trace(result.loss_trace))


def cmd_localize(cfg: dict[str, object], explicit: set[str]) -> None:
    out = _out_dir(cfg)
    manifest = load_manifest(_manifest_path(cfg))
    _, embeddings = _load_embeddings(cfg, manifest)
    K = _resolved_k(cfg, explicit, manifest)
    assignment = localize(embeddings, _pcm_config(cfg, K))
    for video_id, labels in assignment.per_video.items():
        path = out / "assignments" / f"{video_id}.csv"
        _atomic_write(path, lambda tmp, lab=labels: save_assignment_file(tmp, lab))


def cmd_order(cfg: dict[str, object], explicit: set[str]) -> None:
    manifest = load_manifest(_manifest_path(cfg))
    K = _resolved_k(cfg, explicit, manifest)
    assignment = _load_assignments(cfg, manifest, K)
    _atomic_text(_out_dir(cfg) / "order.csv", format_order(keystep_order(assignment)))


def cmd_evaluate(cfg: dict[str, object], explicit: set[str]) -> None:
    manifest = load_manifest(_manifest_path(cfg))
    gt = _gt_assignment(manifest)
    pred = _load_assignments(cfg, manifest, gt.K)
    _atomic_text(_out_dir(cfg) / "metrics.csv", format_report(full_report(pred, gt)))


def cmd_stats(cfg: dict[str, object], explicit: set[str]) -> None:
    manifest = load_manifest(_manifest_path(cfg))
    stats = dataset_stats(manifest.load_annotation())
    _atomic_text(_out_dir(cfg) / "stats.csv", format_stats(stats))


def cmd_run_all(cfg: dict[str, object], explicit: set[str]) -> None:
    cmd_synth(cfg, explicit)
    cmd_train(cfg, explicit)
    cmd_localize(cfg, explicit)
    cmd_order(cfg, explicit)
    cmd_evaluate(cfg, explicit)
    cmd_stats(cfg, explicit)
    manifest = load_manifest(_manifest_path(cfg))
    _, embeddings = _load_embeddings(cfg, manifest)
    gt = _gt_assignment(manifest)
    results = compare_methods(embeddings, gt, _pcm_config(cfg, gt.K))
    _atomic_text(_out_dir(cfg) / "benchmark.csv", format_benchmark(results))


_COMMANDS = {
    "synth": (cmd_synth, "generate a planted synthetic task"),
    "train": (cmd_train, "train the embedder on a manifest"),
    "localize": (cmd_localize, "cut frames into key-steps vs background"),
    "order": (cmd_order, "order discovered key-steps by mean position"),
    "evaluate": (cmd_evaluate, "score assignments against annotations"),
    "stats": (cmd_stats, "dataset statistics from annotations"),
    "run-all": (cmd_run_all, "full pipeline plus benchmark table"),
}

_EPILOG = """\
exit codes:
  0  success
  1  unexpected error
  2  usage or configuration error (unknown key, bad value syntax)
  3  missing input file
  4  malformed input file
  5  invalid value or domain error
  6  numeric failure

configuration keys (file "key = value" lines or flags of the same name):
""" + "\n".join(
    f"  {spec.name:<25} default {spec.default!r}: {spec.help}" for spec in KEY_SPECS
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proclearn",
        description="Key-step discovery pipeline: correspondence learning, "
        "graph-cut localization, ordering, and evaluation.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, description) in _COMMANDS.items():
        sub = subparsers.add_parser(
            name,
            help=description,
            epilog=_EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", default=None, help="path to a key = value config file")
        for spec in KEY_SPECS:
            sub.add_argument(f"--{spec.name}", default=None, metavar="V", help=spec.help)
    return parser


def run(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    cfg, explicit = resolve_config(args)
    _COMMANDS[args.command][0](cfg, explicit)


def main(argv: list[str] | None = None) -> int:
    try:
        run(argv)
    except ConfigError as exc:
        print(f"proclearn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else exc
        print(f"proclearn: missing file: {name}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except FileFormatError as exc:
        print(f"proclearn: bad file format: {exc}", file=sys.stderr)
        return EXIT_BAD_FORMAT
    except FloatingPointError as exc:
        print(f"proclearn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"proclearn: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # pragma: no cover - catch-all contract
        print(f"proclearn: unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
