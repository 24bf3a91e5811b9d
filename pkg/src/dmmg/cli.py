"""Command line: gen-data, pretrain, eval, fuse.

Every command takes a YAML (or JSON) config with optional sections ``data``,
``pretrain``, ``eval`` and ``paths``. Relative paths inside the config resolve
against the config file's directory; paths given as flags resolve against
the working directory. Failures print one ``error[kind]: message`` line to
stderr and exit nonzero.
"""
from __future__ import annotations

import os

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _cap_threads() -> None:
    # must run before numpy loads its BLAS
    n = os.environ.get("DMMG_THREADS")
    if n and n.isdigit() and int(n) > 0:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


_cap_threads()

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .checkpoint import check_compatible, load_checkpoint, save_checkpoint  # noqa: E402
from .contrastive import TripletConfig  # noqa: E402
from .encoder import EncoderConfig, init_params  # noqa: E402
from .errors import ConfigError, DimensionError, DMMGError  # noqa: E402
from .evaluation import (EvalConfig, extract_features, fuse_streams, metrics_record, pca_2d,  # noqa: E402
                         run_protocol, semi_supervised_split)
from .graph import build_skeleton_graph  # noqa: E402
from .skeleton import SyntheticConfig, default_bones, generate_synthetic_dataset, read_skl, to_stream, write_skl  # noqa: E402
from .trainer import GAMES, PretrainConfig, pretrain  # noqa: E402

logger = logging.getLogger("dmmg")

EXIT_CODES = {"usage": 2, "config": 2, "io": 3, "format": 4, "dimension": 5, "contract": 6,
              "degenerate": 7, "numeric": 8}


@dataclasses.dataclass
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "run"


SECTIONS = {"data": SyntheticConfig, "pretrain": PretrainConfig, "eval": EvalConfig, "paths": PathsConfig}
NESTED = {(PretrainConfig, "triplet"): TripletConfig, (PretrainConfig, "encoder"): EncoderConfig}


def _check_keys(cls, values, where: str) -> None:
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} in {where}; allowed: {', '.join(sorted(known))}")
    for key, value in values.items():
        sub = NESTED.get((cls, key))
        if sub is not None:
            _check_keys(sub, value, f"{where}.{key}")


def load_config(path) -> dict:
    """Parse and key-check a config file; returns built section objects plus the base directory."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {' '.join(str(exc).split())}") from None
    doc = doc or {}
    _check_keys_top(doc)
    out = {"base": path.resolve().parent}
    for name, cls in SECTIONS.items():
        values = doc.get(name) or {}
        _check_keys(cls, values, name)
        try:
            out[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value in section {name}: {exc}") from None
    return out


def _check_keys_top(doc) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}; allowed: {', '.join(SECTIONS)}")


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else (base / p)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ----------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict, args) -> int:
    syn: SyntheticConfig = cfg["data"]
    train, test = generate_synthetic_dataset(syn)
    out = _resolve(cfg["base"], cfg["paths"].data_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_skl(train, out / "train.skl")
    write_skl(test, out / "test.skl")
    summary = {
        "seed": syn.seed,
        "config": dataclasses.asdict(syn),
        "class_names": [f"action_{c:02d}" for c in range(syn.num_classes)],
        "train_count": len(train),
        "test_count": len(test),
        "train_per_class": np.bincount(train.labels, minlength=syn.num_classes).tolist(),
        "test_per_class": np.bincount(test.labels, minlength=syn.num_classes).tolist(),
        "files": {"train": "train.skl", "test": "test.skl"},
    }
    _write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(train)} train / {len(test)} test sequences to {out}")
    return 0


def _load_split(cfg: dict, name: str):
    path = _resolve(cfg["base"], cfg["paths"].data_dir) / f"{name}.skl"
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} not found (run gen-data first)")
    return read_skl(path, split_tag=name)


def cmd_pretrain(cfg: dict, args) -> int:
    pcfg: PretrainConfig = cfg["pretrain"]
    if args.games:
        pcfg.games = tuple(g.strip() for g in args.games.split(",") if g.strip())
    if args.stream:
        pcfg.stream = args.stream
    if args.ablation:
        pcfg.ablation = args.ablation
    if args.seed is not None:
        pcfg.seed = args.seed
    pcfg.validate()
    train = _load_split(cfg, "train")
    joints = cfg["data"].joints
    if train.num_joints != joints:
        raise DimensionError(f"dataset sequences have {train.num_joints} joints, configured graph has {joints}")
    graph = build_skeleton_graph(joints, default_bones(joints))
    state, log = pretrain(pcfg, train, graph)
    run = Path(args.run_dir) if args.run_dir else _resolve(cfg["base"], cfg["paths"].run_dir)
    run.mkdir(parents=True, exist_ok=True)
    ckpt = run / "checkpoint.dmck"
    save_checkpoint(ckpt, state, pcfg.to_dict(), graph)
    lines = []
    for epoch in log["epochs"]:
        for rec in log["steps"]:
            if rec["epoch"] == epoch["epoch"]:
                lines.append(_dump_json({"kind": "step", **rec}))
        lines.append(_dump_json({"kind": "epoch", **epoch}))
    _write_text(run / "pretrain_metrics.jsonl", "".join(line + "\n" for line in lines))
    print(f"checkpoint {ckpt} after {state.step} steps")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    ecfg: EvalConfig = cfg["eval"]
    if args.protocol:
        ecfg.protocol = args.protocol
    if args.label_fraction is not None:
        ecfg.label_fraction = args.label_fraction
    if args.seed is not None:
        ecfg.seed = args.seed
    ecfg.validate()
    ckpt = load_checkpoint(Path(args.checkpoint))
    train, test = _load_split(cfg, "train"), _load_split(cfg, "test")
    check_compatible(ckpt, train.num_joints)
    pcfg = PretrainConfig(**ckpt.config)
    enc_cfg = pcfg.encoder
    params = ckpt.group("online")
    # shapes in the file must match what the recorded encoder config builds
    expected = {n: p.shape for n, p in init_params(enc_cfg, 0).items()}
    got = {n: p.shape for n, p in params.items()}
    if expected != got:
        diff = sorted(n for n in set(expected) | set(got) if expected.get(n) != got.get(n))
        raise DimensionError("checkpoint parameters do not fit the encoder config: " + "; ".join(
            f"{n} file {got.get(n)} vs config {expected.get(n)}" for n in diff))
    graph = ckpt.graph()
    stream = pcfg.stream
    result = run_protocol(params, enc_cfg, graph, train, test, ecfg, stream=stream)
    extra = {"checkpoint_step": ckpt.step}
    if ecfg.protocol == "semi":
        extra["labeled"] = int(len(semi_supervised_split(train, ecfg.label_fraction, ecfg.seed)))
        extra["label_fraction"] = ecfg.label_fraction
    if ecfg.protocol == "knn":
        extra.update(knn_k=ecfg.knn_k, knn_temperature=ecfg.knn_temperature)
    record = metrics_record(ecfg.protocol, stream, ecfg.seed, result, **extra)
    run = Path(args.run_dir) if args.run_dir else _resolve(cfg["base"], cfg["paths"].run_dir)
    metrics = Path(args.metrics) if args.metrics else run / f"eval_{ecfg.protocol}_{stream}.jsonl"
    _write_text(metrics, _dump_json(record) + "\n")
    if args.dump_scores:
        doc = {"protocol": ecfg.protocol, "stream": stream, "labels": test.labels.tolist(),
               "scores": np.asarray(result.scores, dtype=np.float64).tolist()}
        _write_text(Path(args.dump_scores), _dump_json(doc) + "\n")
    if args.dump_embeddings:
        feats = extract_features(params, enc_cfg, graph, to_stream(test.sequences, stream))
        _write_text(Path(args.dump_embeddings), embeddings_csv(feats, test.labels))
    print(f"{ecfg.protocol} accuracy {result.accuracy:.4f} ({stream} stream)")
    return 0


def embeddings_csv(feats: np.ndarray, labels) -> str:
    pcs = pca_2d(feats)
    head = ["index", "label"] + [f"f{i}" for i in range(feats.shape[1])] + ["pc1", "pc2"]
    rows = [",".join(head)]
    for i, (f, y, pc) in enumerate(zip(feats, labels, pcs)):
        vals = [str(i), str(int(y))] + [f"{v:.9g}" for v in f] + [f"{v:.9g}" for v in pc]
        rows.append(",".join(vals))
    return "\n".join(rows) + "\n"


def _read_scores(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"score file {path} is not JSON: {exc}") from None
    if not isinstance(doc, dict) or "scores" not in doc:
        raise ConfigError(f"score file {path} lacks a 'scores' matrix")
    return doc


def cmd_fuse(args) -> int:
    if len(args.scores) != 2:
        raise ConfigError(f"fuse needs exactly two --scores files, got {len(args.scores)}")
    a, b = (_read_scores(p) for p in args.scores)
    labels = a.get("labels")
    if labels is not None and b.get("labels") is not None and labels != b["labels"]:
        raise DimensionError("score files cover different samples (label lists differ)")
    fused, acc = fuse_streams(np.asarray(a["scores"]), np.asarray(b["scores"]), labels)
    streams = [a.get("stream"), b.get("stream")]
    doc = {"streams": streams, "scores": fused.tolist(), "accuracy": acc, "labels": labels}
    _write_text(Path(args.out), _dump_json(doc) + "\n")
    print(f"fused accuracy {acc:.4f}" if acc is not None else f"fused {len(fused)} rows")
    return 0


# --------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmmg", description="Dual min-max game pretraining for skeleton action recognition")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic train/test SKL1 files")
    p.add_argument("--config", required=True)

    p = sub.add_parser("pretrain", help="run the min-max games and save a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--games", help=f"comma separated subset of {','.join(GAMES)}")
    p.add_argument("--stream", choices=("joint", "motion"))
    p.add_argument("--ablation", choices=("none", "r_view", "r_edge", "d_rr"))
    p.add_argument("--seed", type=int)
    p.add_argument("--run-dir", help="override paths.run_dir")

    p = sub.add_parser("eval", help="score a checkpoint with a downstream protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("linear", "finetune", "knn", "semi"))
    p.add_argument("--label-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics", help="metrics JSONL path (default: <run_dir>/eval_<protocol>_<stream>.jsonl)")
    p.add_argument("--dump-embeddings", metavar="CSV", help="write test features and their 2-D PCA projection")
    p.add_argument("--dump-scores", metavar="JSON", help="write per-class test scores for fuse")
    p.add_argument("--run-dir", help="override paths.run_dir")

    p = sub.add_parser("fuse", help="average two score files")
    p.add_argument("--scores", action="append", required=True, metavar="JSON")
    p.add_argument("--out", required=True)
    return parser


def _fail(kind: str, message) -> int:
    text = " ".join(str(message).split())
    print(f"error[{kind}]: {text}", file=sys.stderr)
    return EXIT_CODES.get(kind, 1)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", exc)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = os.environ.get("DMMG_THREADS")
        if threads is not None and not (threads.isdigit() and int(threads) > 0):
            raise ConfigError(f"DMMG_THREADS must be a positive integer, got {threads!r}")
        if args.command == "fuse":
            return cmd_fuse(args)
        cfg = load_config(args.config)
        cfg["data"].validate()
        handler = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "eval": cmd_eval}[args.command]
        return handler(cfg, args)
    except DMMGError as exc:
        return _fail(exc.kind, exc)
    except OSError as exc:
        return _fail("io", exc)


if __name__ == "__main__":
    sys.exit(main())
