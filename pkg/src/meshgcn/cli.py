"""Command line interface: ``meshgcn gen|train|eval|predict``.

One flat RunConfig drives every subcommand. Values are resolved in
three layers, later layers winning: built-in defaults, then a
``--config`` file of plain ``key = value`` lines (``#`` comments and
blank lines allowed), then explicit command-line flags. Unknown config
keys are rejected. ``--dump-config PATH`` writes the fully resolved
config before the command runs, and re-running from that dump
reproduces the outputs bit for bit.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .dtypes import DTYPE
from .errors import ConfigError, DataError, MeshGcnError, NumericError
from .graph import normalize_adjacency
from .meshio import ResampleSpec, load_mesh, mesh_to_graph, normalize_mesh, resample, save_obj
from .metrics import evaluate, write_report
from .nn import GraphNetConfig, graphnet_forward, init_params, load_model, save_model
from .synthgen import SynthConfig, generate, load_manifest, write_manifest
from .train import LossConfig, TrainConfig, init_optimizer, train, write_epoch_log


@dataclass
class RunConfig:
    """Union of every tunable the four subcommands consume."""

    # paths
    data: str = ""              # dataset directory with manifest.jsonl
    out: str = ""               # main output: gen dir, checkpoint, report, or OBJ
    checkpoint: str = ""        # model file to load (eval, predict)
    log: str = ""               # epoch CSV path (train); default <out>.epochs.csv
    roc: str = ""               # ROC CSV path (eval); default <out stem>.roc.csv
    csv: str = ""               # per-vertex CSV (predict); default <out stem>.labels.csv
    mesh: str = ""              # input mesh, OFF or OBJ (predict)
    # generator
    samples: int = 100
    nodes: int = 256            # gen tessellation size; predict resample target (0 = as-is)
    class_ratio: float = 0.5
    lobulation: float = 0.25
    bump_min: float = 0.8
    bump_max: float = 1.4
    noise_sigma: float = 0.01
    rotation_degrees: float = 30.0
    # model
    graph_classes: int = 2
    node_classes: int = 2
    n_aux: int = 35
    pointnet: bool = False
    # training
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.001
    decay_rate: float = 0.7
    decay_every: int = 20
    cls_weight: float = 1.0
    seg_weight: float = 1.0
    dsc_smooth: float = 1.0
    shuffle: bool = True
    seed: int = 0
    # predict aux handling
    aux: str = ""               # comma-separated aux values
    aux_zeros: bool = False     # substitute a zero aux vector


_FIELD_HELP = {
    "data": "dataset directory containing manifest.jsonl",
    "out": "output path: dataset dir (gen), checkpoint (train), report JSON (eval), OBJ (predict)",
    "checkpoint": "trained model file to load",
    "log": "epoch log CSV path (default: <out>.epochs.csv)",
    "roc": "ROC curve CSV path (default: report stem + .roc.csv)",
    "csv": "per-vertex label CSV path (default: OBJ stem + .labels.csv)",
    "mesh": "input mesh file, .off or .obj",
    "samples": "number of synthetic samples to generate",
    "nodes": "mesh size: gen tessellates to exactly this; predict resamples to it (0 keeps the mesh as-is)",
    "class_ratio": "fraction of class-1 (lobulated) samples",
    "lobulation": "radial displacement amplitude for class-1 bumps",
    "bump_min": "minimum bump radius",
    "bump_max": "maximum bump radius",
    "noise_sigma": "radial jitter standard deviation",
    "rotation_degrees": "random rotation range, +/- degrees",
    "graph_classes": "number of graph-level classes",
    "node_classes": "number of node-level classes",
    "n_aux": "auxiliary feature vector length",
    "pointnet": "drop the adjacency everywhere (PointNet mode)",
    "batch_size": "minibatch size",
    "epochs": "training epochs",
    "lr": "base learning rate",
    "decay_rate": "staircase decay factor",
    "decay_every": "epochs between decay steps",
    "cls_weight": "cross-entropy loss weight",
    "seg_weight": "soft-dice loss weight",
    "dsc_smooth": "soft-dice smoothing constant",
    "shuffle": "reshuffle sample order each epoch",
    "seed": "seed for generation, init, and shuffling",
    "aux": "comma-separated aux values for predict",
    "aux_zeros": "use a zero aux vector for predict",
}

_TRUE_WORDS = frozenset({"1", "true", "yes", "on"})
_FALSE_WORDS = frozenset({"0", "false", "no", "off"})
_FIELD_KIND = {f.name: type(f.default) for f in fields(RunConfig)}


def _convert(name: str, text: str):
    kind = _FIELD_KIND[name]
    try:
        if kind is bool:
            word = text.strip().lower()
            if word in _TRUE_WORDS:
                return True
            if word in _FALSE_WORDS:
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(
            f"invalid value {text!r} for config key {name!r} (expected {kind.__name__})"
        ) from None


def load_config_file(path):
    """Parse a key = value config file into a RunConfig override dict."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    overrides = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key = key.strip()
        if key not in _FIELD_KIND:
            raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
        overrides[key] = _convert(key, value.strip())
    return overrides


def dump_config(cfg: RunConfig, path) -> None:
    """Write the resolved config; feeding it back via --config reproduces the run."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    for f in fields(RunConfig):
        given = getattr(args, f.name, None)
        if given is None:
            continue
        values[f.name] = given if isinstance(given, bool) else _convert(f.name, given)
    return RunConfig(**values)


def _require(cfg: RunConfig, command: str, *names) -> None:
    for name in names:
        if not getattr(cfg, name):
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{command} requires {flag}")


def _ensure_parent(path) -> None:
    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def _synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        num_samples=cfg.samples,
        target_nodes=cfg.nodes,
        class_ratio=cfg.class_ratio,
        bump_radius_range=(cfg.bump_min, cfg.bump_max),
        lobulation_amplitude=cfg.lobulation,
        seed=cfg.seed,
        noise_sigma=cfg.noise_sigma,
        rotation_degrees=cfg.rotation_degrees,
    )


def _model_config(cfg: RunConfig) -> GraphNetConfig:
    return GraphNetConfig(
        num_graph_classes=cfg.graph_classes,
        num_node_classes=cfg.node_classes,
        n_aux=cfg.n_aux,
        pointnet_mode=cfg.pointnet,
    )


def cmd_gen(cfg: RunConfig) -> int:
    _require(cfg, "gen", "out")
    dataset = generate(_synth_config(cfg))
    write_manifest(dataset, cfg.out)
    counts = np.bincount([s.graph_label for s in dataset], minlength=2)
    print(
        f"wrote {len(dataset)} samples to {cfg.out} "
        f"(class 0: {counts[0]}, class 1: {counts[1]})"
    )
    return 0


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "train", "data", "out")
    dataset = load_manifest(cfg.data)
    have = dataset[0].aux.shape[0]
    if have != cfg.n_aux:
        raise ConfigError(
            f"dataset provides {have} aux features but the model expects "
            f"{cfg.n_aux}; adjust --n-aux"
        )
    model = init_params(_model_config(cfg), seed=cfg.seed)
    opt = init_optimizer(
        model, base_lr=cfg.lr, decay_rate=cfg.decay_rate, decay_every=cfg.decay_every
    )
    train_cfg = TrainConfig(
        batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed, shuffle=cfg.shuffle
    )
    loss_cfg = LossConfig(
        cls_weight=cfg.cls_weight, seg_weight=cfg.seg_weight, dsc_smooth=cfg.dsc_smooth
    )
    model, log = train(dataset, model, train_cfg, loss_cfg, opt=opt)
    _ensure_parent(cfg.out)
    save_model(model, cfg.out)
    log_path = cfg.log or cfg.out + ".epochs.csv"
    _ensure_parent(log_path)
    write_epoch_log(log, log_path)
    last = log[-1]
    print(
        f"trained on {len(dataset)} samples for {cfg.epochs} epochs "
        f"(final ce {last.mean_ce:.6f}, dsc loss {last.mean_dsc_loss:.6f})"
    )
    print(f"checkpoint: {cfg.out}")
    print(f"epoch log: {log_path}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "eval", "data", "checkpoint", "out")
    model = load_model(cfg.checkpoint)
    dataset = load_manifest(cfg.data)
    have = dataset[0].aux.shape[0]
    if have != model.n_aux:
        raise DataError(
            f"dataset provides {have} aux features but checkpoint "
            f"{cfg.checkpoint} expects {model.n_aux}"
        )
    report = evaluate(model, dataset)
    roc_path = cfg.roc or os.path.splitext(cfg.out)[0] + ".roc.csv"
    _ensure_parent(cfg.out)
    _ensure_parent(roc_path)
    write_report(report, cfg.out, roc_path)
    op = report.operating_point
    print(
        f"accuracy {report.accuracy:.4f}  auc {report.roc.auc:.4f}  "
        f"mean node dsc {report.mean_node_dsc:.4f}  "
        f"latency {report.mean_latency_ms:.3f} ms/sample"
    )
    print(
        f"operating point: threshold {op.threshold:.6f}  "
        f"sensitivity {op.sensitivity:.4f}  specificity {op.specificity:.4f}"
    )
    print(f"report: {cfg.out}")
    print(f"roc: {roc_path}")
    return 0


def _predict_aux(cfg: RunConfig, n_aux: int) -> np.ndarray:
    if cfg.aux_zeros:
        return np.zeros(n_aux, dtype=DTYPE)
    if not cfg.aux.strip():
        raise ConfigError(
            f"model expects {n_aux} aux values; pass --aux v1,v2,... or --aux-zeros"
        )
    parts = [p for p in cfg.aux.split(",") if p.strip()]
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad --aux entry: {exc}") from None
    if len(values) != n_aux:
        raise ConfigError(f"model expects {n_aux} aux values, got {len(values)}")
    return np.asarray(values, dtype=DTYPE)


def _write_point_obj(vertices, path) -> None:
    with open(path, "w") as fh:
        for v in vertices:
            fh.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))


def cmd_predict(cfg: RunConfig) -> int:
    _require(cfg, "predict", "checkpoint", "mesh", "out")
    model = load_model(cfg.checkpoint)
    aux = _predict_aux(cfg, model.n_aux)
    mesh = normalize_mesh(load_mesh(cfg.mesh))
    g = mesh_to_graph(mesh)
    resampled = False
    if cfg.nodes > 0 and g.num_nodes != cfg.nodes:
        g = resample(g, ResampleSpec(target_nodes=cfg.nodes, seed=cfg.seed))
        resampled = True
    adj = None if model.pointnet_mode else normalize_adjacency(g.adjacency)
    cls_scores, seg_scores, _ = graphnet_forward(model, g.node_features, adj, aux)

    shifted = cls_scores - cls_scores.max()
    e = np.exp(shifted)
    cls_probs = np.ravel(e / e.sum())
    shifted = seg_scores - seg_scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    node_probs = e / e.sum(axis=1, keepdims=True)
    node_cls = np.argmax(seg_scores, axis=1)
    node_p = node_probs[np.arange(len(node_cls)), node_cls]

    print("class probabilities: " + "  ".join(
        f"{i}: {p:.6f}" for i, p in enumerate(cls_probs)
    ))
    print(f"predicted class: {int(np.argmax(cls_probs))}")

    _ensure_parent(cfg.out)
    if resampled:
        # resampling discards faces, so the OBJ degrades to a point cloud
        _write_point_obj(g.node_features, cfg.out)
    else:
        save_obj(mesh, cfg.out)
    csv_path = cfg.csv or os.path.splitext(cfg.out)[0] + ".labels.csv"
    _ensure_parent(csv_path)
    with open(csv_path, "w") as fh:
        fh.write("vertex,class,probability\n")
        for i in range(len(node_cls)):
            fh.write("%d,%d,%.17g\n" % (i, node_cls[i], node_p[i]))
    n_marked = int(np.sum(node_cls == 1))
    print(f"nodes labeled class 1: {n_marked} of {len(node_cls)}")
    print(f"mesh: {cfg.out}")
    print(f"labels: {csv_path}")
    return 0


_COMMANDS = (
    ("gen", cmd_gen, "generate a synthetic dataset"),
    ("train", cmd_train, "train a model on a dataset"),
    ("eval", cmd_eval, "evaluate a checkpoint on a dataset"),
    ("predict", cmd_predict, "classify and segment a single mesh"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshgcn",
        description="GCN classification and segmentation of triangulated surface meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, func, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE", help="key = value config file")
        p.add_argument(
            "--dump-config", metavar="PATH",
            help="write the resolved config to PATH before running",
        )
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            help_line = f"{_FIELD_HELP[f.name]} (default: {f.default!r})"
            if _FIELD_KIND[f.name] is bool:
                p.add_argument(
                    flag, dest=f.name, default=None,
                    action=argparse.BooleanOptionalAction, help=help_line,
                )
            else:
                p.add_argument(flag, dest=f.name, default=None, help=help_line)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            _ensure_parent(args.dump_config)
            dump_config(cfg, args.dump_config)
        return args.func(cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except MeshGcnError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        name = err.filename or "i/o"
        print(f"error: {name}: {err.strerror or err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
