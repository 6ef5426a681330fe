"""Command-line runner.

Every command resolves its configuration as built-in defaults, then the
``--config`` file, then explicit flags, and writes the resolved values to
``config.txt`` in its output directory; ``--config <that file>`` re-runs the
command identically. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

import argparse
import csv
import io
import itertools
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dmh, pipeline
from .clustering import ClusterAssignment, ClusteringConfig
from .datastore import (MANIFEST_NAME, DatasetBundle, SyntheticSpec, as_feature_matrix,
                        format_block_csv, generate_synthetic, load_dataset, read_block_csv,
                        read_labels_csv, save_dataset)
from .errors import ConfigError, DataError, NumericError
from .kvfile import format_kv, read_kv
from .metrics import REPORT_COLUMNS, evaluate, format_reports_csv
from .pca import dimension_table, fit_pca, save_model, select_dimension
from .seg_ops import CombinedLossConfig, FocalParams, combined_loss, load_mask, mask_metrics

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

DEFAULTS = {
    "seed": "0",
    "dmh.lambda": "0.3",
    "dmh.p": "16",
    "dmh.lr": "0.0001",
    "dmh.beta1": "0.9",
    "dmh.beta2": "0.999",
    "dmh.epochs": "50",
    "dmh.batch_size": "0",
    "dmh.medoid_refresh_every": "1",
    "dmh.standardize": "true",
    "dmh.t_start": "0.9",
    "dmh.t_end": "0.5",
    "dmh.aggregate": "projected",
    "dmh.kmedoids_restarts": "10",
    "cluster.k": "2",
    "cluster.restarts": "10",
    "cluster.max_iter": "100",
    "pca.enabled": "true",
    "pca.k": "50",
    "pca.variance_target": "0.9432",
    "pca.error_target": "0.0568",
    "pca.k_max": "",
}

DMH_FLAGS = [
    ("--epochs", "dmh.epochs", "training epochs"),
    ("--lambda", "dmh.lambda", "cluster-loss weight in the objective"),
    ("--lr", "dmh.lr", "Adam learning rate"),
    ("--p", "dmh.p", "projection dimension"),
    ("--batch-size", "dmh.batch_size", "0 for full batch"),
    ("--t-start", "dmh.t_start", "similarity threshold at the first epoch"),
    ("--t-end", "dmh.t_end", "similarity threshold at the last epoch"),
    ("--aggregate", "dmh.aggregate", "aggregate 'projected' heads or 'raw' blocks"),
    ("--pca", "pca.enabled", "per-block PCA before training (true/false)"),
    ("--pca-k", "pca.k", "per-block PCA dimension"),
]
DATASET_FLAG = ("--dataset", "args.dataset", "manifest file or dataset directory")

COMMANDS = {
    "synth": ("generate a synthetic two-class dataset", [
        ("--n-per-class", "args.n_per_class", "samples per class", "50"),
        ("--dims", "args.dims", "four comma-separated block dimensions", "8,8,8,8"),
        ("--sep", "args.sep", "four comma-separated class separations", "0,0,0,0"),
        ("--format", "args.format", "csv or binary", "binary"),
    ]),
    "pca": ("PCA dimension report over the concatenated blocks", [
        DATASET_FLAG,
        ("--k", "args.k", "fit and save a model with exactly this k", ""),
        ("--variance-target", "pca.variance_target", "cumulative variance ratio target"),
        ("--error-target", "pca.error_target", "reconstruction error target"),
        ("--k-max", "pca.k_max", "largest k to report"),
    ]),
    "cluster": ("run one baseline clusterer", [
        DATASET_FLAG,
        ("--method", "args.method", "kmedoids, kmeans or agg", "kmedoids"),
        ("--k", "cluster.k", "number of clusters"),
        ("--restarts", "cluster.restarts", "seeded restarts"),
        ("--pca", "pca.enabled", "PCA per block first (true/false)"),
        ("--source", "args.source", "source tag for the metrics row", ""),
    ]),
    "dmh-train": ("train projection heads and cluster", [
        DATASET_FLAG, *DMH_FLAGS,
        ("--weights", "args.weights", "four lesion weights in [1, 10]", "1,1,1,1"),
        ("--source", "args.source", "source tag for the metrics row", ""),
    ]),
    "grid-search": ("lesion-weight grid search", [
        DATASET_FLAG, *DMH_FLAGS,
        ("--levels", "args.levels", "weight levels, expanded to every 4-tuple", "1.0,5.0,10.0"),
        ("--retrain-per-combination", "args.retrain", "train heads separately per tuple",
         "false", "true"),
    ]),
    "compare": ("baseline and DMH comparison table", [
        DATASET_FLAG, *DMH_FLAGS,
        ("--methods", "args.methods", "comma-separated methods", ",".join(pipeline.METHODS)),
        ("--source", "args.source", "source tag for the rows", ""),
    ]),
    "ablate": ("ablation table (variants a, d, e)", [
        ("--dataset", "args.dataset", "dataset (default: the standard synthetic benchmark)", ""),
        *DMH_FLAGS,
        ("--variants", "args.variants", "comma-separated variants", "a,d,e"),
    ]),
    "metrics": ("recompute a metrics report from saved outputs", [
        ("--assignment", "args.assignment", "id,cluster CSV"),
        ("--labels", "args.labels", "id,label CSV", ""),
        ("--features", "args.features", "id,f0,... CSV of the clustered features", ""),
        ("--averaging", "args.averaging", "binary, macro or weighted", "weighted"),
        ("--method", "args.method", "method tag for the row", "dmh"),
        ("--source", "args.source", "source tag for the row", ""),
    ]),
    "seg-loss-eval": ("evaluate segmentation losses and mask metrics", [
        ("--pred", "args.pred", "DMHT probability mask"),
        ("--target", "args.target", "DMHT binary mask"),
        ("--alpha", "args.alpha", "focal alpha", "0.25"),
        ("--gamma", "args.gamma", "focal gamma", "2.0"),
        ("--focal-weight", "args.focal_weight", "focal mixing weight", "0.5"),
        ("--dice-weight", "args.dice_weight", "Dice mixing weight", "0.5"),
        ("--smoothing", "args.smoothing", "Dice smoothing", "1e-6"),
        ("--threshold", "args.threshold", "binarisation threshold for mask metrics", "0.5"),
    ]),
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class RunConfig:
    """Resolved string-valued settings with typed accessors."""

    def __init__(self, command: str, values: dict):
        self.command = command
        self.values = values

    def raw(self, key):
        if key not in self.values:
            raise UsageError(f"missing setting {key}")
        value = self.values[key]
        if value == "<required>":
            raise UsageError(f"--{key.split('.', 1)[1].replace('_', '-')} is required")
        return value

    def str(self, key):
        return self.raw(key)

    def int(self, key):
        try:
            return int(self.raw(key))
        except ValueError:
            raise UsageError(f"{key}: expected an integer, got {self.raw(key)!r}") from None

    def float(self, key):
        try:
            return float(self.raw(key))
        except ValueError:
            raise UsageError(f"{key}: expected a number, got {self.raw(key)!r}") from None

    def bool(self, key):
        value = self.raw(key).lower()
        if value not in ("true", "false"):
            raise UsageError(f"{key}: expected true or false, got {value!r}")
        return value == "true"

    def floats(self, key, count=None):
        try:
            vals = [float(x) for x in self.raw(key).split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"{key}: expected comma-separated numbers") from None
        if count is not None and len(vals) != count:
            raise UsageError(f"{key}: expected {count} values, got {len(vals)}")
        return vals

    def list(self, key):
        return [x.strip() for x in self.raw(key).split(",") if x.strip()]

    def echo(self) -> str:
        return format_kv({"command": self.command, **dict(sorted(self.values.items()))})

    def dmh(self) -> dmh.DMHConfig:
        epochs = self.int("dmh.epochs")
        return dmh.DMHConfig(
            lam=self.float("dmh.lambda"), p=self.int("dmh.p"), lr=self.float("dmh.lr"),
            beta1=self.float("dmh.beta1"), beta2=self.float("dmh.beta2"), epochs=epochs,
            batch_size=self.int("dmh.batch_size"), seed=self.int("seed"),
            medoid_refresh_every=self.int("dmh.medoid_refresh_every"),
            standardize_inputs=self.bool("dmh.standardize"),
            threshold=dmh.ThresholdSchedule(self.float("dmh.t_start"), self.float("dmh.t_end"),
                                            max(epochs, 1)),
            kmedoids_restarts=self.int("dmh.kmedoids_restarts"),
            aggregate=self.str("dmh.aggregate"),
        )

    def clustering(self) -> ClusteringConfig:
        return ClusteringConfig(K=self.int("cluster.k"), max_iter=self.int("cluster.max_iter"),
                                seed=self.int("seed"), restarts=self.int("cluster.restarts"))

    def pca_stage(self) -> pipeline.PCAStage:
        return pipeline.PCAStage(self.bool("pca.enabled"), self.int("pca.k"))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", dest="seed", help="random seed (unsigned)")
    common.add_argument("--out", help="output directory (default: timestamped under runs/)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    parser = _Parser(prog="dmhclust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        for spec in flags:
            flag, key, text = spec[:3]
            if len(spec) == 5:
                p.add_argument(flag, dest=key, action="store_const", const=spec[4], help=text)
            else:
                p.add_argument(flag, dest=key, help=text)
    return parser


def resolve(args) -> RunConfig:
    flags = COMMANDS[args.command][1]
    values = dict(DEFAULTS)
    for spec in flags:
        key = spec[1]
        if key.startswith("args."):
            values[key] = spec[3] if len(spec) > 3 else "<required>"
    if args.config:
        for key, value in read_kv(args.config).items():
            if key == "command":
                if value != args.command:
                    raise UsageError(f"config is for command {value!r}, not {args.command!r}")
                continue
            if key not in values:
                raise UsageError(f"unknown config key {key!r} for command {args.command}")
            values[key] = value
    for spec in flags:
        value = getattr(args, spec[1])
        if value is not None:
            values[spec[1]] = value
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = RunConfig(args.command, values)
    if cfg.int("seed") < 0:
        raise UsageError("seed must be unsigned")
    return cfg


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path("runs") / f"{args.command}-{time.strftime('%Y%m%d-%H%M%S')}"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _dataset(cfg: RunConfig) -> DatasetBundle:
    path = Path(cfg.str("args.dataset"))
    if path.is_dir():
        path = path / MANIFEST_NAME
    return load_dataset(path)


def _source(cfg: RunConfig) -> str:
    tag = cfg.values.get("args.source", "")
    if tag:
        return tag
    dataset = cfg.values.get("args.dataset", "")
    if not dataset or dataset == "<required>":
        return "synthetic"
    path = Path(dataset)
    return path.parent.name if path.name == MANIFEST_NAME else path.name


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text, encoding="utf-8")


def _assignment_csv(ids, assignment) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "cluster"])
    for pid, c in zip(ids, assignment.labels):
        w.writerow([pid, int(c)])
    return buf.getvalue()


def _read_assignment(path) -> tuple:
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != ["id", "cluster"]:
        raise DataError(f"{path}: expected header id,cluster")
    try:
        ids = tuple(r[0] for r in rows[1:])
        labels = np.array([int(r[1]) for r in rows[1:]])
    except (IndexError, ValueError):
        raise DataError(f"{path}: malformed assignment rows") from None
    return ids, labels


def cmd_synth(cfg, out, threads):
    dims = [int(x) for x in cfg.floats("args.dims", 4)]
    spec = SyntheticSpec(cfg.int("args.n_per_class"), tuple(dims),
                         tuple(cfg.floats("args.sep", 4)), cfg.int("seed"))
    fmt = cfg.str("args.format")
    if fmt not in ("csv", "binary"):
        raise UsageError(f"--format must be csv or binary, got {fmt!r}")
    manifest = save_dataset(generate_synthetic(spec), out, fmt)
    print(manifest)


def cmd_pca(cfg, out, threads):
    X = _dataset(cfg).features.concatenated()
    k_max = cfg.values["pca.k_max"]
    k_max = int(k_max) if k_max else None
    table = dimension_table(X, k_max)
    lines = ["k,variance_ratio,reconstruction_error\n"]
    lines += [f"{k},{r:.17g},{e:.17g}\n" for k, r, e in table]
    _write(out, "pca_report.csv", "".join(lines))
    report = select_dimension(X, cfg.float("pca.variance_target"), cfg.float("pca.error_target"),
                              k_max)
    k = int(cfg.str("args.k")) if cfg.str("args.k") else report.k
    save_model(fit_pca(X, k), out / "pca_model.bin")
    _write(out, "selection.txt", format_kv({
        "k": report.k, "cumulative_variance_ratio": f"{report.cumulative_variance_ratio:.17g}",
        "reconstruction_error": f"{report.reconstruction_error:.17g}",
        "shortfall": str(report.shortfall).lower(), "saved_model_k": k}))
    print(f"k={report.k} variance_ratio={report.cumulative_variance_ratio:.4f} "
          f"error={report.reconstruction_error:.4g}{' (shortfall)' if report.shortfall else ''}")


def cmd_cluster(cfg, out, threads):
    bundle = _dataset(cfg)
    stage = cfg.pca_stage()
    features = pipeline.reduce_blocks(bundle.features, stage.k) if stage.enabled else bundle.features
    X = features.concatenated()
    method = cfg.str("args.method")
    assignment = pipeline.cluster_features(method, X, cfg.clustering(), threads)
    report = evaluate(X, assignment, bundle.labels)
    _write(out, "assignment.csv", _assignment_csv(bundle.ids, assignment))
    _write(out, "metrics.csv", format_reports_csv([(method, _source(cfg), report)]))


def _preprocess(cfg, bundle):
    stage = cfg.pca_stage()
    if stage.enabled:
        return DatasetBundle(pipeline.reduce_blocks(bundle.features, stage.k), bundle.labels)
    return bundle


def cmd_dmh_train(cfg, out, threads):
    bundle = _preprocess(cfg, _dataset(cfg))
    weights = dmh.LesionWeights(tuple(cfg.floats("args.weights", 4)))
    state, assignment, F, report = pipeline.run_dmh(bundle, cfg.dmh(), weights)
    _write(out, "loss_history.csv", dmh.format_history_csv(state))
    _write(out, "assignment.csv", _assignment_csv(bundle.ids, assignment))
    _write(out, "embedding.csv", format_block_csv(bundle.ids, F))
    _write(out, "metrics.csv", format_reports_csv([("dmh", _source(cfg), report)]))
    dmh.save_state(state, out / "state.bin")


def cmd_grid_search(cfg, out, threads):
    bundle = _preprocess(cfg, _dataset(cfg))
    levels = cfg.floats("args.levels")
    grid = list(itertools.product(levels, repeat=4))
    best, table = dmh.grid_search_weights(bundle, cfg.dmh(), grid,
                                          retrain=cfg.bool("args.retrain"), threads=threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["w1", "w2", "w3", "w4", *REPORT_COLUMNS[2:]])
    for g, rep in table:
        w.writerow([f"{x:g}" for x in g] + [f"{v:.17g}" for v in rep.row("", "")[2:]])
    _write(out, "grid.csv", buf.getvalue())
    _write(out, "best_weights.txt", format_kv({"weights": ",".join(f"{x:g}" for x in best.w)}))
    print("best weights:", ",".join(f"{x:g}" for x in best.w))


def cmd_compare(cfg, out, threads):
    bundle = _dataset(cfg)
    rows = pipeline.run_compare(bundle, cfg.list("args.methods"), cfg.dmh(), cfg.clustering(),
                                cfg.pca_stage(), threads)
    source = _source(cfg)
    _write(out, "compare.csv", format_reports_csv([(m, source, r) for m, r in rows]))


def cmd_ablate(cfg, out, threads):
    variants = cfg.list("args.variants")
    pipeline.check_variants(variants)
    print("variants b and c are not run: they need the trained segmentation network",
          file=sys.stderr)
    if cfg.str("args.dataset"):
        bundle = _dataset(cfg)
    else:
        spec = dict(pipeline.STANDARD_BENCHMARK)
        bundle = generate_synthetic(SyntheticSpec(**spec))
    rows = pipeline.run_ablation(bundle, variants, cfg.dmh(), cfg.clustering(),
                                 cfg.int("pca.k"), threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["type", "accuracy", "precision", "recall", "f1_score",
                "calinski_harabasz_score", "davies_bouldin_score"])
    for v, rep in rows:
        w.writerow([v] + [f"{x:.17g}" for x in rep.row("", "")[2:]])
    _write(out, "ablation.csv", buf.getvalue())


def cmd_metrics(cfg, out, threads):
    ids, clusters = _read_assignment(cfg.str("args.assignment"))
    assignment = ClusterAssignment(clusters, max(int(clusters.max()) + 1, 2))
    labels = None
    if cfg.str("args.labels"):
        labels = read_labels_csv(cfg.str("args.labels"))
        if labels.patient_ids != ids:
            raise DataError("label ids do not match assignment ids")
    if cfg.str("args.features"):
        feat_ids, X = read_block_csv(cfg.str("args.features"))
        if feat_ids != ids:
            raise DataError("feature ids do not match assignment ids")
        report = evaluate(X, assignment, labels, cfg.str("args.averaging"))
    else:
        # validity indices need the clustered features; report supervised metrics only
        dummy = as_feature_matrix(np.zeros((len(ids), 1)))
        report = evaluate(dummy, assignment, labels, cfg.str("args.averaging"))
        report = replace(report, calinski_harabasz=math.nan, davies_bouldin=math.nan)
    _write(out, "metrics.csv", format_reports_csv([(cfg.str("args.method"), _source(cfg), report)]))


def cmd_seg_loss_eval(cfg, out, threads):
    pred = load_mask(cfg.str("args.pred"))
    target = load_mask(cfg.str("args.target"))
    loss_cfg = CombinedLossConfig(FocalParams(cfg.float("args.alpha"), cfg.float("args.gamma")),
                                  cfg.float("args.smoothing"), cfg.float("args.focal_weight"),
                                  cfg.float("args.dice_weight"))
    total, parts = combined_loss(pred, target, loss_cfg)
    binary = (pred >= cfg.float("args.threshold")).astype(np.float64)
    iou, acc, prec, rec = mask_metrics(binary, target)
    values = {"focal": parts["focal"], "dice": parts["dice"], "combined": total,
              "iou": iou, "accuracy": acc, "precision": prec, "recall": rec}
    _write(out, "seg_metrics.csv", ",".join(values) + "\n"
           + ",".join(f"{v:.17g}" for v in values.values()) + "\n")


HANDLERS = {
    "synth": cmd_synth, "pca": cmd_pca, "cluster": cmd_cluster, "dmh-train": cmd_dmh_train,
    "grid-search": cmd_grid_search, "compare": cmd_compare, "ablate": cmd_ablate,
    "metrics": cmd_metrics, "seg-loss-eval": cmd_seg_loss_eval,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        out = _out_dir(args)
        HANDLERS[args.command](cfg, out, args.threads)
        _write(out, "config.txt", cfg.echo())
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
