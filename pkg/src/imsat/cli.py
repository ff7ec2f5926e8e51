"""Command-line interface: ``imsat {cluster,hash,eval,gen-data}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 the class-size
constraint could not be met (the best model is still written).
"""

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, metrics, nn, plots, trainer
from .augment import AffineRanges, affine_batch
from .errors import ConfigError, ConstraintUnsatisfied, DataFormatError, ImsatError, ShapeError

log = logging.getLogger("imsat")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONSTRAINT = 0, 1, 2, 3
SEED_ENV = "IMSAT_SEED"

# INI key -> parser for the [train] and [model] sections
_INT_KEYS = {"n_out", "t_neighbor", "power_iters", "batch_size", "epochs", "seed"}
_FLOAT_KEYS = {"lam", "alpha", "eps", "xi", "weight_decay_rate", "delta_frac", "step_size"}
_FLOAT_LIST_KEYS = {"weight_scales", "composite_weights", "prior_q", "mu_schedule"}
_INT_LIST_KEYS = {"hidden"}
_BOOL_KEYS = {"warm_start"}
_STR_KEYS = {"task", "regularizer", "pairs"}


class DataError(ImsatError):
    """Raised for unreadable or inconsistent input data."""


def _float_list(text):
    text = text.strip()
    return () if not text else tuple(float(v) for v in text.replace(",", " ").split())


def _int_list(text):
    text = text.strip()
    return () if not text else tuple(int(v) for v in text.replace(",", " ").split())


def _shape(text):
    parts = text.lower().replace("x", " ").replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"image_shape must look like 28x28, got {text!r}")
    return int(parts[0]), int(parts[1])


def _train_options(section):
    opts = {}
    for key, raw in section.items():
        if key == "variant":
            continue
        try:
            if key in _INT_KEYS:
                opts[key] = int(raw)
            elif key in _FLOAT_KEYS:
                opts[key] = float(raw)
            elif key in _FLOAT_LIST_KEYS:
                opts[key] = _float_list(raw)
            elif key in _INT_LIST_KEYS:
                opts[key] = _int_list(raw)
            elif key in _BOOL_KEYS:
                opts[key] = section.getboolean(key)
            elif key in _STR_KEYS:
                opts[key] = raw.strip()
            else:
                raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None
    return opts


def read_config(path):
    """Parse an INI run description into (data options, TrainConfig kwargs, variant, eval options)."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(parser.sections()) - {"data", "model", "train", "eval"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    if not parser.has_section("data") or "path" not in parser["data"]:
        raise ConfigError(f"{path}: [data] path is required")

    d = parser["data"]
    base = path.parent

    def resolve(p):
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    data_opts = {"path": resolve(d["path"])}
    try:
        for key, raw in d.items():
            if key == "path":
                continue
            if key == "labels":
                data_opts["labels"] = resolve(raw)
            elif key == "format":
                data_opts["format"] = raw.strip()
            elif key == "label_column":
                data_opts["label_column"] = int(raw)
            elif key == "image_shape":
                data_opts["image_shape"] = _shape(raw)
            elif key in ("subset", "expand"):
                data_opts[key] = int(raw)
            else:
                raise ConfigError(f"unknown key {key!r} in [data]")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[data]: {exc}") from None

    variant = "imsat_vat"
    opts = {}
    for name in ("model", "train"):
        if parser.has_section(name):
            variant = parser[name].get("variant", variant).strip()
            opts.update(_train_options(parser[name]))

    eval_opts = {"n": 500, "radius": 2, "queries_per_class": 100}
    if parser.has_section("eval"):
        for key, raw in parser["eval"].items():
            if key not in eval_opts:
                raise ConfigError(f"unknown key {key!r} in [eval]")
            try:
                eval_opts[key] = int(raw)
            except ValueError:
                raise ConfigError(f"[eval] {key} must be an integer, got {raw!r}") from None
    return data_opts, opts, variant, eval_opts


def resolve_seed(flag_seed, config_seed):
    """--seed beats the environment, which beats the config file."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0 if config_seed is None else config_seed


def _load_training_data(data_opts, seed):
    try:
        ds = data.load_dataset(data_opts["path"], data_opts.get("format"), data_opts.get("labels"),
                               data_opts.get("label_column"), data_opts.get("image_shape"))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    except (DataFormatError, ShapeError, OSError) as exc:
        raise DataError(str(exc)) from None
    if data_opts.get("subset"):
        ds = data.stratified_subset(ds, data_opts["subset"], seed)
    factor = data_opts.get("expand", 0)
    if factor:
        ds = expand_with_distortions(ds, factor, seed)
    return ds


def expand_with_distortions(ds, factor, seed):
    """Append ``factor`` affine-distorted copies of every image (labels copied)."""
    if ds.image_shape is None:
        raise ConfigError("offline expansion needs image_shape")
    if factor < 0:
        raise ConfigError("expand must be non-negative")
    rng = np.random.default_rng([seed, 7])
    feats = [ds.features] + [affine_batch(ds.features, ds.image_shape, rng, AffineRanges())
                             for _ in range(factor)]
    labels = None if ds.labels is None else np.tile(ds.labels, factor + 1)
    return data.Dataset(np.concatenate(feats), labels, ds.image_shape, ds.name)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _hash_metrics(codebook, labels, eval_opts, seed):
    queries, gallery = metrics.stratified_queries(labels, eval_opts["queries_per_class"], seed)
    bits = codebook.bits
    qb, gb = bits[queries], bits[gallery]
    ql, gl = labels[queries], labels[gallery]
    p_r, empty = metrics.precision_at_radius(qb, ql, gb, gl, eval_opts["radius"], return_empty=True)
    return {
        "map": metrics.mean_average_precision(qb, ql, gb, gl),
        "p_at_n": metrics.precision_at_n(qb, ql, gb, gl, eval_opts["n"]),
        "p_at_r": p_r,
        "empty_retrievals": empty,
        "n": eval_opts["n"],
        "radius": eval_opts["radius"],
        "queries": int(len(queries)),
    }


def _train_command(args, task):
    data_opts, opts, variant, eval_opts = read_config(args.config)
    seed = resolve_seed(args.seed, opts.get("seed"))
    opts["seed"] = seed
    opts.setdefault("task", task)
    if opts["task"] != task:
        raise ConfigError(f"config task {opts['task']!r} does not match the {task!r} command")
    ds = _load_training_data(data_opts, seed)
    cfg = trainer.config_for_variant(variant, **opts)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": str(out / "model.ckpt"), "report": str(out / "report.json"),
             "manifest": str(out / "manifest.json")}
    status = EXIT_OK
    if task == "cluster":
        try:
            model, report = trainer.train_clustering(ds, cfg)
        except ConstraintUnsatisfied as exc:
            log.error("%s", exc)
            model, report, status = exc.model, exc.report, EXIT_CONSTRAINT
    else:
        model, report = trainer.train_hashing(ds, cfg)

    nn.save_checkpoint(model, paths["checkpoint"])
    book = trainer.encode(model, ds, task)
    if task == "cluster":
        paths["assignments"] = str(out / "assignments.txt")
        Path(paths["assignments"]).write_text("".join(f"{int(a)}\n" for a in book.assignments))
    else:
        paths["codes"] = str(out / "codes.txt")
        Path(paths["codes"]).write_text("".join(f"{c}\n" for c in book.hex_codes()))
    _write_json(paths["report"], _jsonable(report.to_json()))

    if ds.labels is not None:
        paths["metrics"] = str(out / "metrics.json")
        if task == "cluster":
            acc, mapping = metrics.clustering_accuracy(book, ds.labels)
            result = {"acc": acc, "mapping": {str(k): v for k, v in mapping.items()}}
        else:
            result = _hash_metrics(book, ds.labels, eval_opts, seed)
        _write_json(paths["metrics"], _jsonable(result))
        log.info("metrics: %s", {k: v for k, v in result.items() if k != "mapping"})

    if not args.no_figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        figs = [plots.objective_trace(report.objective_trace, fig_dir / "objective.png")]
        if ds.dim == 2:
            colour = book.assignments if task == "cluster" else [int(c) for c in book.assignments]
            figs.append(plots.assignment_scatter(ds.features, colour, fig_dir / "assignments.png", ds.labels))
        if task == "cluster":
            figs.append(plots.cluster_sizes(book.assignments, fig_dir / "cluster_sizes.png", cfg.n_out))
        paths["figures"] = [str(f) for f in figs]

    manifest = {
        "version": __version__,
        "command": task,
        "variant": variant,
        "seed": seed,
        "config": _jsonable(cfg.to_dict()),
        "data": _jsonable(data_opts),
        "dataset_fingerprint": ds.fingerprint(),
        "n_points": ds.n,
        "outputs": paths,
        "status": status,
    }
    _write_json(paths["manifest"], manifest)
    print(f"wrote {out}")
    return status


def cmd_cluster(args):
    return _train_command(args, "cluster")


def cmd_hash(args):
    return _train_command(args, "hash")


def _read_lines(path):
    try:
        return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def read_labels(path):
    """Labels from a text file (one integer per line) or any labelled dataset file."""
    if Path(path).suffix == ".txt":
        rows = _read_lines(path)
        try:
            return np.array([int(v) for v in rows], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    try:
        ds = data.load_dataset(path)
    except (FileNotFoundError, DataFormatError, OSError) as exc:
        raise DataError(str(exc)) from None
    if ds.labels is None:
        raise DataError(f"{path} has no labels")
    return ds.labels


def cmd_eval(args):
    rows = _read_lines(args.codes)
    labels = read_labels(args.labels)
    if len(rows) != len(labels):
        raise DataError(f"{len(rows)} codes vs {len(labels)} labels")
    if not rows:
        raise DataError(f"{args.codes} is empty")
    if args.task == "cluster":
        try:
            assign = np.array([int(v) for v in rows], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{args.codes}: {exc}") from None
        if np.any(assign < 0) or np.any(labels < 0):
            raise DataError("cluster ids and labels must be non-negative")
        acc, mapping = metrics.clustering_accuracy(assign, labels)
        result = {"acc": acc, "mapping": {str(k): v for k, v in mapping.items()}}
    else:
        try:
            codes = [int(v, 16) for v in rows]
        except ValueError as exc:
            raise DataError(f"{args.codes}: {exc}") from None
        n_bits = args.bits or 4 * max(len(v) for v in rows)
        if max(codes).bit_length() > n_bits:
            raise DataError(f"codes do not fit in {n_bits} bits")
        bits = metrics.unpack_codes(codes, n_bits)
        book = metrics.CodeBook(np.array(codes, dtype=object), None, bits, "hash")
        seed = resolve_seed(args.seed, None)
        result = _hash_metrics(book, labels, {"n": args.n, "radius": args.radius,
                                              "queries_per_class": args.queries_per_class}, seed)
    text = json.dumps(_jsonable(result), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_data(args):
    seed = resolve_seed(args.seed, None)
    if args.kind == "spiral":
        ds = data.gen_spiral(args.arcs, args.per_arc, args.noise if args.noise is not None else 0.05, seed)
    elif args.kind == "blobs":
        ds = data.gen_blobs(args.k, args.per_blob, args.dim, args.separation,
                            args.noise if args.noise is not None else 0.5, seed)
    else:
        ds = data.gen_glyphs(args.copies, args.size, seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    if out.suffix == ".csv":
        data.save_csv(ds, out)
    else:
        data.save_native(ds, out)
    print(f"wrote {ds.n} points ({ds.n_classes} classes) to {out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here that is a configuration error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="imsat", description="Discrete representation learning by information maximization.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, help_text in (("cluster", cmd_cluster, "train a clustering model"),
                                ("hash", cmd_hash, "train a hashing model")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI run description")
        p.add_argument("--out", default="imsat-out", help="output directory")
        p.add_argument("--seed", type=int, help=f"overrides {SEED_ENV} and the config seed")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", help="score assignments or hash codes against labels")
    p.add_argument("--codes", required=True, help="assignments (one int per line) or codes (hex per line)")
    p.add_argument("--labels", required=True, help="labels .txt (one int per line) or a labelled dataset file")
    p.add_argument("--task", choices=("cluster", "hash"), default="cluster")
    p.add_argument("--n", type=int, default=500, help="precision@N cut-off")
    p.add_argument("--radius", type=int, default=2, help="Hamming radius for precision@r")
    p.add_argument("--queries-per-class", type=int, default=100)
    p.add_argument("--bits", type=int, help="code length (default: 4 x hex width)")
    p.add_argument("--seed", type=int, help="query sampling seed")
    p.add_argument("--out", help="also write metrics.json into this directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-data", help="write a synthetic dataset (native format, or CSV by suffix)")
    p.add_argument("kind", choices=("spiral", "blobs", "glyphs"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--arcs", type=int, default=3)
    p.add_argument("--per-arc", type=int, default=300)
    p.add_argument("--noise", type=float, help="Gaussian noise std (spiral 0.05, blobs 0.5)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--per-blob", type=int, default=200)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--copies", type=int, default=100)
    p.add_argument("--size", type=int, default=21)
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, DataFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ImsatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
