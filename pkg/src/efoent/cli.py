"""Command line entry point: ``efoent <command> ...``.

Settings come from flags, then ``EFOENT_<NAME>`` environment variables, then
a JSON file given with ``--config``, then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import autodiff as ad
from .kg import GraphError, KnowledgeGraph, build_splits, load_graph_dir, load_triples, write_split
from .metrics import EvalReport, report_table
from .model import ModelConfig, ModelError, TegaModel
from .oracle import BudgetExceededError, UngroundedQueryError, answer_set, answer_set_naive
from .sampler import Profile, SamplingError, build_dataset, read_queries
from .syntax import QuerySyntaxError, convert_to_lisp, ground, parse_efo, parse_lisp, serialize_efo
from .training import TrainConfig, TrainingError, evaluate, train, write_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
ENV_PREFIX = "EFOENT_"

DATA_ERRORS = (GraphError, QuerySyntaxError, UngroundedQueryError, ModelError, ad.CheckpointError,
               FileNotFoundError, json.JSONDecodeError, KeyError)
RUNTIME_ERRORS = (TrainingError, BudgetExceededError, SamplingError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# options shared by the settings merge: name -> (default, type)
DEFAULTS = {
    "ingest": {"triples": (None, str), "out": (None, str)},
    "split": {"triples": (None, str), "out": (None, str), "ratios": ("0.8,0.1,0.1", str), "seed": (0, int)},
    "sample": {"graph_dir": (None, str), "out": (None, str), "profile": ("desk-scale", str),
               "counts": (None, str), "seed": (0, int), "threads": (1, int), "max_attempts": (1000, int),
               "train_count": (200, int), "eval_count": (50, int), "graph_name": ("", str)},
    "oracle": {"graph": (None, str), "graph_dir": (None, str), "split": ("test", str), "query": (None, str),
               "bind": ("", str), "naive": (False, bool), "names": (False, bool)},
    "convert": {"to": ("lisp", str), "query": (None, str)},
    "train": {"graph_dir": (None, str), "data": (None, str), "out": (None, str), "pe_kind": ("logirpe", str),
              "d_model": (400, int), "layers": (3, int), "heads": (8, int), "d_ff": (0, int),
              "pooling": ("sum", str), "adjacency_mask": (False, bool), "dropout": (0.1, float),
              "frozen_embeddings": (None, str), "steps": (10000, int), "batch_size": (1024, int),
              "lr": (1e-4, float), "warmup": (1000, int), "smoothing": (0.1, float), "seed": (0, int),
              "precision": ("float32", str), "eval_every": (0, int), "exclude_types": ("", str),
              "threads": (1, int)},
    "eval": {"checkpoint": (None, str), "data": (None, str), "split": ("test", str), "out": (None, str),
             "name": (None, str), "threads": (1, int)},
    "report": {"inputs": (None, str), "per_type": (False, bool), "svg": (None, str), "out": (None, str)},
}


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def resolve(command: str, args: argparse.Namespace, file_cfg: dict, env=os.environ) -> dict:
    """Merge settings with precedence flags > environment > config file > defaults."""
    out = {}
    section = file_cfg.get(command, {}) if isinstance(file_cfg.get(command), dict) else {}
    for name, (default, kind) in DEFAULTS[command].items():
        flag = getattr(args, name, None)
        env_val = env.get(ENV_PREFIX + name.upper())
        if flag is not None:
            val = flag
        elif env_val is not None:
            val = env_val
        elif name in section:
            val = section[name]
        elif name in file_cfg and not isinstance(file_cfg[name], dict):
            val = file_cfg[name]
        else:
            val = default
        if val is not None:
            val = _bool(val) if kind is bool else kind(val)
        out[name] = val
    return out


def _echo(cfg: dict) -> dict:
    # the output location is left out so that reruns elsewhere compare equal
    return {k: v for k, v in cfg.items() if k != "out"}


def _require(cfg: dict, *names: str) -> None:
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="efoent", description="Logical query answering over knowledge graphs.")
    p.add_argument("--config", help="JSON file with default settings (top-level or per-command sections)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help=argparse.SUPPRESS, default=argparse.SUPPRESS)
        return sp

    def opt(sp, name, kind=str, help_text=None, flag=False):
        dest = name.replace("-", "_")
        if flag:
            sp.add_argument("--" + name, dest=dest, action="store_const", const=True, default=None, help=help_text)
        else:
            sp.add_argument("--" + name, dest=dest, type=kind, default=None, help=help_text)

    sp = add("ingest", "Load a triple file and print graph statistics.")
    opt(sp, "triples", help_text="tab-separated head/relation/tail file, or a directory of split files")
    opt(sp, "out", help_text="write the deduplicated graph here")

    sp = add("split", "Split a triple file into nested train/valid/test graphs.")
    opt(sp, "triples", help_text="input triple file")
    opt(sp, "out", help_text="output directory for train.tsv/valid.tsv/test.tsv")
    opt(sp, "ratios", help_text="comma-separated ratios (default 0.8,0.1,0.1)")
    opt(sp, "seed", int)

    sp = add("sample", "Sample grounded query files for training and evaluation.")
    opt(sp, "graph-dir", help_text="directory with train.tsv/valid.tsv/test.tsv")
    opt(sp, "out", help_text="output directory")
    opt(sp, "profile", help_text="desk-scale, paper-scale or custom")
    opt(sp, "counts", help_text="JSON file of per-purpose per-type counts (custom profile)")
    opt(sp, "train-count", int, "desk-scale training queries per seen type")
    opt(sp, "eval-count", int, "desk-scale valid/test queries per type")
    opt(sp, "graph-name", help_text="dataset name recorded in the manifest")
    opt(sp, "max-attempts", int, "rejection-sampling attempts per query")
    opt(sp, "seed", int)
    opt(sp, "threads", int, "worker processes")

    sp = add("oracle", "Print the exact answer set of a query, one entity id per line.")
    opt(sp, "graph", help_text="triple file")
    opt(sp, "graph-dir", help_text="split directory (use with --split)")
    opt(sp, "split", help_text="train, valid or test (default test)")
    opt(sp, "query", help_text="EFO query; read from stdin when omitted")
    opt(sp, "bind", help_text="placeholder bindings, e.g. s1=a,r1=likes (graph names)")
    opt(sp, "naive", flag=True, help_text="use exhaustive enumeration")
    opt(sp, "names", flag=True, help_text="print entity names instead of ids")

    sp = add("convert", "Convert a query between EFO and Lisp-like syntax.")
    opt(sp, "to", help_text="lisp or efo")
    opt(sp, "query", help_text="query text; read from stdin when omitted")

    sp = add("train", "Train the query encoder on a sampled dataset.")
    for name, kind, h in (
        ("graph-dir", str, "split directory"), ("data", str, "directory produced by `sample`"),
        ("out", str, "output directory"), ("pe-kind", str, "absolute, relative or logirpe"),
        ("d-model", int, None), ("layers", int, None), ("heads", int, None), ("d-ff", int, "0 means 4*d_model"),
        ("pooling", str, "sum, mean or max"), ("dropout", float, None),
        ("frozen-embeddings", str, "checkpoint with entity/relation tables to load and freeze"),
        ("steps", int, None), ("batch-size", int, None), ("lr", float, None), ("warmup", int, None),
        ("smoothing", float, None), ("seed", int, None), ("precision", str, "float32 or float64"),
        ("eval-every", int, "validation interval in steps (0 = never)"),
        ("exclude-types", str, "comma-separated query types to drop from training"),
        ("threads", int, None),
    ):
        opt(sp, name, kind, h)
    opt(sp, "adjacency-mask", flag=True, help_text="restrict attention to query-graph neighbours")

    sp = add("eval", "Evaluate a checkpoint and write a JSON report.")
    opt(sp, "checkpoint")
    opt(sp, "data", help_text="directory produced by `sample`")
    opt(sp, "split", help_text="valid or test (default test)")
    opt(sp, "out", help_text="report path (stdout when omitted)")
    opt(sp, "name", help_text="model name in the report")
    opt(sp, "threads", int)

    sp = add("report", "Tabulate eval reports as MRR percentages.")
    opt(sp, "inputs", help_text="comma-separated report files")
    opt(sp, "per-type", flag=True, help_text="add a per-type table")
    opt(sp, "svg", help_text="write a bar chart of the six cells here")
    opt(sp, "out", help_text="write the table here as well as stdout")
    return p


# --------------------------------------------------------------- commands ---


def _load_any_graph(path: str):
    p = Path(path)
    if p.is_dir():
        return load_graph_dir(p).test
    return load_triples(p)


def cmd_ingest(cfg, out):
    _require(cfg, "triples")
    kg = _load_any_graph(cfg["triples"])
    print(kg.stats_line(), file=out)
    if cfg["out"]:
        dest = Path(cfg["out"])
        dest.mkdir(parents=True, exist_ok=True)
        with open(dest / "graph.tsv", "w", encoding="utf-8") as fh:
            for h, r, t in kg.triples:
                fh.write(f"{kg.entities.name(h)}\t{kg.relations.name(r)}\t{kg.entities.name(t)}\n")
        stats = {"entities": kg.num_entities, "relations": kg.num_relations, "edges": len(kg.triples),
                 "checksum": kg.checksum()}
        (dest / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_split(cfg, out):
    _require(cfg, "triples", "out")
    try:
        ratios = tuple(float(x) for x in cfg["ratios"].split(","))
    except ValueError:
        raise UsageError(f"--ratios must be comma-separated numbers, got {cfg['ratios']!r}") from None
    splits = build_splits(load_triples(cfg["triples"]), ratios, cfg["seed"])
    write_split(splits, cfg["out"])
    for name in ("train", "valid", "test"):
        print(f"{name}: {splits.graph(name).stats_line()}", file=out)


def cmd_sample(cfg, out):
    _require(cfg, "graph_dir", "out")
    splits = load_graph_dir(cfg["graph_dir"])
    if cfg["profile"] == "desk-scale":
        profile = Profile.desk(cfg["train_count"], cfg["eval_count"])
    elif cfg["profile"] == "paper-scale":
        profile = Profile.paper(cfg["graph_name"] or "FB15k-237")
    elif cfg["profile"] == "custom":
        _require(cfg, "counts")
        profile = Profile.custom(json.loads(Path(cfg["counts"]).read_text(encoding="utf-8")))
    else:
        raise UsageError(f"unknown profile {cfg['profile']!r}")
    manifest = build_dataset(splits, profile, cfg["out"], seed=cfg["seed"], workers=cfg["threads"],
                             max_attempts=cfg["max_attempts"], graph_name=cfg["graph_name"])
    for purpose, counts in manifest["counts"].items():
        print(f"{purpose}: {sum(counts.values())} queries over {len(counts)} types", file=out)


def _parse_bindings(text: str, kg: KnowledgeGraph) -> dict[str, int]:
    binding = {}
    for part in filter(None, (x.strip() for x in text.split(","))):
        if "=" not in part:
            raise UsageError(f"binding {part!r} is not of the form name=value")
        key, val = (x.strip() for x in part.split("=", 1))
        if key.startswith("r"):
            if val not in kg.relations:
                raise GraphError(f"relation {val!r} is not in the graph")
            binding[key] = kg.relations.id(val)
        elif key.startswith("s"):
            if val not in kg.entities:
                raise GraphError(f"entity {val!r} is not in the graph")
            binding[key] = kg.entities.id(val)
        else:
            raise UsageError(f"cannot bind {key!r}; only s<k> and r<k> placeholders take values")
    return binding


def _read_query(cfg) -> str:
    text = cfg["query"] if cfg["query"] is not None else sys.stdin.read()
    text = text.strip()
    if not text:
        raise UsageError("no query given (use --query or stdin)")
    return text


def cmd_oracle(cfg, out):
    if cfg["graph"]:
        kg = load_triples(cfg["graph"])
    elif cfg["graph_dir"]:
        kg = load_graph_dir(cfg["graph_dir"]).graph(cfg["split"])
    else:
        raise UsageError("give --graph or --graph-dir")
    ast = parse_efo(_read_query(cfg))
    if not ast.is_grounded:
        ast = ground(ast, _parse_bindings(cfg["bind"], kg))
    answers = answer_set_naive(kg, ast) if cfg["naive"] else answer_set(kg, ast)
    for a in answers:
        print(kg.entities.name(a) if cfg["names"] else a, file=out)


def cmd_convert(cfg, out):
    text = _read_query(cfg)
    if cfg["to"] == "lisp":
        print(convert_to_lisp(parse_efo(text)), file=out)
    elif cfg["to"] == "efo":
        print(serialize_efo(parse_lisp(text)), file=out)
    else:
        raise UsageError(f"--to must be lisp or efo, got {cfg['to']!r}")


def cmd_train(cfg, out):
    _require(cfg, "graph_dir", "data", "out")
    splits = load_graph_dir(cfg["graph_dir"])
    data = Path(cfg["data"])
    samples = read_queries(data / "train.jsonl")
    drop = {t.strip() for t in cfg["exclude_types"].split(",") if t.strip()}
    samples = [s for s in samples if s.type_name not in drop]
    valid_path = data / "valid.jsonl"
    valid = read_queries(valid_path) if cfg["eval_every"] and valid_path.exists() else None
    mcfg = ModelConfig(
        n_entities=splits.test.num_entities, n_relations=splits.test.num_relations, d_model=cfg["d_model"],
        n_layers=cfg["layers"], n_heads=cfg["heads"], d_ff=cfg["d_ff"] or None, pe_kind=cfg["pe_kind"],
        pooling=cfg["pooling"], use_adjacency_mask=cfg["adjacency_mask"], dropout=cfg["dropout"],
        frozen_embeddings=cfg["frozen_embeddings"], dtype=cfg["precision"],
    )
    model = TegaModel(mcfg, seed=cfg["seed"], entity_names=splits.entities.names,
                      relation_names=splits.relations.names)
    tcfg = TrainConfig(base_lr=cfg["lr"], warmup=cfg["warmup"], label_smoothing=cfg["smoothing"],
                       batch_size=cfg["batch_size"], max_steps=cfg["steps"], seed=cfg["seed"],
                       precision=cfg["precision"], eval_every=cfg["eval_every"])
    dest = Path(cfg["out"])
    dest.mkdir(parents=True, exist_ok=True)
    result = train(model, samples, tcfg, valid=valid, log_path=dest / "loss.tsv",
                   checkpoint_path=dest / "model.ckpt")
    run = {"settings": _echo(cfg), "model": mcfg.to_dict(), "train": tcfg.to_dict(),
           "final_loss": result.losses[-1], "validation": result.validation}
    (dest / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"trained {tcfg.max_steps} steps, final loss {result.losses[-1]:.4f}", file=out)


def cmd_eval(cfg, out):
    _require(cfg, "checkpoint", "data")
    model = TegaModel.load(cfg["checkpoint"])
    if cfg["split"] not in ("valid", "test"):
        raise UsageError("--split must be valid or test")
    samples = read_queries(Path(cfg["data"]) / f"{cfg['split']}.jsonl")
    report = evaluate(model, samples, name=cfg["name"] or Path(cfg["checkpoint"]).parent.name or "model")
    report.meta["split"] = cfg["split"]
    report.meta["settings"] = _echo(cfg)
    if cfg["out"]:
        write_report(report, cfg["out"])
    else:
        out.write(report.dumps())


def cmd_report(cfg, out):
    _require(cfg, "inputs")
    reports = [EvalReport.loads(Path(p.strip()).read_text(encoding="utf-8"))
               for p in cfg["inputs"].split(",") if p.strip()]
    if not reports:
        raise UsageError("--inputs lists no files")
    table = report_table(reports, per_type=cfg["per_type"])
    out.write(table)
    if cfg["out"]:
        Path(cfg["out"]).write_text(table, encoding="utf-8")
    if cfg["svg"]:
        write_svg(reports, cfg["svg"])


def write_svg(reports, path) -> None:
    """Grouped bar chart of the six MRR% cells, with deterministic SVG output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from .metrics import CELLS

    matplotlib.rcParams["svg.hashsalt"] = "efoent"
    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / len(reports)
    x = np.arange(len(CELLS))
    for k, r in enumerate(reports):
        vals = [100.0 * v if v is not None else 0.0 for v in r.cells.values()]
        ax.bar(x + k * width, vals, width, label=r.name)
    ax.set_xticks(x + width * (len(reports) - 1) / 2)
    ax.set_xticklabels(CELLS, rotation=20, ha="right")
    ax.set_ylabel("MRR %")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


COMMANDS = {
    "ingest": cmd_ingest, "split": cmd_split, "sample": cmd_sample, "oracle": cmd_oracle,
    "convert": cmd_convert, "train": cmd_train, "eval": cmd_eval, "report": cmd_report,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        file_cfg = {}
        if args.config:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = resolve(args.command, args, file_cfg)
        if args.command in ("train", "eval"):
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=max(1, cfg["threads"])):
                COMMANDS[args.command](cfg, out)
        else:
            COMMANDS[args.command](cfg, out)
        return EXIT_OK
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except QuerySyntaxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
