import io
import json

import pytest

from efoent.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, build_parser, main, resolve
from efoent.kg import load_triples, random_graph
from efoent.oracle import answer_set_naive
from efoent.syntax import ground, parse_efo


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    kg = random_graph(80, 4, 500, seed=2)
    with open(root / "triples.tsv", "w") as fh:
        for h, r, t in kg:
            fh.write(f"{kg.entities.name(h)}\t{kg.relations.name(r)}\t{kg.entities.name(t)}\n")
    counts = {"train": {"1p": 150, "2p": 100, "2i": 100}, "valid": {"1p": 10}, "test": {"1p": 15, "pi": 10, "2pi": 10}}
    (root / "counts.json").write_text(json.dumps(counts))
    assert run("split", "--triples", root / "triples.tsv", "--out", root / "graph", "--seed", 1)[0] == 0
    for name in ("data", "data2"):
        code, text = run("sample", "--graph-dir", root / "graph", "--out", root / name, "--profile", "custom",
                         "--counts", root / "counts.json", "--seed", 5)
        assert code == 0, text
    train_args = ["--graph-dir", root / "graph", "--data", root / "data", "--d-model", 16, "--layers", 1,
                  "--heads", 2, "--steps", 30, "--batch-size", 16, "--lr", 1e-3, "--warmup", 5, "--seed", 3]
    for name in ("run", "run2"):
        code, text = run("train", *train_args, "--out", root / name)
        assert code == 0, text
    return root


def test_ingest(tmp_path):
    (tmp_path / "g.tsv").write_text("a\tr1\tb\nb\tr2\tc\na\tr1\tc\nc\tr1\ta\n")
    code, text = run("ingest", "--triples", tmp_path / "g.tsv", "--out", tmp_path / "o")
    assert code == 0
    assert text.strip() == "entities=3 relations=2 edges=4"
    stats = json.loads((tmp_path / "o" / "stats.json").read_text())
    assert stats["edges"] == 4


def test_split_outputs(workspace):
    lines = [len((workspace / "graph" / f"{p}.tsv").read_text().splitlines()) for p in ("train", "valid", "test")]
    assert sum(lines) == len(load_triples(workspace / "triples.tsv"))


def test_oracle_matches_naive(tmp_path):
    (tmp_path / "g.tsv").write_text("a\tr1\tx\nb\tr2\tx\na\tr1\ty\nc\tr2\ty\nb\tr2\tz\n")
    query = "(r1(s1,f))&(r2(s2,f))"
    code, text = run("oracle", "--graph", tmp_path / "g.tsv", "--query", query, "--bind", "s1=a,s2=b,r1=r1,r2=r2")
    assert code == 0
    kg = load_triples(tmp_path / "g.tsv")
    ast = ground(parse_efo(query), {"s1": kg.entities.id("a"), "s2": kg.entities.id("b"),
                                    "r1": kg.relations.id("r1"), "r2": kg.relations.id("r2")})
    assert [int(x) for x in text.split()] == answer_set_naive(kg, ast)
    code, named = run("oracle", "--graph", tmp_path / "g.tsv", "--query", query, "--bind",
                      "s1=a,s2=b,r1=r1,r2=r2", "--names", "--naive")
    assert named.split() == ["x"]


def test_oracle_errors(tmp_path):
    (tmp_path / "g.tsv").write_text("a\tr1\tb\n")
    g = tmp_path / "g.tsv"
    assert run("oracle", "--graph", g, "--query", "r1(s1,f)", "--bind", "s1=zz,r1=r1")[0] == EXIT_DATA
    assert run("oracle", "--graph", g, "--query", "r1(s1,f", "--bind", "s1=a,r1=r1")[0] == EXIT_DATA
    assert run("oracle", "--graph", g, "--query", "r1(s1,f)", "--bind", "s1a")[0] == EXIT_USAGE
    assert run("oracle", "--graph", g, "--query", "r1(s1,f)")[0] == EXIT_DATA
    assert run("oracle", "--query", "r1(s1,f)")[0] == EXIT_USAGE


def test_convert_round_trip():
    code, lisp = run("convert", "--to", "lisp", "--query", "(r1(s1,f))&(!(r2(s2,f)))")
    assert code == 0 and lisp.strip() == "(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))"
    code, efo = run("convert", "--to", "efo", "--query", lisp.strip())
    assert code == 0 and efo.strip() == "(r1(s1,f))&(!(r2(s2,f)))"


def test_convert_cyclic_fails(capsys):
    code, _ = run("convert", "--to", "lisp", "--query", "((r1(s1,e1))&(r2(e1,f)))&(r3(e1,f))")
    assert code == EXIT_DATA
    assert "not expressible" in capsys.readouterr().err


def test_usage_errors():
    assert run("bogus")[0] == EXIT_USAGE
    assert run()[0] == EXIT_USAGE
    assert run("convert", "--to", "yaml", "--query", "r1(s1,f)")[0] == EXIT_USAGE
    assert run("split", "--triples", "x.tsv")[0] == EXIT_USAGE
    assert run("train", "--steps", "abc")[0] == EXIT_USAGE


def test_missing_file_is_data_error(tmp_path):
    assert run("ingest", "--triples", tmp_path / "absent.tsv")[0] == EXIT_DATA


def test_help_for_every_command(capsys):
    parser = build_parser()
    for cmd in ("ingest", "split", "sample", "oracle", "convert", "train", "eval", "report"):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0
    assert "--seed" in capsys.readouterr().out


def test_settings_precedence(tmp_path, monkeypatch):
    args = build_parser().parse_args(["split", "--seed", "9"])
    cfg_file = {"seed": 1, "split": {"ratios": "0.6,0.2,0.2"}, "out": "from-file"}
    env = {"EFOENT_OUT": "from-env", "EFOENT_SEED": "5"}
    cfg = resolve("split", args, cfg_file, env)
    assert cfg["seed"] == 9
    assert cfg["out"] == "from-env"
    assert cfg["ratios"] == "0.6,0.2,0.2"
    assert resolve("split", build_parser().parse_args(["split"]), cfg_file, {})["seed"] == 1
    assert resolve("split", build_parser().parse_args(["split"]), {}, {})["seed"] == 0


def test_config_and_env_drive_main(tmp_path, monkeypatch):
    (tmp_path / "g.tsv").write_text("a\tr1\tb\n")
    (tmp_path / "c.json").write_text(json.dumps({"convert": {"to": "efo"}}))
    code, text = run("--config", tmp_path / "c.json", "convert", "--query", "(p,(r1),(s1))")
    assert code == 0 and text.strip() == "r1(s1,f)"
    monkeypatch.setenv("EFOENT_TO", "lisp")
    code, text = run("--config", tmp_path / "c.json", "convert", "--query", "r1(s1,f)")
    assert code == 0 and text.strip() == "(p,(r1),(s1))"


def test_sample_is_deterministic(workspace):
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"):
        assert (workspace / "data" / name).read_bytes() == (workspace / "data2" / name).read_bytes()
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["profile"] == "custom"


def test_train_is_deterministic(workspace):
    for name in ("loss.tsv", "model.ckpt", "run.json"):
        assert (workspace / "run" / name).read_bytes() == (workspace / "run2" / name).read_bytes()
    run_meta = json.loads((workspace / "run" / "run.json").read_text())
    assert run_meta["settings"]["steps"] == 30
    assert (workspace / "run" / "loss.tsv").read_text().splitlines()[0] == "step\tloss\tlr"


def test_eval_and_report(workspace, tmp_path):
    ckpt = workspace / "run" / "model.ckpt"
    paths = []
    for k in range(2):
        p = tmp_path / f"r{k}.json"
        code, text = run("eval", "--checkpoint", ckpt, "--data", workspace / "data", "--out", p, "--name", "tiny")
        assert code == 0, text
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    report = json.loads(paths[0].read_text())
    assert set(report["per_type"]) == {"1p", "pi", "2pi"}
    assert report["meta"]["settings"]["split"] == "test"

    code, table = run("report", "--inputs", f"{paths[0]},{paths[1]}", "--per-type", "--svg", tmp_path / "c.svg",
                      "--out", tmp_path / "t.txt")
    assert code == 0
    row = table.splitlines()[2].split()
    cells = report["cells"]
    assert row[0] == "tiny"
    assert row[1:] == [f"{100 * cells[c]:.1f}" for c in
                       ("ID(Q)/ID(K)", "ID(Q)/OOD(K)", "OOD(Q)/ID(K)", "OOD(Q)/OOD(K)", "All/ID(K)", "All/OOD(K)")]
    svg = (tmp_path / "c.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    first = (tmp_path / "c.svg").read_bytes()
    run("report", "--inputs", str(paths[0]) + "," + str(paths[1]), "--svg", tmp_path / "c.svg")
    assert (tmp_path / "c.svg").read_bytes() == first


def test_eval_to_stdout_round_trips(workspace):
    from efoent.metrics import EvalReport

    code, text = run("eval", "--checkpoint", workspace / "run" / "model.ckpt", "--data", workspace / "data")
    assert code == 0
    report = EvalReport.loads(text)
    again = EvalReport.loads(report.dumps())
    assert again.cells == report.cells and again.per_type == report.per_type


def test_train_excludes_types(workspace, tmp_path):
    code, _ = run("train", "--graph-dir", workspace / "graph", "--data", workspace / "data", "--out", tmp_path,
                  "--d-model", 8, "--layers", 1, "--heads", 1, "--steps", 2, "--batch-size", 4,
                  "--exclude-types", "1p,2p,2i")
    assert code != EXIT_OK
