import numpy as np
import pytest

from netgsa.cli import RESULT_COLUMNS, build_parser, main, resolve_config
from netgsa.config import RunConfig, read_config_file
from netgsa.errors import DataError
from netgsa.io import format_p, ingest_expression, ingest_genesets, tsv, write_atomic


def _write(path, text):
    path.write_text(text)
    return path


def test_ingest_expression_roundtrip(tmp_path):
    p = _write(tmp_path / "m.tsv", "a\tb\n1.5\t-2\n3e-1\t4\n")
    m = ingest_expression(p)
    np.testing.assert_array_equal(m.values, [[1.5, -2.0], [0.3, 4.0]])
    assert m.index_map == {"a": 0, "b": 1}


@pytest.mark.parametrize("text,needle", [
    ("a\ta\n1\t2\n", ":1: duplicate gene id"),
    ("a\t\n1\t2\n", ":1: empty gene id"),
    ("a\tb\n1\t2\n3\n", ":3: expected 2 fields"),
    ("a\tb\n1\t \n", ":2: blank cell"),
    ("a\tb\n1\tx\n", ":2: non-numeric cell"),
    ("a\tb\n1\tnan\n", ":2: non-finite cell"),
    ("a\tb\n", "no samples"),
    ("", "empty file"),
])
def test_ingest_expression_errors(tmp_path, text, needle):
    p = _write(tmp_path / "bad.tsv", text)
    with pytest.raises(DataError, match=needle):
        ingest_expression(p)


def test_ingest_genesets_filters(tmp_path, caplog):
    idx = {g: i for i, g in enumerate("abcdefg")}
    p = _write(tmp_path / "s.gmt", "big\tdesc\ta\tb\tc\tzz\tb\nsmall\tdesc\ta\n\n")
    sets = ingest_genesets(p, idx, min_set_size=3)
    assert sets.sets == [("big", ["a", "b", "c"])]
    assert "dropped 1 unknown" in caplog.text
    assert "excluded" in caplog.text


@pytest.mark.parametrize("text,needle", [
    ("s\td\ta\ns\td\tb\n", ":2: duplicate gene-set name"),
    ("\td\ta\n", ":1: missing gene-set name"),
    ("\n\n", "no gene-sets"),
])
def test_ingest_genesets_errors(tmp_path, text, needle):
    p = _write(tmp_path / "bad.gmt", text)
    with pytest.raises(DataError, match=needle):
        ingest_genesets(p, {"a": 0, "b": 1})


def test_format_p_and_tsv():
    assert format_p(float("nan")) == "NA"
    assert format_p(None) == "NA"
    assert format_p(np.float64(0.1)) == "0.1"
    assert tsv(("a", "b"), [(1, "x")]) == "a\tb\n1\tx\n"


def test_write_atomic_leaves_no_temp(tmp_path):
    target = tmp_path / "out.tsv"
    write_atomic(target, "hello\n")
    assert target.read_text() == "hello\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.tsv"]


def test_config_file_parsing(tmp_path):
    p = _write(tmp_path / "c.cfg", "# comment\nsplits = 7\nni-method = mb-cv\nshapiro = yes\n"
                                    "bic_patience = none\n")
    values = read_config_file(p)
    assert values == {"splits": 7, "ni_method": "mb-cv", "shapiro": True, "bic_patience": None}
    assert RunConfig(**values).ni_method == "MB-CV"
    with pytest.raises(DataError, match=":1: unknown config key"):
        read_config_file(_write(tmp_path / "u.cfg", "colour = red\n"))
    with pytest.raises(DataError, match=":1: expected key = value"):
        read_config_file(_write(tmp_path / "v.cfg", "splits\n"))


@pytest.mark.parametrize("kwargs", [dict(splits=0), dict(tau=0), dict(level=1.0), dict(null="exact"),
                                    dict(threads=0), dict(ni_method="lasso")])
def test_run_config_validation(kwargs):
    with pytest.raises(DataError):
        RunConfig(**kwargs)


def test_config_precedence(tmp_path, monkeypatch):
    cfg = _write(tmp_path / "c.cfg", "splits = 7\ntau = 3\nthreads = 2\n")
    monkeypatch.setenv("NETGSA_THREADS", "5")
    args = build_parser().parse_args(["run", "--x", "a", "--y", "b", "--genesets", "c", "--out", "o",
                                      "--config", str(cfg), "--splits", "9"])
    c = resolve_config(args)
    assert (c.splits, c.tau, c.threads) == (9, 3.0, 2)
    args = build_parser().parse_args(["run", "--x", "a", "--y", "b", "--genesets", "c", "--out", "o"])
    assert resolve_config(args).threads == 5


def _run_args(root, out, *extra):
    return ["run", "--x", str(root / "x.tsv"), "--y", str(root / "y.tsv"),
            "--genesets", str(root / "sets.gmt"), "--splits", "3", "--seed", "4",
            "--out", str(out), *extra]


def test_cli_run_output_and_thread_determinism(cli_inputs, tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(_run_args(cli_inputs, a, "--threads", "1", "--classic")) == 0
    assert main(_run_args(cli_inputs, b, "--threads", "3", "--classic")) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert tuple(lines[0].split("\t")) == RESULT_COLUMNS
    assert len(lines) == 1 + 5  # the two-gene set is excluded
    p = [float(line.split("\t")[2]) for line in lines[1:]]
    assert p == sorted(p)


def test_cli_emit_networks(cli_inputs, tmp_path):
    out = tmp_path / "res.tsv"
    assert main(_run_args(cli_inputs, out, "--emit-networks", "set01")) == 0
    for cond in ("x", "y"):
        path = tmp_path / f"res.set01.pcor_{cond}.tsv"
        rows = path.read_text().splitlines()
        M = np.array([[float(v) for v in r.split("\t")] for r in rows[1:]])
        assert M.shape[0] == M.shape[1] == len(rows[0].split("\t"))
        np.testing.assert_allclose(M, M.T)
        assert np.all((M >= 0) & (M <= 1))


def test_cli_error_writes_nothing(cli_inputs, tmp_path, capsys):
    out = tmp_path / "res.tsv"
    assert main(_run_args(cli_inputs, out, "--emit-networks", "nope")) == 2
    assert "netgsa: error:" in capsys.readouterr().err
    assert not out.exists()
    bad = tmp_path / "bad.tsv"
    bad.write_text("G0\tG1\n1\tx\n")
    args = _run_args(cli_inputs, out)
    args[2] = str(bad)
    assert main(args) == 2
    assert not out.exists()


def test_cli_backtest(cli_inputs, tmp_path):
    out = tmp_path / "bt.tsv"
    args = ["backtest", "--x", str(cli_inputs / "x.tsv"), "--y", str(cli_inputs / "y.tsv"),
            "--genesets", str(cli_inputs / "sets.gmt"), "--sets", "set04", "--repeats", "2",
            "--splits", "2", "--out", str(out)]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "geneset\tsignificant_count\trepeats"
    name, count, reps = lines[1].split("\t")
    assert name == "set04" and 0 <= int(count) <= 2 and reps == "2"


def test_cli_simulate_model1(tmp_path):
    out, dec = tmp_path / "m.tsv", tmp_path / "d.tsv"
    args = ["simulate", "--model", "1", "--alpha", "1.0", "--runs", "2", "--seed", "7",
            "--methods", "gl-bic-at,lrt-diag", "--out", str(out), "--decisions", str(dec)]
    assert main(args) == 0
    rows = [r.split("\t") for r in out.read_text().splitlines()]
    assert rows[0][:5] == ["model", "param", "method", "runs", "rejection_rate"]
    assert [r[2] for r in rows[1:]] == ["GL-BIC-AT", "LRT-diag"]
    assert len(dec.read_text().splitlines()) == 1 + 4


def test_cli_simulate_requires_parameter(capsys):
    assert main(["simulate", "--model", "2"]) == 2
    assert "--beta" in capsys.readouterr().err


def test_two_gene_three_sample_file(tmp_path):
    m = ingest_expression(_write(tmp_path / "m.tsv", "G1\tG2\n1\t2\n3\t4\n5\t6\n"))
    assert m.values.shape == (3, 2)


def test_duplicate_header_names_the_gene(tmp_path):
    with pytest.raises(DataError, match="TP53"):
        ingest_expression(_write(tmp_path / "m.tsv", "TP53\tTP53\n1\t2\n"))


def test_blank_cell_cites_its_line(tmp_path):
    with pytest.raises(DataError, match=":4: blank cell"):
        ingest_expression(_write(tmp_path / "m.tsv", "a\tb\n1\t2\n3\t4\n5\t\n"))


def test_gmt_size_boundary(tmp_path):
    idx = {f"G{i}": i - 1 for i in range(1, 6)}
    line = "SETA\tdesc\tG1\tG2\tG3\tG4\tG5\n"
    sets = ingest_genesets(_write(tmp_path / "a.gmt", line), idx, min_set_size=5)
    assert sets.sets == [("SETA", ["G1", "G2", "G3", "G4", "G5"])]
    del idx["G5"]
    assert len(ingest_genesets(_write(tmp_path / "b.gmt", line), idx, min_set_size=5)) == 0
    with pytest.raises(DataError, match="duplicate gene-set name"):
        ingest_genesets(_write(tmp_path / "c.gmt", line * 2), idx)


def test_cli_single_split_matches_library(cli_inputs, tmp_path):
    from netgsa import ggm
    from netgsa.gsa import run_single_split

    out = tmp_path / "one.tsv"
    assert main(_run_args(cli_inputs, out)[:-4] + ["--splits", "1", "--seed", "4", "--out", str(out)]) == 0
    got = {r.split("\t")[0]: r.split("\t")[2] for r in out.read_text().splitlines()[1:]}
    X = ingest_expression(cli_inputs / "x.tsv")
    Y = ingest_expression(cli_inputs / "y.tsv")
    order = [Y.index_map[g] for g in X.genes]
    sets = ingest_genesets(cli_inputs / "sets.gmt", X.index_map)
    p = run_single_split(ggm.standardize(X.values), ggm.standardize(Y.values[:, order]), sets,
                         RunConfig(), 4)
    assert got == {name: format_p(v) for name, v in zip(sets.names, p)}
