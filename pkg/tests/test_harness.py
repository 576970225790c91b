import csv
import io
import json
import os
from pathlib import Path

import numpy as np
import pytest

from dget import cli, engine, harness, theory
from dget.engine import ConfigError

DATA = Path(__file__).parent / "data"

MINIMAL = """
problem.kind = nonconvex-logistic
problem.m = 8
problem.d = 10
graph.topology = ring
algorithm.name = dget
algorithm.q = auto
algorithm.s2 = auto
"""


def quad_cfg(tmp_path, **algorithm):
    text = "\n".join([
        "problem.kind = shifted-quadratic", "problem.m = 4", "problem.n = 16", "problem.d = 3",
        "graph.topology = ring", "algorithm.name = dget", "algorithm.T = 40",
    ] + [f"algorithm.{k} = {v}" for k, v in algorithm.items()])
    return harness.parse_config(text, base_dir=tmp_path)


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParseConfig:
    def test_defaults(self):
        cfg = harness.parse_config(MINIMAL)
        assert cfg.problem["n"] == 64 and cfg.problem["lam"] == 0.1 and cfg.problem["seed"] == 0
        assert cfg.graph["scheme"] == "metropolis" and cfg.graph["gamma"] == "auto"
        assert cfg.algorithm["alpha"] == "theorem1" and cfg.algorithm["mode"] == "finite-sum"
        assert cfg.algorithm["T"] == 1000 and cfg.algorithm["diag_every"] == 1
        assert cfg.output["formats"] == ("csv", "json")

    def test_comments_and_blank_lines(self):
        cfg = harness.parse_config("# header\n\n" + MINIMAL + "\nalgorithm.T = 5  \n")
        assert cfg.algorithm["T"] == 5

    def test_theorem1_sentinel_resolves(self):
        res = harness.resolve(harness.parse_config(MINIMAL))
        plan = theory.theorem1_stepsize(res.problem.L, res.mixing.eta)
        assert res.config.alpha == plan.alpha
        assert (res.config.q, res.config.s2) == (8, 8)

    @pytest.mark.parametrize("extra, line, words", [
        ("algorithm.speed = 3", 9, "unknown key"),
        ("problem.m = eight", 9, "bad value"),
        ("algorithm.alpha = -0.1", 9, "bad value"),
        ("just some words", 9, "expected"),
    ])
    def test_errors_name_the_line(self, extra, line, words):
        with pytest.raises(ConfigError, match=rf"line {line}: .*{words}|line {line}: {words}"):
            harness.parse_config(MINIMAL + extra)

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="problem.d"):
            harness.parse_config(MINIMAL.replace("problem.d = 10", ""))

    def test_missing_edges_file(self, tmp_path):
        text = MINIMAL.replace("graph.topology = ring", "graph.edges = nowhere.txt")
        with pytest.raises(ConfigError, match="line 5: .*does not exist"):
            harness.parse_config(text, base_dir=tmp_path)

    def test_graph_source_exclusive(self):
        with pytest.raises(ConfigError):
            harness.parse_config(MINIMAL + "graph.edges = x.txt\n")

    def test_edge_file_relative_to_config(self):
        text = MINIMAL.replace("graph.topology = ring", "graph.edges = ring4.edges").replace("m = 8", "m = 4")
        res = harness.resolve(harness.parse_config(text, base_dir=DATA))
        assert res.graph.m == 4 and res.mixing.eta == pytest.approx(1 / 3, abs=1e-12)


class TestSeeds:
    def test_algorithm_name_leaves_data_alone(self):
        cfg = harness.parse_config(MINIMAL)
        a = harness.build_problem(cfg)
        b = harness.build_problem(cfg.with_values(algorithm={"name": "gnsd"}))
        np.testing.assert_array_equal(a.data["z"], b.data["z"])

    def test_master_seed_changes_everything(self):
        assert harness.derive_seeds(0) != harness.derive_seeds(1)
        assert harness.derive_seeds(3) == harness.derive_seeds(3)


class TestRun:
    def test_golden_trace(self):
        res = harness.run(harness.load_config(DATA / "ring4.cfg"), write=False)
        got = read_csv(res.trace.to_csv())
        want = read_csv((DATA / "ring4_trace.csv").read_text())
        assert len(got) == len(want) == 61
        for g, w in zip(got, want):
            for col in engine.CSV_COLUMNS:
                if col in engine.INT_COLUMNS:
                    assert g[col] == w[col], col
                else:
                    assert float(g[col]) == pytest.approx(float(w[col]), rel=1e-12, abs=1e-12), col

    def test_files_and_determinism(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=0.1, epsilon=1e-2)
        r1 = harness.run(cfg, out_dir=tmp_path / "a")
        r2 = harness.run(cfg, out_dir=tmp_path / "b")
        a = (tmp_path / "a" / "trace.csv").read_bytes()
        assert a == (tmp_path / "b" / "trace.csv").read_bytes()
        assert a.decode().splitlines()[0] == ",".join(engine.CSV_COLUMNS)
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert tuple(summary) == harness.SUMMARY_KEYS
        assert r1.summary["first_hit_iter"] == r2.summary["first_hit_iter"]
        assert not any(p.name.endswith(".tmp") for p in (tmp_path / "a").iterdir())

    def test_first_hit_rescan(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=0.1, epsilon=0.05, T=200)
        res = harness.run(cfg, write=False)
        rows = read_csv(res.trace.to_csv())
        running, hit = np.inf, None
        for row in rows:
            running = min(running, float(row["h"]))
            if running <= 0.05:
                hit = row
                break
        assert hit is not None
        assert res.summary["first_hit_iter"] == int(hit["r"])
        assert res.summary["first_hit_ifo"] == int(hit["ifo_total"])
        assert res.summary["first_hit_comm"] == int(hit["comm_rounds"])

    def test_unreachable_target(self, tmp_path):
        res = harness.run(quad_cfg(tmp_path, alpha=0.1, epsilon=1e-30, T=5), write=False)
        assert res.summary["first_hit_iter"] is None and res.summary["first_hit_ifo"] is None

    def test_thinned_row_count(self, tmp_path):
        res = harness.run(quad_cfg(tmp_path, alpha=0.1, T=50, diag_every=4), write=False)
        assert len(res.trace) == -(-51 // 4)

    def test_divergence_writes_partial_trace(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=5.0, T=500)
        with pytest.raises(engine.DivergenceError):
            harness.run(cfg, out_dir=tmp_path / "d")
        assert (tmp_path / "d" / "trace.csv").exists()

    def test_online_auto_batches(self, tmp_path):
        text = "\n".join([
            "problem.kind = shifted-quadratic", "problem.m = 4", "problem.d = 3", "problem.sigma2 = 0.01",
            "graph.topology = complete", "algorithm.name = dget", "algorithm.mode = online",
            "algorithm.epsilon = 0.5",
        ])
        res = harness.resolve(harness.parse_config(text))
        assert res.config.s1 >= res.config.s2 >= 1 and res.config.q == res.config.s2


class TestWriteAtomic:
    def test_replaces_whole_file(self, tmp_path):
        p = tmp_path / "x" / "f.txt"
        harness.write_atomic(p, "one")
        harness.write_atomic(p, "two")
        assert p.read_text() == "two" and os.listdir(p.parent) == ["f.txt"]


class TestSweep:
    def test_validation(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=0.1)
        for eps in ([], [1e-2, 1e-3], [1e-2, 5e-3, 2e-3]):
            with pytest.raises(ConfigError):
                harness.sweep(cfg, eps)

    def test_quadratic_linear_rate(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=0.1, T=600, q=4, s2=4)
        res = harness.sweep(cfg, [1e-2, 1e-4, 1e-6, 1e-8], out_dir=tmp_path)
        assert not res.flagged and res.slope < 0.5
        comm = [r["first_hit_comm"] for r in res.rows]
        assert comm == sorted(comm)
        assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == ",".join(harness.SWEEP_COLUMNS)

    def test_flags_unreached(self, tmp_path):
        res = harness.sweep(quad_cfg(tmp_path, alpha=0.1, T=300, q=4, s2=4), [1e-1, 1e-3, 1e-30])
        assert res.flagged == [1e-30]
        assert not res.rows[-1]["in_fit"]


class TestCompare:
    def test_single_algorithm(self, tmp_path):
        res = harness.compare(quad_cfg(tmp_path, alpha=0.1, T=200, q=4, s2=4), ["dget"], n_seeds=2, epsilon=1e-4)
        assert len(res.rows) == 1 and res.row("dget")["reached"] == 2

    def test_dgd_bias_flagged(self, tmp_path):
        res = harness.compare(quad_cfg(tmp_path, alpha=0.1, T=400, q=4, s2=4), ["dget", "dgd"], n_seeds=1,
                              epsilon=1e-8, out_dir=tmp_path)
        assert not res.row("dget")["flagged"] and res.row("dgd")["flagged"]
        assert (tmp_path / "compare.csv").exists()

    def test_rejects(self, tmp_path):
        cfg = quad_cfg(tmp_path, alpha=0.1)
        with pytest.raises(ConfigError):
            harness.compare(cfg, [])
        with pytest.raises(ConfigError):
            harness.compare(cfg, ["adam"])


class TestGradcheck:
    @pytest.mark.parametrize("kind", ["shifted-quadratic", "nonconvex-logistic"])
    def test_passes(self, kind):
        cfg = harness.parse_config(MINIMAL.replace("nonconvex-logistic", kind))
        prob = harness.build_problem(cfg)
        assert harness.gradcheck(prob).passed and prob.ifo.total == 0


class TestCli:
    def write_cfg(self, tmp_path, text):
        p = tmp_path / "run.cfg"
        p.write_text(text)
        return str(p)

    def test_run_ok(self, tmp_path, capsys):
        path = self.write_cfg(tmp_path, (DATA / "ring4.cfg").read_text())
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "trace.csv").exists()
        assert "best_h" in capsys.readouterr().out

    def test_config_error(self, tmp_path):
        path = self.write_cfg(tmp_path, "problem.bogus = 1\n")
        assert cli.main(["run", "--config", path]) == 2
        assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_divergence(self, tmp_path):
        text = (DATA / "ring4.cfg").read_text().replace("algorithm.alpha = theorem1", "algorithm.alpha = 5.0")
        path = self.write_cfg(tmp_path, text.replace("algorithm.T = 60", "algorithm.T = 400"))
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 3

    def test_validate_mixing(self, capsys):
        assert cli.main(["validate-mixing", "--graph", str(DATA / "ring4.edges")]) == 0
        assert "0.333" in capsys.readouterr().out
        assert cli.main(["validate-mixing", "--graph", str(DATA / "ring4.edges"), "--scheme", "maxdegree"]) == 4
        assert cli.main(["validate-mixing", "--graph", str(DATA / "split4.edges")]) == 2

    def test_gradcheck(self, tmp_path):
        assert cli.main(["gradcheck", "--config", str(DATA / "ring4.cfg")]) == 0

    def test_sweep_and_compare(self, tmp_path, capsys):
        text = (DATA / "ring4.cfg").read_text().replace("algorithm.alpha = theorem1", "algorithm.alpha = 0.1")
        path = self.write_cfg(tmp_path, text.replace("algorithm.T = 60", "algorithm.T = 400"))
        assert cli.main(["sweep", "--config", path, "--epsilons", "1e-2,1e-3,1e-4", "--out", str(tmp_path)]) == 0
        assert cli.main(["compare", "--config", path, "--algorithms", "dget,gnsd", "--seeds", "2",
                         "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "slope" in out and "mean_first_hit_ifo" in out
