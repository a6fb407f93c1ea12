import csv
import json

import numpy as np
import pytest

from gffperc.harness import (ConfigError, ExperimentConfig, derive_seed, load_config, read_rows,
                             run_experiment, summarize, sweep)


def small(**kw):
    base = dict(kind="giant_fraction", n_grid=(300,), replicas=6, seed=3, reference=False, threads=1)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_odd_n_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(n_grid=(2001,), d=3)

    def test_bad_values(self):
        for kw in ({"replicas": 0}, {"kind": "nope"}, {"d": 2}, {"method": "x"}, {"n_grid": ()}):
            with pytest.raises(ConfigError):
                ExperimentConfig(**kw)

    def test_hash_ignores_output_and_threads(self):
        a = small()
        assert a.config_hash() == a.replace(out_dir="/tmp/x", threads=4).config_hash()
        assert a.config_hash() != a.replace(seed=4).config_hash()

    def test_toml_with_override(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('[experiment]\nkind = "diameter"\nh = -0.5\nn_grid = [400, 800]\nreplicas = 7\n')
        cfg = load_config(p, replicas=3, seed=None)
        assert cfg.kind == "diameter" and cfg.h == -0.5 and cfg.n_grid == (400, 800)
        assert cfg.replicas == 3 and cfg.seed == 0

    def test_toml_unknown_key(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('colour = "red"\n')
        with pytest.raises(ConfigError):
            load_config(p)


class TestSeeds:
    def test_stable(self):
        assert derive_seed(7, ["giant_fraction", 2000, 5]) == derive_seed(7, ["giant_fraction", 2000, 5])
        # blake2b-64 of '[7, ["giant_fraction", "2000", "5"]]', little-endian
        assert derive_seed(7, ["giant_fraction", 2000, 5]) == 3942330283200634147
        assert derive_seed(0, []) == derive_seed(0, ())
        assert derive_seed(1, ["a"]) != derive_seed(1, ["b"]) != derive_seed(2, ["b"])

    def test_no_collisions(self):
        seeds = {derive_seed(11, ["giant_fraction", 2000, i]) for i in range(10**6)}
        assert len(seeds) == 10**6

    def test_order_independent(self):
        a = [derive_seed(5, ["x", i]) for i in range(100)]
        b = [derive_seed(5, ["x", i]) for i in reversed(range(100))][::-1]
        assert a == b


class TestRun:
    def test_shape_contract(self, tmp_path):
        cfg = ExperimentConfig(kind="giant_fraction", n_grid=(2000,), replicas=100, seed=1,
                               reference=False, threads=1, out_dir=str(tmp_path))
        run_experiment(cfg)
        with open(tmp_path / "replicas.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 100
        doc = json.loads((tmp_path / "summary.json").read_text())
        mean = doc["summary"]["per_n"]["2000"]["c1_frac"]["mean"]
        assert mean == pytest.approx(np.mean([float(r["c1_frac"]) for r in rows]), abs=1e-12)
        assert doc["provenance"]["config_hash"] == cfg.config_hash()

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_experiment(small(out_dir=str(a)))
        run_experiment(small(out_dir=str(b)))
        for name in ("replicas.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_thread_count_does_not_change_results(self):
        one = run_experiment(small(kind="second_component", replicas=5, threads=1), write=False)
        two = run_experiment(small(kind="second_component", replicas=5, threads=2), write=False)
        assert one.rows_csv() == two.rows_csv()
        assert one.summary == two.summary

    @pytest.mark.parametrize("kind", ["second_component", "core_kernel", "diameter",
                                      "typical_distance", "local_limit"])
    def test_summary_recomputed_from_csv(self, kind, tmp_path):
        res = run_experiment(small(kind=kind, n_grid=(300, 600), replicas=4, pairs=200,
                                   out_dir=str(tmp_path)))
        rows = read_rows(tmp_path / "replicas.csv")
        again = summarize(rows, kind)
        doc = json.loads((tmp_path / "summary.json").read_text())["summary"]
        for n_str, st in again["per_n"].items():
            for col, s in st.items():
                if isinstance(s, dict) and "mean" in s:
                    assert doc["per_n"][n_str][col]["mean"] == pytest.approx(s["mean"], abs=1e-12)
                    assert doc["per_n"][n_str][col]["std_error"] == pytest.approx(s["std_error"], abs=1e-12)
        assert res.summary == doc

    def test_exploration_method(self):
        res = run_experiment(small(method="exploration", n_grid=(10**4,), replicas=20), write=False)
        assert {"success", "verdict", "seen_count"} <= set(res.rows[0])

    def test_green_validation_rows(self):
        res = run_experiment(small(kind="green_validation", n_grid=(2000,), replicas=2, r_min=6),
                             write=False)
        st = res.summary["per_n"]["2000"]
        assert st["pairs"]["mean"] > 0
        assert st["pass_fraction"] == 1.0


class TestSweep:
    def test_empty(self):
        assert sweep(small(), "h", []) == []

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError):
            sweep(small(), "colour", [1])

    def test_h_sweep_monotone(self, tmp_path):
        tmpl = small(kind="tree_estimates", replicas=1, tree_replicas=6000, K=30,
                     out_dir=str(tmp_path))
        res = sweep(tmpl, "h", [-1.0, -0.5, 0.0, 0.5])
        assert len(res) == 4
        eta = [r.summary["per_n"]["300"]["eta"]["mean"] for r in res]
        se = [r.rows[0]["eta_se"] for r in res]
        for a, b, sa, sb in zip(eta, eta[1:], se, se[1:]):
            assert b <= a + 3 * np.hypot(sa, sb)
        assert (tmp_path / "sweep.csv").exists()
        assert (tmp_path / "h=0.0" / "summary.json").exists()

    def test_n_sweep(self):
        res = sweep(small(kind="second_component", replicas=3), "n", [512, 1024, 2048])
        assert [r.config.n_grid for r in res] == [(512,), (1024,), (2048,)]
        assert all("c2" in r.summary["per_n"][str(r.config.n_grid[0])] for r in res)
