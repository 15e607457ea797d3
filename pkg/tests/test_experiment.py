import csv
import json

import numpy as np
import pytest

from sparselqrm import CostSpec, MultiplicativeNoiseSystem, io, lqrm_optimal, riccati_value_iteration
from sparselqrm.experiment import (
    ConfigError,
    granularity_for,
    hard_threshold_demo,
    initial_gain,
    local_minima,
    local_minima_demo,
    noise_awareness_instance,
    parse_config,
    run_experiment,
    sparsity_pattern,
)
from sparselqrm.svg import line_plot, pattern_ascii, pattern_grid

MINIMAL = {
    "system": {"A": [[0.9, 0.2], [0.0, 0.7]], "B": [[1.0], [0.5]],
               "state_noise": [{"variance": 0.05, "matrix": [[1.0, 0.0], [0.0, 1.0]]}]},
    "regularizer": {"kind": "l1", "gamma": 0.0},
    "optimizer": {"method": "gradient", "eta": 0.05, "max_iterations": 500, "grad_norm_tol_coeff": 1e-6},
    "initial_gain": "zero",
    "validation": {"horizon": 200, "rollouts": 500},
    "seed": 3,
}


def read_summary(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSparsity:
    def test_entry(self):
        rep = sparsity_pattern([[1, 0.04], [0.02, 0.5]])
        assert rep.pattern.tolist() == [[False, True], [True, False]]
        assert rep.sparsity_fraction == 0.5

    def test_zero_gain(self):
        assert sparsity_pattern(np.zeros((2, 3))).sparsity_fraction == 1.0
        assert sparsity_pattern(np.zeros((2, 3)), "row").sparsity_fraction == 1.0

    def test_groups(self):
        K = np.array([[3.0, 4.0, 0.0], [0.1, 0.1, 0.0]])
        rep = sparsity_pattern(K, "row")
        assert rep.pattern.tolist() == [False, True]
        assert rep.mask(K.shape).tolist() == [[False] * 3, [True] * 3]
        rep = sparsity_pattern(K, "col")
        assert rep.pattern.tolist() == [False, False, True]
        assert rep.sparsity_fraction == pytest.approx(1 / 3)
        assert rep.to_json()["rule"]["granularity"] == "col"

    def test_granularity_for(self):
        assert [granularity_for(k) for k in ("l1", "glrow", "sglcol", "rowmax")] == ["entry", "row", "col", "row"]
        with pytest.raises(ValueError):
            sparsity_pattern(np.eye(2), "diagonal")


class TestDemos:
    def test_threshold_qualitative(self):
        rep = hard_threshold_demo()
        assert rep["optimal_closed_loop_max_abs_eigenvalue"] < 1
        K = np.array(rep["K_thresholded"])
        assert np.all((K == 0) | (np.abs(K) >= 0.4))
        assert rep["closed_loop_max_abs_eigenvalue"] > 1
        assert not rep["thresholded_stable"]
        assert all(r["stable"] for r in rep["regularized"])

    def test_minima(self):
        found = local_minima_demo()
        assert len(found) == 2
        assert found == pytest.approx([5.372, 7.459], abs=1e-3)

    def test_convex_part_alone(self):
        assert local_minima(lambda x: x**2, -3, 4, 10_001) == pytest.approx([0.0], abs=1e-8)

    def test_noise_awareness(self):
        out = noise_awareness_instance()
        assert out["lqr"].spectral_radius == pytest.approx(1.01, abs=1e-6)
        assert not out["lqr"].stable and out["lqrm"].stable


class TestSvg:
    def test_pattern(self):
        s = pattern_grid(np.array([[True, False], [False, False]]), title="a<b")
        assert s.startswith("<svg") and s.count('fill="black"') == 3 and "a&lt;b" in s
        assert pattern_ascii(np.array([[True, False]])) == ".#\n"

    def test_line_plot_handles_nonfinite(self):
        s = line_plot({"x": ([0, 1, 2], [1.0, float("inf"), 3.0])}, "g", "J")
        assert s.count("<circle") == 2


class TestConfig:
    def test_defaults(self):
        cfg = parse_config(MINIMAL)
        np.testing.assert_array_equal(cfg.cost.Q, np.eye(2))
        assert cfg.sweep is None and cfg.seed == 3
        assert parse_config(MINIMAL, seed=9).seed == 9

    @pytest.mark.parametrize(
        "patch, path",
        [
            ({"optimiser": {}}, "optimiser"),
            ({"optimizer": {"method": "adam"}}, "optimizer.method"),
            ({"optimizer": {"eta": -1}}, "optimizer"),
            ({"regularizer": {"kind": "l2"}}, "regularizer.kind"),
            ({"regularizer": {"kind": "l1", "gamma": 1, "colour": 2}}, "regularizer.colour"),
            ({"sweep": {"gamma0": 1, "stage": 3}}, "sweep.stage"),
            ({"cost": {"R": [[-1.0]]}}, "cost"),
            ({"cost": {"Q": {"rows": 2, "cols": 2, "data": [1, 2, 3]}}}, "cost.Q"),
            ({"initial_gain": [[1.0, 2.0, 3.0]]}, "initial_gain"),
            ({"initial_gain": "lqr"}, "initial_gain"),
            ({"validation": {"horizon": 0}}, "validation.horizon"),
            ({"network": {"n_nodes": 5}}, "system"),
            ({"seed": "x"}, "seed"),
        ],
    )
    def test_errors_carry_paths(self, patch, path):
        with pytest.raises(ConfigError) as info:
            parse_config({**MINIMAL, **patch})
        assert info.value.path == path

    def test_system_errors(self):
        bad = {**MINIMAL, "system": {"A": [[1.0, 0.0]], "B": [[1.0]]}}
        with pytest.raises(ConfigError) as info:
            parse_config(bad)
        assert info.value.path.startswith("system")
        with pytest.raises(ConfigError) as info:
            parse_config({k: v for k, v in MINIMAL.items() if k != "system"})
        assert info.value.path == "system"

    def test_system_from_file(self, tmp_path):
        (tmp_path / "sys.json").write_text(json.dumps(MINIMAL["system"]))
        cfg = parse_config({**MINIMAL, "system": {"path": "sys.json"}}, base_dir=tmp_path)
        assert cfg.system.n == 2
        with pytest.raises(ConfigError) as info:
            parse_config({**MINIMAL, "system": {"path": "missing.json"}}, base_dir=tmp_path)
        assert info.value.path == "system.path"

    def test_network_source(self):
        cfg = parse_config({"network": {"n_nodes": 6, "noise_level": [0.01, 0.02]}})
        assert cfg.system.n == 5
        assert cfg.system.betas.tolist() == [0.02, 0.02]

    def test_initial_gains(self):
        cfg = parse_config({**MINIMAL, "initial_gain": "riccati"})
        Kstar, _ = lqrm_optimal(cfg.system, cfg.cost)
        np.testing.assert_allclose(initial_gain(cfg), Kstar, atol=1e-10)
        cfg = parse_config({**MINIMAL, "initial_gain": [[-0.1, 0.0]]})
        assert initial_gain(cfg).tolist() == [[-0.1, 0.0]]


class TestRunExperiment:
    def test_minimal_bundle(self, tmp_path):
        cfg = parse_config(MINIMAL)
        out = run_experiment(cfg, tmp_path)
        Jstar = np.trace(riccati_value_iteration(cfg.system, cfg.cost).P @ cfg.cost.Sigma0)
        [row] = out["stages"]
        assert row["J"] == pytest.approx(Jstar, rel=1e-4)
        for name in ("config.json", "system.json", "validation.json", "summary.csv", "summary_cost.svg",
                     "summary_time.svg", "stage_00_trajectory.csv", "stage_00_gains.json",
                     "stage_00_sparsity.json", "stage_00_sparsity.svg", "stage_00_sparsity.txt"):
            assert (tmp_path / name).exists(), name
        assert json.loads((tmp_path / "config.json").read_text()) == MINIMAL
        traj = io.read_trajectory_csv(tmp_path / "stage_00_trajectory.csv")
        assert traj[-1].J == pytest.approx(row["J"], rel=1e-12)
        val = json.loads((tmp_path / "validation.json").read_text())
        assert abs(val["z_score"]) < 4

    def test_sweep_bundle_and_determinism(self, tmp_path):
        cfg_dict = {**MINIMAL, "regularizer": {"kind": "glcol"},
                    "optimizer": {"method": "proximal", "max_iterations": 200},
                    "sweep": {"gamma0": 0.05, "eta0": 0.05, "stages": 3}, "initial_gain": "riccati"}
        a = run_experiment(parse_config(cfg_dict), tmp_path / "a")
        b = run_experiment(parse_config(cfg_dict), tmp_path / "b")
        rows = read_summary(tmp_path / "a" / "summary.csv")
        assert [float(r["gamma"]) for r in rows] == sorted(float(r["gamma"]) for r in rows)
        assert len(rows) == 3
        strip = lambda s: [{k: v for k, v in r.items() if k != "wall_time"} for r in s["stages"]]  # noqa: E731
        assert strip(a) == strip(b)
        assert a["validation"] == b["validation"]
        for s in range(3):
            ga = (tmp_path / "a" / f"stage_{s:02d}_gains.json").read_text()
            assert ga == (tmp_path / "b" / f"stage_{s:02d}_gains.json").read_text()

    def test_failed_stage_writes_error(self, tmp_path):
        cfg = parse_config({**MINIMAL, "system": {"A": [[1.5]], "B": [[1.0]]}, "initial_gain": "zero",
                            "optimizer": {"method": "subgradient"}, "sweep": {"stages": 2}})
        with pytest.raises(Exception):
            run_experiment(cfg, tmp_path)
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["stage"] == 0


class TestSerialization:
    def test_system_round_trip_bit_identical(self, tmp_path):
        text = json.dumps(io.system_to_json(parse_config(MINIMAL).system))
        sys = io.system_from_json(json.loads(text))
        assert json.dumps(io.system_to_json(sys)) == text
        io.save_system(tmp_path / "s.json", sys)
        again = io.load_system(tmp_path / "s.json")
        np.testing.assert_array_equal(again.A, sys.A)
        assert again.alphas.tolist() == sys.alphas.tolist()

    def test_matrix_formats(self):
        assert io.matrix_from_json(2.5).tolist() == [[2.5]]
        assert io.matrix_from_json([[1, 2]]).tolist() == [[1.0, 2.0]]
        with pytest.raises(io.FormatError) as info:
            io.matrix_from_json({"rows": 1, "cols": 2, "data": [1]}, "x")
        assert info.value.path == "x"

    def test_nonfinite_trajectory(self, tmp_path):
        from sparselqrm.optimizers import IterateRecord

        recs = [IterateRecord(0, float("inf"), 1.0, float("inf"), 0.5, 1e-3)]
        io.write_trajectory_csv(tmp_path / "t.csv", recs)
        assert io.read_trajectory_csv(tmp_path / "t.csv") == recs

    def test_cost_spec_rejects_bad_input(self):
        with pytest.raises(ValueError):
            CostSpec(np.eye(2), [[0.0]], np.eye(2))
        with pytest.raises(ValueError):
            CostSpec.identity(2, 1).check(MultiplicativeNoiseSystem(np.eye(3), np.ones((3, 1))))
