import csv
import dataclasses
import json

import numpy as np
import pytest

from truthful_ssa import harness
from truthful_ssa.harness import (ConfigError, ExperimentConfig, GridConfig, build_instance,
                                  checkpoints, config_from_dict, epic_epir_suite, iteration_seeds,
                                  load_config, monotonicity_suite, preset, run_experiment,
                                  sweep_batch_size)


def small_cfg(tmp_path, **kw):
    base = dict(n=3, d=2, T=500, iterations=3, batch_size=10, seed=5, out_dir=str(tmp_path))
    base.update(kw)
    return ExperimentConfig(**base)


def test_checkpoints():
    assert checkpoints(10).tolist() == [1, 2, 4, 8, 10]
    assert checkpoints(16).tolist() == [1, 2, 4, 8, 16]


def test_presets():
    full = preset("full")
    assert (full.n, full.d, full.T, full.batch_size, full.alpha_elinucb, full.iterations) == \
        (7, 4, 10**6, 100, 1.0, 40)
    assert preset("desk").T == 10**5 and preset("desk").iterations == 10
    assert preset("ci").T == 10**4 and preset("ci").iterations == 3
    assert preset("paper-desk") == preset("desk")
    with pytest.raises(ConfigError):
        preset("nope")


@pytest.mark.parametrize("doc, field", [
    ({"n": 1}, "n"),
    ({"iterations": 0}, "iterations"),
    ({"delta": 1.5}, "delta"),
    ({"mechanisms": ["m-greedy"]}, "mechanisms"),
    ({"bogus": 3}, "bogus"),
    ({"grid": {"allocators": ["x"]}}, "grid.allocators"),
    ({"grid": {"colour": 1}}, "grid.colour"),
    ({"baseline_lambda": 10**9}, "baseline_lambda"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config_from_dict({"schema_version": 1, **doc})


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    cfg = ExperimentConfig(T=1234, mechanisms=("oracle",))
    p.write_text(json.dumps(cfg.to_dict()))
    back = load_config(p)
    assert back == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text(json.dumps({"schema_version": 7}))
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(p)


def test_oracle_curve_is_flat_zero(tmp_path):
    res = run_experiment(small_cfg(tmp_path, mechanisms=("oracle",)))
    assert np.all(res.curves["oracle"].per_iteration == 0)


def test_reproducible_csv(tmp_path):
    outs = []
    for k in range(2):
        cfg = small_cfg(tmp_path / str(k), write_rounds=True,
                        mechanisms=("m-elinucb-sb", "m-suplinucb-s", "baseline"))
        run_experiment(cfg)
        outs.append(tmp_path / str(k))
    names = ["curves.csv", "curves_mean.csv"] + [
        f"rounds/{m}_iter{i:03d}.csv" for m in ("m-elinucb-sb", "baseline") for i in range(3)]
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_aggregation_and_monotone_curves(tmp_path):
    cfg = small_cfg(tmp_path, iterations=4)
    res = run_experiment(cfg)
    with (tmp_path / "curves.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    with (tmp_path / "curves_mean.csv").open() as fh:
        means = list(csv.DictReader(fh))
    for m in cfg.mechanisms:
        per = {}
        for r in rows:
            if r["mechanism"] == m:
                per.setdefault(int(r["t"]), []).append(float(r["cumulative_regret"]))
        for r in means:
            if r["mechanism"] == m:
                assert float(r["mean"]) == pytest.approx(np.mean(per[int(r["t"])]), rel=1e-12)
        curve = res.curves[m].per_iteration
        assert np.all(np.diff(curve, axis=1) >= 0)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["failures"] == []
    assert set(doc["final_mean_regret"]) == set(cfg.mechanisms)


def test_failed_iteration_is_reported(tmp_path, monkeypatch):
    real = harness.run_one
    seeds = iteration_seeds(5, 3)

    def flaky(mech, inst, cfg, rs_seed):
        if rs_seed == seeds[1][1]:
            raise RuntimeError("boom")
        return real(mech, inst, cfg, rs_seed)

    monkeypatch.setattr(harness, "run_one", flaky)
    res = run_experiment(small_cfg(tmp_path))
    assert [f["iteration"] for f in res.failures] == [1]
    assert "boom" in res.failures[0]["error"]
    assert res.curves["baseline"].per_iteration.shape[0] == 2


def test_fixed_agents_mode(tmp_path):
    cfg = small_cfg(tmp_path, fixed_agents=True)
    (a, _), (b, _) = iteration_seeds(cfg.seed, 2)
    ia, ib = build_instance(cfg, a), build_instance(cfg, b)
    assert np.array_equal(ia.thetas, ib.thetas)
    assert not np.array_equal(ia.sequence, ib.sequence)
    cfg2 = dataclasses.replace(cfg, fixed_agents=False)
    assert not np.array_equal(build_instance(cfg2, a).thetas, build_instance(cfg2, b).thetas)


def test_workers_match_serial(tmp_path):
    a = run_experiment(small_cfg(tmp_path / "a", iterations=2))
    b = run_experiment(small_cfg(tmp_path / "b", iterations=2, workers=2))
    for m in a.curves:
        assert np.array_equal(a.curves[m].per_iteration, b.curves[m].per_iteration)


def test_sweep_batch_size(tmp_path):
    table = sweep_batch_size(small_cfg(tmp_path, T=400, iterations=2), bs_values=(1, 10))
    assert set(table) == {1, 10}
    assert (tmp_path / "bs_sweep.csv").exists()
    cfg1 = small_cfg(tmp_path, T=400, iterations=2, batch_size=1)
    res = run_experiment(dataclasses.replace(cfg1, mechanisms=("m-elinucb-sb",)), write=False)
    assert table[1]["per_iteration"] == pytest.approx(res.final_regrets("m-elinucb-sb").tolist())


def test_monotonicity_suite_stock_and_oracle(tmp_path):
    grid = GridConfig(instances=6, T=600, allocators=("oracle", "elinucb-s", "elinucb-sb"))
    rep = monotonicity_suite(grid, out_dir=tmp_path)
    assert rep.ok
    assert rep.checks == sum(n for n in [i.n for _, i in harness.grid_instances(grid)]) * 9 * 3
    assert (tmp_path / "monotonicity_report.json").exists()


def test_monotonicity_suite_catches_probe(tmp_path):
    grid = GridConfig(instances=25, allocators=("broken-probe",))
    rep = monotonicity_suite(grid, out_dir=tmp_path)
    assert not rep.ok
    v = rep.violations[0]
    assert v["clicks_high"] < v["clicks_low"] and v["bid_high"] > v["bid_low"]
    bundle = tmp_path / "bundles" / f"instance_{v['instance_seed']}.json"
    assert bundle.exists()


def test_epic_epir_suite_small(tmp_path):
    grid = GridConfig(instances=2, epic_T=300, resample_seeds=30)
    rep = epic_epir_suite(grid, 0.1, out_dir=tmp_path)
    assert rep.details["epir_negative_rounds"] == 0
    assert rep.details["epic_cells"] == 2 * 2 * 5
    assert rep.details["epir_rounds_checked"] == 2 * 2 * 30 * 300
    doc = json.loads((tmp_path / "epic_epir_report.json").read_text())
    assert len(doc["cells"]) == 20
