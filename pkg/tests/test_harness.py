import csv

import numpy as np
import pytest

from corridor_rl.demand import DemandRates
from corridor_rl.env import EpisodeConfig
from corridor_rl.errors import CheckpointError, MismatchError
from corridor_rl.harness import (BenchmarkPlan, MetricsReport, RlController,
                                 RunMetrics, compare, coordination_metric,
                                 improvement_pct, load_run_csv,
                                 run_baseline_episode, run_benchmark,
                                 run_seed_for, spearman_rho, write_aggregate_csv,
                                 write_run_csv)
from corridor_rl.signals import ActionVector


def _action(n_mb, bits):
    return ActionVector(1, tuple(bits[:n_mb]))


def test_coordination_metric_examples():
    all_green = [ActionVector(1, (True,) * 7) for _ in range(10)]
    assert coordination_metric(all_green) == 7.0
    alternating = [ActionVector(1, (True,) * 7 if i % 2 == 0 else (False,) * 7)
                   for i in range(10)]
    assert coordination_metric(alternating) == 3.5
    rng = np.random.default_rng(0)
    trace = [ActionVector(1, tuple(bool(b) for b in rng.integers(0, 2, 7)))
             for _ in range(50)]
    want = sum(sum(a.midblock) for a in trace) / 50
    assert coordination_metric(trace) == pytest.approx(want, abs=1e-12)


def _report(controller, scale, ped=5.0, veh=20.0, n=4):
    runs = []
    for k in range(n):
        runs.append(RunMetrics(
            controller=controller, scale=scale, seed=k, n_ped=100, n_veh=10,
            total_wait_ped_s=ped * 100, total_wait_veh_s=veh * 10,
            conflicts=0, switches=10, avg_simultaneous_mb_green=3.0,
            safety_violations=0))
    return MetricsReport(controller, scale, runs)


def test_compare_paper_reference_points():
    # 42.6 -> 20.5 seconds per vehicle is a ~52% reduction
    assert improvement_pct(42.6, 20.5) == pytest.approx(51.9, abs=0.1)
    # 6.0 -> 2.0 seconds per pedestrian is a ~67% reduction
    assert improvement_pct(6.0, 2.0) == pytest.approx(66.7, abs=0.1)
    reports = [_report("rl", 2.0, ped=2.0, veh=20.5),
               _report("fixed", 2.0, ped=6.0, veh=42.6)]
    rows = compare(reports)
    veh_row = next(r for r in rows if r["metric"] == "avg_wait_veh_s")
    assert veh_row["improvement_vs_fixed_pct"] == pytest.approx(51.9, abs=0.1)
    ped_row = next(r for r in rows if r["metric"] == "avg_wait_ped_s")
    assert ped_row["improvement_vs_fixed_pct"] == pytest.approx(66.7, abs=0.1)


def test_compare_identical_reports_zero_improvement():
    reports = [_report("rl", 1.0), _report("fixed", 1.0)]
    rows = compare(reports)
    for row in rows:
        assert row["improvement_vs_fixed_pct"] == pytest.approx(0.0, abs=1e-12)


def test_compare_scale_mismatch():
    reports = [_report("rl", 1.0), _report("fixed", 2.0)]
    with pytest.raises(MismatchError):
        compare(reports)


def test_average_identities():
    run = _report("fixed", 1.0).runs[0]
    assert run.avg_wait_ped_s == pytest.approx(
        run.total_wait_ped_s / run.n_ped, abs=1e-9)
    assert run.total_wait_ped_hr == pytest.approx(
        run.total_wait_ped_s / 3600.0, abs=1e-12)
    assert run.combined_avg_wait_s == pytest.approx(
        (run.total_wait_ped_s + run.total_wait_veh_s) / (run.n_ped + run.n_veh),
        abs=1e-9)


def test_fixed_time_switches_identical_across_seeds(mini_network):
    rates = DemandRates()
    ep = EpisodeConfig()
    metrics = [run_baseline_episode(mini_network, "fixed", rates, 1.0,
                                    run_seed_for(0, 1.0, k), ep)
               for k in range(3)]
    switch_counts = {m.switches for m in metrics}
    # warmup length shifts the schedule phase; the count varies by at most
    # one cycle-boundary switch and never with the demand seed alone
    assert len(switch_counts) <= 2
    assert all(m.safety_violations == 0 for m in metrics)
    assert all(m.conflicts == 0 for m in metrics)


def test_unsignalized_keeps_intersection_signalized(mini_network):
    m = run_baseline_episode(mini_network, "unsignalized", DemandRates(), 1.5,
                             run_seed_for(1, 1.5, 0), EpisodeConfig())
    # switch trace covers the intersection only
    assert m.switches > 0
    assert m.avg_simultaneous_mb_green == len(mini_network.midblocks)


def test_benchmark_csv_roundtrip_and_aggregation(tmp_path, mini_network):
    plan = BenchmarkPlan(controllers=("fixed",), scales=(1.0,), runs_per_cell=3)
    reports = run_benchmark(plan, mini_network)
    run_path = tmp_path / "runs.csv"
    agg_path = tmp_path / "agg.csv"
    write_run_csv(reports, str(run_path))
    write_aggregate_csv(reports, str(agg_path))

    # aggregation consistency: recompute mean/std from the per-run CSV
    with open(run_path) as fh:
        rows = list(csv.DictReader(fh))
    vals = np.array([float(r["combined_avg_wait_s"]) for r in rows])
    mean, std = reports[0].mean_std("combined_avg_wait_s")
    assert mean == pytest.approx(vals.mean(), abs=1e-9)
    assert std == pytest.approx(vals.std(), abs=1e-9)

    loaded = load_run_csv(str(run_path))
    assert len(loaded) == 1
    got_mean, got_std = loaded[0].mean_std("avg_wait_ped_s")
    want_mean, want_std = reports[0].mean_std("avg_wait_ped_s")
    assert got_mean == pytest.approx(want_mean, rel=1e-6)
    assert got_std == pytest.approx(want_std, rel=1e-6)


def test_benchmark_determinism(mini_network):
    plan = BenchmarkPlan(controllers=("unsignalized",), scales=(1.0,),
                         runs_per_cell=2, seed=5)
    a = run_benchmark(plan, mini_network)
    b = run_benchmark(plan, mini_network)
    for ra, rb in zip(a[0].runs, b[0].runs):
        assert ra == rb


def test_rl_controller_missing_checkpoint():
    with pytest.raises(CheckpointError):
        RlController("/nonexistent/path.ckpt")


def test_plan_validation():
    with pytest.raises(ValueError):
        BenchmarkPlan(runs_per_cell=0)
    with pytest.raises(ValueError):
        BenchmarkPlan(controllers=("magic",))


def test_spearman_rho():
    assert spearman_rho([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3, 4], [40, 30, 20, 10]) == pytest.approx(-1.0)
    assert abs(spearman_rho([1, 2, 3, 4, 5, 6], [3, 1, 4, 1, 5, 9])) <= 1.0
