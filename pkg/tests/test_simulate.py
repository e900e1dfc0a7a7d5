import json

import numpy as np
import pytest

from hilbertfuse.errors import ConfigurationError
from hilbertfuse.features import Point2, make_grid_basis
from hilbertfuse.ingest import four_room_layout
from hilbertfuse.model import TrainConfig, new_map, serialize
from hilbertfuse.simulate import (
    AgentState,
    SimulationPlan,
    basis_for_target,
    build_env_data,
    make_fusion_benchmark,
    quadrant_agents,
    render_model,
    run_simulation,
    size_auc_sweep,
    train_on_scans,
)


@pytest.fixture(scope="module")
def small_env():
    layout = four_room_layout(scan_count=16, beams_per_scan=12)
    return build_env_data(layout, noise_sd=0.02, seed=3, free_spacing=1.0, test_fraction=0.15)


@pytest.fixture(scope="module")
def small_setup(small_env):
    basis = make_grid_basis(0, 20, 0, 20, spacing=2.0, gamma=1.0)
    cfg = TrainConfig(prior_variance=100.0)
    return small_env, basis, cfg


def test_plan_validation():
    SimulationPlan(fusion_points=(0.5, 1.0))
    with pytest.raises(ConfigurationError):
        SimulationPlan(fusion_points=())
    with pytest.raises(ConfigurationError):
        SimulationPlan(fusion_points=(0.5, 0.5))
    with pytest.raises(ConfigurationError):
        SimulationPlan(fusion_points=(0.0, 1.0))


def test_single_agent_degenerates_to_solo_training(small_setup):
    env, basis, cfg = small_setup
    agent = AgentState("solo", new_map(basis, cfg), list(env.train_scans))
    report = run_simulation([agent], SimulationPlan(fusion_points=(1.0,)), basis, cfg)
    solo = train_on_scans(new_map(basis, cfg), basis, env.train_scans, cfg)
    assert np.array_equal(report.final_global.means, solo.means)
    assert np.array_equal(report.final_global.variances, solo.variances)
    blob_a = serialize(report.final_global, basis, cfg)
    blob_b = serialize(solo, basis, cfg)
    assert blob_a == blob_b


def test_report_structure_and_checksums(small_setup):
    env, basis, cfg = small_setup
    agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
    report = run_simulation(agents, SimulationPlan(), basis, cfg, eval_samples=env.test_samples)
    assert len(report.rounds) == 4
    assert report.union_checksum == report.consumed_checksum
    assert report.metrics["fused"]["auc"] > 0.5
    assert report.metrics["reference"]["auc"] > 0.5
    for rec in report.rounds:
        assert set(rec["bytes"]) == set(rec["participants"])
        assert rec["global_checksum"]
    doc = json.loads(report.to_json())
    assert set(doc) == {"rounds", "agents", "metrics", "sizes", "union_checksum", "consumed_checksum", "plan"}


def test_round_one_full_then_increments_cost_less(small_setup):
    env, basis, cfg = small_setup
    agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
    report = run_simulation(agents, SimulationPlan(), basis, cfg)
    first, later = report.rounds[0], report.rounds[1:]
    for rec in later:
        for aid, nbytes in rec["bytes"].items():
            assert nbytes <= first["bytes"][aid]
            assert rec["kinds"][aid] == "increment"
    assert all(k == "full" for k in first["kinds"].values())


def test_determinism_same_seed_identical_reports():
    layout = four_room_layout(scan_count=12, beams_per_scan=10)
    outs = []
    for _ in range(2):
        env = build_env_data(layout, noise_sd=0.05, seed=99, free_spacing=1.0)
        basis = make_grid_basis(0, 20, 0, 20, spacing=2.0, gamma=1.0)
        cfg = TrainConfig(prior_variance=100.0)
        agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
        report = run_simulation(agents, SimulationPlan(), basis, cfg, eval_samples=env.test_samples)
        outs.append((report.to_json(), serialize(report.final_global, basis, cfg)))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]


def test_bandwidth_cap_records_skips(small_setup):
    env, basis, cfg = small_setup
    agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
    plan = SimulationPlan(fusion_points=(0.5, 1.0), bandwidth_cap=100)  # below any full posterior
    report = run_simulation(agents, plan, basis, cfg)
    assert all(set(rec["skipped"]) == {a.agent_id for a in agents} for rec in report.rounds)
    assert all(a.bytes_sent == 0 for a in agents)


def test_reference_consumes_each_scan_once(small_setup):
    env, basis, cfg = small_setup
    agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
    total = sum(len(a.scan_queue) for a in agents)
    assert total == len(env.train_scans)
    report = run_simulation(agents, SimulationPlan(fusion_points=(1.0,)), basis, cfg)
    assert report.union_checksum == report.consumed_checksum


class TestSweep:
    def test_empty_sweep(self, small_env):
        assert size_auc_sweep(small_env, [], []) == []

    def test_grid_quantization_changes_size_not_quality(self, small_env):
        rows = size_auc_sweep(small_env, [], [0.25], cfg=TrainConfig(prior_variance=100.0))
        by_kind = {r.kind: r for r in rows}
        f64, u8 = by_kind["grid_f64"], by_kind["grid_u8"]
        assert abs(f64.auc - u8.auc) < 0.005
        payload_ratio = (f64.bytes - 47) / (u8.bytes - 47)
        assert payload_ratio == 8.0

    def test_fastbhm_rows_report_exact_serialized_bytes(self, small_env):
        cfg = TrainConfig(prior_variance=100.0)
        rows = size_auc_sweep(small_env, [64], [], cfg=cfg)
        (row,) = rows
        basis = basis_for_target(small_env.bounds, 64)
        assert row.bytes == 37 + 16 * len(basis.inducing_points) + 16 * basis.m
        assert 0.0 <= row.auc <= 1.0


def test_render_fresh_model_uniform_half():
    basis = make_grid_basis(0, 4, 0, 2, spacing=1.0, gamma=1.0)
    cfg = TrainConfig()
    probs = render_model(new_map(basis, cfg), basis, (0, 4, 0, 2), 0.5)
    assert probs.shape == (4, 8)
    np.testing.assert_array_equal(probs, 0.5)


def test_quadrant_agents_cover_all_scans(small_setup):
    env, basis, cfg = small_setup
    agents = quadrant_agents(env.train_scans, Point2(10, 10), basis, cfg)
    assigned = sorted(s.scan_id for a in agents for s in a.scan_queue)
    assert assigned == sorted(s.scan_id for s in env.train_scans)


def test_fusion_benchmark_shape():
    env, basis, cfg = make_fusion_benchmark()
    n = sum(len(s.samples) for s in env.train_scans)
    assert 3000 <= n <= 6000  # desk-scale target of ~4k ray samples
    assert 350 <= basis.m <= 500
    assert cfg.prior_variance == 100.0
