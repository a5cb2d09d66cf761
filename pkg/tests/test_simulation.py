import inspect
import random

import numpy as np
import pytest

from cpmapf.grid import Coord, GridMap, make_warehouse
from cpmapf.prediction import make_predictor
from cpmapf.simulation import (MetricsRecord, ScenarioConfig, TraceReplay,
                               TrajectoryDataset, WalkerSim, aggregate,
                               build_instances, controlled_starts,
                               generate_dataset, load_dataset, run_baseline,
                               save_dataset, spawn_cells, write_results_csv)


class TestWalkers:
    def test_redraw_at_goal_then_move_or_wait(self):
        m = GridMap(3, 1, blocked=[], task_spots=[(0, 0), (0, 2)])
        sim = WalkerSim(m, 1, seed=0, starts=[Coord(0, 1)])
        for _ in range(20):
            before = sim.positions[0]
            after = sim.step()[0]
            assert abs(before[0] - after[0]) + abs(before[1] - after[1]) <= 1

    def test_straight_corridor_advances_one(self):
        m = GridMap(6, 1, blocked=[], task_spots=[(0, 5)])
        sim = WalkerSim(m, 1, seed=1, starts=[Coord(0, 0)])
        assert sim.step()[0] == Coord(0, 1)
        assert sim.step()[0] == Coord(0, 2)

    def test_rollout_displacement_bound(self, small_warehouse):
        sim = WalkerSim(small_warehouse, 4, seed=5)
        prev = sim.positions
        for _ in range(1000):
            cur = sim.step()
            for b in prev:
                assert abs(prev[b][0] - cur[b][0]) + abs(prev[b][1] - cur[b][1]) <= 1
                assert small_warehouse.is_passable(cur[b])
            prev = cur

    def test_step_signature_excludes_controlled_state(self):
        # Assumption-2 enforcement: the step function cannot see controlled agents
        params = inspect.signature(WalkerSim.step).parameters
        assert list(params) == ["self"]

    def test_same_seed_same_trace(self, small_warehouse):
        a = WalkerSim(small_warehouse, 3, seed=9)
        b = WalkerSim(small_warehouse, 3, seed=9)
        for _ in range(50):
            assert a.step() == b.step()

    def test_starts_avoid_task_spots(self, small_warehouse):
        sim = WalkerSim(small_warehouse, 5, seed=3)
        for v in sim.positions.values():
            assert v not in small_warehouse.task_spots


class TestTraceReplay:
    def test_replays_and_holds_last(self):
        t = TraceReplay([{0: Coord(0, 0)}, {0: Coord(0, 1)}])
        assert t.positions == {0: Coord(0, 0)}
        assert t.step() == {0: Coord(0, 1)}
        assert t.step() == {0: Coord(0, 1)}


class TestDataset:
    def test_same_seed_identical_different_seed_differs(self, small_warehouse):
        a = generate_dataset(small_warehouse, 3, d=12, T=10, seed=4)
        b = generate_dataset(small_warehouse, 3, d=12, T=10, seed=4)
        c = generate_dataset(small_warehouse, 3, d=12, T=10, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.positions, b.positions))
        assert any(not np.array_equal(x, y) for x, y in zip(a.positions, c.positions))

    def test_splits_partition_indices(self, small_warehouse):
        ds = generate_dataset(small_warehouse, 2, d=20, T=8, seed=1)
        all_idx = sorted(i for s in ds.splits.values() for i in s)
        assert all_idx == list(range(20))
        sizes = {k: len(v) for k, v in ds.splits.items()}
        assert sizes == {"train": 14, "val": 2, "test": 2, "cal": 2}

    def test_paper_scale_count(self, small_warehouse):
        ds = generate_dataset(small_warehouse, 4, d=5000, T=6, seed=0)
        assert len(ds.positions) == 5000

    def test_too_few_trajectories_rejected(self, small_warehouse):
        with pytest.raises(ValueError):
            generate_dataset(small_warehouse, 2, d=5, T=8, seed=1)

    def test_jsonl_roundtrip(self, small_warehouse, tmp_path):
        ds = generate_dataset(small_warehouse, 2, d=10, T=6, seed=2)
        p = tmp_path / "ds.jsonl"
        save_dataset(ds, p)
        again = load_dataset(p)
        assert again.m_agents == 2 and again.T == 6
        assert again.splits == ds.splits
        assert all(np.array_equal(x, y) for x, y in zip(ds.positions, again.positions))

    def test_build_instances_shapes(self, small_warehouse):
        ds = generate_dataset(small_warehouse, 3, d=12, T=20, seed=6)
        inst = build_instances(ds, ds.splits["cal"], make_predictor("astar"),
                               small_warehouse, H=4, anchors=[3, 7], seed=6)
        assert len(inst) == len(ds.splits["cal"])
        preds, acts = inst[0]
        assert set(preds) == set(acts) == {0, 1, 2}
        assert all(len(v) == 4 for v in preds.values())
        assert all(len(v) == 4 for v in acts.values())


class TestBaselines:
    def test_zero_uncontrolled_all_kinds_identical(self, small_warehouse):
        sc = ScenarioConfig(map="warehouse-small", n_controlled=2, m_uncontrolled=0,
                            H=5, w_hat=5, T_hat=20, seed=13)
        rows = {}
        for kind in ("IGNORE", "OBSTACLE", "PRED", "CP"):
            metrics, events = run_baseline(kind, sc)
            rows[kind] = (metrics.throughput, metrics.collisions,
                          metrics.goals_served, events)
        base = rows["IGNORE"]
        for kind, row in rows.items():
            assert row[:3] == base[:3]
            assert row[3] == base[3], f"{kind} events differ"

    def test_obstacle_kind_freezes_current_positions(self, small_warehouse):
        from cpmapf.planner import build_window_inputs
        from cpmapf.prediction import ObservationHistory
        hist = ObservationHistory()
        hist.append({0: Coord(5, 8), 1: Coord(9, 9)})
        obstacles, paths, bundle, sets = build_window_inputs(
            "OBSTACLE", small_warehouse, hist, None, None, t0=0, H=4)
        for h in range(1, 5):
            assert obstacles.by_time[h] == frozenset({Coord(5, 8), Coord(9, 9)})
        assert paths == {} and bundle is None and sets is None

    def test_uncontrolled_trace_identical_across_kinds(self, small_warehouse):
        # Assumption 2: perturbing the controlled side never changes walkers
        sc1 = ScenarioConfig(map="warehouse-small", n_controlled=1, m_uncontrolled=2,
                             H=5, w_hat=5, T_hat=15, seed=21, kind="IGNORE")
        sc2 = ScenarioConfig(map="warehouse-small", n_controlled=3, m_uncontrolled=2,
                             H=5, w_hat=5, T_hat=15, seed=21, kind="IGNORE")
        _, e1 = run_baseline("IGNORE", sc1)
        _, e2 = run_baseline("IGNORE", sc2)
        unc1 = [e["uncontrolled"] for e in e1]
        unc2 = [e["uncontrolled"] for e in e2]
        assert unc1 == unc2

    def test_persistent_overlap_counts_every_timestep(self):
        # walker parked on the agent's goal: once the agent arrives and waits,
        # every further timestep adds one collision
        m = GridMap(5, 1, blocked=[], task_spots=[(0, 4)], name="strip")
        from cpmapf.planner import run_closed_loop
        trace = TraceReplay([{0: Coord(0, 4)}] * 40)
        metrics, events = run_closed_loop(
            m, {0: Coord(0, 0)}, trace, None, None, w=1.0, w_hat=4, H=4,
            T_hat=12, seed=0, kind="IGNORE", warmup=0)
        overlap_steps = sum(1 for e in events
                            if e["controlled"]["0"] == [0, 4])
        assert overlap_steps >= 2
        assert metrics.collision_steps == overlap_steps


class TestAggregate:
    def _record(self, **kw):
        base = dict(map_name="m", kind="CP", n_controlled=2, m_uncontrolled=1,
                    delta=0.05, H=5, w_hat=5, seed=0, throughput=0.5,
                    goals_served=5, collisions=0, collision_steps=0,
                    exclusions=0, service_time={}, makespan=None, runtime_s=1.0,
                    window_runtime_s=[], realtime_violations=0, coverage=None)
        base.update(kw)
        return MetricsRecord(**base)

    def test_single_record_summary_equals_it(self):
        rows = aggregate([self._record()], keys=("map_name", "kind"))
        assert len(rows) == 1
        assert rows[0]["throughput_mean"] == 0.5
        assert rows[0]["collisions_max"] == 0
        assert rows[0]["violation_rate"] == 0

    def test_three_seeds_mean(self):
        recs = [self._record(seed=s, throughput=t, collisions=c)
                for s, t, c in ((0, 0.2, 0), (1, 0.4, 2), (2, 0.6, 1))]
        rows = aggregate(recs, keys=("kind",))
        assert rows[0]["throughput_mean"] == pytest.approx(0.4)
        assert rows[0]["collisions_mean"] == pytest.approx(1.0)
        assert rows[0]["violation_rate"] == pytest.approx(2 / 3)

    def test_grouping_matches_sweep_structure(self):
        recs = [self._record(kind=k, H=h, seed=s)
                for k in ("CP", "PRED") for h in (5, 10) for s in (0, 1)]
        rows = aggregate(recs, keys=("map_name", "kind", "H", "w_hat"))
        assert len(rows) == 4
        assert all(r["n"] == 2 for r in rows)

    def test_csv_columns(self, tmp_path):
        p = tmp_path / "results.csv"
        write_results_csv([self._record()], p)
        header = p.read_text().splitlines()[0]
        assert header == ("map,kind,n_controlled,m_uncontrolled,delta,H,w_hat,"
                          "seed,throughput,collisions,violations,runtime_s,coverage")


class TestScenario:
    def test_json_roundtrip_and_validation(self):
        sc = ScenarioConfig(delta=0.1, H=5, w_hat=10)
        again = ScenarioConfig.from_json(sc.to_json())
        assert again == sc
        with pytest.raises(ValueError):
            ScenarioConfig.from_json('{"delta": 1.5}')
        with pytest.raises(ValueError):
            ScenarioConfig.from_json('{"H": 10, "w_hat": 5}')
        with pytest.raises(ValueError, match="unknown scenario keys"):
            ScenarioConfig.from_json('{"bogus": 1}')

    def test_spawn_cells_distinct_and_passable(self, small_warehouse):
        rng = random.Random(1)
        cells = spawn_cells(small_warehouse, 10, rng)
        assert len(set(cells)) == 10
        assert all(small_warehouse.is_passable(v) for v in cells)
