import numpy as np
import pytest

from crowdtrack import (Scenario, corrupt, derive_velocities, make_scenario,
                        parse_trajectories, write_trajectories)
from crowdtrack.bench import min_pairwise_separation
from crowdtrack.data import (EmptyFile, Frame, MalformedRow,
                             NonMonotoneFrames)


class TestParseCsvFixy:
    def test_three_row_hand_written_file(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("frame,id,x,y\n0,1,1.5,2.5\n0,2,-1.0,0.0\n1,1,1.9,2.5\n")
        s = parse_trajectories(path)
        assert s.n_frames == 2
        assert s.agent_ids == [1, 2]
        assert np.allclose(s.frames[0].position_of(1), [1.5, 2.5])
        assert np.allclose(s.frames[0].position_of(2), [-1.0, 0.0])
        assert np.allclose(s.frames[1].position_of(1), [1.9, 2.5])
        assert s.dt == 0.4

    def test_duplicate_frame_id_names_line(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("frame,id,x,y\n0,1,1.0,2.0\n0,1,1.1,2.0\n")
        with pytest.raises(MalformedRow) as err:
            parse_trajectories(path)
        assert err.value.line_number == 3

    def test_bad_field_count_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,id,x,y\n0,1,1.0\n")
        with pytest.raises(MalformedRow) as err:
            parse_trajectories(path)
        assert err.value.line_number == 2

    def test_non_monotone_frames(self, tmp_path):
        path = tmp_path / "mono.csv"
        path.write_text("frame,id,x,y\n5,1,0.0,0.0\n3,1,0.1,0.0\n")
        with pytest.raises(NonMonotoneFrames):
            parse_trajectories(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("frame,id,x,y\n")
        with pytest.raises(EmptyFile):
            parse_trajectories(path)

    def test_round_trip_is_identity(self, tmp_path):
        s = make_scenario("crossing", 4, seed=3, steps=20, dt=0.25)
        path = tmp_path / "rt.csv"
        write_trajectories(s, path)
        back = parse_trajectories(path)
        assert back.dt == s.dt
        assert back.name == s.name
        assert back.meta == s.meta
        assert back.n_frames == s.n_frames
        for f1, f2 in zip(s.frames, back.frames):
            assert f1.time_index == f2.time_index
            assert [i for i, _ in f1.entries] == [i for i, _ in f2.entries]
            for (_, p1), (_, p2) in zip(f1.entries, f2.entries):
                assert np.array_equal(p1, p2)

    def test_written_bytes_are_stable(self, tmp_path):
        s = make_scenario("head_on", 2, seed=1, steps=10)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trajectories(s, p1)
        write_trajectories(s, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestParseObsmat:
    def test_eth_layout_takes_x_and_y(self, tmp_path):
        path = tmp_path / "obsmat.txt"
        rows = [
            "840 1 10.0 0.0 5.0 1.0 0.0 0.0",
            "840 2 -3.5 0.0 2.25 0.0 0.0 1.0",
            "846 1 10.4 0.0 5.0 1.0 0.0 0.0",
        ]
        path.write_text("\n".join(rows) + "\n")
        s = parse_trajectories(path, fmt="obsmat")
        assert s.n_frames == 2
        assert np.allclose(s.frames[0].position_of(1), [10.0, 5.0])
        assert np.allclose(s.frames[0].position_of(2), [-3.5, 2.25])
        assert s.frames[0].time_index == 0 and s.frames[1].time_index == 1

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("840 1 10.0 0.0 5.0\n")
        with pytest.raises(MalformedRow):
            parse_trajectories(path, fmt="obsmat")


class TestDeriveVelocities:
    def test_forward_difference(self):
        frames = [Frame(0, [(1, np.array([0.0, 0.0]))]),
                  Frame(1, [(1, np.array([0.4, 0.0]))])]
        s = Scenario(dt=0.4, frames=frames)
        tracks = derive_velocities(s)
        assert np.allclose(tracks[1].velocities[0], [1.0, 0.0])
        assert np.allclose(tracks[1].velocities[1], [1.0, 0.0])  # last copies previous

    def test_stationary_agent(self):
        frames = [Frame(t, [(1, np.array([2.0, 2.0]))]) for t in range(4)]
        s = Scenario(dt=0.4, frames=frames)
        tracks = derive_velocities(s)
        assert np.allclose(tracks[1].velocities, 0.0)

    def test_single_frame_agent_flagged(self):
        frames = [Frame(0, [(1, np.array([0.0, 0.0])), (2, np.array([1.0, 1.0]))]),
                  Frame(1, [(1, np.array([0.4, 0.0]))])]
        s = Scenario(dt=0.4, frames=frames)
        tracks = derive_velocities(s)
        assert tracks[2].single_frame
        assert np.allclose(tracks[2].velocities, 0.0)

    def test_integrating_velocities_reconstructs_positions(self):
        rng = np.random.default_rng(7)
        pos = np.cumsum(rng.uniform(-0.3, 0.3, (25, 2)), axis=0)
        frames = [Frame(t, [(1, pos[t])]) for t in range(25)]
        s = Scenario(dt=0.4, frames=frames)
        track = derive_velocities(s)[1]
        rebuilt = [pos[0]]
        for t in range(24):
            rebuilt.append(rebuilt[-1] + track.velocities[t] * 0.4)
        assert np.all(np.abs(np.array(rebuilt) - pos) < 1e-12)


class TestMakeScenario:
    def test_same_seed_identical(self):
        a = make_scenario("circle", 6, seed=9, steps=30)
        b = make_scenario("circle", 6, seed=9, steps=30)
        for f1, f2 in zip(a.frames, b.frames):
            for (_, p1), (_, p2) in zip(f1.entries, f2.entries):
                assert np.array_equal(p1, p2)

    def test_head_on_pair_mirror_and_separated(self):
        s = make_scenario("head_on", 2, seed=0)
        for frame in s.frames:
            p0 = frame.position_of(0)
            p1 = frame.position_of(1)
            assert np.allclose(p0, -p1, atol=1e-9)
        assert min_pairwise_separation(s) >= 0.4 - 1e-9

    def test_circle_agents_reach_antipodal_goals(self):
        s = make_scenario("circle", 8, seed=2)
        last = s.frames[-1]
        for agent_id in range(8):
            goal = s.goal_of(agent_id)
            assert np.linalg.norm(last.position_of(agent_id) - goal) < 0.2

    def test_all_kinds_collision_free(self):
        for kind, n in (("head_on", 4), ("crossing", 4), ("circle", 8), ("corridor", 3)):
            s = make_scenario(kind, n, seed=5)
            assert min_pairwise_separation(s) >= 0.4 - 1e-6, kind

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_scenario("vortex", 3, seed=0)


class TestCorrupt:
    def test_clean_trace_echoes_positions(self):
        s = make_scenario("head_on", 2, seed=0, steps=10)
        trace = corrupt(s, 0.0, (), seed=1)
        for k, frame in enumerate(s.frames):
            for agent_id, pos in frame.entries:
                obs = trace.get(k, agent_id)
                assert obs.tag == "clean"
                assert np.array_equal(obs.position, pos)

    def test_occlusion_bookkeeping(self):
        s = make_scenario("head_on", 2, seed=0, steps=20)
        trace = corrupt(s, 0.0, [(1, 10, 3)], seed=1)
        absent = [k for k in range(s.n_frames)
                  if trace.get(k, 1).position is None]
        assert absent == [10, 11, 12]
        for k in absent:
            assert trace.get(k, 1).tag == "occluded"
            assert trace.get(k, 0).position is not None

    def test_noise_moments(self):
        s = make_scenario("corridor", 5, seed=3, steps=2000)
        trace = corrupt(s, 0.1, (), seed=4)
        deltas = []
        for k, frame in enumerate(s.frames):
            for agent_id, pos in frame.entries:
                obs = trace.get(k, agent_id)
                assert obs.tag == "noisy"
                deltas.append(obs.position - pos)
        deltas = np.array(deltas)
        assert deltas.shape[0] >= 10000
        assert abs(deltas.std() - 0.1) < 0.002

    def test_window_outside_span_rejected(self):
        s = make_scenario("head_on", 2, seed=0, steps=10)
        with pytest.raises(ValueError):
            corrupt(s, 0.0, [(1, 8, 10)], seed=0)

    def test_deterministic_per_seed(self):
        s = make_scenario("head_on", 2, seed=0, steps=10)
        t1 = corrupt(s, 0.2, [(0, 2, 2)], seed=9)
        t2 = corrupt(s, 0.2, [(0, 2, 2)], seed=9)
        for k in range(s.n_frames):
            for agent_id in (0, 1):
                a, b = t1.get(k, agent_id), t2.get(k, agent_id)
                assert a.tag == b.tag
                if a.position is None:
                    assert b.position is None
                else:
                    assert np.array_equal(a.position, b.position)
