import math

import numpy as np
import pytest

from opmimic.errors import ValidationError
from opmimic.geometry import Pose, PoseTrack
from opmimic.world import (
    BehaviorKind,
    CommandVector,
    DT,
    LiveSource,
    Mode,
    ReplaySource,
    WaypointWalker,
    WorldState,
    bipod_profile,
    drive_human,
    humanoid_profile,
    step_world,
)


def cmd_with(**kwargs) -> CommandVector:
    from opmimic import world

    v = np.zeros(10)
    for name, val in kwargs.items():
        v[getattr(world, f"C_{name.upper()}")] = val
    return CommandVector(v)


@pytest.fixture
def profile():
    return bipod_profile()


@pytest.fixture
def walking_state():
    return WorldState(mode=Mode.WALKING)


# ---------------------------------------------------------------------------
# step_world


def test_zero_command_only_advances_time(walking_state, profile):
    new, _ = step_world(walking_state, CommandVector.zeros(), Mode.WALKING,
                        BehaviorKind.NONE, profile)
    assert new.time == pytest.approx(walking_state.time + DT)
    np.testing.assert_allclose(new.robot.position[:2], walking_state.robot.position[:2])
    assert new.robot.yaw == pytest.approx(walking_state.robot.yaw)


def test_forward_command_euler_step(profile):
    prof = bipod_profile()
    prof = type(prof)(**{**prof.__dict__, "v_max": 1.0})
    state = WorldState(mode=Mode.WALKING)
    new, _ = step_world(state, cmd_with(fwd=1.0), Mode.WALKING, BehaviorKind.NONE, prof)
    np.testing.assert_allclose(new.robot.position[:2], [0.02, 0.0], atol=1e-12)


def test_turn_rate_integrates_to_closed_form(profile):
    # c2=1 at omega_max=pi/2 for 2 s of 50 Hz steps -> yaw pi
    state = WorldState(mode=Mode.WALKING)
    for _ in range(100):
        state, _ = step_world(state, cmd_with(turn=1.0), Mode.WALKING, BehaviorKind.NONE, profile)
    expected = profile.omega_max * 100 * DT  # = pi
    fwd = np.array([math.cos(expected), math.sin(expected)])
    actual = np.array([math.cos(state.robot.yaw), math.sin(state.robot.yaw)])
    np.testing.assert_allclose(actual, fwd, atol=1e-9)
    assert expected == pytest.approx(math.pi)


def test_step_world_deterministic(walking_state, profile):
    cmd = cmd_with(fwd=0.5, turn=-0.3, head_yaw=0.2)
    a, _ = step_world(walking_state, cmd, Mode.WALKING, BehaviorKind.NONE, profile)
    b, _ = step_world(walking_state, cmd, Mode.WALKING, BehaviorKind.NONE, profile)
    np.testing.assert_array_equal(a.robot.position, b.robot.position)
    np.testing.assert_array_equal(a.head, b.head)


def test_speed_never_exceeds_profile_limits(profile):
    rng = np.random.default_rng(0)
    state = WorldState(mode=Mode.WALKING)
    vcap = math.hypot(profile.v_max, profile.v_lat_max)
    for _ in range(500):
        cmd, _ = CommandVector.clamp(rng.uniform(-1, 1, size=10))
        prev = state.robot.position[:2]
        state, _ = step_world(state, cmd, Mode.WALKING, BehaviorKind.NONE, profile)
        speed = np.linalg.norm(state.robot.position[:2] - prev) / DT
        assert speed <= vcap + 1e-9


def test_speed_scale_channel_saturates_at_limits(profile):
    state = WorldState(mode=Mode.WALKING)
    boosted, _ = step_world(state, cmd_with(fwd=1.0, speed=1.0), Mode.WALKING,
                            BehaviorKind.NONE, profile)
    plain, _ = step_world(state, cmd_with(fwd=1.0), Mode.WALKING, BehaviorKind.NONE, profile)
    # full stick is already at v_max; the boost cannot push past the limit
    np.testing.assert_allclose(boosted.robot.position, plain.robot.position, atol=1e-12)
    half_boost, _ = step_world(state, cmd_with(fwd=0.5, speed=1.0), Mode.WALKING,
                               BehaviorKind.NONE, profile)
    half_plain, _ = step_world(state, cmd_with(fwd=0.5), Mode.WALKING, BehaviorKind.NONE, profile)
    assert half_boost.robot.position[0] > half_plain.robot.position[0]


def test_standing_freezes_base_bit_exact(profile):
    state = WorldState(mode=Mode.STANDING,
                       robot=Pose(np.array([0.3, -0.2, 0.35]), np.array([1.0, 0, 0, 0])))
    cmd = cmd_with(fwd=1.0, lat=1.0, turn=1.0, head_yaw=0.5)
    for _ in range(50):
        new, _ = step_world(state, cmd, Mode.STANDING, BehaviorKind.NONE, profile)
        assert new.robot is state.robot  # same object: bit-exact freeze
        state = new
    # head still slews in standing
    assert state.head[0] != 0.0


def test_head_offsets_slew_limited(profile):
    state = WorldState(mode=Mode.STANDING)
    cmd = cmd_with(head_yaw=1.0)
    new, _ = step_world(state, cmd, Mode.STANDING, BehaviorKind.NONE, profile)
    assert abs(new.head[0]) <= profile.head_rate[0] * DT + 1e-12
    for _ in range(200):
        new, _ = step_world(new, cmd, Mode.STANDING, BehaviorKind.NONE, profile)
    from opmimic.world import HEAD_YAW_RANGE

    assert new.head[0] == pytest.approx(HEAD_YAW_RANGE, abs=1e-9)


def test_raw_out_of_range_command_clamped_and_flagged(walking_state, profile):
    new, report = step_world(walking_state, np.array([2.0, 0, 0, 0, 0, 0, 0, 0, 0, 0]),
                             Mode.WALKING, BehaviorKind.NONE, profile)
    assert report.clamped
    assert report.executed.values[0] == 1.0


def test_behavior_playback_overrides_commands(profile):
    state = WorldState(mode=Mode.WALKING)
    state, report = step_world(state, cmd_with(fwd=1.0), Mode.WALKING, BehaviorKind.SPIN, profile)
    assert report.started_event == BehaviorKind.SPIN
    assert state.behavior == BehaviorKind.SPIN

    # two different external commands during playback give identical states
    a = state
    b = state
    for _ in range(30):
        a, _ = step_world(a, cmd_with(fwd=1.0), Mode.WALKING, BehaviorKind.NONE, profile)
        b, _ = step_world(b, cmd_with(fwd=-1.0, lat=0.7), Mode.WALKING, BehaviorKind.NONE, profile)
        np.testing.assert_array_equal(a.robot.position, b.robot.position)
        np.testing.assert_array_equal(a.robot.orientation, b.robot.orientation)
        np.testing.assert_array_equal(a.head, b.head)


def test_new_event_rejected_while_one_active(profile):
    state = WorldState(mode=Mode.WALKING)
    state, _ = step_world(state, CommandVector.zeros(), Mode.WALKING, BehaviorKind.DANCE, profile)
    state, report = step_world(state, CommandVector.zeros(), Mode.WALKING, BehaviorKind.JUMP, profile)
    assert report.rejected_event == BehaviorKind.JUMP
    assert state.behavior == BehaviorKind.DANCE


def test_behavior_finishes_after_duration(profile):
    state = WorldState(mode=Mode.WALKING)
    state, _ = step_world(state, CommandVector.zeros(), Mode.WALKING, BehaviorKind.JUMP, profile)
    steps = int(profile.clips[BehaviorKind.JUMP].duration / DT) + 2
    for _ in range(steps):
        state, _ = step_world(state, CommandVector.zeros(), Mode.WALKING, BehaviorKind.NONE, profile)
    assert state.behavior == BehaviorKind.NONE
    assert state.behavior_remaining == 0.0


def test_profiles_share_command_interface(profile):
    cmd = cmd_with(fwd=1.0, turn=0.5)
    s_bipod = WorldState(mode=Mode.WALKING)
    s_human = WorldState(mode=Mode.WALKING)
    for _ in range(100):
        s_bipod, _ = step_world(s_bipod, cmd, Mode.WALKING, BehaviorKind.NONE, bipod_profile())
        s_human, _ = step_world(s_human, cmd, Mode.WALKING, BehaviorKind.NONE, humanoid_profile())
    # same commands accepted, different trajectories
    assert np.linalg.norm(s_bipod.robot.position - s_human.robot.position) > 0.1


def test_command_vector_rejects_out_of_range():
    with pytest.raises(ValidationError):
        CommandVector(np.array([1.5, 0, 0, 0, 0, 0, 0, 0, 0, 0]))
    with pytest.raises(ValidationError):
        CommandVector(np.full(10, np.nan))


# ---------------------------------------------------------------------------
# human sources


def test_replay_constant_pose_static():
    pose = Pose(np.array([1.0, 0.5, 1.7]))
    track = PoseTrack.from_poses([pose] * 10)
    src = ReplaySource(track)
    state = WorldState()
    for _ in range(9):
        state, status = drive_human(state, src)
        np.testing.assert_array_equal(state.human.position, pose.position)
    state, status = drive_human(state, src)
    assert status.done


def test_waypoint_walker_deterministic():
    def run(seed):
        walker = WaypointWalker(np.random.default_rng(seed))
        state = WorldState()
        out = []
        for _ in range(500):
            state, _ = drive_human(state, walker)
            out.append(state.human.position.copy())
        return np.array(out)

    np.testing.assert_array_equal(run(7), run(7))
    assert not np.array_equal(run(7), run(8))


def test_walker_speed_samples_in_bounds():
    walker = WaypointWalker(np.random.default_rng(0))
    draws = np.array([walker.sample_speed() for _ in range(100_000)])
    assert draws.min() >= 0.3
    assert draws.max() <= 1.4


def test_walker_stays_plausible_speed_in_rollout():
    walker = WaypointWalker(np.random.default_rng(3))
    state = WorldState()
    prev = None
    for _ in range(2000):
        state, _ = drive_human(state, walker)
        if prev is not None:
            speed = np.linalg.norm(state.human.position[:2] - prev) / DT
            assert speed <= 1.4 + 1e-9
        prev = state.human.position[:2].copy()


def test_live_source_staleness():
    src = LiveSource(stale_after=0.5)
    state = WorldState()
    src.push(Pose(np.array([1.0, 1.0, 1.7])))
    for _ in range(24):  # 0.48 s
        state, status = drive_human(state, src)
        assert not status.stale
    for _ in range(3):
        state, status = drive_human(state, src)
    assert status.stale
    np.testing.assert_array_equal(state.human.position, [1.0, 1.0, 1.7])  # hold-last
