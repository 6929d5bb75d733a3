import math
import struct
import threading
import time

import pytest

from conftest import free_ports
from harness import RobotStub
from igvsim.messages import MotorCommand
from igvsim.scene import Barrel, GeoOrigin, Goal, Pose, Scene
from igvsim.sim import (ChannelConfig, ConnectionFailure, MemoryLink, SimConfig, Simulator,
                        TRAJECTORY_COLUMNS, run_simulation)
from igvsim.wire import ChannelKind, decode_payload, encode_payload

K = ChannelKind
OPEN = Scene(GeoOrigin(42.678, -83.195), Pose(0, 0))


def motor(lin, ang):
    return encode_payload(K.MOTOR, MotorCommand(lin, ang))


def fast(**kw):
    kw.setdefault("pacing", "fast")
    return SimConfig(**kw)


def test_freshness_counts_per_second():
    link = MemoryLink()
    rep = run_simulation(fast(duration=10.0), scene=OPEN, link=link)
    counts = {k: s.enqueued for k, s in rep.messages.items()}
    assert counts == {"lidar": 100, "gps": 100, "compass": 250, "camera": 100}


def test_duration_gives_exact_ticks():
    rep = run_simulation(fast(duration=2.0), scene=OPEN, link=MemoryLink())
    assert rep.ticks == 100 and rep.sim_time == 2.0 and rep.stopped_by == "duration"


def test_command_held_without_new_frames():
    link = MemoryLink()
    sim = Simulator(OPEN, fast(), link)
    link.push_motor(motor(0.5, 10.0))
    sim.tick()
    for _ in range(200):
        sim.tick()
    assert sim.state.commanded == MotorCommand(0.5, 10.0)
    assert sim.state.v == 0.5


def test_latest_frame_wins_within_a_tick():
    link = MemoryLink()
    sim = Simulator(OPEN, fast(), link)
    for lin in (1.0, -1.0, 0.25):
        link.push_motor(motor(lin, 0.0))
    sim.tick()
    assert sim.state.commanded == MotorCommand(0.25, 0.0)
    assert sim.report.commands_received == 3
    assert sim.state.v == pytest.approx(0.04)  # only one ramp step toward +0.25


def test_malformed_motor_frames_are_skipped():
    link = MemoryLink()
    sim = Simulator(OPEN, fast(), link)
    link.push_motor(motor(0.5, 0.0))
    sim.tick()
    link.push_motor(struct.pack("<ff", math.nan, 0.0))
    link.push_motor(b"\x00" * 5)
    sim.tick()
    assert sim.state.commanded == MotorCommand(0.5, 0.0)
    assert sim.report.command_decode_errors == 2


def test_cmd_timeout_zeroes_after_silence():
    link = MemoryLink()
    sim = Simulator(OPEN, fast(cmd_timeout=0.5), link)
    link.push_motor(motor(0.5, 0.0))
    for _ in range(25):
        sim.tick()
    assert sim.state.commanded == MotorCommand(0.5, 0.0)
    for _ in range(2):
        sim.tick()
    assert sim.state.commanded == MotorCommand()


def test_sensors_see_post_step_state():
    sc = Scene(GeoOrigin(42.678, -83.195), Pose(0, 0), barrels=(Barrel((4.0, 0.0)),))
    link = MemoryLink(keep=True)
    sim = Simulator(sc, fast(script=[(0, MotorCommand(1.0, 0.0))]), link)
    sim.tick()
    scan = decode_payload(K.LIDAR, link.sent[K.LIDAR][0])
    moved = 0.04 * 0.02  # one ramp step of speed for one tick
    assert sim.state.pose.x == pytest.approx(moved)
    assert scan.ranges[341] == pytest.approx(4.0 - 0.28 - 0.3 - moved, abs=1e-6)


def _scripted_run(path, sample_scene):
    script = [(0, MotorCommand(0.8, 0.0)), (60, MotorCommand(0.6, 40.0)),
              (150, MotorCommand(1.2, -70.0)), (260, MotorCommand(0.0, 90.0))]
    cfg = fast(duration=8.0, seed=5, script=script, dump_trajectory=str(path))
    return run_simulation(cfg, scene=sample_scene, link=MemoryLink())


def test_scripted_runs_are_byte_identical(tmp_path, sample_scene):
    _scripted_run(tmp_path / "a.csv", sample_scene)
    _scripted_run(tmp_path / "b.csv", sample_scene)
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    lines = a.decode().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS) and len(lines) == 401


def test_goal_stops_the_loop():
    sc = Scene(GeoOrigin(42.678, -83.195), Pose(0, 0), goal=Goal((3.0, 0.0), 0.5))
    rep = run_simulation(fast(duration=60, script=[(0, MotorCommand(1.0, 0))]), scene=sc,
                         link=MemoryLink())
    assert rep.goal_reached and rep.stopped_by == "goal"
    assert rep.goal_time == rep.ticks / 50.0
    assert rep.ticks < 3000


def test_frame_dump_ppm(tmp_path):
    run_simulation(fast(duration=0.5, dump_frames=str(tmp_path)), scene=OPEN, link=MemoryLink())
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == [f"frame_{i:06d}.ppm" for i in range(5)]
    data = (tmp_path / files[0]).read_bytes()
    assert data.startswith(b"P6\n160 120\n255\n") and len(data) == 15 + 160 * 120 * 3


def test_realtime_pacing_holds_rate():
    t0 = time.monotonic()
    rep = run_simulation(SimConfig(duration=1.0), scene=OPEN, link=MemoryLink())
    assert rep.ticks == 50
    assert 0.95 <= time.monotonic() - t0 < 2.0


# -- over TCP -------------------------------------------------------------------------

def _channels(ports):
    return [ChannelConfig(K(k), p) for k, p in ports.items()]


def test_all_channels_stream_over_tcp(ports5):
    robot = RobotStub(ports5)
    try:
        cfg = SimConfig(channels=_channels(ports5), duration=2.0, connect_timeout=5)
        rep = run_simulation(cfg, scene=OPEN)
    finally:
        time.sleep(0.2)
        robot.close()
    for kind, st in rep.messages.items():
        if kind != "motor":
            assert st.sent == len(robot.frames[kind]) and st.enqueued == st.sent + st.dropped
    assert {k: len(v) for k, v in robot.frames.items()} == {"gps": 20, "compass": 50, "lidar": 20,
                                                            "camera": 20}
    assert decode_payload(K.LIDAR, robot.frames["lidar"][0]).ranges[0] == pytest.approx(5.6)
    assert rep.closed_channels == []


def test_motor_listener_absent_names_motor(ports5):
    robot = RobotStub({k: p for k, p in ports5.items() if k != "motor"})
    try:
        with pytest.raises(ConnectionFailure) as ei:
            run_simulation(fast(channels=_channels(ports5), duration=1, connect_timeout=0.5),
                           scene=OPEN)
    finally:
        robot.close()
    assert ei.value.failed == [K.MOTOR] and "motor" in str(ei.value)


def test_stalled_camera_does_not_slow_physics(ports5, sample_scene):
    def run(stall):
        robot = RobotStub(ports5, stall=("camera",) if stall else (), rcvbuf=4096)
        try:
            cfg = fast(channels=_channels(ports5), duration=30.0, connect_timeout=5)
            return run_simulation(cfg, scene=sample_scene)
        finally:
            robot.close()

    stalled = run(True)
    ports5.update(zip(ports5, free_ports(5)))
    normal = run(False)
    cam = stalled.messages["camera"]
    assert stalled.ticks == normal.ticks == 1500
    assert cam.enqueued == 300 and cam.dropped > 0 and cam.sent < 300
    assert stalled.messages["lidar"].sent == 300 and stalled.messages["lidar"].dropped == 0
    # physics pace is not tied to the camera: the stalled run is not markedly slower
    assert stalled.wall_time < 1.5 * normal.wall_time + 0.5


def test_camera_closing_mid_run_is_isolated(ports5):
    robot = RobotStub(ports5, close_after={"camera": 5})
    try:
        rep = run_simulation(fast(channels=_channels(ports5), duration=5.0, connect_timeout=5,
                                  pacing="realtime", tick_rate=200.0), scene=OPEN)
    finally:
        time.sleep(0.2)
        robot.close()
    assert rep.ticks == 1000
    assert rep.closed_channels == ["camera"]
    assert len(robot.frames["lidar"]) == 50 and len(robot.frames["compass"]) == 125


def test_motor_commands_over_tcp_drive_the_robot(ports5):
    robot = RobotStub(ports5)
    stop = threading.Event()
    out = {}
    t = threading.Thread(target=lambda: out.setdefault(
        "rep", run_simulation(SimConfig(channels=_channels(ports5), duration=3.0), scene=OPEN, stop=stop)))
    t.start()
    try:
        robot.wait_connected()
        robot.send_motor(1.0, 0.0)
        t.join(10)
    finally:
        robot.close()
    rep = out["rep"]
    assert rep.commands_received == 1
    last = decode_payload(K.GPS, robot.frames["gps"][-1])
    assert last.lon > OPEN.geo.lon0
