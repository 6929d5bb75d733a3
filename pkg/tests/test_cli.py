import json
import socket
import subprocess

from igvsim.cli import EXIT_CONNECT, EXIT_OK, EXIT_SCENE, nav_main, sim_main


def _port_args(ports):
    return [a for k, p in ports.items() for a in (f"--{k}-port", str(p))]


def test_help_runs():
    for prog in ("igvsim", "igvnav"):
        out = subprocess.run([prog, "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "--lidar-port" in out.stdout


def test_scene_with_unknown_key_exits_2(tmp_path, caplog):
    bad = tmp_path / "bad.json"
    bad.write_text('{"geo": {"lat0": 1, "lon0": 2}, "spawn": {"x": 0, "y": 0}, "barrles": []}')
    assert sim_main(["--scene", str(bad), "--fast", "--duration", "1"]) == EXIT_SCENE
    assert "barrles" in caplog.text


def test_missing_scene_file_exits_2(tmp_path):
    assert sim_main(["--scene", str(tmp_path / "nope.json"), "--duration", "1"]) == EXIT_SCENE


def test_invalid_scene_exits_2(tmp_path):
    bad = tmp_path / "overlap.json"
    bad.write_text(json.dumps({"geo": {"lat0": 42, "lon0": -83}, "spawn": {"x": 0, "y": 0},
                               "barrels": [{"x": 0.1, "y": 0}]}))
    assert sim_main(["--scene", str(bad), "--duration", "1"]) == EXIT_SCENE


def test_no_listener_exits_3(ports5, caplog):
    code = sim_main(_port_args(ports5) + ["--fast", "--duration", "1", "--connect-timeout", "0.3"])
    assert code == EXIT_CONNECT
    assert "gps, compass, lidar, camera, motor" in caplog.text


def test_sim_without_channels_runs(capsys):
    assert sim_main(["--fast", "--duration", "1"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["ticks"] == 50 and report["stopped_by"] == "duration"


def test_nav_port_in_use_exits_3(ports5):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", ports5["lidar"]))
    blocker.listen(1)
    try:
        assert nav_main(_port_args(ports5) + ["--host", "127.0.0.1",
                                               "--accept-timeout", "1"]) == EXIT_CONNECT
    finally:
        blocker.close()


def test_nav_accept_timeout_exits_3(ports5):
    assert nav_main(_port_args(ports5) + ["--accept-timeout", "0.3"]) == EXIT_CONNECT


def test_nav_needs_lidar_and_motor(ports5):
    assert nav_main(["--gps-port", str(ports5["gps"]), "--accept-timeout", "0.3"]) == EXIT_SCENE


def test_bad_nav_params_exit_2(tmp_path, ports5):
    p = tmp_path / "p.json"
    p.write_text('{"d_stop": 5}')
    assert nav_main(_port_args(ports5) + ["--params", str(p)]) == EXIT_SCENE
