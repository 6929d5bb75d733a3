"""Command-line entry points: ``igvsim`` (the simulator) and ``igvnav`` (the demo navigator)."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .wire import ChannelKind

EXIT_OK = 0
EXIT_SCENE = 2
EXIT_CONNECT = 3

_PORT_KINDS = (ChannelKind.GPS, ChannelKind.COMPASS, ChannelKind.LIDAR, ChannelKind.CAMERA,
               ChannelKind.MOTOR)


def _install_stop_handlers(stop: threading.Event) -> None:
    def handler(signum, frame):
        logging.getLogger("igvsim").info("received signal %d, stopping", signum)
        stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, handler)
        except ValueError:  # not the main thread (e.g. called from a test)
            pass


def _add_port_flags(ap: argparse.ArgumentParser, required: bool) -> None:
    for kind in _PORT_KINDS:
        ap.add_argument(f"--{kind.value}-port", type=int, required=required, metavar="N",
                        help=f"TCP port of the {kind.value} channel")


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s", stream=sys.stderr)


# -- igvsim ------------------------------------------------------------------

def sim_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="igvsim",
        description="Simulate a skid-steer robot on an obstacle course and stream its sensors "
                    "to robot software listening on one TCP port per channel.")
    ap.add_argument("--scene", default=None,
                    help="scene file (JSON); defaults to the bundled sample course")
    ap.add_argument("--host", default="127.0.0.1", help="host the robot software listens on")
    _add_port_flags(ap, required=False)
    ap.add_argument("--rate", type=_positive, default=50.0, help="physics tick rate in Hz")
    pace = ap.add_mutually_exclusive_group()
    pace.add_argument("--realtime", dest="pacing", action="store_const", const="realtime",
                      help="hold the tick rate against the wall clock (default)")
    pace.add_argument("--fast", dest="pacing", action="store_const", const="fast",
                      help="run as fast as possible")
    ap.set_defaults(pacing="realtime")
    ap.add_argument("--duration", type=_positive, default=None, help="simulated seconds to run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dump-trajectory", metavar="FILE")
    ap.add_argument("--dump-frames", metavar="DIR")
    ap.add_argument("--cmd-timeout", type=_positive, default=None, metavar="S",
                    help="zero the command after S simulated seconds without one")
    ap.add_argument("--connect-timeout", type=_positive, default=10.0, metavar="S")
    ap.add_argument("--drive-params", metavar="FILE",
                    help="JSON object overriding drive parameters (v_max, w_max, a_max, "
                         "alpha_max, footprint_radius)")
    for kind in _PORT_KINDS[:4]:
        ap.add_argument(f"--no-{kind.value}", action="store_true",
                        help=f"do not open the {kind.value} channel")
    ap.add_argument("--lockstep", action="store_true",
                    help="after each lidar scan, wait for a motor command before stepping on "
                         "(deterministic closed loop with igvnav --lockstep)")
    ap.add_argument("--reconnect", action="store_true",
                    help="try to re-establish a channel that drops instead of closing it")
    ap.add_argument("--report", metavar="FILE", help="also write the JSON report to FILE")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load_drive(path: Optional[str]):
    from .dynamics import DriveParams

    if path is None:
        return DriveParams()
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("drive parameter file must hold a JSON object")
    return replace(DriveParams(), **data)


def sim_main(argv: Optional[List[str]] = None, stop: Optional[threading.Event] = None) -> int:
    args = sim_parser().parse_args(argv)
    _setup_logging(args.verbose)
    log = logging.getLogger("igvsim")

    from .scene import SceneError, sample_course_path
    from .sim import ChannelConfig, ConnectionFailure, SimConfig, load_checked_scene, run_simulation

    channels = []
    for kind in _PORT_KINDS:
        port = getattr(args, f"{kind.value}_port")
        disabled = kind is not ChannelKind.MOTOR and getattr(args, f"no_{kind.value}")
        if port is None or disabled:
            continue
        channels.append(ChannelConfig(kind, port, args.host))
    if not channels:
        log.warning("no channel ports given; running with no connections")

    try:
        scene = load_checked_scene(args.scene or sample_course_path())
    except SceneError as e:
        log.error("scene error: %s", e)
        return EXIT_SCENE
    try:
        drive = _load_drive(args.drive_params)
        cfg = SimConfig(scene_path=args.scene, channels=channels, tick_rate=args.rate,
                        pacing=args.pacing, duration=args.duration, seed=args.seed, drive=drive,
                        dump_trajectory=args.dump_trajectory, dump_frames=args.dump_frames,
                        reconnect=args.reconnect, connect_timeout=args.connect_timeout,
                        cmd_timeout=args.cmd_timeout, lockstep=args.lockstep)
    except (ValueError, TypeError, OSError) as e:
        log.error("configuration error: %s", e)
        return EXIT_SCENE

    stop = stop or threading.Event()
    _install_stop_handlers(stop)
    try:
        report = run_simulation(cfg, scene=scene, stop=stop)
    except ConnectionFailure as e:
        log.error("%s", e)
        return EXIT_CONNECT
    except ValueError as e:
        log.error("configuration error: %s", e)
        return EXIT_SCENE
    text = json.dumps(report.to_dict(), indent=2, default=str)
    print(text, flush=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    return EXIT_OK


# -- igvnav ------------------------------------------------------------------

def nav_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="igvnav",
        description="Demo reactive navigator: listens for the simulator on one port per "
                    "channel and steers by widest LIDAR gap plus a camera lane-line bias.")
    ap.add_argument("--host", default="0.0.0.0", help="address to listen on")
    _add_port_flags(ap, required=False)
    ap.add_argument("--control-rate", type=_positive, default=20.0, help="control loop rate in Hz")
    ap.add_argument("--params", metavar="FILE", help="JSON object overriding navigation parameters")
    ap.add_argument("--log", metavar="FILE", help="per-cycle CSV log")
    ap.add_argument("--accept-timeout", type=_positive, default=60.0, metavar="S",
                    help="how long to wait for the simulator to connect")
    ap.add_argument("--lockstep", action="store_true",
                    help="one command per lidar scan (pair with igvsim --lockstep)")
    ap.add_argument("--record", metavar="FILE", help="record each cycle's inputs for replay")
    ap.add_argument("--replay", metavar="FILE",
                    help="run against a recording instead of the simulator; no ports needed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def nav_main(argv: Optional[List[str]] = None, stop: Optional[threading.Event] = None,
             on_listening=None) -> int:
    args = nav_parser().parse_args(argv)
    _setup_logging(args.verbose)
    log = logging.getLogger("igvnav")

    from .client import StartupError
    from .demo import demo_run
    from .nav import NavParams, run_navigation

    try:
        params = NavParams.from_file(args.params) if args.params else NavParams()
    except (ValueError, TypeError, OSError) as e:
        log.error("parameter error: %s", e)
        return EXIT_SCENE

    stop = stop or threading.Event()
    _install_stop_handlers(stop)

    if args.replay:
        from .stubs import ReplaySession

        session = ReplaySession.from_file(args.replay)
        session.start()
        summary, _ = run_navigation(session.sensors, session.motor, params=params,
                                    control_rate=args.control_rate, lockstep=True,
                                    log_file=args.log, stop=stop)
        print(json.dumps(summary.to_dict(), indent=2), flush=True)
        return EXIT_OK

    ports = {k: getattr(args, f"{k.value}_port") for k in _PORT_KINDS
             if getattr(args, f"{k.value}_port") is not None}
    try:
        result = demo_run(ports, params=params, control_rate=args.control_rate, host=args.host,
                          accept_timeout=args.accept_timeout, lockstep=args.lockstep,
                          log_file=args.log, record_path=args.record, stop=stop,
                          on_listening=on_listening)
    except ValueError as e:
        log.error("%s", e)
        return EXIT_SCENE
    except StartupError as e:
        log.error("startup failed: %s", e)
        return EXIT_CONNECT
    print(json.dumps(result.summary.to_dict(), indent=2), flush=True)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(sim_main())
