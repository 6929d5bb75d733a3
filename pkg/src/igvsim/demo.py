"""End-to-end demo: listen for the simulator, then run the reactive navigator."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Mapping, Optional

from .client import serve_and_accept
from .nav import ControlLoop, NavParams, NavSummary
from .stubs import StreamRecorder
from .wire import ChannelKind

log = logging.getLogger(__name__)


@dataclass
class DemoResult:
    summary: NavSummary
    loop: ControlLoop


def demo_run(ports: Mapping, params: NavParams = NavParams(), control_rate: float = 20.0,
             host: str = "0.0.0.0", accept_timeout: Optional[float] = 30.0,
             lockstep: bool = False, log_file=None, record_path=None,
             stop: Optional[threading.Event] = None, on_listening=None) -> DemoResult:
    """Serve the channels in ``ports`` (lidar and motor required) and navigate until
    the simulator disconnects or ``stop`` is set.

    ``on_listening`` is called with no arguments once every port is bound,
    which lets a caller start the simulator only when connecting can succeed.
    """
    kinds = {ChannelKind(k) for k in ports}
    missing = {ChannelKind.LIDAR, ChannelKind.MOTOR} - kinds
    if missing:
        raise ValueError("navigation needs the lidar and motor channels")
    channels = serve_and_accept(ports, host=host, accept_timeout=accept_timeout,
                                on_listening=on_listening)
    recorder = StreamRecorder(record_path) if record_path else None
    try:
        loop = ControlLoop(channels.sensor(ChannelKind.LIDAR), channels.motor,
                           camera=channels.sensor(ChannelKind.CAMERA),
                           gps=channels.sensor(ChannelKind.GPS), params=params,
                           control_rate=control_rate, lockstep=lockstep, log_file=log_file,
                           recorder=recorder)
        summary = loop.run(stop=stop)
        summary.closed_channels = channels.closed_channels()
    finally:
        channels.close()
        if recorder is not None:
            recorder.close()
    log.info("navigation finished: %s", summary.to_dict())
    return DemoResult(summary, loop)

