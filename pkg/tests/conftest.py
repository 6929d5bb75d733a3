import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def free_ports(n: int):
    """n distinct TCP ports that are free right now on 127.0.0.1."""
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


@pytest.fixture
def ports5():
    kinds = ("gps", "compass", "lidar", "camera", "motor")
    return dict(zip(kinds, free_ports(5)))


@pytest.fixture(scope="session")
def sample_scene():
    from igvsim.scene import load_sample_course

    return load_sample_course()
