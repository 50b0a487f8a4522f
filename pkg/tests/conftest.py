import sys

import pytest

from addrnet.core.engine import PeerRole, PeerSpec
from addrnet.core.model import AsInfo, NetAddress

BASE_V4 = 0x0B000001  # 11.0.0.1


# each test runs on cwd to its temp dir
@pytest.fixture(autouse=True)
def go_to_tmpdir(request):
    # Get the fixture dynamically by its name.
    tmpdir = request.getfixturevalue("tmpdir")
    # ensure local test created packages can be imported
    sys.path.insert(0, str(tmpdir))
    # Chdir only for the duration of the test.
    with tmpdir.as_cwd():
        yield


@pytest.fixture
def home(tmp_path, monkeypatch):
    """Point ~ at a temp dir so config overlays and logs stay isolated."""
    monkeypatch.setenv("HOME", str(tmp_path))
    monkeypatch.delenv("ADDRNET_OUT_DIR", raising=False)
    return tmp_path


@pytest.fixture
def make_spec():
    """Factory for PeerSpecs with one sequential IPv4 address each."""

    def make(
        peer_id,
        *,
        asn=None,
        reachable=True,
        max_connections=125,
        outgoing_target=10,
        role=PeerRole.CORE,
        addresses=1,
        name="",
    ):
        addrs = tuple(
            NetAddress.v4(BASE_V4 + peer_id * 16 + i) for i in range(addresses)
        )
        return PeerSpec(
            peer_id=peer_id,
            addresses=addrs,
            reachable=reachable,
            max_connections=max_connections,
            outgoing_target=outgoing_target,
            as_info=AsInfo(peer_id if asn is None else asn),
            role=role,
            name=name,
        )

    return make
