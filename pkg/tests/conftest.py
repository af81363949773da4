import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dnslab.proxy.labdns import LabServer  # noqa: E402
from dnslab.tlsutil import make_self_signed  # noqa: E402
from dnslab.transports import TransportConfig  # noqa: E402
from dnslab.wire import ResourceRecord, a_record, rdata_from_text  # noqa: E402

FIXTURES = [
    a_record("example.com", "93.184.216.34", 300),
    a_record("a.test", "1.2.3.4", 300),
    a_record("b.test", "5.6.7.8", 120),
    a_record("c.test", "9.9.9.9", 60),
    a_record("a.test", "2001:db8::1", 300),
    ResourceRecord("test", 6, 1, 3600, rdata_from_text(
        6, "ns.test hostmaster.test 1 7200 3600 1209600 45")),
]


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DNSLAB_LIVE") == "1":
        return
    skip = pytest.mark.skip(reason="live network test; set DNSLAB_LIVE=1 to run")
    for item in items:
        if "network" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def certs(tmp_path_factory):
    return make_self_signed(tmp_path_factory.mktemp("tls"))


@pytest.fixture
def lab_factory(certs):
    servers = []

    def make(records=FIXTURES, **kw):
        server = LabServer(records, certs=certs, **kw).start()
        servers.append(server)
        return server

    yield make
    for s in servers:
        s.stop()


@pytest.fixture
def lab(lab_factory):
    return lab_factory()


def do53(lab, **kw):
    return TransportConfig("Do53", "%s:%d" % tuple(lab.udp_addr), **kw)


def dot(lab, **kw):
    return TransportConfig("DoT", "%s:%d" % tuple(lab.dot_addr), ca_file=lab.ca_file, **kw)


def doh(lab, **kw):
    return TransportConfig("DoH", lab.doh_url, ca_file=lab.ca_file, **kw)


@pytest.fixture
def configs():
    return {"do53": do53, "dot": dot, "doh": doh}


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
