import ipaddress

import numpy as np
import pytest

from addrnet.core.model import (
    AddressError,
    AddressFamily,
    AddrRecord,
    AsCategory,
    AsMapError,
    NetAddress,
    RoutabilityPolicy,
    categorize_as,
    is_routable,
    load_as_map,
    make_spam_batch,
    write_as_map,
)


def test_parse_v4_with_port():
    addr = NetAddress.parse("1.2.3.4:18333")
    assert addr.family == AddressFamily.V4
    assert addr.value == int(ipaddress.IPv4Address("1.2.3.4"))
    assert addr.port == 18333
    assert str(addr) == "1.2.3.4:18333"


def test_parse_defaults_to_bitcoin_port():
    assert NetAddress.parse("8.8.8.8").port == 8333
    assert NetAddress.parse("2a01::5").port == 8333


def test_parse_bracketed_v6():
    addr = NetAddress.parse("[2a01::1]:9000")
    assert addr.family == AddressFamily.V6
    assert addr.port == 9000
    assert str(addr) == "[2a01::1]:9000"
    assert NetAddress.parse(str(addr)) == addr


@pytest.mark.parametrize(
    "text",
    ["", "1.2.3", "1.2.3.4:70000", "1.2.3.4:x", "[2a01::1", "[::1]x", "host"],
)
def test_parse_rejects_malformed(text):
    with pytest.raises(AddressError):
        NetAddress.parse(text)


def test_checked_rejects_out_of_range():
    with pytest.raises(AddressError):
        NetAddress.v4(1 << 32)
    with pytest.raises(AddressError):
        NetAddress.v4(1, port=-1)


def test_addresses_order_by_family_then_value():
    a = NetAddress.parse("9.9.9.9")
    b = NetAddress.parse("10.0.0.1")
    c = NetAddress.parse("[::2]")
    assert sorted([c, b, a]) == [a, b, c]


def test_addr_record_parse():
    record = AddrRecord.parse("1.2.3.4:8333@1200")
    assert record == AddrRecord(NetAddress.parse("1.2.3.4"), 1200)
    assert str(record) == "1.2.3.4:8333@1200"
    with pytest.raises(AddressError):
        AddrRecord.parse("1.2.3.4:8333")
    with pytest.raises(AddressError):
        AddrRecord.parse("1.2.3.4:8333@-5")


def test_default_policy_fraction():
    policy = RoutabilityPolicy.default()
    assert policy.v4_excluded_fraction == pytest.approx(
        55_837_440 / 2**32, rel=1e-12
    )
    assert policy.expected_routable(5000) == pytest.approx(4934.99, abs=0.01)


@pytest.mark.parametrize(
    "text,routable",
    [
        ("10.1.2.3", False),
        ("192.168.0.1", False),
        ("100.64.0.1", False),
        ("203.0.113.9", False),
        ("8.8.8.8", True),
        ("11.0.0.1", True),
        ("[fe80::1]", False),
        ("[2001:db8::1]", False),
        ("[2a01::1]", True),
    ],
)
def test_is_routable(text, routable):
    policy = RoutabilityPolicy.default()
    assert is_routable(NetAddress.parse(text), policy) is routable


def test_overlapping_blocks_are_merged():
    policy = RoutabilityPolicy.from_cidrs(["10.0.0.0/8", "10.1.0.0/16"])
    assert len(policy.blocks) == 1
    assert policy.v4_excluded_fraction == pytest.approx(2**24 / 2**32)


@pytest.mark.parametrize(
    "text,routable",
    [
        ("9.255.255.255", True),
        ("10.0.0.0", False),
        ("10.255.255.255", False),
        ("11.0.0.0", True),
        ("203.0.113.7", False),
    ],
)
def test_routability_at_block_edges(text, routable):
    policy = RoutabilityPolicy.default()
    value = int(ipaddress.IPv4Address(text))
    assert policy.is_routable_v4(value) is routable


def test_invalid_cidr_raises():
    with pytest.raises(AddressError):
        RoutabilityPolicy.from_cidrs(["10.0.0.0/33"])


def test_spam_batch_is_deterministic_and_distinct():
    first = make_spam_batch(42, 5000, 1000)
    again = make_spam_batch(42, 5000, 1000)
    assert first == again
    assert len({r.address for r in first}) == 5000
    assert {r.timestamp for r in first} == {1000}


def test_spam_batch_honours_exclusions():
    first = make_spam_batch(1, 200, 10)
    used = {r.address.value for r in first}
    second = make_spam_batch(1, 200, 10, exclude=used)
    assert used.isdisjoint(r.address.value for r in second)


def test_spam_batch_routable_share_is_close_to_expected():
    policy = RoutabilityPolicy.default()
    batch = make_spam_batch(7, 100_000, 0)
    share = np.mean([policy.is_routable_v4(r.address.value) for r in batch])
    assert share == pytest.approx(1 - policy.v4_excluded_fraction, abs=0.002)


def test_spam_batch_rejects_bad_arguments():
    with pytest.raises(ValueError):
        make_spam_batch(0, 0, 10)
    with pytest.raises(ValueError):
        make_spam_batch(0, 10, -1)


def test_as_map_round_trip(tmp_path):
    path = tmp_path / "as_map.csv"
    write_as_map(path, {3320: AsCategory.ISP, 16509: AsCategory.CLOUD})
    table = load_as_map(path)
    assert table == {3320: AsCategory.ISP, 16509: AsCategory.CLOUD}
    assert categorize_as(3320, table).category == AsCategory.ISP
    assert categorize_as(1, table).category == AsCategory.UNCATEGORIZED


@pytest.mark.parametrize(
    "body,row",
    [
        ("asn,category\n1,isp\nx,cloud\n", 3),
        ("asn,category\n1,isp\n2,moon\n", 3),
        ("asn,category\n1,isp,extra\n", 2),
        ("asn,category\n1,isp\n1,cloud\n", 3),
        ("number,kind\n1,isp\n", 1),
    ],
)
def test_as_map_errors_name_the_row(tmp_path, body, row):
    path = tmp_path / "as_map.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(AsMapError) as excinfo:
        load_as_map(path)
    assert excinfo.value.row == row
