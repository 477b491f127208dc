#!/usr/bin/env python3
"""Writes the three-tier simulated topology used by the integration tests."""
import json
import sys


def mac(ip):
    return "02:00:" + ":".join(f"{int(o):02x}" for o in ip.split("."))


def hosts(subnet, plan, down):
    out = []
    addr = 10
    for os_label, count, ports in plan:
        for _ in range(count):
            ip = f"10.{subnet}.0.{addr}"
            h = {"address": ip, "os_label": os_label, "open_ports": ports}
            if ip in down:
                h["responds_to_ping"] = False
            if addr % 5 == 0:
                h["hostname"] = f"h{addr}.s{subnet}.example.net"
            out.append(h)
            addr += 1
    return out


LINUX = ["22/tcp", "80/tcp"]
WINDOWS = ["135/tcp", "445/tcp", "3389/tcp"]
TELNET = ["22/tcp", "23/tcp"]
ROUTER = ["22/tcp", "23/tcp"]

down = {"10.2.0.48", "10.2.0.49", "10.3.0.47", "10.3.0.48", "10.3.0.49"}
s1 = hosts(1, [("Linux 4.15", 30, LINUX), ("Microsoft Windows 10", 10, WINDOWS)], down)
s2 = hosts(2, [("Linux 5.4", 25, TELNET), ("Microsoft Windows Server 2019", 15, WINDOWS)], down)
s3 = hosts(3, [("FreeBSD 13.1", 20, LINUX), ("Linux 4.15", 20, LINUX)], down)


def arp(addrs):
    return [{"address": a, "mac": mac(a)} for a in addrs]


def router(name, ifaces, table):
    return {
        "name": name,
        "interfaces": ifaces,
        "os_label": "Cisco IOS 15.2",
        "snmp_community": "public",
        "system_description": f"Cisco IOS Software, {name}",
        "open_ports": ROUTER,
        "arp_table": arp(table),
    }


doc = {
    "name": "three-tier",
    "scanner": {"subnet": "10.0.0.0/24", "address": "10.0.0.250"},
    "routers": [
        router("r1", ["10.0.0.1", "10.1.0.1"], [h["address"] for h in s1] + ["10.1.0.2"]),
        router("r2", ["10.1.0.2", "10.2.0.1"], [h["address"] for h in s2] + ["10.1.0.1", "10.2.0.2"]),
        router("r3", ["10.2.0.2", "10.3.0.1"], [h["address"] for h in s3] + ["10.2.0.1"]),
    ],
    "subnets": [
        {"cidr": "10.0.0.0/24", "gateway": "10.0.0.1"},
        {"cidr": "10.1.0.0/24", "gateway": "10.1.0.1"},
        {"cidr": "10.2.0.0/24", "gateway": "10.2.0.1"},
        {"cidr": "10.3.0.0/24", "gateway": "10.3.0.1"},
    ],
    "hosts": s1 + s2 + s3,
    "acls": [{"src": "0.0.0.0/0", "dst": "10.2.0.0/24", "protocol": "tcp", "port": 23, "action": "deny"}],
}

policy = {
    "name": "three-tier",
    "chain": [
        {"module_id": "nmap", "options": {"profile": "full"}},
        {"module_id": "dgw-analyzer"},
        {"module_id": "nmap", "options": {"profile": "udp161"}},
        {"module_id": "snmpwalk", "options": {"communities": ["public"]}},
    ],
    "iterations": 3,
    "scope": ["10.0.0.0/8"],
}

out = sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/v1"
with open(f"{out}/three-tier.json", "w") as f:
    json.dump(doc, f, indent=2)
    f.write("\n")
with open(f"{out}/policy-three-tier.json", "w") as f:
    json.dump(policy, f, indent=2)
    f.write("\n")
