"""Independent oracle for domain expressions.

Reads the fixture YAML with plain PyYAML (no nodeperf import), enumerates
every domain by brute force and evaluates each expression by string
splitting. Writes tests/fixtures/golden/expressions.json, which the test
suite compares against.

Ordering rule inside a domain: physical threads (SMT rank 0) first, then
rank 1, ...; within one rank by core number.
"""

import json
import sys
from pathlib import Path

import yaml

ROOT = Path(__file__).resolve().parents[1] / "fixtures"

CASES = {
    "westmere2x6x2": [
        "N:0-7", "S0:0", "S0:0@S1:0", "S0:0-3@S1:0-3", "N", "S1", "S0:0-5", "S0:6-11",
        "S1:0,2,4", "N:10-13", "C1:0-1", "M0:0,1", "M1", "S0:0-5@S1:0-5", "N:0-23",
        "S1:11", "S0:0@S0:6", "N:12",
        # errors
        "S2:0", "N:24", "S0:0-12", "S0:0@N:0", "S1:0@S1:0", "S0:3-1", "X0:0", "S0:", "S0:0@",
    ],
    "numa4": [
        "M0:0,1@M2:0,1", "N:0-7", "S0:0", "S0:0@S1:0", "S0:0-3@S1:0-3", "M3", "M1:3",
        "C2:0-3", "N:15", "M0:0@M1:0@M2:0@M3:0",
        "M4:0", "M0:4", "M0:0@N:0",
    ],
}


def domains(doc):
    threads = doc["threads"]
    keys = {"S": "socket", "M": "numa", "C": "llc"}
    out = {"N": threads}
    for prefix, field in keys.items():
        for t in threads:
            out.setdefault(f"{prefix}{t[field]}", []).append(t)
    return {
        tag: [t["os_id"] for t in sorted(members, key=lambda t: (t["smt"], t["core"]))]
        for tag, members in out.items()
    }


def evaluate(expr, doms):
    cpus = []
    for term in expr.split("@"):
        if not term:
            return {"error": "parse"}
        tag, colon, sel = term.partition(":")
        if len(tag) < 1 or tag[0] not in "NSMC" or (tag != "N" and not tag[1:].isdigit()) or (tag == "N" and len(tag) != 1):
            return {"error": "parse"}
        if colon and not sel:
            return {"error": "parse"}
        if tag not in doms:
            return {"error": "unknown-domain"}
        members = doms[tag]
        idx = []
        if not colon:
            idx = list(range(len(members)))
        else:
            for item in sel.split(","):
                lo, dash, hi = item.partition("-")
                if not lo.isdigit() or (dash and not hi.isdigit()):
                    return {"error": "parse"}
                lo, hi = int(lo), int(hi) if dash else int(lo)
                if hi < lo:
                    return {"error": "parse"}
                idx.extend(range(lo, hi + 1))
        for i in idx:
            if i >= len(members):
                return {"error": "out-of-range"}
            if members[i] in cpus:
                return {"error": "duplicate"}
            cpus.append(members[i])
    return {"os_ids": cpus}


def main():
    golden = {}
    for fixture, exprs in CASES.items():
        doc = yaml.safe_load((ROOT / "topologies" / f"{fixture}.yaml").read_text())
        doms = domains(doc)
        golden[fixture] = {e: evaluate(e, doms) for e in exprs}
    out = ROOT / "golden" / "expressions.json"
    out.write_text(json.dumps(golden, indent=1) + "\n")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
