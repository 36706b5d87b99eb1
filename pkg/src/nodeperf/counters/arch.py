"""Per-architecture counter inventories and event catalogs.

Profiles ship as YAML files under ``nodeperf/data/arch``::

    name: core2
    counter_width: 48
    general: [PMC0, PMC1]
    fixed: {FIXC0: INSTR_RETIRED_ANY, FIXC1: CPU_CLK_UNHALTED_CORE}
    uncore: []
    events:
      SIMD_COMP_INST_RETIRED_PACKED_DOUBLE: {classes: [general], config: 0x0480ca}

Counter classes are ``general``, ``fixed`` and ``uncore``. Anything in an
event entry besides ``classes`` is an opaque payload for the backend.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import yaml

__all__ = [
    "ArchProfile",
    "CatalogEntry",
    "ProfileError",
    "available_profiles",
    "load_profile",
    "load_profile_file",
    "profile_dir",
]

CLASSES = ("general", "fixed", "uncore")
DEFAULT_WIDTH = 48
CYCLES_EVENT = "CPU_CLK_UNHALTED_CORE"
INSTR_EVENT = "INSTR_RETIRED_ANY"


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    classes: frozenset
    payload: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ArchProfile:
    name: str
    general_counters: tuple[str, ...]
    fixed_counters: dict  # counter -> bound event
    uncore_counters: tuple[str, ...]
    catalog: dict  # event name -> CatalogEntry
    counter_width: int = DEFAULT_WIDTH
    cycles_event: str = CYCLES_EVENT

    def counter_class(self, counter: str) -> str | None:
        if counter in self.general_counters:
            return "general"
        if counter in self.fixed_counters:
            return "fixed"
        if counter in self.uncore_counters:
            return "uncore"
        return None

    @property
    def fixed_events(self) -> tuple[str, ...]:
        return tuple(self.fixed_counters.values())

    def is_uncore(self, event: str) -> bool:
        entry = self.catalog.get(event)
        return entry is not None and entry.classes == frozenset({"uncore"})

    def __hash__(self):
        return hash(self.name)


def profile_dir() -> Path:
    override = os.environ.get("NODEPERF_ARCH_DIR")
    if override:
        return Path(override)
    return Path(str(resources.files("nodeperf") / "data" / "arch"))


def available_profiles() -> list[str]:
    return sorted(p.stem for p in profile_dir().glob("*.yaml"))


def _profile_from_document(doc: dict, source: str) -> ArchProfile:
    if not isinstance(doc, dict):
        raise ProfileError(f"{source}: expected a mapping")
    try:
        name = doc["name"]
        general = tuple(doc.get("general") or ())
        fixed = dict(doc.get("fixed") or {})
        uncore = tuple(doc.get("uncore") or ())
        raw_events = doc["events"]
    except KeyError as exc:
        raise ProfileError(f"{source}: missing field {exc.args[0]!r}") from None
    if not raw_events:
        raise ProfileError(f"{source}: event catalog is empty")
    counters = list(general) + list(fixed) + list(uncore)
    if len(set(counters)) != len(counters):
        raise ProfileError(f"{source}: counter names must be unique")
    catalog = {}
    for ev, entry in raw_events.items():
        entry = dict(entry or {})
        classes = frozenset(entry.pop("classes", ["general"]))
        bad = classes - set(CLASSES)
        if bad or not classes:
            raise ProfileError(f"{source}: event {ev}: bad counter classes {sorted(bad)}")
        catalog[ev] = CatalogEntry(ev, classes, entry)
    for counter, ev in fixed.items():
        if ev not in catalog:
            catalog[ev] = CatalogEntry(ev, frozenset({"fixed"}))
        elif "fixed" not in catalog[ev].classes:
            raise ProfileError(f"{source}: fixed counter {counter} bound to non-fixed event {ev}")
    width = int(doc.get("counter_width", DEFAULT_WIDTH))
    if not 1 <= width <= 64:
        raise ProfileError(f"{source}: counter_width must be 1..64")
    return ArchProfile(
        name, general, fixed, uncore, catalog, width, doc.get("cycles_event", CYCLES_EVENT)
    )


def load_profile_file(path) -> ArchProfile:
    with open(path) as fh:
        return _profile_from_document(yaml.safe_load(fh), str(path))


@lru_cache(maxsize=None)
def _load_cached(directory: str, name: str) -> ArchProfile:
    path = Path(directory) / f"{name}.yaml"
    if not path.exists():
        raise ProfileError(f"unknown architecture profile {name!r}")
    return load_profile_file(path)


def load_profile(name: str) -> ArchProfile:
    return _load_cached(str(profile_dir()), name)
