"""Counter hardware model, event allocation and measurement backends."""

from .arch import ArchProfile, ProfileError, available_profiles, load_profile
from .backends import (
    BackendError,
    PerfEventBackend,
    ReplayBackend,
    Snapshot,
    backend_from_env,
    load_trace,
    write_trace,
)
from .session import (
    AllocationError,
    CapacityError,
    CatalogError,
    ClassError,
    ConflictError,
    Deltas,
    EventParseError,
    EventSpec,
    MeasurementSession,
    SessionStateError,
    allocate_counters,
    apply_socket_lock,
    parse_event_list,
    wrap_delta,
)
