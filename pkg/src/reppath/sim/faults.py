from __future__ import annotations

from dataclasses import asdict, dataclass

# crash-style kinds map onto the functional campaign, the rest onto the
# performance one
CRASH_KINDS = ("component_crash", "resource_lock")
PERF_KINDS = ("cpu_burn", "network_latency", "disk_full")
KINDS = CRASH_KINDS + PERF_KINDS

DISK_CALLS = frozenset({"open", "close", "fsync", "unlink", "mmap"})


class FaultError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault.

    ``target`` is a component name for crash/cpu_burn/disk_full, a resource
    name for resource_lock, and ``"a-b"`` (two component names) for
    network_latency.  The fault activates once the target component has
    emitted ``after_events`` request events.
    """

    kind: str
    target: str
    after_events: int = 0
    factor: float = 1.0
    delay_us: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FaultError(f"unknown fault kind {self.kind!r}")
        if self.after_events < 0:
            raise FaultError("after_events must be >= 0")
        if self.kind in ("cpu_burn", "disk_full") and self.factor <= 0:
            raise FaultError("factor must be positive")

    @property
    def link(self) -> tuple[str, str]:
        a, _, b = self.target.partition("-")
        return a, b

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        return cls(**d)

    @classmethod
    def parse(cls, text: str) -> "FaultSpec":
        """Compact CLI form: ``kind:target[@after][*factor][+delay_us]``.

        e.g. ``component_crash:namenode@3``, ``cpu_burn:datanode*3``,
        ``network_latency:gateway-namenode+2000``, ``resource_lock:out_path``.
        """
        kind, sep, rest = text.partition(":")
        if not sep or not rest:
            raise FaultError(f"bad fault {text!r}; expected kind:target")
        after, factor, delay = 0, 1.0, 0.0
        for mark in ("+", "*", "@"):
            rest, sep, val = rest.rpartition(mark) if mark in rest else (rest, "", "")
            if not sep:
                continue
            try:
                if mark == "+":
                    delay = float(val)
                elif mark == "*":
                    factor = float(val)
                else:
                    after = int(val)
            except ValueError as exc:
                raise FaultError(f"bad fault {text!r}: {exc}") from exc
        return cls(kind, rest, after, factor, delay)
