"""Ideal master/worker channel with an exact bit meter.

Every exchanged payload goes through :meth:`Network.send`.  Nothing is
lost or delayed; the only effect of sending is that the meter grows by the
message's logical bit count.  Vector payloads (``full_precision_vector``,
``quantized_vector``) are *data* bits and are what the cost formulas
count.  ``grid_announcement`` messages are *control* bits, kept in the
same ledger but reported apart from data.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "Direction",
    "Kind",
    "Message",
    "BitMeter",
    "Network",
    "FLOAT_BITS",
    "full_precision_bits",
    "nominal_bits",
    "metered_formula_bits",
]

FLOAT_BITS = 64


class Direction(str, Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"


class Kind(str, Enum):
    FULL = "full_precision_vector"
    QUANTIZED = "quantized_vector"
    GRID = "grid_announcement"


DATA_KINDS = (Kind.FULL, Kind.QUANTIZED)


def full_precision_bits(d: int) -> int:
    return FLOAT_BITS * d


@dataclass(frozen=True)
class Message:
    direction: Direction
    kind: Kind
    payload_bits: int
    epoch: int = 0
    inner_step: int = 0
    worker_id: int = -1

    def __post_init__(self):
        if int(self.payload_bits) != self.payload_bits or self.payload_bits < 0:
            raise ValueError(f"payload_bits must be a nonnegative integer, got {self.payload_bits}")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "payload_bits", int(self.payload_bits))


class BitMeter:
    """Running totals plus a ledger keyed by (epoch, direction, kind)."""

    def __init__(self):
        self.uplink_total = 0
        self.downlink_total = 0
        self.ledger: dict[tuple[int, Direction, Kind], int] = defaultdict(int)
        self.message_count = 0

    def record(self, msg: Message, copies: int = 1) -> None:
        if copies < 0:
            raise ValueError("copies must be nonnegative")
        bits = msg.payload_bits * copies
        if msg.direction is Direction.UPLINK:
            self.uplink_total += bits
        else:
            self.downlink_total += bits
        self.ledger[(msg.epoch, msg.direction, msg.kind)] += bits
        self.message_count += copies

    @property
    def total(self) -> int:
        return self.uplink_total + self.downlink_total

    def bits(self, epoch: int | None = None, direction=None, kinds=None) -> int:
        """Sum ledger entries matching the filters (None matches anything)."""
        direction = Direction(direction) if direction is not None else None
        kinds = None if kinds is None else tuple(Kind(k) for k in kinds)
        out = 0
        for (e, dr, kd), b in self.ledger.items():
            if epoch is not None and e != epoch:
                continue
            if direction is not None and dr is not direction:
                continue
            if kinds is not None and kd not in kinds:
                continue
            out += b
        return out

    def data_bits(self, epoch: int | None = None, direction=None) -> int:
        return self.bits(epoch, direction, DATA_KINDS)

    def control_bits(self, epoch: int | None = None, direction=None) -> int:
        return self.bits(epoch, direction, (Kind.GRID,))

    def epochs(self) -> list[int]:
        return sorted({e for e, _, _ in self.ledger})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "direction", "kind", "bits"])
        for (e, dr, kd), b in sorted(self.ledger.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value)):
            writer.writerow([e, dr.value, kd.value, b])
        return buf.getvalue()


class Network:
    """Lossless, in-order, zero-latency channel between master and workers."""

    def __init__(self, meter: BitMeter | None = None):
        self.meter = meter if meter is not None else BitMeter()
        self.epoch = 0
        self.inner_step = 0

    def send(self, msg: Message) -> Message:
        self.meter.record(msg)
        return msg

    def send_many(self, msg: Message, copies: int) -> None:
        """Equivalent to ``copies`` identical sends (used for N-worker fan-in)."""
        if copies < 0:
            raise ValueError("copies must be nonnegative")
        self.meter.record(msg, copies)

    def _msg(self, direction, kind, bits, worker_id=-1) -> Message:
        return Message(direction, kind, bits, self.epoch, self.inner_step, worker_id)

    def upload_full(self, d: int, worker_id: int = -1, copies: int = 1) -> None:
        self.send_many(self._msg(Direction.UPLINK, Kind.FULL, full_precision_bits(d), worker_id), copies)

    def download_full(self, d: int) -> None:
        self.send(self._msg(Direction.DOWNLINK, Kind.FULL, full_precision_bits(d)))

    def upload_quantized(self, bits: int, worker_id: int = -1, copies: int = 1) -> None:
        self.send_many(self._msg(Direction.UPLINK, Kind.QUANTIZED, bits, worker_id), copies)

    def download_quantized(self, bits: int) -> None:
        self.send(self._msg(Direction.DOWNLINK, Kind.QUANTIZED, bits))

    def announce_scalar(self) -> None:
        self.send(self._msg(Direction.DOWNLINK, Kind.GRID, FLOAT_BITS))


_NOMINAL = {
    "sgd": lambda d, N, T, bw, bg: 128 * d,
    "sag": lambda d, N, T, bw, bg: 128 * d,
    "gd": lambda d, N, T, bw, bg: 64 * d * (1 + N),
    "svrg": lambda d, N, T, bw, bg: 64 * d * N + 192 * d * T,
    "m-svrg": lambda d, N, T, bw, bg: 64 * d * N + 192 * d * T,
    "q-sgd": lambda d, N, T, bw, bg: bw + bg,
    "q-sag": lambda d, N, T, bw, bg: bw + bg,
    "q-gd": lambda d, N, T, bw, bg: bw + bg * N,
    "qm-svrg-f": lambda d, N, T, bw, bg: 64 * d * N + 64 * d * T + (bw + bg) * T,
    "qm-svrg-a": lambda d, N, T, bw, bg: 64 * d * N + 64 * d * T + (bw + bg) * T,
    "qm-svrg-f+": lambda d, N, T, bw, bg: 64 * d * N + (bw + bg) * T,
    "qm-svrg-a+": lambda d, N, T, bw, bg: 64 * d * N + (bw + bg) * T,
}


def nominal_bits(algorithm: str, d: int, N: int, T: int = 0, b_w: int = 0, b_g: int = 0) -> int:
    """Per-iteration bit cost as printed for each algorithm family."""
    try:
        fn = _NOMINAL[algorithm.lower()]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    return int(fn(d, N, T, b_w, b_g))


def metered_formula_bits(algorithm: str, d: int, N: int, T: int = 0, b_w: int = 0, b_g: int = 0) -> int:
    """Data bits this simulator actually meters per outer iteration.

    Identical to :func:`nominal_bits` except for the "+" variants, which
    send two quantized gradients per inner step.
    """
    alg = algorithm.lower()
    if alg.endswith("+"):
        return 64 * d * N + (b_w + 2 * b_g) * T
    return nominal_bits(alg, d, N, T, b_w, b_g)
