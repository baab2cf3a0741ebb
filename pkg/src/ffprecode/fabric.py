"""Simulated feedforward fabric for decentralized precoding.

The antenna array is split into ``C`` clusters, each with a worker that only
ever sees its own channel block ``H_c``. Cluster 0 is the master: it holds
the symbol stream and, for PD-WF, hosts the whitening node.

Workers are generators that talk to a tiny runtime through two requests,
``Send`` and ``Recv``. The same worker code runs under a deterministic
round-robin scheduler (``mode="serial"``) or with one OS thread per cluster
and queue-backed channels (``mode="threaded"``). Reductions follow a fixed
binomial tree, so both modes give bit-identical outputs and ledgers.

Every inter-node transfer is logged in a ``MessageLedger`` as a count of
complex scalars.
"""

from __future__ import annotations

import csv
import io
import json
import math
import queue
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Generator, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, PrecodingError
from .numerics import CDTYPE, gram
from .precoding import (
    PrecoderConfig,
    fd_precode,
    fd_prepare,
    local_matched_filter,
    whiten,
    whitening_prepare,
)

PAYLOAD_KINDS = ("gram_partial", "whitened_vec", "symbol_vec", "local_out")
INTER_CLUSTER_KINDS = ("gram_partial", "whitened_vec", "symbol_vec")
BYTES_PER_SCALAR = 8
LEDGER_COLUMNS = (
    "source",
    "destination",
    "payload_kind",
    "complex_scalars",
    "bytes_at_8B_per_scalar",
    "hop_depth",
)

DEFAULT_SUBCARRIERS = 1200
DEFAULT_SLOTS = 7


@dataclass(frozen=True)
class WorkloadShape:
    """Batch of ``n_subcarriers x n_slots`` symbol vectors sharing one channel per subcarrier."""

    n_subcarriers: int = DEFAULT_SUBCARRIERS
    n_slots: int = DEFAULT_SLOTS

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_slots < 1:
            raise InvalidInputError(
                f"workload needs N_sc >= 1 and K >= 1, got {self.n_subcarriers}, {self.n_slots}"
            )


@dataclass(frozen=True)
class ClusterPartition:
    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(b) for b in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise InvalidInputError("partition needs at least one cluster")
        if any(b < 1 for b in sizes):
            raise InvalidInputError(f"every cluster needs >= 1 antenna, got {sizes}")

    @classmethod
    def equal(cls, bs_antennas: int, n_clusters: int) -> "ClusterPartition":
        if n_clusters < 1 or bs_antennas % n_clusters:
            raise InvalidInputError(
                f"cannot split B={bs_antennas} into {n_clusters} equal clusters"
            )
        return cls((bs_antennas // n_clusters,) * n_clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @property
    def bs_antennas(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for b in self.sizes:
            out.append(acc)
            acc += b
        return tuple(out)

    @property
    def weights(self) -> tuple[float, ...]:
        B = self.bs_antennas
        return tuple(b / B for b in self.sizes)


def node_name(cluster: int) -> str:
    return f"cluster{cluster}"


# -- ledger -----------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    source: str
    destination: str
    payload_kind: str
    complex_scalars: int
    hop_depth: int
    order: tuple = field(default=(), compare=False, repr=False)

    @property
    def nbytes(self) -> int:
        return self.complex_scalars * BYTES_PER_SCALAR


@dataclass(frozen=True)
class LatencyModel:
    """Affine per-message cost ``alpha + seconds_per_byte * bytes``."""

    alpha: float = 0.0
    seconds_per_byte: float = 0.0

    def __call__(self, msg: Message) -> float:
        return self.alpha + self.seconds_per_byte * msg.nbytes


class MessageLedger:
    """Thread-safe log of every message moved through the fabric.

    Records are kept in schedule order (not arrival order), so the ledger of
    a threaded run is identical to that of a serial run.
    """

    def __init__(self):
        self._records: list[Message] = []
        self._lock = threading.Lock()
        self._runs = 0

    def next_run(self) -> int:
        """Id that keeps records of successive runs sharing this ledger in order."""
        with self._lock:
            self._runs += 1
            return self._runs

    def record(self, source, destination, payload_kind, complex_scalars, hop_depth, order=()):
        if payload_kind not in PAYLOAD_KINDS:
            raise InvalidInputError(f"unknown payload kind {payload_kind!r}")
        msg = Message(
            source, destination, payload_kind, int(complex_scalars), int(hop_depth), tuple(order)
        )
        with self._lock:
            self._records.append(msg)
        return msg

    @property
    def records(self) -> list[Message]:
        with self._lock:
            return sorted(self._records, key=lambda m: m.order)

    def __len__(self):
        return len(self._records)

    def total(self, kind: str | None = None) -> int:
        kinds = INTER_CLUSTER_KINDS if kind is None else (kind,)
        return sum(m.complex_scalars for m in self.records if m.payload_kind in kinds)

    def count(self, kind: str) -> int:
        return sum(1 for m in self.records if m.payload_kind == kind)

    def depth(self, kind: str) -> int:
        return max((m.hop_depth for m in self.records if m.payload_kind == kind), default=0)

    def per_link(self, kind: str | None = None) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = defaultdict(int)
        for m in self.records:
            if kind is None or m.payload_kind == kind:
                out[(m.source, m.destination)] += m.complex_scalars
        return dict(out)

    def critical_path_latency(self, model: LatencyModel) -> float:
        """Latency with messages of the same kind and tree level in flight together."""
        rounds: dict[tuple[str, int], float] = {}
        for m in self.records:
            if m.payload_kind not in INTER_CLUSTER_KINDS:
                continue
            key = (m.payload_kind, m.hop_depth)
            rounds[key] = max(rounds.get(key, 0.0), model(m))
        return sum(rounds.values())

    def rows(self) -> list[dict]:
        return [
            {
                "source": m.source,
                "destination": m.destination,
                "payload_kind": m.payload_kind,
                "complex_scalars": m.complex_scalars,
                "bytes_at_8B_per_scalar": m.nbytes,
                "hop_depth": m.hop_depth,
            }
            for m in self.records
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": list(LEDGER_COLUMNS), "messages": self.rows()}, indent=2)


# -- schedules --------------------------------------------------------------


def reduce_schedule(n_clusters: int) -> list[list[tuple[int, int]]]:
    """Binomial adder tree rooted at cluster 0, as levels of ``(src, dst)`` edges.

    ``C - 1`` edges in ``ceil(log2 C)`` levels.
    """
    levels = []
    distance = 1
    while distance < n_clusters:
        level = [
            (rank + distance, rank)
            for rank in range(0, n_clusters, 2 * distance)
            if rank + distance < n_clusters
        ]
        levels.append(level)
        distance *= 2
    return levels


def broadcast_schedule(n_clusters: int, tree: bool = False) -> list[list[tuple[int, int]]]:
    """Edges for a broadcast from cluster 0: a one-hop star, or the mirrored reduce tree."""
    if n_clusters == 1:
        return []
    if not tree:
        return [[(0, c) for c in range(1, n_clusters)]]
    return [[(dst, src) for src, dst in level] for level in reversed(reduce_schedule(n_clusters))]


def tree_depth(n_clusters: int) -> int:
    return math.ceil(math.log2(n_clusters)) if n_clusters > 1 else 0


# -- runtime ----------------------------------------------------------------


@dataclass
class Send:
    dst: int
    kind: str
    payload: np.ndarray
    hop_depth: int
    order: tuple


@dataclass
class Recv:
    src: int


Worker = Generator[object, object, object]


class FabricDeadlock(PrecodingError):
    pass


def _log(ledger: MessageLedger, src: int, req: Send):
    ledger.record(
        node_name(src), node_name(req.dst), req.kind, req.payload.size, req.hop_depth, req.order
    )


def _run_serial(workers: dict[int, Worker], ledger: MessageLedger) -> dict[int, object]:
    mailboxes: dict[tuple[int, int], deque] = defaultdict(deque)
    pending: dict[int, object] = {}
    inbox: dict[int, object] = {c: None for c in workers}
    results: dict[int, object] = {}
    live = dict(workers)
    while live:
        progressed = False
        for c in sorted(live):
            gen = live[c]
            while True:
                req = pending.pop(c, None)
                if req is None:
                    try:
                        req = gen.send(inbox[c])
                    except StopIteration as stop:
                        results[c] = stop.value
                        del live[c]
                        progressed = True
                        break
                    inbox[c] = None
                if isinstance(req, Send):
                    _log(ledger, c, req)
                    mailboxes[(c, req.dst)].append(req.payload)
                    progressed = True
                    continue
                box = mailboxes[(req.src, c)]
                if not box:
                    pending[c] = req
                    break
                inbox[c] = box.popleft()
                progressed = True
        if not progressed:
            raise FabricDeadlock(f"workers {sorted(live)} are all blocked on receives")
    return results


def _run_threaded(
    workers: dict[int, Worker], ledger: MessageLedger, timeout: float = 60.0
) -> dict[int, object]:
    n = len(workers)
    channels = {(a, b): queue.Queue() for a in range(n) for b in range(n) if a != b}
    results: dict[int, object] = {}
    errors: list[BaseException] = []

    def drive(c: int, gen: Worker):
        value = None
        try:
            while True:
                try:
                    req = gen.send(value)
                except StopIteration as stop:
                    results[c] = stop.value
                    return
                value = None
                if isinstance(req, Send):
                    _log(ledger, c, req)
                    channels[(c, req.dst)].put(req.payload)
                else:
                    value = channels[(req.src, c)].get(timeout=timeout)
        except BaseException as exc:  # surfaced in the caller's thread
            errors.append(exc)

    threads = [
        threading.Thread(target=drive, args=(c, gen), name=node_name(c), daemon=True)
        for c, gen in workers.items()
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        exc = errors[0]
        if isinstance(exc, queue.Empty):
            raise FabricDeadlock("a worker timed out waiting for a message") from exc
        raise exc
    return results


def run_workers(workers: dict[int, Worker], ledger: MessageLedger, mode: str = "serial"):
    if mode == "serial":
        return _run_serial(workers, ledger)
    if mode == "threaded":
        return _run_threaded(workers, ledger)
    raise InvalidInputError(f"unknown fabric mode {mode!r}")


# -- operations -------------------------------------------------------------


def _as_channel_stack(H) -> np.ndarray:
    H = np.asarray(H, dtype=CDTYPE)
    if H.ndim == 2:
        H = H[None]
    if H.ndim != 3:
        raise InvalidInputError(f"channel must be (U, B) or (N_sc, U, B), got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidInputError("channel contains NaN or Inf entries")
    return H


def partition_channel(H, part: ClusterPartition) -> list[np.ndarray]:
    """Split the columns (antennas) of ``H`` into the partition's blocks.

    Works on a single ``U x B`` matrix or a per-subcarrier stack.
    """
    H = np.asarray(H, dtype=CDTYPE)
    if H.shape[-1] != part.bs_antennas:
        raise InvalidInputError(
            f"partition covers {part.bs_antennas} antennas, channel has {H.shape[-1]}"
        )
    return [H[..., o : o + b] for o, b in zip(part.offsets, part.sizes)]


def gram_reduce_tree(local_grams: Sequence[np.ndarray], ledger: MessageLedger) -> np.ndarray:
    """Sum partial Gram matrices over the binomial adder tree, logging each edge."""
    if not local_grams:
        raise InvalidInputError("gram_reduce_tree needs at least one partial Gram")
    shape = np.shape(local_grams[0])
    if any(np.shape(g) != shape for g in local_grams):
        raise InvalidInputError("partial Gram matrices differ in shape")
    partial = [np.asarray(g, dtype=CDTYPE) for g in local_grams]
    run = ledger.next_run()
    for depth, level in enumerate(reduce_schedule(len(partial)), start=1):
        for src, dst in level:
            ledger.record(
                node_name(src), node_name(dst), "gram_partial", partial[src].size, depth,
                order=(run, 0, depth, src),
            )
            partial[dst] = partial[dst] + partial[src]
    return partial[0]


def _reduce_in_worker(c: int, local: np.ndarray, n_clusters: int, run: int):
    """Worker-side half of ``gram_reduce_tree``; returns the full sum at cluster 0."""
    partial = local
    for depth, level in enumerate(reduce_schedule(n_clusters), start=1):
        for src, dst in level:
            if src == c:
                yield Send(dst, "gram_partial", partial, depth, (run, 0, depth, src))
                return None
            if dst == c:
                received = yield Recv(src)
                partial = partial + received
    return partial


def _broadcast_in_worker(c: int, value, kind: str, n_clusters: int, tree: bool, run: int):
    """Worker-side broadcast from cluster 0; every cluster returns the value."""
    for depth, level in enumerate(broadcast_schedule(n_clusters, tree), start=1):
        for src, dst in level:
            if dst == c:
                value = yield Recv(src)
        for src, dst in level:
            if src == c:
                yield Send(dst, kind, value, depth, (run, 1, depth, dst))
    return value


def _emit_local(ledger: MessageLedger, c: int, x: np.ndarray, run: int):
    ledger.record(node_name(c), f"antennas{c}", "local_out", x.size, 0, order=(run, 2, 0, c))


@dataclass
class FabricRun:
    """Result of a decentralized precoding run.

    ``outputs[c]`` has shape ``(N_sc, K, B_c)``. ``states`` holds the
    per-subcarrier precoder states: one ``CentralWfState`` per subcarrier for
    PD-WF, a list of ``LocalWfState`` (one per cluster) per subcarrier for
    FD-WF.
    """

    outputs: list[np.ndarray]
    ledger: MessageLedger
    states: list

    def __iter__(self):
        return iter((self.outputs, self.ledger))

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.outputs, axis=-1)


def _check_frame(symbols, n_sub: int, users: int) -> np.ndarray:
    s = np.asarray(symbols, dtype=CDTYPE)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[0] != n_sub or s.shape[2] != users:
        raise InvalidInputError(
            f"symbols must be (N_sc={n_sub}, K, U={users}), got {np.shape(symbols)}"
        )
    return s


def _frame_symbols(frame) -> np.ndarray:
    return frame.symbols if hasattr(frame, "symbols") else frame


def run_pd_wf(
    H,
    part: ClusterPartition,
    cfg: PrecoderConfig,
    frame,
    ledger: MessageLedger | None = None,
    mode: str = "serial",
    tree_broadcast: bool = False,
) -> FabricRun:
    """Partially decentralized WF precoding.

    Clusters compute local Grams and feed them up the adder tree; cluster 0
    inverts the regularized Gram once per subcarrier, whitens every symbol
    vector of the frame and broadcasts the whitened vectors; each cluster then
    applies its local matched filter.
    """
    H = _as_channel_stack(H)
    n_sub, U, B = H.shape
    if B < U:
        raise InvalidInputError(f"PD-WF needs B >= U (B={B}, U={U})")
    s = _check_frame(_frame_symbols(frame), n_sub, U)
    ledger = MessageLedger() if ledger is None else ledger
    shards = partition_channel(H, part)
    C = part.n_clusters
    run = ledger.next_run()

    def worker(c: int):
        H_c = shards[c]
        G = yield from _reduce_in_worker(c, gram(H_c), C, run)
        states = z = None
        if c == 0:
            states = [whitening_prepare(G[w], cfg) for w in range(n_sub)]
            z = np.stack([whiten(states[w], s[w]) for w in range(n_sub)])
        z = yield from _broadcast_in_worker(c, z, "whitened_vec", C, tree_broadcast, run)
        x_c = np.stack([local_matched_filter(H_c[w], z[w]) for w in range(n_sub)])
        _emit_local(ledger, c, x_c, run)
        return x_c, states

    results = run_workers({c: worker(c) for c in range(C)}, ledger, mode)
    outputs = [results[c][0] for c in range(C)]
    return FabricRun(outputs=outputs, ledger=ledger, states=results[0][1])


def run_fd_wf(
    H,
    part: ClusterPartition,
    cfg: PrecoderConfig,
    frame,
    ledger: MessageLedger | None = None,
    mode: str = "serial",
    tree_broadcast: bool = False,
) -> FabricRun:
    """Fully decentralized WF precoding: broadcast ``s``, precode locally."""
    H = _as_channel_stack(H)
    n_sub, U, _ = H.shape
    s = _check_frame(_frame_symbols(frame), n_sub, U)
    ledger = MessageLedger() if ledger is None else ledger
    shards = partition_channel(H, part)
    C = part.n_clusters
    run = ledger.next_run()

    def worker(c: int):
        H_c = shards[c]
        states = [fd_prepare(H_c[w], cfg, C, c) for w in range(n_sub)]
        s_local = yield from _broadcast_in_worker(
            c, s if c == 0 else None, "symbol_vec", C, tree_broadcast, run
        )
        x_c = np.stack([fd_precode(states[w], s_local[w]) for w in range(n_sub)])
        _emit_local(ledger, c, x_c, run)
        return x_c, states

    results = run_workers({c: worker(c) for c in range(C)}, ledger, mode)
    outputs = [results[c][0] for c in range(C)]
    per_subcarrier = [[results[c][1][w] for c in range(C)] for w in range(n_sub)]
    return FabricRun(outputs=outputs, ledger=ledger, states=per_subcarrier)


def superpose(outputs: Iterable[np.ndarray], shards: Iterable[np.ndarray]) -> np.ndarray:
    """Noiseless received signal ``sum_c H_c x_c`` for every (subcarrier, slot).

    ``outputs[c]`` is ``(N_sc, K, B_c)`` (or ``(K, B_c)`` / ``(B_c,)`` with a
    2-D ``H_c``); the result drops the antenna axis for a user axis.
    """
    y = None
    for x_c, H_c in zip(outputs, shards, strict=True):
        x_c = np.asarray(x_c, dtype=CDTYPE)
        H_c = np.asarray(H_c, dtype=CDTYPE)
        if x_c.shape[-1] != H_c.shape[-1]:
            raise InvalidInputError(f"cluster output {x_c.shape} does not fit channel {H_c.shape}")
        term = x_c @ np.swapaxes(H_c, -1, -2)
        y = term if y is None else y + term
    if y is None:
        raise InvalidInputError("superpose needs at least one cluster")
    return y


# -- closed forms -----------------------------------------------------------


def pd_gram_volume(n_clusters: int, n_subcarriers: int, users: int) -> int:
    return (n_clusters - 1) * n_subcarriers * users * users


def broadcast_volume_per_link(n_subcarriers: int, n_slots: int, users: int) -> int:
    return n_subcarriers * n_slots * users


def broadcast_volume(n_clusters: int, n_subcarriers: int, n_slots: int, users: int) -> int:
    return (n_clusters - 1) * broadcast_volume_per_link(n_subcarriers, n_slots, users)


def message_volumes(shape: WorkloadShape, users: int, part: ClusterPartition) -> dict:
    """Closed-form inter-cluster traffic for one frame, per precoder."""
    C = part.n_clusters
    gram_total = pd_gram_volume(C, shape.n_subcarriers, users)
    bcast = broadcast_volume(C, shape.n_subcarriers, shape.n_slots, users)
    return {
        "pd-wf": {"gram_partial": gram_total, "whitened_vec": bcast, "total": gram_total + bcast},
        "fd-wf": {"symbol_vec": bcast, "total": bcast},
        "broadcast_per_link": broadcast_volume_per_link(shape.n_subcarriers, shape.n_slots, users)
        if C > 1
        else 0,
    }


def ledger_summary(ledger: MessageLedger) -> dict:
    return {
        kind: {"messages": ledger.count(kind), "complex_scalars": ledger.total(kind),
               "depth": ledger.depth(kind)}
        for kind in PAYLOAD_KINDS
    }


__all__ = [
    "ClusterPartition",
    "FabricRun",
    "LatencyModel",
    "Message",
    "MessageLedger",
    "WorkloadShape",
    "broadcast_schedule",
    "gram_reduce_tree",
    "ledger_summary",
    "message_volumes",
    "partition_channel",
    "reduce_schedule",
    "run_fd_wf",
    "run_pd_wf",
    "superpose",
]
