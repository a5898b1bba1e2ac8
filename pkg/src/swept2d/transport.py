"""Message transports between rank workers.

Every transport hands out per-rank endpoints with ``send(dest, tag, data)``
and ``recv(src, tag, timeout=None)``.  Delivery is reliable and FIFO per
``(src, dest, tag)`` channel; ``send`` never blocks on the receiver.

A rank's counters are updated only by calls made through that rank's
endpoint, so they need no lock as long as each endpoint is driven by one
worker.
"""

from __future__ import annotations

import collections
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass

from .errors import TransportError, ValidationError

log = logging.getLogger(__name__)

FRAME = struct.Struct("<II")  # payload length, tag
HELLO = struct.Struct("<I")
DEFAULT_TIMEOUT = 60.0


@dataclass
class TransportCounters:
    messages_sent: int = 0
    messages_received: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    injected_delay: float = 0.0

    def snapshot(self):
        return TransportCounters(self.messages_sent, self.messages_received, self.bytes_sent,
                                 self.bytes_received, self.injected_delay)

    def since(self, earlier):
        return TransportCounters(self.messages_sent - earlier.messages_sent,
                                 self.messages_received - earlier.messages_received,
                                 self.bytes_sent - earlier.bytes_sent,
                                 self.bytes_received - earlier.bytes_received,
                                 self.injected_delay - earlier.injected_delay)


class Endpoint:
    """A rank's view of a transport."""

    def __init__(self, transport, rank):
        self.transport = transport
        self.rank = rank

    @property
    def counters(self):
        return self.transport.counters[self.rank]

    def send(self, dest, tag, data):
        self.transport.send(self.rank, dest, tag, data)

    def recv(self, src, tag, timeout=None):
        return self.transport.recv(self.rank, src, tag, timeout)


class _Mailbox:
    """Per-destination queues keyed by (src, tag)."""

    def __init__(self):
        self.cond = threading.Condition()
        self.queues = collections.defaultdict(collections.deque)
        self.closed = None

    def put(self, key, data):
        with self.cond:
            self.queues[key].append(data)
            self.cond.notify_all()

    def get(self, key, timeout, who):
        deadline = time.monotonic() + timeout
        with self.cond:
            while True:
                q = self.queues.get(key)
                if q:
                    data = q.popleft()
                    if not q:
                        del self.queues[key]
                    return data
                if self.closed:
                    raise TransportError(f"{who}: transport closed ({self.closed})")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError(f"{who}: timed out after {timeout:g} s waiting for src={key[0]} tag={key[1]}")
                self.cond.wait(remaining)

    def close(self, reason):
        with self.cond:
            self.closed = reason or "closed"
            self.cond.notify_all()


class InProcTransport:
    """Shared-memory transport for rank workers that are threads of one process."""

    def __init__(self, size, timeout=DEFAULT_TIMEOUT):
        if size < 1:
            raise ValidationError("size", f"must be positive, got {size}")
        self.size = size
        self.timeout = timeout
        self.counters = [TransportCounters() for _ in range(size)]
        self._boxes = [_Mailbox() for _ in range(size)]

    def endpoint(self, rank):
        self._check(rank, "rank")
        return Endpoint(self, rank)

    def _check(self, rank, name):
        if not 0 <= rank < self.size:
            raise TransportError(f"{name} {rank} outside 0..{self.size - 1}")

    def send(self, src, dest, tag, data):
        self._check(dest, "dest")
        data = bytes(data)
        box = self._boxes[dest]
        if box.closed:
            raise TransportError(f"send {src}->{dest}: transport closed ({box.closed})")
        c = self.counters[src]
        c.messages_sent += 1
        c.bytes_sent += len(data)
        box.put((src, tag), data)

    def recv(self, dest, src, tag, timeout=None):
        self._check(src, "src")
        data = self._boxes[dest].get((src, tag), self.timeout if timeout is None else timeout,
                                     f"recv {src}->{dest} tag {tag}")
        c = self.counters[dest]
        c.messages_received += 1
        c.bytes_received += len(data)
        return data

    def close(self, reason=None):
        for box in self._boxes:
            box.close(reason)


class LatencyTransport:
    """Adds a one-way delay ``tau`` (seconds) to every message of ``inner``.

    A message becomes visible to ``recv`` no earlier than its send time plus
    ``tau``, so a ping-pong costs ``2 * tau``.  The send timestamp travels in
    an 8-byte prefix that is stripped before the payload is returned; the
    wrapper's counters see payload bytes only.  Timestamps come from the
    monotonic clock, so ``inner`` must connect ranks on one host.
    """

    _STAMP = struct.Struct("<d")

    def __init__(self, inner, tau):
        if tau < 0:
            raise ValidationError("tau", f"must be non-negative, got {tau}")
        self.inner = inner
        self.tau = float(tau)
        self.size = inner.size
        self.counters = [TransportCounters() for _ in range(inner.size)]

    def endpoint(self, rank):
        return Endpoint(self, rank)

    def send(self, src, dest, tag, data):
        self.inner.send(src, dest, tag, self._STAMP.pack(time.monotonic()) + data)
        c = self.counters[src]
        c.messages_sent += 1
        c.bytes_sent += len(data)

    def recv(self, dest, src, tag, timeout=None):
        env = self.inner.recv(dest, src, tag, timeout)
        (sent,) = self._STAMP.unpack_from(env)
        wait = sent + self.tau - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        payload = env[self._STAMP.size:]
        c = self.counters[dest]
        c.messages_received += 1
        c.bytes_received += len(payload)
        c.injected_delay += max(wait, 0.0)
        return payload

    def close(self, reason=None):
        self.inner.close(reason)


# --- TCP -----------------------------------------------------------------

@dataclass(frozen=True)
class RosterEntry:
    rank: int
    cx: int
    cy: int
    host: str
    port: int


def read_roster(path):
    """Parse ``rank cx cy host port`` lines; ``#`` starts a comment."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValidationError("roster", f"line {lineno}: expected 'rank cx cy host port', got {line!r}")
            try:
                entries.append(RosterEntry(int(parts[0]), int(parts[1]), int(parts[2]), parts[3], int(parts[4])))
            except ValueError as exc:
                raise ValidationError("roster", f"line {lineno}: {exc}") from None
    ranks = sorted(e.rank for e in entries)
    if ranks != list(range(len(entries))):
        raise ValidationError("roster", f"ranks must be 0..{len(entries) - 1} exactly once, got {ranks}")
    return sorted(entries, key=lambda e: e.rank)


def write_roster(path, entries):
    with open(path, "w") as fh:
        fh.write("# rank cx cy host port\n")
        for e in entries:
            fh.write(f"{e.rank} {e.cx} {e.cy} {e.host} {e.port}\n")


def encode_frame(tag, data):
    return FRAME.pack(len(data), tag) + bytes(data)


def _recv_exact(sock, count):
    buf = bytearray(count)
    view = memoryview(buf)
    got = 0
    while got < count:
        k = sock.recv_into(view[got:], count - got)
        if k == 0:
            raise ConnectionError("peer closed the connection")
        got += k
    return bytes(buf)


class TcpTransport:
    """One rank's TCP endpoint in a full-duplex connection mesh.

    Each frame is ``u32 length | u32 tag | payload`` (little-endian).  On
    start-up a rank accepts connections from higher ranks and connects to
    lower ones; each connection opens with the connector's rank as a u32.
    """

    def __init__(self, rank, roster, peers=None, timeout=DEFAULT_TIMEOUT, connect_timeout=30.0):
        self.rank = rank
        self.roster = list(roster)
        self.size = len(self.roster)
        self.timeout = timeout
        self.counters = {rank: TransportCounters()}
        self._box = _Mailbox()
        self._socks = {}
        self._send_locks = {}
        self._threads = []
        peers = set(range(self.size) if peers is None else peers) - {rank}
        me = self.roster[rank]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((me.host, me.port))
        except OSError as exc:
            listener.close()
            raise TransportError(f"rank {rank}: cannot listen on {me.host}:{me.port}: {exc}") from exc
        listener.listen(max(len(peers), 1))
        self._listener = listener
        try:
            self._mesh(peers, connect_timeout)
        except BaseException:
            self.close("startup failed")
            raise

    def _mesh(self, peers, connect_timeout):
        deadline = time.monotonic() + connect_timeout
        for peer in sorted(p for p in peers if p < self.rank):
            entry = self.roster[peer]
            while True:
                try:
                    sock = socket.create_connection((entry.host, entry.port), timeout=1.0)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportError(f"rank {self.rank}: cannot connect to rank {peer} at {entry.host}:{entry.port}")
                    time.sleep(0.05)
            sock.sendall(HELLO.pack(self.rank))
            self._attach(peer, sock)
        expected = {p for p in peers if p > self.rank}
        self._listener.settimeout(max(deadline - time.monotonic(), 0.1))
        while expected:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                raise TransportError(f"rank {self.rank}: ranks {sorted(expected)} never connected") from None
            sock.settimeout(None)
            (peer,) = HELLO.unpack(_recv_exact(sock, HELLO.size))
            if peer not in expected:
                sock.close()
                raise TransportError(f"rank {self.rank}: unexpected hello from rank {peer}")
            expected.discard(peer)
            self._attach(peer, sock)

    def _attach(self, peer, sock):
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._socks[peer] = sock
        self._send_locks[peer] = threading.Lock()
        t = threading.Thread(target=self._reader, args=(peer, sock), daemon=True, name=f"tcp-rx-{self.rank}<-{peer}")
        t.start()
        self._threads.append(t)

    def _reader(self, peer, sock):
        try:
            while True:
                length, tag = FRAME.unpack(_recv_exact(sock, FRAME.size))
                self._box.put((peer, tag), _recv_exact(sock, length))
        except (OSError, ConnectionError) as exc:
            if not self._box.closed:
                log.debug("rank %d: link to %d ended: %s", self.rank, peer, exc)
                self._box.close(f"link to rank {peer} lost: {exc}")

    def endpoint(self, rank):
        if rank != self.rank:
            raise TransportError(f"TCP transport of rank {self.rank} cannot act as rank {rank}")
        return Endpoint(self, rank)

    def send(self, src, dest, tag, data):
        data = bytes(data)
        if self._box.closed:
            raise TransportError(f"send {src}->{dest}: transport closed ({self._box.closed})")
        if dest == self.rank:
            self._box.put((dest, tag), data)
        else:
            sock = self._socks.get(dest)
            if sock is None:
                raise TransportError(f"rank {self.rank} has no connection to rank {dest}")
            try:
                with self._send_locks[dest]:
                    sock.sendall(encode_frame(tag, data))
            except OSError as exc:
                raise TransportError(f"send {src}->{dest}: {exc}") from exc
        c = self.counters[self.rank]
        c.messages_sent += 1
        c.bytes_sent += len(data)

    def recv(self, dest, src, tag, timeout=None):
        data = self._box.get((src, tag), self.timeout if timeout is None else timeout,
                             f"recv {src}->{dest} tag {tag}")
        c = self.counters[self.rank]
        c.messages_received += 1
        c.bytes_received += len(data)
        return data

    def close(self, reason=None):
        self._box.close(reason or "closed")
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._listener.close()


class TcpGroup:
    """All ranks' TCP transports inside one process (for tests and single-host runs)."""

    def __init__(self, roster, timeout=DEFAULT_TIMEOUT, connect_timeout=30.0):
        self.size = len(roster)
        results, errors = [None] * self.size, []

        def open_one(r):
            try:
                results[r] = TcpTransport(r, roster, timeout=timeout, connect_timeout=connect_timeout)
            except Exception as exc:  # surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=open_one, args=(r,)) for r in range(self.size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            for t in results:
                if t is not None:
                    t.close()
            raise errors[0]
        self.transports = results
        self.counters = [t.counters[r] for r, t in enumerate(results)]

    def endpoint(self, rank):
        return self.transports[rank].endpoint(rank)

    def send(self, src, dest, tag, data):
        self.transports[src].send(src, dest, tag, data)

    def recv(self, dest, src, tag, timeout=None):
        return self.transports[dest].recv(dest, src, tag, timeout)

    def close(self, reason=None):
        for t in self.transports:
            t.close(reason)


def free_ports(count, host="127.0.0.1"):
    """Reserve ``count`` currently free ports (best effort)."""
    socks, ports = [], []
    for _ in range(count):
        s = socket.socket()
        s.bind((host, 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def local_roster(topo, host="127.0.0.1", ports=None):
    ports = ports or free_ports(topo.size, host)
    return [RosterEntry(r, cx, cy, host, ports[r]) for r, (cx, cy) in enumerate(topo.coords())]
