"""Broker: an embeddable subscription core plus a TCP front end.

The core alone gives deterministic in-process FIFO delivery for
simulation runs; the TCP broker wraps the same core with one handler
thread per connection. Outbound deliveries are always QoS 0 (inbound
QoS 1 publishes are acknowledged with PUBACK before dispatch); a client
silent for 1.5x its keepalive is disconnected.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Callable, Iterable

from .packets import (
    Connack,
    Connect,
    Disconnect,
    FrameDecoder,
    MqttPacket,
    Pingreq,
    Pingresp,
    ProtocolError,
    Puback,
    Publish,
    Suback,
    Subscribe,
    TopicFilter,
    encode_packet,
)

logger = logging.getLogger(__name__)

# Delivery sink: receives the outbound Publish for one client.
Sink = Callable[[Publish], None]


class BrokerCore:
    """Subscription table and fan-out dispatch; safe for concurrent use."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._filters: dict[str, list[TopicFilter]] = {}
        self._sinks: dict[str, Sink] = {}

    def attach(self, client_id: str, sink: Sink) -> None:
        with self._lock:
            self._filters.setdefault(client_id, [])
            self._sinks[client_id] = sink

    def detach(self, client_id: str) -> None:
        with self._lock:
            self._filters.pop(client_id, None)
            self._sinks.pop(client_id, None)

    def subscribe(self, client_id: str, filters: Iterable[str]) -> list[int]:
        """Register filters; returns the granted QoS per filter (always 0)."""
        parsed = [TopicFilter.parse(f) for f in filters]
        with self._lock:
            if client_id not in self._sinks:
                raise KeyError(f"client {client_id!r} is not attached")
            self._filters[client_id].extend(parsed)
        return [0] * len(parsed)

    def dispatch(self, publish: Publish) -> list[tuple[str, Publish]]:
        """Deliver to every client with >= 1 matching filter, once per client.

        Returns the (client_id, packet) deliveries that were attempted.
        A sink that raises is detached: delivery failure disconnects
        that client.
        """
        out = Publish(topic=publish.topic, payload=publish.payload, qos=0)
        with self._lock:
            targets = [
                (cid, self._sinks[cid])
                for cid, filters in self._filters.items()
                if any(f.matches(publish.topic) for f in filters)
            ]
        deliveries = []
        for cid, sink in targets:
            try:
                sink(out)
            except Exception:
                logger.warning("delivery to %r failed; detaching", cid, exc_info=True)
                self.detach(cid)
                continue
            deliveries.append((cid, out))
        return deliveries


class LocalClient:
    """In-process attachment to a BrokerCore with the client surface.

    publish() dispatches synchronously, so delivery order is the exact
    publish order (the deterministic transport used in simulation mode).
    """

    def __init__(
        self,
        core: BrokerCore,
        client_id: str,
        on_message: Callable[[str, bytes], None] | None = None,
    ) -> None:
        self._core = core
        self.client_id = client_id
        self._on_message = on_message
        core.attach(client_id, self._deliver)

    def _deliver(self, publish: Publish) -> None:
        if self._on_message is not None:
            self._on_message(publish.topic, publish.payload)

    def subscribe(self, *filters: str) -> None:
        self._core.subscribe(self.client_id, filters)

    def publish(self, topic: str, payload: bytes, qos: int = 0) -> None:
        self._core.dispatch(Publish(topic=topic, payload=payload, qos=0))

    def close(self) -> None:
        self._core.detach(self.client_id)


class _Connection:
    """One TCP client connection serviced by its own thread."""

    def __init__(self, broker: "MqttBroker", sock: socket.socket, peer: str) -> None:
        self.broker = broker
        self.sock = sock
        self.peer = peer
        self.client_id: str | None = None
        self.keepalive_s = 0
        self.last_rx = time.monotonic()
        self._send_lock = threading.Lock()
        self._closed = False

    def send_packet(self, packet: MqttPacket) -> None:
        data = encode_packet(packet)
        with self._send_lock:
            self.sock.sendall(data)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.client_id is not None:
            self.broker.core.detach(self.client_id)
            self.broker._forget(self.client_id, self)
        try:
            self.sock.close()
        except OSError:
            pass

    def run(self) -> None:
        framer = FrameDecoder()
        self.sock.settimeout(0.2)
        try:
            while not self._closed and not self.broker._stopping:
                try:
                    data = self.sock.recv(4096)
                except socket.timeout:
                    if self._keepalive_expired():
                        logger.info("%s: keepalive expired, disconnecting", self.peer)
                        break
                    continue
                except OSError:
                    break
                if not data:
                    break
                self.last_rx = time.monotonic()
                for packet in framer.feed(data):
                    if not self._handle(packet):
                        return
        except ProtocolError as exc:
            logger.warning("%s: protocol error: %s", self.peer, exc)
        finally:
            self.close()

    def _keepalive_expired(self) -> bool:
        return (
            self.keepalive_s > 0
            and time.monotonic() - self.last_rx > 1.5 * self.keepalive_s
        )

    def _handle(self, packet: MqttPacket) -> bool:
        """Returns False when the connection should end."""
        if self.client_id is None:
            if not isinstance(packet, Connect):
                logger.warning("%s: first packet was not CONNECT", self.peer)
                return False
            self.client_id = packet.client_id or f"anon-{self.peer}"
            self.keepalive_s = packet.keepalive_s
            self.broker._takeover(self.client_id, self)
            self.broker.core.attach(self.client_id, self._sink)
            self.send_packet(Connack(return_code=0))
            return True
        if isinstance(packet, Publish):
            if packet.qos == 1:
                self.send_packet(Puback(packet_id=packet.packet_id))
            self.broker.core.dispatch(packet)
            return True
        if isinstance(packet, Subscribe):
            granted = self.broker.core.subscribe(
                self.client_id, [text for text, _ in packet.filters]
            )
            self.send_packet(Suback(packet_id=packet.packet_id, granted=tuple(granted)))
            return True
        if isinstance(packet, Pingreq):
            self.send_packet(Pingresp())
            return True
        if isinstance(packet, Disconnect):
            return False
        logger.warning("%s: unexpected %s", self.peer, type(packet).__name__)
        return False

    def _sink(self, publish: Publish) -> None:
        self.send_packet(publish)


class MqttBroker:
    """Minimal threaded MQTT 3.1.1 TCP broker for the supported subset."""

    def __init__(self, host: str = "127.0.0.1", port: int = 1883) -> None:
        self.host = host
        self.port = port
        self.core = BrokerCore()
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._conns: dict[str, _Connection] = {}
        self._conn_lock = threading.Lock()
        self._stopping = False

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(64)
        listener.settimeout(0.2)
        self.port = listener.getsockname()[1]
        self._listener = listener
        self._stopping = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="mqtt-broker-accept", daemon=True
        )
        self._accept_thread.start()
        logger.info("broker listening on %s:%d", self.host, self.port)

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stopping:
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn = _Connection(self, sock, f"{addr[0]}:{addr[1]}")
            threading.Thread(target=conn.run, name=f"mqtt-conn-{addr[1]}", daemon=True).start()

    def _takeover(self, client_id: str, conn: _Connection) -> None:
        """A reconnecting client id closes its previous connection."""
        with self._conn_lock:
            old = self._conns.get(client_id)
            self._conns[client_id] = conn
        if old is not None and old is not conn:
            old.close()

    def _forget(self, client_id: str, conn: _Connection) -> None:
        with self._conn_lock:
            if self._conns.get(client_id) is conn:
                del self._conns[client_id]

    def stop(self) -> None:
        self._stopping = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        with self._conn_lock:
            conns = list(self._conns.values())
        for conn in conns:
            conn.close()

    def __enter__(self) -> "MqttBroker":
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.stop()
