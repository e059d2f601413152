"""Blocking MQTT 3.1.1 client for the supported subset.

A background reader thread handles inbound packets (publishes go to the
on_message callback) and sends PINGREQ while idle so the broker's
keepalive check stays satisfied. publish() at QoS 1 blocks until the
PUBACK arrives.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
import time
from typing import Callable

from .packets import (
    Connack,
    Connect,
    Disconnect,
    FrameDecoder,
    Pingreq,
    Pingresp,
    ProtocolError,
    Puback,
    Publish,
    Suback,
    Subscribe,
    decode_packet,
    encode_packet,
)

logger = logging.getLogger(__name__)


class MqttClientError(ConnectionError):
    """Connection, handshake, or acknowledgement failure."""


class MqttClient:
    def __init__(
        self,
        client_id: str,
        host: str = "127.0.0.1",
        port: int = 1883,
        keepalive_s: int = 30,
        on_message: Callable[[str, bytes], None] | None = None,
    ) -> None:
        self.client_id = client_id
        self.host = host
        self.port = port
        self.keepalive_s = keepalive_s
        self.on_message = on_message
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._send_lock = threading.Lock()
        self._packet_ids = itertools.cycle(range(1, 0x10000))
        self._acks: dict[tuple[str, int], threading.Event] = {}
        self._suback_granted: dict[int, tuple[int, ...]] = {}
        self._ack_lock = threading.Lock()
        self._closing = False
        self._last_tx = 0.0

    # -- connection lifecycle ------------------------------------------------

    def connect(self, timeout: float = 5.0) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=timeout)
        sock.settimeout(timeout)
        self._sock = sock
        self._closing = False
        self._send(encode_packet(Connect(client_id=self.client_id, keepalive_s=self.keepalive_s)))
        ack = self._read_one_packet(timeout)
        if not isinstance(ack, Connack) or ack.return_code != 0:
            sock.close()
            self._sock = None
            raise MqttClientError(f"connect refused: {ack!r}")
        sock.settimeout(0.2)
        self._reader = threading.Thread(
            target=self._reader_loop, name=f"mqtt-client-{self.client_id}", daemon=True
        )
        self._reader.start()

    def _read_one_packet(self, timeout: float):
        """Synchronous read used only for the CONNACK handshake."""
        assert self._sock is not None
        buf = bytearray()
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            decoded = decode_packet(buf)
            if decoded is not None:
                return decoded[0]
            try:
                data = self._sock.recv(4096)
            except socket.timeout:
                continue
            if not data:
                raise MqttClientError("connection closed during handshake")
            buf.extend(data)
        raise MqttClientError("handshake timed out")

    def disconnect(self) -> None:
        if self._sock is None:
            return
        self._closing = True
        try:
            self._send(encode_packet(Disconnect()))
        except OSError:
            pass
        self._teardown()

    def _teardown(self) -> None:
        self._closing = True
        sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass
        reader = self._reader
        if reader is not None and reader is not threading.current_thread():
            reader.join(timeout=2.0)
        self._reader = None
        # wake anything blocked on an ack so it can fail fast
        with self._ack_lock:
            for event in self._acks.values():
                event.set()

    @property
    def connected(self) -> bool:
        return self._sock is not None

    # -- protocol operations -------------------------------------------------

    def subscribe(self, *filters: str, timeout: float = 5.0) -> tuple[int, ...]:
        packet_id = self._next_packet_id()
        event = self._register_ack("suback", packet_id)
        self._send(encode_packet(Subscribe(
            packet_id=packet_id, filters=tuple((f, 0) for f in filters)
        )))
        if not event.wait(timeout):
            raise MqttClientError("subscribe timed out waiting for SUBACK")
        granted = self._suback_granted.pop(packet_id, ())
        if any(code == 0x80 for code in granted):
            raise MqttClientError(f"subscription rejected: granted={granted}")
        return granted

    def publish(self, topic: str, payload: bytes, qos: int = 0, timeout: float = 5.0) -> None:
        if qos == 0:
            self._send(encode_packet(Publish(topic=topic, payload=payload, qos=0)))
            return
        packet_id = self._next_packet_id()
        event = self._register_ack("puback", packet_id)
        self._send(encode_packet(Publish(
            topic=topic, payload=payload, qos=1, packet_id=packet_id
        )))
        if not event.wait(timeout):
            raise MqttClientError("publish timed out waiting for PUBACK")
        if self._sock is None:
            raise MqttClientError("connection lost while waiting for PUBACK")

    def ping(self) -> None:
        self._send(encode_packet(Pingreq()))

    # -- internals -------------------------------------------------------------

    def _next_packet_id(self) -> int:
        return next(self._packet_ids)

    def _register_ack(self, kind: str, packet_id: int) -> threading.Event:
        event = threading.Event()
        with self._ack_lock:
            self._acks[(kind, packet_id)] = event
        return event

    def _resolve_ack(self, kind: str, packet_id: int) -> None:
        with self._ack_lock:
            event = self._acks.pop((kind, packet_id), None)
        if event is not None:
            event.set()

    def _send(self, data: bytes) -> None:
        sock = self._sock
        if sock is None:
            raise MqttClientError("not connected")
        with self._send_lock:
            try:
                sock.sendall(data)
            except OSError as exc:
                raise MqttClientError(f"send failed: {exc}") from exc
            self._last_tx = time.monotonic()

    def _reader_loop(self) -> None:
        framer = FrameDecoder()
        while not self._closing:
            sock = self._sock
            if sock is None:
                return
            try:
                data = sock.recv(4096)
            except socket.timeout:
                self._maybe_ping()
                continue
            except OSError:
                break
            if not data:
                break
            try:
                packets = framer.feed(data)
            except ProtocolError as exc:
                logger.warning("protocol error from broker: %s", exc)
                break
            for packet in packets:
                self._handle(packet)
        if not self._closing:
            logger.info("client %s: connection lost", self.client_id)
            self._teardown()

    def _maybe_ping(self) -> None:
        if self.keepalive_s <= 0:
            return
        if time.monotonic() - self._last_tx > self.keepalive_s / 2:
            try:
                self.ping()
            except MqttClientError:
                pass

    def _handle(self, packet) -> None:
        if isinstance(packet, Publish):
            if self.on_message is not None:
                try:
                    self.on_message(packet.topic, packet.payload)
                except Exception:
                    logger.exception("on_message callback failed")
        elif isinstance(packet, Puback):
            self._resolve_ack("puback", packet.packet_id)
        elif isinstance(packet, Suback):
            self._suback_granted[packet.packet_id] = packet.granted
            self._resolve_ack("suback", packet.packet_id)
        elif isinstance(packet, Pingresp):
            pass
        else:
            logger.warning("unexpected packet from broker: %r", packet)
