"""Datagram endpoint: one message per UDP datagram, decoded on a receiver thread."""
from __future__ import annotations

import logging
import queue
import socket
import threading

from .codec import WireError, WireMessage, decode, encode

logger = logging.getLogger(__name__)

MAX_DATAGRAM = 65507


class UdpEndpoint:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.2)
        self.address = self.sock.getsockname()
        self.inbox: queue.Queue[tuple[WireMessage, tuple]] = queue.Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._recv_loop, daemon=True)
        self._thread.start()
        self.dropped = 0

    def _recv_loop(self):
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                self.inbox.put((decode(data), addr))
            except WireError as exc:
                self.dropped += 1
                logger.warning("dropping malformed datagram from %s: %s", addr, exc)

    def send(self, message: WireMessage, addr) -> int:
        return self.sock.sendto(encode(message), addr)

    def recv(self, timeout: float | None = None) -> tuple[WireMessage, tuple] | None:
        try:
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self):
        self._stop.set()
        self.sock.close()
        self._thread.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
