"""Blocking client for the reward service."""
from __future__ import annotations

import socket
from typing import Sequence

from ..errors import ProtocolError, ServiceUnreachable
from .protocol import RewardQuery, RewardReply, encode_message, recv_message

PIPELINE_WINDOW = 32


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    return host or "127.0.0.1", int(port)


class RewardClient:
    def __init__(self, endpoint: str | tuple[str, int], timeout: float = 30.0):
        host, port = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ServiceUnreachable(f"cannot reach reward service at {host}:{port}: {exc}") from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send(self, msg: dict) -> None:
        try:
            self.sock.sendall(encode_message(msg))
        except OSError as exc:
            raise ServiceUnreachable(str(exc)) from exc

    def _recv(self) -> RewardReply:
        try:
            msg = recv_message(self.sock)
        except (OSError, ConnectionError) as exc:
            raise ServiceUnreachable(str(exc)) from exc
        if msg.get("type") == "error":
            raise ProtocolError(f"{msg.get('code')}: {msg.get('message')}")
        return RewardReply.from_dict(msg)

    def send_raw(self, msg: dict) -> dict:
        self._send(msg)
        return recv_message(self.sock)

    def query(self, q: RewardQuery) -> RewardReply:
        self._send(q.to_dict())
        return self._recv()

    def query_many(self, queries: Sequence[RewardQuery]) -> list[RewardReply]:
        """Pipelined queries; replies come back in request order."""
        out: list[RewardReply] = []
        for start in range(0, len(queries), PIPELINE_WINDOW):
            chunk = queries[start : start + PIPELINE_WINDOW]
            for q in chunk:
                self._send(q.to_dict())
            out.extend(self._recv() for _ in chunk)
        return out

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "RewardClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
