"""Length-prefixed JSON messages between RL actors and the reward service.

Every message is a 4-byte big-endian body length followed by a UTF-8 JSON
object carrying ``v`` (protocol major version) and ``type``. Unknown fields are
ignored so newer peers can add them.
"""
from __future__ import annotations

import asyncio
import json
import socket
import struct
from dataclasses import dataclass
from typing import Any, Optional

from ..core_types import EnvState, state_from_dict, state_to_dict
from ..errors import ProtocolError
from ..response_format import QueryContext, context_from_dict, context_to_dict

VERSION = 1
HEADER = struct.Struct(">I")
MAX_MESSAGE = 16 * 1024 * 1024


@dataclass(frozen=True)
class RewardQuery:
    episode_id: str
    step: int
    context: QueryContext
    # true simulator states for oracle/scripted backends; never model inputs
    initial_state: Optional[EnvState] = None
    prev_state: Optional[EnvState] = None
    state: Optional[EnvState] = None

    def to_dict(self) -> dict:
        msg: dict[str, Any] = {
            "v": VERSION,
            "type": "reward_query",
            "episode_id": self.episode_id,
            "step": self.step,
            "context": context_to_dict(self.context),
        }
        debug = {k: state_to_dict(s) for k, s in
                 (("initial_state", self.initial_state), ("prev_state", self.prev_state), ("state", self.state))
                 if s is not None}
        if debug:
            msg["debug"] = debug
        return msg

    @classmethod
    def from_dict(cls, d: dict) -> "RewardQuery":
        try:
            debug = d.get("debug") or {}
            get = lambda k: state_from_dict(debug[k]) if k in debug else None  # noqa: E731
            return cls(
                episode_id=str(d["episode_id"]),
                step=int(d["step"]),
                context=context_from_dict(d["context"]),
                initial_state=get("initial_state"),
                prev_state=get("prev_state"),
                state=get("state"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed reward_query: {exc}") from exc


@dataclass(frozen=True)
class RewardReply:
    episode_id: str
    step: int
    reasoning: str
    progress: int
    reward: float
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "v": VERSION,
            "type": "reward_reply",
            "episode_id": self.episode_id,
            "step": self.step,
            "reasoning": self.reasoning,
            "progress": self.progress,
            "reward": self.reward,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardReply":
        return cls(
            episode_id=str(d["episode_id"]),
            step=int(d["step"]),
            reasoning=str(d.get("reasoning", "")),
            progress=int(d["progress"]),
            reward=float(d["reward"]),
            degraded=bool(d.get("degraded", False)),
        )


def error_message(code: str, message: str, step: Optional[int] = None) -> dict:
    msg = {"v": VERSION, "type": "error", "code": code, "message": message}
    if step is not None:
        msg["step"] = step
    return msg


def encode_message(msg: dict) -> bytes:
    body = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_MESSAGE:
        raise ProtocolError("message too large")
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"invalid JSON body: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("message body must be a JSON object")
    if msg.get("v") != VERSION:
        raise ProtocolError(f"unsupported protocol version {msg.get('v')!r}")
    return msg


async def read_message(reader: asyncio.StreamReader) -> Optional[bytes]:
    """Read one framed body; None on clean EOF between messages."""
    try:
        header = await reader.readexactly(HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise ProtocolError("truncated header") from exc
    (n,) = HEADER.unpack(header)
    if n > MAX_MESSAGE:
        raise ProtocolError("message too large")
    return await reader.readexactly(n)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-message")
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> dict:
    (n,) = HEADER.unpack(recv_exact(sock, HEADER.size))
    if n > MAX_MESSAGE:
        raise ProtocolError("message too large")
    return decode_body(recv_exact(sock, n))
