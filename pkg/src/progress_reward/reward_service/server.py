"""Asyncio reward-labeling server.

Each connection is served strictly in order: one query is read, labeled and
answered before the next is read, so replies come back in request order.
Connections run concurrently; backend calls go to a bounded thread pool.
"""
from __future__ import annotations

import asyncio
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import ParseError, ProtocolError
from .backends import BackendError
from .protocol import (
    RewardQuery,
    RewardReply,
    decode_body,
    encode_message,
    error_message,
    read_message,
)
from .rewards import RewardMap

log = logging.getLogger(__name__)


@dataclass
class ServiceConfig:
    backend: Any
    reward_map: RewardMap = field(default_factory=RewardMap)
    host: str = "127.0.0.1"
    port: int = 0
    timeout_ms: Optional[float] = None
    max_workers: int = 8


@dataclass
class _EpisodeState:
    last_good: Optional[int] = None  # last progress produced by the backend
    last_replied: Optional[int] = None  # last progress sent, degraded or not


class RewardService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.backend = config.backend
        self.rmap = config.reward_map
        self.pool = ThreadPoolExecutor(max_workers=config.max_workers, thread_name_prefix="backend")
        self._episodes: dict[str, _EpisodeState] = {}
        self._lock = threading.Lock()
        self.stats = {"queries": 0, "degraded": 0, "errors": 0}

    def _episode(self, episode_id: str) -> _EpisodeState:
        with self._lock:
            return self._episodes.setdefault(episode_id, _EpisodeState())

    async def answer(self, q: RewardQuery) -> RewardReply:
        loop = asyncio.get_running_loop()
        call = loop.run_in_executor(self.pool, self.backend.label, q)
        timeout = None if self.config.timeout_ms is None else self.config.timeout_ms / 1000.0
        ep = self._episode(q.episode_id)
        degraded = False
        try:
            progress, reasoning = await asyncio.wait_for(call, timeout)
            progress = max(-100, min(100, int(progress)))
        except asyncio.TimeoutError:
            degraded, reasoning = True, "Reward backend timed out; holding the last progress."
        except (BackendError, ParseError) as exc:
            degraded, reasoning = True, f"Reward backend failed ({exc}); holding the last progress."
            log.warning("backend failure on %s/%s: %s", q.episode_id, q.step, exc)
        with self._lock:
            if degraded:
                progress = ep.last_good if ep.last_good is not None else 0
                self.stats["degraded"] += 1
            else:
                ep.last_good = progress
            reward = self.rmap.reward(progress, ep.last_replied)
            ep.last_replied = progress
            self.stats["queries"] += 1
        return RewardReply(q.episode_id, q.step, reasoning, progress, reward, degraded)

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                try:
                    body = await read_message(reader)
                except (ProtocolError, asyncio.IncompleteReadError) as exc:
                    writer.write(encode_message(error_message("framing", str(exc))))
                    break
                if body is None:
                    break
                writer.write(encode_message(await self._dispatch(body)))
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def _dispatch(self, body: bytes) -> dict:
        try:
            msg = decode_body(body)
            if msg.get("type") != "reward_query":
                raise ProtocolError(f"unexpected message type {msg.get('type')!r}")
            query = RewardQuery.from_dict(msg)
        except ProtocolError as exc:
            self.stats["errors"] += 1
            return error_message("malformed_query", str(exc))
        reply = await self.answer(query)
        return reply.to_dict()

    def close(self) -> None:
        self.pool.shutdown(wait=False, cancel_futures=True)
        close = getattr(self.backend, "close", None)
        if close:
            close()


class ServiceHandle:
    """A service running on a background event-loop thread."""

    def __init__(self, config: ServiceConfig):
        self.service = RewardService(config)
        self._loop = asyncio.new_event_loop()
        self._ready = threading.Event()
        self._server: Optional[asyncio.base_events.Server] = None
        self._thread = threading.Thread(target=self._run, name="reward-service", daemon=True)
        self._config = config
        self._error: Optional[BaseException] = None
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error

    def _run(self) -> None:
        asyncio.set_event_loop(self._loop)
        try:
            self._server = self._loop.run_until_complete(
                asyncio.start_server(self.service.handle, self._config.host, self._config.port)
            )
        except OSError as exc:
            self._error = exc
            self._ready.set()
            return
        self._ready.set()
        self._loop.run_forever()
        self._server.close()
        # let open connection handlers unwind before the loop goes away
        pending = asyncio.all_tasks(self._loop)
        for task in pending:
            task.cancel()
        self._loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
        self._loop.run_until_complete(self._server.wait_closed())
        self._loop.close()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.sockets[0].getsockname()[:2]
        return host, port

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def stop(self) -> None:
        if self._loop.is_running():
            self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=5)
        self.service.close()

    def __enter__(self) -> "ServiceHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ServiceConfig) -> ServiceHandle:
    return ServiceHandle(config)


async def serve_forever(config: ServiceConfig) -> None:
    service = RewardService(config)
    server = await asyncio.start_server(service.handle, config.host, config.port)
    log.info("reward service listening on %s", server.sockets[0].getsockname())
    try:
        async with server:
            await server.serve_forever()
    finally:
        service.close()
