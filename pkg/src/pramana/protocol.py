"""Line-delimited JSON over a child process, and JSON-over-HTTP helpers.

Shared by the transcriber and embedding adapters. A channel is one child
process; callers serialize access to it (see :class:`ChannelPool`).
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import urllib.error
import urllib.request

from .errors import AdapterError, AdapterUnavailable

log = logging.getLogger(__name__)

HELLO = {"op": "hello", "version": 1}
_EOF = object()


class ProtocolViolation(AdapterError):
    pass


class ChannelTimeout(AdapterError):
    pass


class SubprocessChannel:
    def __init__(self, command, timeout_s: float = 60.0):
        self.command = list(command)
        self.timeout_s = timeout_s
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterUnavailable(f"cannot spawn {self.command!r}: {exc}") from None
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self._handshake()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _handshake(self):
        try:
            self.send(HELLO)
            reply = self.receive()
        except AdapterError as exc:
            self.close()
            raise AdapterUnavailable(f"handshake with {self.command!r} failed: {exc}") from None
        if reply != HELLO:
            self.close()
            raise AdapterUnavailable(f"handshake with {self.command!r} failed: got {reply!r}")

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None

    def send(self, obj) -> None:
        try:
            self.proc.stdin.write(json.dumps(obj, ensure_ascii=False) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise AdapterUnavailable(f"child {self.command!r} closed its input: {exc}") from None

    def receive(self, timeout_s: float | None = None) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout_s if timeout_s is None else timeout_s)
        except queue.Empty:
            raise ChannelTimeout("timed out waiting for child reply") from None
        if line is _EOF:
            raise AdapterUnavailable(f"child {self.command!r} exited")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            log.warning("protocol violation from %r: %r", self.command, line)
            raise ProtocolViolation(f"malformed reply line: {line.strip()[:200]!r}") from None
        if not isinstance(obj, dict):
            log.warning("protocol violation from %r: %r", self.command, line)
            raise ProtocolViolation(f"reply is not an object: {line.strip()[:200]!r}")
        return obj

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ChannelPool:
    """Up to ``size`` child processes, each used by one caller at a time."""

    def __init__(self, command, size: int = 1, timeout_s: float = 60.0):
        self.command = command
        self.timeout_s = timeout_s
        self._free: queue.Queue = queue.Queue()
        self._slots = threading.BoundedSemaphore(size)
        self._lock = threading.Lock()
        self._all: list[SubprocessChannel] = []

    def acquire(self) -> SubprocessChannel:
        self._slots.acquire()
        try:
            ch = self._free.get_nowait()
        except queue.Empty:
            ch = None
        if ch is None or not ch.alive:
            try:
                ch = SubprocessChannel(self.command, self.timeout_s)
            except Exception:
                self._slots.release()
                raise
            with self._lock:
                self._all.append(ch)
        return ch

    def release(self, ch: SubprocessChannel, broken: bool = False) -> None:
        if broken:
            ch.close()
        else:
            self._free.put(ch)
        self._slots.release()

    def close(self) -> None:
        with self._lock:
            for ch in self._all:
                ch.close()
            self._all.clear()


def exchange(pool: ChannelPool, requests: list[dict]) -> tuple[dict[str, dict], str | None]:
    """Send a batch of requests and collect replies keyed by id.

    Returns ``(replies, failure)`` where ``failure`` names why collection
    stopped early (timeout or protocol violation), else ``None``.
    """
    ch = pool.acquire()
    broken = False
    replies: dict[str, dict] = {}
    failure = None
    try:
        for req in requests:
            ch.send(req)
        for _ in requests:
            try:
                reply = ch.receive()
            except ChannelTimeout:
                failure, broken = "transcriber timeout", True
                break
            except ProtocolViolation as exc:
                failure, broken = f"protocol violation: {exc}", True
                break
            rid = reply.get("id")
            if not isinstance(rid, str):
                log.warning("protocol violation: reply without id: %r", reply)
                failure, broken = "protocol violation: reply without id", True
                break
            replies[rid] = reply
    except AdapterUnavailable:
        broken = True
        raise
    finally:
        pool.release(ch, broken)
    return replies, failure


def post_json(url: str, payload: dict, timeout_s: float) -> dict:
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            status, body = resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        raise AdapterError(f"HTTP {exc.code} from {url}") from None
    except urllib.error.URLError as exc:
        reason = exc.reason
        if isinstance(reason, ConnectionRefusedError):
            raise AdapterUnavailable(f"connection refused: {url}") from None
        if isinstance(reason, TimeoutError) or "timed out" in str(reason):
            raise ChannelTimeout(f"timed out: {url}") from None
        raise AdapterUnavailable(f"cannot reach {url}: {reason}") from None
    except ConnectionRefusedError:
        raise AdapterUnavailable(f"connection refused: {url}") from None
    except TimeoutError:
        raise ChannelTimeout(f"timed out: {url}") from None
    if status != 200:
        raise AdapterError(f"HTTP {status} from {url}")
    try:
        obj = json.loads(body)
    except json.JSONDecodeError:
        log.warning("protocol violation from %s: %r", url, body[:200])
        raise ProtocolViolation(f"malformed response body from {url}") from None
    if not isinstance(obj, dict):
        raise ProtocolViolation(f"response from {url} is not an object")
    return obj
