"""Model and segmenter backends.

Every model call goes through :meth:`ModelBackend.complete`, which takes a
:class:`BackendRequest` and returns reply text. Three implementations ship:

* :class:`ScriptedBackend` replays canned replies (tests, transcript replay),
* :class:`RemoteBackend` talks to a chat-completions style HTTP endpoint,
* :class:`~microeval.agent.oracle.OracleBackend` answers from ground truth.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
import weakref
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from ..coords import Convention
from ..geometry import GeomBox
from ..imaging import ImageCanvas, encode_png
from ..rle import box_fill_mask, rle_compress

log = logging.getLogger(__name__)

API_KEY_ENV = "MICROEVAL_API_KEY"


class TransportError(RuntimeError):
    """The backend could not produce a reply (network, HTTP status, malformed body)."""


class UnscriptedRequest(AssertionError):
    """A scripted backend received a request its script does not cover."""


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    top_p: float = 1.0


@dataclass
class BackendRequest:
    images: Sequence[ImageCanvas]
    prompt: str
    decoding: Decoding = field(default_factory=Decoding)
    stage: str = "native"
    meta: dict = field(default_factory=dict)  # side information for test doubles; never sent remotely

    def __post_init__(self) -> None:
        if not self.images:
            raise ValueError("a request needs at least one image")


_DIGESTS: "weakref.WeakKeyDictionary[ImageCanvas, str]" = weakref.WeakKeyDictionary()
_DIGEST_LOCK = threading.Lock()


def image_digest(image: ImageCanvas) -> str:
    """Content hash, memoized per canvas object (canvases are treated as immutable)."""
    with _DIGEST_LOCK:
        hit = _DIGESTS.get(image)
    if hit is not None:
        return hit
    h = hashlib.sha256()
    h.update(f"{image.width}x{image.height}:".encode())
    h.update(np.ascontiguousarray(image.pixels).data)
    digest = h.hexdigest()
    with _DIGEST_LOCK:
        _DIGESTS[image] = digest
    return digest


def derived(child: ImageCanvas, parent: ImageCanvas, note: str) -> ImageCanvas:
    """Give ``child`` a digest computed from its parent's plus a recipe (crop window, overlay).

    Hashing a crop recipe is far cheaper than hashing the crop's pixels and is
    just as deterministic, which is all replay needs.
    """
    digest = hashlib.sha256(f"{image_digest(parent)}|{note}".encode()).hexdigest()
    with _DIGEST_LOCK:
        _DIGESTS[child] = digest
    return child


def fingerprint(request: BackendRequest) -> str:
    """Content hash of stage, prompt and images; stable across runs."""
    h = hashlib.sha256()
    h.update(request.stage.encode())
    h.update(b"\0")
    h.update(request.prompt.encode())
    for img in request.images:
        h.update(b"\0")
        h.update(image_digest(img).encode())
    return h.hexdigest()


class ModelBackend(ABC):
    max_images: int = 8
    convention_override: Convention | None = None  # model insists on its own coordinate convention

    @abstractmethod
    def complete(self, request: BackendRequest) -> str: ...

    def describe(self) -> dict:
        return {"type": type(self).__name__}


Script = Mapping[str, "str | Sequence[str]"]


class ScriptedBackend(ModelBackend):
    """Deterministic replies keyed by request fingerprint, then by stage.

    ``script`` values may be a string (always returned) or a sequence
    (returned in turn, the last one repeating). Alternatively ``responder``
    computes replies from the request. The transcript is appended under a
    lock so a single instance can be shared by concurrent workers.
    """

    def __init__(
        self,
        script: Script | None = None,
        responder: Callable[[BackendRequest], str] | None = None,
    ) -> None:
        self.script = dict(script or {})
        self.responder = responder
        self.transcript: list[dict] = []
        self._lock = threading.Lock()
        self._cursor: dict[str, int] = {}

    @classmethod
    def from_transcript(cls, path: str | Path) -> ScriptedBackend:
        """Replay a recorded transcript (newline-delimited JSON with fingerprint/reply)."""
        script: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    script.setdefault(entry["fingerprint"], []).append(entry["reply"])
        return cls(script)

    def _lookup(self, key: str) -> str | None:
        value = self.script.get(key)
        if value is None:
            return None
        if isinstance(value, str):
            return value
        with self._lock:
            i = self._cursor.get(key, 0)
            self._cursor[key] = i + 1
        return value[min(i, len(value) - 1)]

    def complete(self, request: BackendRequest) -> str:
        fp = fingerprint(request)
        reply = self._lookup(fp)
        if reply is None:
            reply = self._lookup(request.stage)
        if reply is None and self.responder is not None:
            reply = self.responder(request)
        if reply is None:
            raise UnscriptedRequest(f"no scripted reply for stage {request.stage!r} ({fp[:12]})")
        with self._lock:
            self.transcript.append({"stage": request.stage, "fingerprint": fp, "reply": reply})
        return reply


def _data_url(image: ImageCanvas) -> str:
    return "data:image/png;base64," + base64.b64encode(encode_png(image)).decode("ascii")


class RemoteBackend(ModelBackend):
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        attempts: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.model = model
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )

    def describe(self) -> dict:
        return {"type": "RemoteBackend", "base_url": str(self._client.base_url), "model": self.model}

    def payload(self, request: BackendRequest) -> dict:
        content: list[dict] = [{"type": "image_url", "image_url": {"url": _data_url(img)}}
                               for img in request.images]
        content.append({"type": "text", "text": request.prompt})
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
        }

    def complete(self, request: BackendRequest) -> str:
        if len(request.images) > self.max_images:
            raise TransportError(f"request carries {len(request.images)} images, limit {self.max_images}")
        body = self.payload(request)
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/chat/completions", json=body)
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = TransportError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                data = resp.json()
                content = data["choices"][0]["message"]["content"]
                if isinstance(content, list):  # some servers return content parts
                    content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
                if not isinstance(content, str):
                    raise TransportError("reply content is not text")
                return content
            except httpx.HTTPError as exc:
                last = exc
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed response: {exc!r}") from exc
        log.warning("giving up after %d attempts: %s", self.attempts, last)
        raise TransportError(f"request failed after {self.attempts} attempts: {last}") from last

    def close(self) -> None:
        self._client.close()


class Segmenter(ABC):
    """Turns a prompt box on the full image into a mask (compressed RLE text)."""

    @abstractmethod
    def segment(self, image: ImageCanvas, box: GeomBox) -> str: ...


class BoxFillSegmenter(Segmenter):
    """Stand-in segmenter: the mask is the box interior."""

    def segment(self, image: ImageCanvas, box: GeomBox) -> str:
        return rle_compress(box_fill_mask(box, image.height, image.width))


class RemoteSegmenter(Segmenter):
    """POSTs ``{"image": <png base64>, "box": [...]}`` and expects ``{"rle": "..."}``."""

    def __init__(self, url: str, timeout: float = 60.0, transport: httpx.BaseTransport | None = None) -> None:
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self.url = url

    def segment(self, image: ImageCanvas, box: GeomBox) -> str:
        body = {
            "image": base64.b64encode(encode_png(image)).decode("ascii"),
            "width": image.width,
            "height": image.height,
            "box": box.to_list(),
        }
        try:
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            rle = resp.json()["rle"]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"segmenter failed: {exc!r}") from exc
        if not isinstance(rle, str):
            raise TransportError("segmenter returned non-text RLE")
        return rle
