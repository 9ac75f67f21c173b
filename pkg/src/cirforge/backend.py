"""Chat-completion backends: OpenAI-compatible wire client, batch files, mock.

Three interchangeable ways to answer a ChatRequest: a synchronous HTTP
client for any OpenAI-compatible endpoint, JSON-lines batch request/result
files for offline submission, and a deterministic scene-oracle mock that
answers staged prompts from a ground-truth inventory file so the whole
pipeline runs offline in tests.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import requests

from cirforge.core import ObjectEntry, ObjectInventory
from cirforge.parsing import extract_json_value, extract_json_values, inventory_from_json


class BackendError(RuntimeError):
    """Terminal transport/protocol failure (after retries, if any)."""


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    base64_data: str

    def __post_init__(self):
        try:
            base64.b64decode(self.base64_data, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ValueError(f"image part is not valid base64: {exc}") from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ImagePart":
        path = Path(path)
        suffix = path.suffix.lower().lstrip(".") or "octet-stream"
        media = {"jpg": "image/jpeg", "jpeg": "image/jpeg", "png": "image/png"}.get(
            suffix, f"image/{suffix}"
        )
        return cls(media_type=media, base64_data=base64.b64encode(path.read_bytes()).decode("ascii"))


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ChatRequest:
    request_id: str
    model: str
    messages: tuple[Message, ...]
    response_format: str = "text"
    max_output_tokens: Optional[int] = None
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.response_format not in ("text", "json_object"):
            raise ValueError(f"unsupported response_format {self.response_format!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    request_id: str
    text: str
    prompt_tokens: int
    output_tokens: int

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


class ChatBackend(Protocol):
    def send(self, req: ChatRequest) -> ChatResponse: ...


@dataclass(frozen=True)
class UsageRecord:
    request_id: str
    pair_id: str
    prompt_tokens: int
    output_tokens: int


class UsageLedger:
    """Thread-safe token accounting; totals always equal the record sum."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[UsageRecord] = []

    def add(self, response: ChatResponse, pair_id: str = "") -> None:
        rec = UsageRecord(
            request_id=response.request_id,
            pair_id=pair_id,
            prompt_tokens=response.prompt_tokens,
            output_tokens=response.output_tokens,
        )
        with self._lock:
            self._records.append(rec)

    def records(self) -> list[UsageRecord]:
        with self._lock:
            return list(self._records)

    def extend(self, other: "UsageLedger") -> None:
        incoming = other.records()
        with self._lock:
            self._records.extend(incoming)

    def totals(self) -> tuple[int, int]:
        with self._lock:
            return (
                sum(r.prompt_tokens for r in self._records),
                sum(r.output_tokens for r in self._records),
            )

    def request_count(self, pair_id: Optional[str] = None) -> int:
        with self._lock:
            if pair_id is None:
                return len(self._records)
            return sum(1 for r in self._records if r.pair_id == pair_id)

    def averages_per_pair(self, pair_ids: Optional[set[str]] = None) -> tuple[float, float]:
        """Mean prompt/output tokens per distinct pair (optionally restricted)."""
        with self._lock:
            records = [
                r
                for r in self._records
                if r.pair_id and (pair_ids is None or r.pair_id in pair_ids)
            ]
        pairs = {r.pair_id for r in records}
        if not pairs:
            return 0.0, 0.0
        return (
            sum(r.prompt_tokens for r in records) / len(pairs),
            sum(r.output_tokens for r in records) / len(pairs),
        )

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records():
                fh.write(
                    json.dumps(
                        {
                            "request_id": r.request_id,
                            "pair_id": r.pair_id,
                            "prompt_tokens": r.prompt_tokens,
                            "output_tokens": r.output_tokens,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "UsageLedger":
        ledger = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                ledger._records.append(
                    UsageRecord(
                        request_id=obj["request_id"],
                        pair_id=obj.get("pair_id", ""),
                        prompt_tokens=int(obj["prompt_tokens"]),
                        output_tokens=int(obj["output_tokens"]),
                    )
                )
        return ledger


def to_wire_body(req: ChatRequest) -> dict:
    """Standard chat-completions JSON body with data-URL image parts."""
    messages = []
    for msg in req.messages:
        content = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{part.media_type};base64,{part.base64_data}"},
                    }
                )
        messages.append({"role": msg.role, "content": content})
    body: dict = {"model": req.model, "messages": messages, "temperature": req.temperature}
    if req.response_format == "json_object":
        body["response_format"] = {"type": "json_object"}
    if req.max_output_tokens is not None:
        body["max_tokens"] = req.max_output_tokens
    return body


def response_from_wire(request_id: str, payload: Mapping) -> ChatResponse:
    choices = payload.get("choices")
    if not choices:
        raise BackendError(f"response for {request_id!r} has no choices")
    content = choices[0].get("message", {}).get("content", "")
    if isinstance(content, list):  # some servers return content parts
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    usage = payload.get("usage") or {}
    return ChatResponse(
        request_id=request_id,
        text=content or "",
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        output_tokens=int(usage.get("completion_tokens", 0)),
    )


@dataclass
class HttpConfig:
    base_url: str
    key_env: str = "OPENAI_API_KEY"
    max_retries: int = 5
    timeout: float = 120.0
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    backoff_jitter: float = 0.2


class HttpChatBackend:
    """POSTs to {base_url}/chat/completions with bearer auth and backoff.

    429 and 5xx responses retry with exponential backoff (jittered); other
    4xx are surfaced immediately with the response body.
    """

    def __init__(self, cfg: HttpConfig, session: Optional[requests.Session] = None):
        self.cfg = cfg
        key = os.environ.get(cfg.key_env, "")
        if not key:
            raise BackendError(f"API key environment variable {cfg.key_env!r} is not set")
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._session = session or requests.Session()

    def send(self, req: ChatRequest) -> ChatResponse:
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        body = to_wire_body(req)
        attempt = 0
        while True:
            attempt += 1
            try:
                resp = self._session.post(
                    url, json=body, headers=self._headers, timeout=self.cfg.timeout
                )
            except requests.RequestException as exc:
                if attempt >= self.cfg.max_retries:
                    raise BackendError(f"network failure for {req.request_id!r}: {exc}") from exc
                self._sleep(attempt)
                continue

            if resp.status_code == 200:
                return response_from_wire(req.request_id, resp.json())
            if resp.status_code == 429 or resp.status_code >= 500:
                if attempt >= self.cfg.max_retries:
                    raise BackendError(
                        f"HTTP {resp.status_code} for {req.request_id!r} after {attempt} attempts: {resp.text[:200]}"
                    )
                self._sleep(attempt)
                continue
            raise BackendError(
                f"HTTP {resp.status_code} for {req.request_id!r}: {resp.text[:500]}"
            )

    def _sleep(self, attempt: int) -> None:
        delay = self.cfg.backoff_base * self.cfg.backoff_factor ** (attempt - 1)
        delay *= 1.0 + random.uniform(-self.cfg.backoff_jitter, self.cfg.backoff_jitter)
        time.sleep(max(delay, 0.0))


def emit_batch_file(reqs: Sequence[ChatRequest], path: Union[str, Path]) -> None:
    """One JSON line per request: custom_id, method, url, and the wire body."""
    seen: set[str] = set()
    for req in reqs:
        if req.request_id in seen:
            raise ValueError(f"duplicate custom_id {req.request_id!r} in batch")
        seen.add(req.request_id)
    with open(path, "w", encoding="utf-8") as fh:
        for req in reqs:
            fh.write(
                json.dumps(
                    {
                        "custom_id": req.request_id,
                        "method": "POST",
                        "url": "/v1/chat/completions",
                        "body": to_wire_body(req),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


@dataclass
class BatchIngest:
    responses: dict[str, ChatResponse]
    failed: dict[str, str]
    missing: set[str] = field(default_factory=set)


def ingest_batch_results(
    path: Union[str, Path], expected_ids: Optional[Sequence[str]] = None
) -> BatchIngest:
    """Parse batch result lines, keyed by custom_id.

    Result lines carrying an error object land in ``failed``; expected ids
    with no line at all land in ``missing`` (reported, never raised).
    """
    responses: dict[str, ChatResponse] = {}
    failed: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                custom_id = obj["custom_id"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"malformed batch result at line {lineno}: {exc}") from exc
            if obj.get("error"):
                failed[custom_id] = str(obj["error"].get("message", obj["error"]))
                continue
            response = obj.get("response") or {}
            body = response.get("body") or {}
            status = response.get("status_code", 200)
            if status != 200:
                failed[custom_id] = f"HTTP {status}"
                continue
            try:
                responses[custom_id] = response_from_wire(custom_id, body)
            except BackendError as exc:
                failed[custom_id] = str(exc)
    seen = set(responses) | set(failed)
    missing = set(expected_ids or ()) - seen
    return BatchIngest(responses=responses, failed=failed, missing=missing)


def _word_count(text: str) -> int:
    return len(text.split())


class MockSceneBackend:
    """Deterministic scene oracle for offline runs.

    A scene file maps image ids to ground-truth object inventories.  The
    stage is recovered from the request id convention
    ``<query_id>__<target_id>:<stage>[:retryN]`` used by the pipeline:

    * stage1: replies with the query image's stored inventory.
    * stage2: replies with the target inventory, reusing the descriptor
      lists embedded in the prompt's stage-1 JSON verbatim for every object
      the oracle knows is unchanged between the two images.
    * stage3 / single_stage: diffs the two inventories and emits one fixed
      template caption per added/removed/changed object.

    Token usage is a deterministic word count, so ledger math is exact.
    """

    IMAGE_PART_TOKENS = 64

    def __init__(self, scene_file: Union[str, Path], max_objects: Optional[int] = None):
        data = json.loads(Path(scene_file).read_text(encoding="utf-8"))
        self.max_objects = max_objects
        self._scenes: dict[str, ObjectInventory] = {}
        for image_id, payload in data["images"].items():
            entries = tuple(
                ObjectEntry(label=o["label"], descriptors=tuple(o["descriptors"]))
                for o in payload["objects"]
            )
            self._scenes[image_id] = ObjectInventory(image_id=image_id, objects=entries)

    def scene(self, image_id: str) -> ObjectInventory:
        if image_id not in self._scenes:
            raise KeyError(f"image id {image_id!r} absent from scene file")
        inv = self._scenes[image_id]
        if self.max_objects is not None:
            inv = ObjectInventory(image_id=image_id, objects=inv.objects[: self.max_objects])
        return inv

    @staticmethod
    def _parse_request_id(request_id: str) -> tuple[str, str, str]:
        parts = request_id.split(":")
        if len(parts) < 2:
            raise ValueError(f"mock backend cannot route request id {request_id!r}")
        pair_id, stage = parts[0], parts[1]
        query_id, sep, target_id = pair_id.partition("__")
        if not sep:
            raise ValueError(f"request id {request_id!r} lacks a '<query>__<target>' pair id")
        return query_id, target_id, stage

    def send(self, req: ChatRequest) -> ChatResponse:
        query_id, target_id, stage = self._parse_request_id(req.request_id)
        prompt_text = "\n".join(m.text() for m in req.messages)
        image_parts = sum(
            1 for m in req.messages for p in m.parts if isinstance(p, ImagePart)
        )

        if stage == "stage1":
            reply = self._inventory_json(self.scene(query_id))
        elif stage == "stage2":
            reply = self._stage2_reply(query_id, target_id, prompt_text)
        elif stage == "stage3":
            (first, _), (second, _) = extract_json_values(prompt_text, 2)
            reply = self._diff_captions(
                inventory_from_json(first, query_id), inventory_from_json(second, target_id)
            )
        elif stage == "single_stage":
            reply = self._diff_captions(self.scene(query_id), self.scene(target_id))
        else:
            raise ValueError(f"mock backend cannot answer stage {stage!r}")

        return ChatResponse(
            request_id=req.request_id,
            text=reply,
            prompt_tokens=_word_count(prompt_text) + self.IMAGE_PART_TOKENS * image_parts,
            output_tokens=_word_count(reply),
        )

    @staticmethod
    def _inventory_json(inv: ObjectInventory) -> str:
        return json.dumps(
            {o.label: list(o.descriptors) for o in inv.objects}, ensure_ascii=False
        )

    def _stage2_reply(self, query_id: str, target_id: str, prompt_text: str) -> str:
        embedded, _ = extract_json_value(prompt_text)
        stage1 = inventory_from_json(embedded, query_id)
        stage1_by_label = {o.label: o for o in stage1.objects}
        query_truth = {o.label: o for o in self.scene(query_id).objects}

        out: dict[str, list[str]] = {}
        for obj in self.scene(target_id).objects:
            truth = query_truth.get(obj.label)
            unchanged = truth is not None and truth.descriptors == obj.descriptors
            if unchanged and obj.label in stage1_by_label:
                # rule 2: matching appearance reuses the prompt's descriptor
                # list byte for byte
                out[obj.label] = list(stage1_by_label[obj.label].descriptors)
            else:
                out[obj.label] = list(obj.descriptors)
        return json.dumps(out, ensure_ascii=False)

    @staticmethod
    def _diff_captions(first: ObjectInventory, second: ObjectInventory) -> str:
        first_by_label = {o.label: o for o in first.objects}
        second_by_label = {o.label: o for o in second.objects}
        captions: list[str] = []
        for label, obj in second_by_label.items():
            if label not in first_by_label:
                captions.append(f"Add a {label.lower()}.")
            elif first_by_label[label].descriptors != obj.descriptors:
                fresh = [d for d in obj.descriptors if d not in first_by_label[label].descriptors]
                detail = fresh[0] if fresh else obj.descriptors[0]
                captions.append(f"Change the {label.lower()} to be {detail}.")
        for label in first_by_label:
            if label not in second_by_label:
                captions.append(f"Remove the {label.lower()}.")
        return json.dumps(captions, ensure_ascii=False)


def mock_scene_backend(
    scene_file: Union[str, Path], max_objects: Optional[int] = None
) -> MockSceneBackend:
    return MockSceneBackend(scene_file, max_objects=max_objects)
