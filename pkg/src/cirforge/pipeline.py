"""Staged caption generation: prompt rendering, backend driving, reply parsing.

Stage 1 inventories the query image, stage 2 inventories the target image
conditioned on stage 1's JSON, and stage 3 turns the two inventories (text
only, no images, which is the structural guard against hallucinated
objects) into atomic difference captions.  A single-stage variant sends
both images with one direct prompt for A/B comparisons against the staged
protocol.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from cirforge.backend import (
    BackendError,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    ImagePart,
    Message,
    TextPart,
    UsageLedger,
)
from cirforge.core import ImagePair, ObjectInventory
from cirforge.parsing import (
    ParseError,
    extract_captions,
    extract_json_value,
    inventory_from_json,
)

STAGES = ("stage1", "stage2", "stage3", "single_stage")

KNOWN_PLACEHOLDERS = frozenset(
    {"max_objects", "example", "label_list", "stage1_json", "stage2_json", "min_captions"}
)
REQUIRED_PLACEHOLDERS = {
    "stage1": frozenset(),
    "stage2": frozenset({"stage1_json"}),
    "stage3": frozenset({"stage1_json", "stage2_json"}),
    "single_stage": frozenset(),
}
IMAGES_PER_STAGE = {"stage1": 1, "stage2": 1, "stage3": 0, "single_stage": 2}

BUNDLED_TEMPLATE_SETS = ("general", "cirr_r", "hotel")

DEFAULT_EXAMPLE = (
    'Object Name: ["object description 1", "object description 2", ..., '
    '"object description N"]'
)

_PLACEHOLDER = re.compile(r"\{([a-z0-9_]+)\}")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """One stage's prompt body with validated placeholders."""

    stage: str
    body: str
    placeholders: frozenset[str] = field(init=False)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise TemplateError(f"unknown stage {self.stage!r}")
        names = frozenset(_PLACEHOLDER.findall(self.body))
        unknown = names - KNOWN_PLACEHOLDERS
        if unknown:
            raise TemplateError(f"unknown placeholders in {self.stage} template: {sorted(unknown)}")
        missing = REQUIRED_PLACEHOLDERS[self.stage] - names
        if missing:
            raise TemplateError(f"{self.stage} template lacks required placeholders: {sorted(missing)}")
        object.__setattr__(self, "placeholders", names)


@dataclass
class TemplateSet:
    """Templates for every stage plus per-set default parameter values."""

    name: str
    templates: dict[str, PromptTemplate]
    defaults: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, stage: str) -> PromptTemplate:
        if stage not in self.templates:
            raise TemplateError(f"template set {self.name!r} has no {stage} template")
        return self.templates[stage]


def load_template_set(name_or_dir: Union[str, Path]) -> TemplateSet:
    """A bundled set by name, or any directory with stage-named .txt files."""
    if isinstance(name_or_dir, str) and name_or_dir in BUNDLED_TEMPLATE_SETS:
        root = resources.files("cirforge").joinpath("templates", name_or_dir)
        name = name_or_dir
    else:
        root = Path(name_or_dir)
        name = root.name
        if not root.is_dir():
            raise TemplateError(f"template set directory not found: {root}")

    templates: dict[str, PromptTemplate] = {}
    for stage in STAGES:
        candidate = root.joinpath(f"{stage}.txt")
        if candidate.is_file():
            templates[stage] = PromptTemplate(
                stage=stage, body=candidate.read_text(encoding="utf-8").strip()
            )
    if not templates:
        raise TemplateError(f"no stage templates found in {root}")

    defaults: dict[str, str] = {}
    labels = root.joinpath("labels.txt")
    if labels.is_file():
        names = [l.strip() for l in labels.read_text(encoding="utf-8").splitlines() if l.strip()]
        defaults["label_list"] = ", ".join(names)
    return TemplateSet(name=name, templates=templates, defaults=defaults)


def render_prompt(
    tpl: PromptTemplate,
    params: dict[str, str],
    images: Sequence[ImagePart] = (),
) -> list[Message]:
    """Substitute placeholders literally (one pass, no recursion) and attach images."""
    expected_images = IMAGES_PER_STAGE[tpl.stage]
    if len(images) != expected_images:
        raise TemplateError(
            f"{tpl.stage} takes exactly {expected_images} image(s), got {len(images)}"
        )
    missing = [name for name in tpl.placeholders if name not in params]
    if missing:
        raise TemplateError(f"missing placeholder values for {tpl.stage}: {sorted(missing)}")

    rendered = _PLACEHOLDER.sub(lambda m: params[m.group(1)], tpl.body)
    parts: list = [TextPart(rendered)]
    parts.extend(images)
    return [Message(role="user", parts=tuple(parts))]


@dataclass
class PipelineConfig:
    max_objects: int = 10
    parse_retries: int = 2  # extra attempts after the first failed parse
    min_captions: int = 8
    example: str = DEFAULT_EXAMPLE
    model: str = "gpt-4o"
    temperature: float = 0.0
    image_dir: Path = Path(".")
    concurrency: int = 4


@dataclass
class PairGenerationResult:
    """Everything one pair produced, or where and why it failed."""

    pair_id: str
    status: str = "ok"
    failed_stage: Optional[str] = None
    failure_reason: Optional[str] = None
    query_inventory: Optional[ObjectInventory] = None
    target_inventory: Optional[ObjectInventory] = None
    atomic_captions: list[str] = field(default_factory=list)
    usage: dict[str, dict[str, int]] = field(default_factory=dict)

    @classmethod
    def failed(cls, pair_id: str, stage: str, reason: str, usage=None) -> "PairGenerationResult":
        return cls(
            pair_id=pair_id,
            status="failed",
            failed_stage=stage,
            failure_reason=reason,
            usage=usage or {},
        )


class _StageFailure(Exception):
    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


class _StageRunner:
    """Sequential per-pair execution with parse retries and usage accounting."""

    def __init__(
        self,
        pair: ImagePair,
        backend: ChatBackend,
        cfg: PipelineConfig,
        ledger: Optional[UsageLedger],
    ):
        self.pair = pair
        self.backend = backend
        self.cfg = cfg
        self.ledger = ledger
        self.usage: dict[str, dict[str, int]] = {}

    def image_part(self, relative_path: str, stage: str) -> ImagePart:
        try:
            return ImagePart.from_file(self.cfg.image_dir / relative_path)
        except OSError as exc:
            raise _StageFailure(stage, "image_io") from exc

    def call(self, stage: str, messages: list[Message], parse):
        """Send, account, parse; retry on ParseError up to cfg.parse_retries times.

        Backend failures (transport gave up, mock cannot answer) are
        terminal for the stage but never propagate past the pair.
        """
        attempts = 1 + max(self.cfg.parse_retries, 0)
        last_code = "no_parseable_json"
        for attempt in range(attempts):
            suffix = f":retry{attempt}" if attempt else ""
            req = ChatRequest(
                request_id=f"{self.pair.pair_id}:{stage}{suffix}",
                model=self.cfg.model,
                messages=tuple(messages),
                temperature=self.cfg.temperature,
            )
            try:
                resp: ChatResponse = self.backend.send(req)
            except (BackendError, KeyError, ValueError) as exc:
                raise _StageFailure(stage, f"backend_error: {exc}") from exc
            slot = self.usage.setdefault(stage, {"prompt_tokens": 0, "output_tokens": 0})
            slot["prompt_tokens"] += resp.prompt_tokens
            slot["output_tokens"] += resp.output_tokens
            if self.ledger is not None:
                self.ledger.add(resp, pair_id=self.pair.pair_id)
            try:
                return parse(resp.text)
            except ParseError as exc:
                last_code = exc.code
        raise _StageFailure(stage, last_code)


def run_pair(
    pair: ImagePair,
    backend: ChatBackend,
    templates: TemplateSet,
    cfg: PipelineConfig = PipelineConfig(),
    ledger: Optional[UsageLedger] = None,
) -> PairGenerationResult:
    """Drive stages 1-3 for one pair; failures return a status, never raise."""
    runner = _StageRunner(pair, backend, cfg, ledger)
    params = dict(templates.defaults)
    params.update(
        max_objects=str(cfg.max_objects),
        example=cfg.example,
        min_captions=str(cfg.min_captions),
    )
    def parse_inventory(image_id):
        def parse(text: str):
            value, span = extract_json_value(text)
            inventory = inventory_from_json(value, image_id=image_id)
            if len(inventory.objects) > cfg.max_objects:
                # the model overran the requested cap; the span still embeds
                # its reply verbatim downstream
                inventory = ObjectInventory(
                    image_id=image_id, objects=inventory.objects[: cfg.max_objects]
                )
            return inventory, span

        return parse

    try:
        query_image = runner.image_part(pair.query.path, "stage1")
        query_inventory, stage1_span = runner.call(
            "stage1",
            render_prompt(templates["stage1"], params, [query_image]),
            parse_inventory(pair.query.id),
        )

        target_image = runner.image_part(pair.target.path, "stage2")
        stage2_params = dict(params, stage1_json=stage1_span)
        target_inventory, stage2_span = runner.call(
            "stage2",
            render_prompt(templates["stage2"], stage2_params, [target_image]),
            parse_inventory(pair.target.id),
        )

        stage3_params = dict(params, stage1_json=stage1_span, stage2_json=stage2_span)
        captions = runner.call(
            "stage3",
            render_prompt(templates["stage3"], stage3_params),
            extract_captions,
        )
    except _StageFailure as failure:
        return PairGenerationResult.failed(
            pair.pair_id, failure.stage, failure.reason, usage=runner.usage
        )

    return PairGenerationResult(
        pair_id=pair.pair_id,
        query_inventory=query_inventory,
        target_inventory=target_inventory,
        atomic_captions=list(captions),
        usage=runner.usage,
    )


def run_single_stage(
    pair: ImagePair,
    backend: ChatBackend,
    templates: TemplateSet,
    cfg: PipelineConfig = PipelineConfig(),
    ledger: Optional[UsageLedger] = None,
) -> PairGenerationResult:
    """One direct request with both images; inventories stay empty."""
    runner = _StageRunner(pair, backend, cfg, ledger)
    params = dict(templates.defaults)
    params.update(max_objects=str(cfg.max_objects), example=cfg.example)
    try:
        images = [
            runner.image_part(pair.query.path, "single_stage"),
            runner.image_part(pair.target.path, "single_stage"),
        ]
        captions = runner.call(
            "single_stage",
            render_prompt(templates["single_stage"], params, images),
            extract_captions,
        )
    except _StageFailure as failure:
        return PairGenerationResult.failed(
            pair.pair_id, failure.stage, failure.reason, usage=runner.usage
        )
    return PairGenerationResult(pair_id=pair.pair_id, atomic_captions=list(captions), usage=runner.usage)


def run_pairs(
    pairs: Sequence[ImagePair],
    backend: ChatBackend,
    templates: TemplateSet,
    cfg: PipelineConfig = PipelineConfig(),
    ledger: Optional[UsageLedger] = None,
    single_stage: bool = False,
    on_result: Optional[Callable[[int, PairGenerationResult], None]] = None,
) -> list[PairGenerationResult]:
    """All pairs, concurrently up to cfg.concurrency; result order = input order.

    A failure in one pair never affects any other, and both the results and
    the ledger come out exactly as a sequential run would produce them:
    each worker accounts into a private ledger that is merged in input
    order once all pairs finish.  ``on_result`` (if given) fires as each
    pair completes, letting callers keep a partial picture of a long run.
    """
    op = run_single_stage if single_stage else run_pair
    if cfg.concurrency <= 1 or len(pairs) <= 1:
        results = []
        for index, pair in enumerate(pairs):
            result = op(pair, backend, templates, cfg, ledger)
            if on_result is not None:
                on_result(index, result)
            results.append(result)
        return results

    sub_ledgers = [UsageLedger() if ledger is not None else None for _ in pairs]

    def run_one(index: int) -> PairGenerationResult:
        result = op(pairs[index], backend, templates, cfg, sub_ledgers[index])
        if on_result is not None:
            on_result(index, result)
        return result

    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        futures = [pool.submit(run_one, index) for index in range(len(pairs))]
        results = [f.result() for f in futures]
    if ledger is not None:
        for sub in sub_ledgers:
            ledger.extend(sub)
    return results
