"""Command-line entry point wiring the pipeline stages into subcommands.

The pipeline is explicitly staged through files: each subcommand reads the
previous stage's output and writes its own, so any stage can be re-run or
unit-tested in isolation and every run is restartable.  Exit codes: 0 on
success, 1 on partial failure (some pairs failed but results were
written), 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from cirforge import dataio
from cirforge.backend import (
    BackendError,
    HttpChatBackend,
    HttpConfig,
    MockSceneBackend,
    UsageLedger,
    emit_batch_file,
    ingest_batch_results,
)
from cirforge.config import ConfigError, RunConfig, load_config
from cirforge.core import (
    CIRTriplet,
    EmbeddingRecord,
    ImagePair,
    ImageRef,
    ValidationConfig,
)
from cirforge.distractors import DistractorConfig, sample_distractors
from cirforge.metrics import RetrievalRun, map_at_k, recall_at_k
from cirforge.mining import MiningConfig, compute_phash, mine_pairs
from cirforge.parsing import ParseError, extract_captions, extract_json_value
from cirforge.permute import PermuteConfig, filter_captions, generate_permutations
from cirforge.pipeline import (
    IMAGES_PER_STAGE,
    PipelineConfig,
    TemplateError,
    load_template_set,
    render_prompt,
    run_pairs,
)
from cirforge.tokenizer import ClipTokenizer

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


def _err(message: str) -> None:
    print(f"cirforge: {message}", file=sys.stderr)


def _pipeline_config(cfg: RunConfig, image_dir: Path) -> PipelineConfig:
    return PipelineConfig(
        max_objects=cfg.pipeline.max_objects,
        parse_retries=cfg.pipeline.parse_retries,
        min_captions=cfg.pipeline.min_captions,
        model=cfg.api.model,
        temperature=cfg.api.temperature,
        image_dir=image_dir,
        concurrency=cfg.api.concurrency,
    )


def _load_grayscale(path: Path):
    import numpy as np
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


# -- subcommands ------------------------------------------------------------


def cmd_hash(args, cfg: RunConfig) -> int:
    image_dir = Path(args.images)
    files = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        _err(f"no images found under {image_dir}")
        return 2
    hashes = {}
    failures = 0
    for path in files:
        try:
            hashes[path.stem] = compute_phash(_load_grayscale(path))
        except (OSError, ValueError) as exc:
            failures += 1
            _err(f"skipping {path.name}: {exc}")
    dataio.write_hashes(args.out, hashes)
    print(f"hashed {len(hashes)} images -> {args.out}" + (f" ({failures} skipped)" if failures else ""))
    return 1 if failures else 0


def cmd_embed_import(args, cfg: RunConfig) -> int:
    store = dataio.read_embeddings(args.infile)
    records = [
        EmbeddingRecord.of(image_id, store.matrix[store.row(image_id)])
        for image_id in store.ids
    ]
    dataio.write_embeddings(args.out, records)
    print(f"imported {len(records)} embeddings (dim {store.dim}) -> {args.out}")
    return 0


def cmd_mine(args, cfg: RunConfig) -> int:
    store = dataio.read_embeddings(args.embeddings)
    hashes = dataio.read_hashes(args.hashes)
    manifest = dataio.read_manifest(args.manifest)
    corpus = manifest.corpus_by_id()
    classes = {image_id: ref.class_id for image_id, ref in corpus.items()}
    for image_id in store.ids:
        if image_id not in classes:
            _err(f"embedding id {image_id!r} is not in the manifest corpus")
            return 2
    mining = MiningConfig(
        hash_min=cfg.mine.hash_min,
        hash_max=cfg.mine.hash_max,
        exclude_same_class=cfg.mine.exclude_same_class,
        neighbors_per_image=cfg.mine.neighbors_per_image,
        dedupe_symmetric=cfg.mine.dedupe_symmetric,
    )
    pairs = mine_pairs(store, classes, hashes, mining, refs=corpus)
    dataio.write_pairs(args.out, pairs)
    print(f"mined {len(pairs)} pairs -> {args.out}")
    return 0


def _make_backend(args, cfg: RunConfig):
    if args.mock_scene:
        return MockSceneBackend(args.mock_scene, max_objects=cfg.pipeline.max_objects)
    return HttpChatBackend(
        HttpConfig(
            base_url=cfg.api.base_url,
            key_env=cfg.api.key_env,
            max_retries=cfg.api.max_retries,
        )
    )


def cmd_generate(args, cfg: RunConfig) -> int:
    manifest = dataio.read_manifest(args.manifest)
    pairs = dataio.read_pairs(args.pairs, corpus=manifest.corpus_by_id())
    templates = load_template_set(cfg.pipeline.template_set)
    pcfg = _pipeline_config(cfg, Path(args.images))

    if args.dry_run:
        params = dict(templates.defaults)
        params.update(
            max_objects=str(pcfg.max_objects),
            example=pcfg.example,
            min_captions=str(pcfg.min_captions),
        )
        stage = "single_stage" if args.single_stage else "stage1"
        body = templates[stage].body
        # later-stage placeholders (stage outputs) cannot be known yet and
        # are left verbatim in the printout
        rendered = re.sub(
            r"\{([a-z0-9_]+)\}", lambda m: params.get(m.group(1), m.group(0)), body
        )
        for pair in pairs:
            print(f"--- {pair.pair_id} [{stage}] ---")
            print(rendered)
        return 0

    backend = _make_backend(args, cfg)
    ledger = UsageLedger()
    collected: dict[int, object] = {}
    try:
        results = run_pairs(
            pairs,
            backend,
            templates,
            pcfg,
            ledger,
            single_stage=args.single_stage,
            on_result=collected.__setitem__,
        )
    except KeyboardInterrupt:
        partial = [collected[i] for i in sorted(collected)]
        dataio.write_results(str(args.out) + ".partial", partial)
        ledger.save(str(args.ledger) + ".partial")
        _err(f"interrupted; {len(partial)} completed pairs flushed to {args.out}.partial")
        return 130

    dataio.write_results(args.out, results)
    ledger.save(args.ledger)
    failed = [r for r in results if r.status != "ok"]
    print(
        f"generated captions for {len(results) - len(failed)}/{len(results)} pairs -> {args.out}"
    )
    for r in failed:
        _err(f"pair {r.pair_id} failed at {r.failed_stage}: {r.failure_reason}")
    return 1 if failed else 0


def cmd_permute(args, cfg: RunConfig) -> int:
    tokenizer = ClipTokenizer.from_files(args.vocab, args.merges)
    results = dataio.read_results(args.infile)
    pcfg = PermuteConfig(
        token_limit=cfg.permute.token_limit,
        max_compounds=cfg.permute.max_compounds,
        allow_sizes=cfg.permute.allow_sizes,
        seed=cfg.permute.seed,
        count_special_tokens=cfg.permute.count_special_tokens,
    )
    vcfg = ValidationConfig(token_limit=cfg.permute.token_limit)
    triplets: list[CIRTriplet] = []
    for result in results:
        if result.status != "ok":
            continue
        query_id, _, target_id = result.pair_id.partition("__")
        survivors = filter_captions(result.atomic_captions, vcfg)
        for caption in generate_permutations(survivors, tokenizer, pcfg, result.pair_id):
            triplets.append(
                CIRTriplet(
                    pair_id=result.pair_id,
                    query_id=query_id,
                    target_id=target_id,
                    caption=caption,
                )
            )
    dataio.write_triplets(args.out, triplets)
    print(f"permuted {len(results)} pairs into {len(triplets)} triplets -> {args.out}")
    return 0


def cmd_distract(args, cfg: RunConfig) -> int:
    triplets = dataio.read_triplets(args.infile)
    store = dataio.read_embeddings(args.embeddings)
    dcfg = DistractorConfig(k=cfg.distract.k, seed=cfg.distract.seed)
    assignments: dict[str, list[str]] = {}
    out = []
    for t in triplets:
        if t.pair_id not in assignments:
            pair = ImagePair(
                pair_id=t.pair_id,
                query=ImageRef(id=t.query_id),
                target=ImageRef(id=t.target_id),
                emb_similarity=0.0,
                hash_distance=0,
            )
            assignments[t.pair_id] = sample_distractors(pair, store, dcfg)
        out.append(
            CIRTriplet(
                pair_id=t.pair_id,
                query_id=t.query_id,
                target_id=t.target_id,
                caption=t.caption,
                distractor_ids=tuple(assignments[t.pair_id]),
            )
        )
    dataio.write_triplets(args.out, out)
    print(f"attached distractors for {len(assignments)} pairs -> {args.out}")
    return 0


def _responses_by_pair(path, stage: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            custom_id = obj["custom_id"]
            pair_id, _, got_stage = custom_id.partition(":")
            if got_stage.split(":")[0] == stage:
                out[pair_id] = obj["text"]
    return out


def cmd_emit_batch(args, cfg: RunConfig) -> int:
    from cirforge.backend import ChatRequest, ImagePart

    manifest = dataio.read_manifest(args.manifest)
    pairs = dataio.read_pairs(args.pairs, corpus=manifest.corpus_by_id())
    templates = load_template_set(cfg.pipeline.template_set)
    pcfg = _pipeline_config(cfg, Path(args.images) if args.images else Path("."))
    params = dict(templates.defaults)
    params.update(
        max_objects=str(pcfg.max_objects),
        example=pcfg.example,
        min_captions=str(pcfg.min_captions),
    )

    stage = args.stage
    stage1_texts = _responses_by_pair(args.stage1_responses, "stage1") if args.stage1_responses else {}
    stage2_texts = _responses_by_pair(args.stage2_responses, "stage2") if args.stage2_responses else {}

    reqs = []
    skipped = 0
    for pair in pairs:
        try:
            stage_params = dict(params)
            if stage in ("stage2", "stage3"):
                _, span = extract_json_value(stage1_texts[pair.pair_id])
                stage_params["stage1_json"] = span
            if stage == "stage3":
                _, span = extract_json_value(stage2_texts[pair.pair_id])
                stage_params["stage2_json"] = span
            images = []
            if stage == "stage1":
                images = [ImagePart.from_file(pcfg.image_dir / pair.query.path)]
            elif stage == "stage2":
                images = [ImagePart.from_file(pcfg.image_dir / pair.target.path)]
            elif stage == "single_stage":
                images = [
                    ImagePart.from_file(pcfg.image_dir / pair.query.path),
                    ImagePart.from_file(pcfg.image_dir / pair.target.path),
                ]
            reqs.append(
                ChatRequest(
                    request_id=f"{pair.pair_id}:{stage}",
                    model=pcfg.model,
                    messages=tuple(render_prompt(templates[stage], stage_params, images)),
                    temperature=pcfg.temperature,
                )
            )
        except (KeyError, OSError, ParseError) as exc:
            skipped += 1
            _err(f"skipping pair {pair.pair_id}: {exc}")
    emit_batch_file(reqs, args.out)
    print(f"emitted {len(reqs)} {stage} requests -> {args.out}" + (f" ({skipped} skipped)" if skipped else ""))
    return 1 if skipped else 0


def cmd_ingest_batch(args, cfg: RunConfig) -> int:
    expected = None
    if args.expect:
        with open(args.expect, encoding="utf-8") as fh:
            expected = [json.loads(line)["custom_id"] for line in fh if line.strip()]
    ingest = ingest_batch_results(args.infile, expected_ids=expected)
    with open(args.out, "w", encoding="utf-8") as fh:
        for custom_id in sorted(ingest.responses):
            r = ingest.responses[custom_id]
            fh.write(
                json.dumps(
                    {
                        "custom_id": custom_id,
                        "text": r.text,
                        "prompt_tokens": r.prompt_tokens,
                        "output_tokens": r.output_tokens,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )

    if args.captions_out:
        rows = []
        for custom_id in sorted(ingest.responses):
            pair_id, _, stage = custom_id.partition(":")
            if stage.split(":")[0] not in ("stage3", "single_stage"):
                continue
            try:
                captions = extract_captions(ingest.responses[custom_id].text)
            except ParseError as exc:
                _err(f"pair {pair_id}: {exc}")
                continue
            rows.append({"pair_id": pair_id, "status": "ok", "atomic_captions": captions})
        with open(args.captions_out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    print(
        f"ingested {len(ingest.responses)} responses -> {args.out}"
        f" ({len(ingest.failed)} failed, {len(ingest.missing)} missing)"
    )
    for custom_id, reason in sorted(ingest.failed.items()):
        _err(f"failed: {custom_id}: {reason}")
    for custom_id in sorted(ingest.missing):
        _err(f"missing: {custom_id}")
    return 1 if ingest.failed or ingest.missing else 0


def cmd_stats(args, cfg: RunConfig) -> int:
    manifest = dataio.read_manifest(args.manifest)
    triplet_files = {}
    for spec in args.triplets:
        split, sep, path = spec.partition("=")
        if not sep:
            _err(f"--triplets expects SPLIT=PATH, got {spec!r}")
            return 2
        triplet_files[split] = path
    ledger = UsageLedger.load(args.ledger) if args.ledger else None
    stats = dataio.compute_stats(manifest, triplet_files, ledger)
    if args.out:
        Path(args.out).write_text(
            json.dumps(stats.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )
    print(dataio.format_stats_table(stats))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    rankings = {}
    order = []
    with open(args.run, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                rankings[obj["query_id"]] = tuple(obj["ranking"])
                order.append(obj["query_id"])
    relevance = {}
    with open(args.relevance, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                relevance[obj["query_id"]] = frozenset(obj["relevant"])
    run = RetrievalRun(
        queries=tuple((qid, rankings[qid]) for qid in order),
        relevance=relevance,
    )
    report = {}
    for k in cfg.eval.ks:
        report[f"R@{k}"] = recall_at_k(run, k)
    for k in cfg.eval.ks:
        report[f"mAP@{k}"] = map_at_k(run, k)
    payload = json.dumps(report, ensure_ascii=False, indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def cmd_validate(args, cfg: RunConfig) -> int:
    problems = 0

    def check(label: str, fn) -> None:
        nonlocal problems
        try:
            fn()
            print(f"ok: {label}")
        except (dataio.DataFileError, ValueError) as exc:
            problems += 1
            _err(f"{label}: {exc}")

    vcfg = ValidationConfig(token_limit=cfg.permute.token_limit)
    for path in args.triplets or ():
        check(f"triplets {path}", lambda p=path: dataio.read_triplets(p, vcfg))
    for path in args.embeddings or ():
        check(f"embeddings {path}", lambda p=path: dataio.read_embeddings(p))
    for path in args.hashes or ():
        check(f"hashes {path}", lambda p=path: dataio.read_hashes(p))
    for path in args.pairs or ():

        def pairs_ok(p=path):
            for pair in dataio.read_pairs(p):
                if pair.query.id == pair.target.id:
                    raise dataio.DataFileError(f"{p}: self-pair {pair.pair_id}")

        check(f"pairs {path}", pairs_ok)
    for path in args.manifest or ():
        check(f"manifest {path}", lambda p=path: dataio.read_manifest(p))
    for path in args.results or ():
        check(f"results {path}", lambda p=path: dataio.read_results(p))
    return 1 if problems else 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cirforge",
        description="Composed-image-retrieval dataset construction and evaluation toolkit.",
    )
    parser.add_argument("--config", help="TOML run configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable; beats the file)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hash", help="perceptual-hash an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_hash)

    p = sub.add_parser("embed-import", help="validate and canonicalize an embeddings file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed_import)

    p = sub.add_parser("mine", help="mine (query, target) pairs")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--hashes", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("generate", help="run the caption pipeline over mined pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--mock-scene", help="answer from a scene-oracle file instead of HTTP")
    p.add_argument("--single-stage", action="store_true", help="one direct request per pair")
    p.add_argument("--dry-run", action="store_true", help="print rendered prompts, no requests")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("permute", help="filter and combine captions into triplets")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges", required=True)
    p.set_defaults(fn=cmd_permute)

    p = sub.add_parser("distract", help="attach distractor images to triplets")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_distract)

    p = sub.add_parser("emit-batch", help="write a batch request file for one stage")
    p.add_argument("--stage", required=True, choices=["stage1", "stage2", "stage3", "single_stage"])
    p.add_argument("--pairs", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--images")
    p.add_argument("--stage1-responses")
    p.add_argument("--stage2-responses")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_emit_batch)

    p = sub.add_parser("ingest-batch", help="parse a batch result file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--expect", help="batch request file to compute the missing set")
    p.add_argument("--captions-out", help="also write stage3 captions as a results file")
    p.set_defaults(fn=cmd_ingest_batch)

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--triplets", action="append", required=True, metavar="SPLIT=PATH")
    p.add_argument("--ledger")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("eval", help="score a retrieval run")
    p.add_argument("--run", required=True)
    p.add_argument("--relevance", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("validate", help="validate toolkit-written files")
    p.add_argument("--triplets", action="append")
    p.add_argument("--embeddings", action="append")
    p.add_argument("--hashes", action="append")
    p.add_argument("--pairs", action="append")
    p.add_argument("--manifest", action="append")
    p.add_argument("--results", action="append")
    p.set_defaults(fn=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, tuple(args.overrides))
        return args.fn(args, cfg)
    except (ConfigError, TemplateError) as exc:
        _err(str(exc))
        return 2
    except dataio.DataFileError as exc:
        _err(str(exc))
        return 2
    except FileNotFoundError as exc:
        _err(str(exc))
        return 2
    except BackendError as exc:
        _err(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
