#!/usr/bin/env python3
"""Generate the offline end-to-end fixture under tests/fixtures/e2e/.

Ten image pairs with ground-truth object inventories for the scene-oracle
backend, a manifest, a mined-pairs file, a small general-purpose embedding
store for distractor sampling, and a run configuration.  Everything is
seeded, so re-running this script reproduces the files byte for byte.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "e2e"

LABELS = [
    "Bed", "Pillow", "Lamp", "Curtains", "Chair", "Desk", "Mirror",
    "Artwork", "Rug", "Nightstand", "Television", "Couch",
]
COLORS = ["white", "beige", "navy", "charcoal", "olive", "burgundy", "teal", "cream"]
MATERIALS = ["cotton", "linen", "oak", "walnut", "brass", "ceramic", "wool", "velvet"]


def descriptors(rnd, n=3):
    return [f"{rnd.choice(COLORS)} {rnd.choice(MATERIALS)} finish" for _ in range(n)]


def build_scene(rnd, labels):
    return {label: descriptors(rnd) for label in labels}


def main():
    rnd = random.Random(1234)
    OUT.mkdir(parents=True, exist_ok=True)

    images = [f"img{idx:02d}" for idx in range(20)]
    pair_ids = []
    scenes = {}
    for i in range(10):
        query_id, target_id = images[2 * i], images[2 * i + 1]
        pair_ids.append(f"{query_id}__{target_id}")
        labels = rnd.sample(LABELS, rnd.randint(3, 6))
        query_scene = build_scene(rnd, labels)
        if i == 1:
            target_scene = dict(query_scene)  # identical pair: zero captions
        else:
            target_scene = dict(query_scene)
            removed = rnd.choice(labels)
            del target_scene[removed]
            changed = rnd.choice([l for l in labels if l != removed])
            target_scene[changed] = descriptors(rnd)
            added = rnd.choice([l for l in LABELS if l not in labels])
            target_scene[added] = descriptors(rnd)
        scenes[query_id] = query_scene
        scenes[target_id] = target_scene

    scene_doc = {
        "images": {
            image_id: {
                "objects": [
                    {"label": label, "descriptors": descs}
                    for label, descs in scene.items()
                ]
            }
            for image_id, scene in scenes.items()
        }
    }
    (OUT / "scene.json").write_text(json.dumps(scene_doc, indent=1) + "\n")

    manifest = {
        "name": "mock-e2e",
        "splits": {"train": pair_ids, "val": [], "test": []},
        "corpus": [
            {"id": image_id, "path": f"{image_id}.png", "class_id": f"h{idx % 5}"}
            for idx, image_id in enumerate(images)
        ],
        "created": "2025-01-01T00:00:00+00:00",
        "config_digest": "",
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    with open(OUT / "pairs.jsonl", "w") as fh:
        for pid in pair_ids:
            query_id, target_id = pid.split("__")
            fh.write(
                json.dumps(
                    {
                        "pair_id": pid,
                        "query": query_id,
                        "target": target_id,
                        "emb_sim": 0.9,
                        "hash_dist": 30,
                    }
                )
                + "\n"
            )

    with open(OUT / "embeddings.jsonl", "w") as fh:
        for image_id in images:
            vec = [round(rnd.gauss(0, 1), 6) for _ in range(8)]
            fh.write(json.dumps({"id": image_id, "vec": vec}) + "\n")

    (OUT / "config.toml").write_text(
        "\n".join(
            [
                "[api]",
                'model = "gpt-4o"',
                "concurrency = 4",
                "",
                "[pipeline]",
                'template_set = "general"',
                "max_objects = 10",
                "",
                "[permute]",
                "seed = 42",
                "max_compounds = 60",
                "",
                "[distract]",
                "k = 5",
                "seed = 7",
                "",
            ]
        )
    )
    print(f"wrote fixture files under {OUT}")


if __name__ == "__main__":
    main()
