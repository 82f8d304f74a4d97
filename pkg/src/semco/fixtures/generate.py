"""Regenerate the bundled label-semantics fixtures.

The raw word vectors are synthetic stand-ins for GloVe / word2vec: each word
is a shared corpus direction plus a topic direction (CIFAR-100 super-classes
and a few extra topics) plus word-specific noise, so related words are only
moderately similar before retrofitting.  The graph is a small hand-written
ConceptNet-style edge list that mixes visual relations with contextual ones
which the relation filter must drop.

Run ``python -m semco.fixtures.generate [outdir]``; the output is fully
deterministic.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from ..labelsem import (
    VISUAL_RELATIONS,
    Edge,
    EmbeddingMatrix,
    KnowledgeGraph,
    build_embeddings,
    build_label_matrix,
    read_embeddings,
    read_graph,
    write_embeddings,
    write_graph,
)

TOPICS = {
    "aquatic_mammals": "beaver dolphin otter seal whale",
    "fish": "aquarium_fish flatfish ray shark trout fish salmon",
    "flowers": "orchid poppy rose sunflower tulip flower petal",
    "food_containers": "bottle bowl can cup plate",
    "fruit_veg": "apple mushroom orange pear sweet pepper fruit",
    "electrical": "clock keyboard lamp telephone television radio",
    "furniture": "bed chair couch table wardrobe sofa furniture",
    "insects": "bee beetle butterfly caterpillar cockroach insect",
    "carnivores": "bear leopard lion tiger wolf",
    "outdoor_manmade": "bridge castle house road skyscraper building",
    "outdoor_natural": "cloud forest mountain plain sea ocean",
    "herbivores": "camel cattle chimpanzee elephant kangaroo deer horse",
    "medium_mammals": "fox porcupine possum raccoon skunk",
    "invertebrates": "crab lobster snail spider worm",
    "children": "baby boy girl kid child lad",
    "adults": "man woman adult person",
    "reptiles": "crocodile dinosaur lizard snake turtle frog",
    "small_mammals": "hamster mouse rabbit shrew squirrel",
    "trees": "maple_tree oak_tree palm_tree pine_tree willow_tree tree oak pine",
    "vehicles": "bicycle bus motorcycle pickup truck train automobile car vehicle bike motorbike",
    "vehicles_2": "lawn_mower rocket streetcar tank tractor tram",
    "air_water": "airplane ship boat aircraft",
    "pets": "cat dog pet bird",
}

# present in only one source, to exercise the cross-vocabulary projection
ONLY_IN_GLOVE = {"tram", "aircraft"}
ONLY_IN_W2V = {"lawn_mower", "sofa"}

GRAPH = """\
SimilarTo boy girl 0.5
IsA boy child 0.5
IsA girl child 0.5
Synonym boy lad 0.5
IsA boy youngster 0.5
IsA girl youngster 0.5
SimilarTo man woman 0.5
IsA man adult 0.5
IsA woman adult 0.5
IsA man grownup 0.5
IsA woman grownup 0.5
SimilarTo bicycle motorcycle 0.5
Synonym bicycle bike 0.5
Synonym motorcycle motorbike 0.5
IsA bicycle two_wheeler 0.5
IsA motorcycle two_wheeler 0.5
SimilarTo oak_tree pine_tree 0.5
DefinedAs oak_tree oak 0.5
DefinedAs pine_tree pine 0.5
SimilarTo crab lobster 0.5
IsA crab crustacean 0.5
IsA lobster crustacean 0.5
SimilarTo dolphin whale 0.5
IsA dolphin cetacean 0.5
IsA whale cetacean 0.5
SimilarTo flatfish trout 0.5
SimilarTo aquarium_fish trout 0.5
IsA aquarium_fish fish 0.5
IsA flatfish fish 0.5
IsA trout fish 0.5
IsA maple_tree tree 0.3
IsA palm_tree tree 0.3
IsA willow_tree tree 0.3
IsA automobile vehicle 0.3
IsA truck vehicle 0.3
Synonym automobile car 0.5
IsA cat pet 0.3
IsA dog pet 0.3
FormOf trucks truck 1.0
EtymologicallyRelatedTo tram streetcar 0.5
InstanceOf kangaroo marsupial 1.0
InstanceOf possum marsupial 1.0
/r/IsA /c/en/airplane/n /c/en/aircraft 0.5
AtLocation whale sea 3.0
AtLocation dolphin sea 3.0
AtLocation crab sea 3.0
AtLocation shark sea 3.0
RelatedTo cat dog 4.0
RelatedTo bus train 4.0
RelatedTo lion tiger 4.0
RelatedTo automobile truck 4.0
UsedFor road truck 2.0
PartOf petal flower 2.0
CapableOf bird airplane 2.0
RelatedTo deer horse 4.0
Antonym man woman 2.0
"""

CIFAR10_LABELS = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
]


def cifar100_labels() -> list[str]:
    skip = {"fish", "salmon", "flower", "petal", "fruit", "radio", "sofa", "furniture",
            "insect", "building", "ocean", "deer", "horse", "kid", "child", "adult",
            "person", "lad", "frog", "tree", "oak", "pine", "truck", "automobile", "car",
            "vehicle", "bike", "motorbike", "tram", "sweet", "pepper", "pickup"}
    words = {w for ws in TOPICS.values() for w in ws.split()} - skip
    words |= {"pickup_truck", "sweet_pepper"}
    words -= {"airplane", "ship", "boat", "aircraft", "cat", "dog", "pet", "bird"}
    labels = sorted(words)
    assert len(labels) == 100, len(labels)
    return labels


def _raw_source(words, topic_of, dim, seed, common=0.7, topic=0.7, noise=0.9):
    rng = np.random.default_rng(seed)
    unit = lambda v: v / np.linalg.norm(v)  # noqa: E731
    shared = unit(rng.normal(size=dim))
    topic_dirs = {t: unit(rng.normal(size=dim)) for t in TOPICS}
    rows = []
    for w in words:
        scale = rng.uniform(0.8, 1.25)  # distributional vectors have uneven norms
        rows.append(
            scale * (common * shared + topic * topic_dirs[topic_of[w]] + noise * unit(rng.normal(size=dim)))
        )
    return EmbeddingMatrix(list(words), np.array(rows))


def raw_sources() -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    topic_of = {w: t for t, ws in TOPICS.items() for w in ws.split()}
    words = list(topic_of)
    glove_words = [w for w in words if w not in ONLY_IN_W2V]
    w2v_words = [w for w in words if w not in ONLY_IN_GLOVE]
    return (
        _raw_source(glove_words, topic_of, 64, seed=20210101),
        _raw_source(w2v_words, topic_of, 80, seed=20210202),
    )


def raw_graph() -> KnowledgeGraph:
    edges = []
    for line in GRAPH.splitlines():
        rel, a, b, w = line.split()
        edges.append(Edge(a, b, rel, float(w)))
    return KnowledgeGraph(edges)


def generate(outdir) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    glove, w2v = raw_sources()
    paths = {
        "glove": out / "glove_tiny.txt",
        "w2v": out / "w2v_tiny.txt",
        "graph": out / "conceptnet_tiny.tsv",
        "merged": out / "merged_embeddings.txt",
        "cifar10_labels": out / "cifar10_labels.txt",
        "cifar100_labels": out / "cifar100_labels.txt",
        "cifar10_vectors": out / "cifar10_label_vectors.txt",
        "cifar100_vectors": out / "cifar100_label_vectors.txt",
    }
    write_embeddings(glove, paths["glove"], fmt="%.6f")
    write_embeddings(w2v, paths["w2v"], header=True, fmt="%.6f")
    write_graph(raw_graph(), paths["graph"])

    # rebuild from the written files so the shipped outputs match the CLI path
    merged = build_embeddings(
        read_embeddings(paths["glove"]),
        read_embeddings(paths["w2v"]),
        read_graph(paths["graph"]),
        VISUAL_RELATIONS,
        128,
    )
    write_embeddings(merged, paths["merged"], fmt="%.8g")
    merged = read_embeddings(paths["merged"])
    for name, labels in (("cifar10", CIFAR10_LABELS), ("cifar100", cifar100_labels())):
        paths[f"{name}_labels"].write_text("\n".join(labels) + "\n", encoding="utf-8")
        write_embeddings(build_label_matrix(merged, labels), paths[f"{name}_vectors"], fmt="%.8g")
    return paths


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent
    for key, path in generate(target).items():
        print(f"{key}: {path}")
