import itertools

import numpy as np
import pytest

from cmfseg.data import (Description, GeneratorConfig, SampleRecord, Scene, SceneObject,
                         generate_dataset, generate_expression, generate_samples, generate_scene,
                         load_split, match_expression, read_manifest, shape_mask, write_manifest)
from cmfseg.exceptions import GenerationError, InvalidInputError, ManifestError
from cmfseg.langenc import UNK_ID, build_vocabulary, tokenize


def _scenes(n):
    out = []
    for s in range(n):
        try:
            out.append(generate_scene(s))
        except GenerationError:
            pass
    return out


def _scene(*objs, canvas=64):
    return Scene(canvas, [SceneObject(sh, co, si, c, r, shape_mask(sh, c, r, canvas))
                          for sh, co, si, c, r in objs], seed=0)


def test_scene_deterministic():
    a, b = generate_scene(7), generate_scene(7)
    assert [(o.shape, o.color, o.size, o.center) for o in a.objects] == \
           [(o.shape, o.color, o.size, o.center) for o in b.objects]
    assert np.array_equal(a.render(), b.render())


def test_scene_invariants_over_many_seeds():
    scenes = _scenes(1000)
    assert len(scenes) > 700
    sizes = set()
    for sc in scenes:
        assert 2 <= len(sc.objects) <= 5
        for a, b in itertools.combinations(sc.objects, 2):
            assert not (a.mask & b.mask).any()
        for o in sc.objects:
            assert o.mask.any()
            sizes.add(o.size)
            ys, xs = np.nonzero(o.mask)
            # fully inside: no pixel touches the canvas border
            assert xs.min() > 0 and ys.min() > 0 and xs.max() < 63 and ys.max() < 63
    assert sizes == {"small", "large"}


def test_tiny_canvas_rejected():
    with pytest.raises(InvalidInputError):
        GeneratorConfig(canvas=16)


def test_placement_failure_raises():
    cfg = GeneratorConfig(canvas=32, min_objects=5, max_objects=5,
                          radius={"small": (9, 9), "large": (12, 12)}, max_tries=5)
    with pytest.raises(GenerationError):
        generate_scene(0, cfg)


def test_single_circle_scene():
    sc = _scene(("circle", "red", "large", (16, 16), 8), ("square", "blue", "large", (45, 45), 8))
    assert match_expression(sc, "the circle") == [0]
    expr = generate_expression(sc, 0, seed=1)
    assert match_expression(sc, expr) == [0]


def test_two_red_circles_need_size_or_position():
    sc = _scene(("circle", "red", "large", (16, 16), 10), ("circle", "red", "small", (46, 46), 5))
    for seed in range(20):
        expr = generate_expression(sc, 1, seed)
        words = expr.split()
        assert "small" in words or any(w in words for w in ("rightmost", "bottommost", "right", "below"))
        # exhaustive oracle: the phrase's predicates select exactly the target
        matches = [i for i, _ in enumerate(sc.objects) if i in match_expression(sc, expr)]
        assert matches == [1]


def test_identical_objects_without_separation_fail():
    sc = _scene(("circle", "red", "small", (20, 30), 5), ("circle", "red", "small", (26, 34), 5))
    with pytest.raises(GenerationError):
        generate_expression(sc, 0, seed=0)


def test_expression_deterministic():
    sc = generate_scene(11)
    assert generate_expression(sc, 0, 5) == generate_expression(sc, 0, 5)


def test_description_text_parse_roundtrip():
    d = Description("small", None, "circle", relation="left of",
                    landmark=Description(None, "blue", None))
    assert d.text() == "the small circle left of the blue object"
    sc = _scene(("circle", "red", "small", (10, 30), 5), ("square", "blue", "small", (40, 30), 5))
    assert match_expression(sc, d.text()) == [0]


def test_generated_samples_unique_and_in_vocab():
    samples = list(generate_samples("train", 300))
    vocab = build_vocabulary([e for _, _, e in samples])
    assert len(vocab) <= 64
    for scene, t, expr in samples:
        assert match_expression(scene, expr) == [t]
        assert UNK_ID not in tokenize(expr, vocab).ids


def test_splits_disjoint_by_seed():
    seeds = {split: {sc.seed for sc, _, _ in generate_samples(split, 50)}
             for split in ("train", "val", "test")}
    assert not (seeds["train"] & seeds["val"]) and not (seeds["val"] & seeds["test"])
    assert not (seeds["train"] & seeds["test"])


def test_manifest_roundtrip(tmp_path):
    recs = [SampleRecord(f"images/{k}.png", f"masks/{k}.png", f"the réd circle {k}", "train", k)
            for k in range(100)]
    path = write_manifest(recs, tmp_path / "m.jsonl")
    assert read_manifest(path) == recs


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert read_manifest(tmp_path / "m.jsonl") == []


def test_truncated_line_names_line(tmp_path):
    recs = [SampleRecord("a.png", "b.png", "the circle", "val", 1)] * 2
    path = write_manifest(recs, tmp_path / "m.jsonl")
    text = path.read_text()
    path.write_text(text + text.splitlines()[0][:20] + "\n")
    with pytest.raises(ManifestError, match="line 3") as info:
        read_manifest(path)
    assert info.value.line == 3


def test_dataset_files_match_manifest(tmp_path):
    path = generate_dataset(tmp_path, {"train": 6, "val": 3, "test": 2}, seed=0)
    recs = read_manifest(path)
    assert [r.split for r in recs].count("val") == 3
    images, masks, exprs = load_split(path, "train")
    assert images.shape == (6, 64, 64, 3) and images.dtype == np.float32
    assert masks.shape == (6, 64, 64) and masks.dtype == bool
    for r, m in zip([r for r in recs if r.split == "train"], masks):
        sc = generate_scene(r.seed)
        targets = match_expression(sc, r.expression)
        assert len(targets) == 1
        assert np.array_equal(sc.objects[targets[0]].mask, m)  # bit-exact mask
