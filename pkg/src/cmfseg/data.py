"""Synthetic referring-segmentation benchmark: shape scenes, templated
referring expressions with a guaranteed unique referent, JSON Lines
manifests and PNG I/O."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataError, GenerationError, InvalidInputError, ManifestError

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 210, 40),
}
SIZES = ("small", "large")
BACKGROUND = (24, 24, 24)
SPLITS = ("train", "val", "test")
MANIFEST_KEYS = ("image", "mask", "expression", "split", "seed")

SUPERLATIVES = {"leftmost": (0, -1), "rightmost": (0, 1), "topmost": (1, -1), "bottommost": (1, 1)}
RELATIONS = {"left of": (0, -1), "right of": (0, 1), "above": (1, -1), "below": (1, 1)}


@dataclass
class GeneratorConfig:
    canvas: int = 64
    min_objects: int = 2
    max_objects: int = 5
    radius: dict = field(default_factory=lambda: {"small": (4, 6), "large": (9, 12)})
    gap: int = 2
    dead_zone: float = 10.0
    max_tries: int = 200

    def __post_init__(self):
        if self.canvas < 32:
            raise InvalidInputError(f"canvas must be at least 32x32, got {self.canvas}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise InvalidInputError("invalid object count range")


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    center: tuple  # (x, y) in pixels
    radius: int
    mask: np.ndarray = field(repr=False)

    def attrs(self):
        return {"size": self.size, "color": self.color, "shape": self.shape}


@dataclass
class Scene:
    canvas: int
    objects: list
    seed: int = None

    def render(self):
        """uint8 H x W x 3 image; objects painted over a flat background."""
        img = np.empty((self.canvas, self.canvas, 3), dtype=np.uint8)
        img[:] = BACKGROUND
        for obj in self.objects:
            img[obj.mask] = COLORS[obj.color]
        return img


def _bounding_radius(shape, r):
    return {"circle": r, "square": r * math.sqrt(2), "triangle": r}[shape]


def shape_mask(shape, center, r, canvas):
    yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    cx, cy = center
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "triangle":
        # upward triangle inscribed in the circle of radius r
        s = math.sqrt(3) / 2
        verts = [(0.0, -r), (-s * r, r / 2), (s * r, r / 2)]
        inside = np.ones_like(dx, dtype=bool)
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            inside &= (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0) <= 0
        return inside
    raise InvalidInputError(f"unknown shape {shape!r}")


def generate_scene(seed, cfg=None):
    """Deterministic overlap-free scene; raises GenerationError if placement fails."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    specs = []
    for _ in range(n):
        size = SIZES[rng.integers(len(SIZES))]
        lo, hi = cfg.radius[size]
        specs.append((str(SHAPES[rng.integers(len(SHAPES))]),
                      str(list(COLORS)[rng.integers(len(COLORS))]),
                      str(size), int(rng.integers(lo, hi + 1))))
    # place large objects first; keep the sampled order in the scene
    order = sorted(range(n), key=lambda k: -specs[k][3])
    placed = {}
    for k in order:
        shape, color, size, r = specs[k]
        b = _bounding_radius(shape, r)
        lo, hi = math.ceil(b) + 1, cfg.canvas - math.ceil(b) - 2
        if lo > hi:
            raise GenerationError(f"object of radius {r} does not fit a {cfg.canvas}px canvas")
        for _ in range(cfg.max_tries):
            cx, cy = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
            if all(math.hypot(cx - o.center[0], cy - o.center[1])
                   >= b + _bounding_radius(o.shape, o.radius) + cfg.gap
                   for o in placed.values()):
                break
        else:
            raise GenerationError(f"could not place {n} objects for seed {seed}")
        placed[k] = SceneObject(shape, color, size, (cx, cy), r,
                                shape_mask(shape, (cx, cy), r, cfg.canvas))
    return Scene(cfg.canvas, [placed[k] for k in range(n)], seed)


# --- referring expressions -------------------------------------------------

@dataclass(frozen=True)
class Description:
    size: str = None
    color: str = None
    shape: str = None
    superlative: str = None
    relation: str = None
    landmark: "Description" = None

    def noun_phrase(self):
        words = [self.size, self.color, self.shape or "object"]
        return " ".join(w for w in words if w)

    def text(self):
        head = "the " + (self.superlative + " " if self.superlative else "") + self.noun_phrase()
        if self.relation:
            head += f" {self.relation} {self.landmark.text()}"
        return head


def parse_expression(text):
    """Inverse of Description.text for the generator's templates."""
    words = text.lower().split()

    def noun(ws):
        d = {}
        for w in ws:
            if w in SIZES:
                d["size"] = w
            elif w in COLORS:
                d["color"] = w
            elif w in SHAPES:
                d["shape"] = w
            elif w != "object":
                raise InvalidInputError(f"unexpected word {w!r} in {text!r}")
        return d

    if not words or words[0] != "the":
        raise InvalidInputError(f"not a generated expression: {text!r}")
    words = words[1:]
    sup = None
    if words and words[0] in SUPERLATIVES:
        sup, words = words[0], words[1:]
    for rel in RELATIONS:
        rw = rel.split()
        for k in range(len(words)):
            if words[k:k + len(rw)] == rw:
                landmark = parse_expression(" ".join(words[k + len(rw):]))
                return Description(**noun(words[:k]), superlative=sup, relation=rel,
                                   landmark=landmark)
    return Description(**noun(words), superlative=sup)


def _attr_match(obj, d):
    return all(v is None or obj.attrs()[k] == v
               for k, v in (("size", d.size), ("color", d.color), ("shape", d.shape)))


def _strictly_beyond(a, b, axis, sign, dead_zone):
    return sign * (a.center[axis] - b.center[axis]) > dead_zone


def match_description(scene, d, dead_zone=10.0):
    """Indices of every object satisfying all predicates of ``d``."""
    objs = scene.objects
    cands = [i for i, o in enumerate(objs) if _attr_match(o, d)]
    if d.superlative:
        axis, sign = SUPERLATIVES[d.superlative]
        cands = [i for i in cands
                 if all(_strictly_beyond(objs[i], objs[j], axis, sign, dead_zone)
                        for j in cands if j != i)]
    if d.relation:
        lm = match_description(scene, d.landmark, dead_zone)
        if len(lm) != 1:
            return []
        axis, sign = RELATIONS[d.relation]
        cands = [i for i in cands
                 if i != lm[0] and _strictly_beyond(objs[i], objs[lm[0]], axis, sign, dead_zone)]
    return cands


def match_expression(scene, text, dead_zone=10.0):
    return match_description(scene, parse_expression(text), dead_zone)


def _attr_subsets(obj):
    out = []
    for size in (None, obj.size):
        for color in (None, obj.color):
            for shape in (None, obj.shape):
                out.append(Description(size, color, shape))
    return out


def candidate_descriptions(scene, target, dead_zone=10.0):
    """Every templated description whose referent is exactly ``target``, by kind."""
    obj = scene.objects[target]
    unique = lambda d: match_description(scene, d, dead_zone) == [target]
    kinds = {"attributes": [], "superlative": [], "relative": []}
    for d in _attr_subsets(obj):
        if unique(d):
            kinds["attributes"].append(d)
            continue
        for sup in SUPERLATIVES:
            ds = Description(d.size, d.color, d.shape, superlative=sup)
            if unique(ds):
                kinds["superlative"].append(ds)
    for j, other in enumerate(scene.objects):
        if j == target:
            continue
        landmarks = [l for l in _attr_subsets(other) if match_description(scene, l, dead_zone) == [j]]
        if not landmarks:
            continue
        lm = min(landmarks, key=lambda l: (sum(v is not None for v in (l.size, l.color, l.shape)),
                                           l.text()))
        for d in _attr_subsets(obj):
            for rel in RELATIONS:
                dr = Description(d.size, d.color, d.shape, relation=rel, landmark=lm)
                if unique(dr):
                    kinds["relative"].append(dr)
    return kinds


KIND_WEIGHTS = {"attributes": 0.5, "superlative": 0.25, "relative": 0.25}


def generate_expression(scene, target_index, seed, dead_zone=10.0):
    """Sample a phrase that refers to exactly one object, the target."""
    if not 0 <= target_index < len(scene.objects):
        raise InvalidInputError(f"no object {target_index} in scene")
    kinds = candidate_descriptions(scene, target_index, dead_zone)
    avail = [k for k in KIND_WEIGHTS if kinds[k]]
    if not avail:
        raise GenerationError(f"object {target_index} of scene {scene.seed} has no unique description")
    rng = np.random.default_rng(seed)
    w = np.array([KIND_WEIGHTS[k] for k in avail])
    kind = avail[rng.choice(len(avail), p=w / w.sum())]
    pool = kinds[kind]
    return pool[rng.integers(len(pool))].text()


# --- manifests and files ---------------------------------------------------

@dataclass
class SampleRecord:
    image: str
    mask: str
    expression: str
    split: str
    seed: int


def write_manifest(records, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")
    return path


def read_manifest(path):
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict) or set(obj) != set(MANIFEST_KEYS):
                raise ManifestError(f"expected keys {sorted(MANIFEST_KEYS)}", line=lineno)
            records.append(SampleRecord(**obj))
    return records


def read_image(path, size=None):
    """RGB image as float32 H x W x 3 in [0, 1], optionally resized."""
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def read_mask(path, size=None):
    try:
        img = Image.open(path).convert("L")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return np.asarray(img) > 127


def write_mask(path, mask):
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), "L").save(path)


def write_probability(path, prob):
    Image.fromarray(np.clip(np.rint(np.asarray(prob) * 255), 0, 255).astype(np.uint8), "L").save(path)


SPLIT_SEED_OFFSET = {"train": 0, "val": 10_000_000, "test": 20_000_000}


def generate_samples(split, count, seed=0, cfg=None):
    """Yield (scene, target_index, expression) for ``count`` scenes of a split.

    Scene seeds come from a split-specific range so splits never share a scene;
    seeds whose scene or expression fails to generate are skipped.
    """
    cfg = cfg or GeneratorConfig()
    s = SPLIT_SEED_OFFSET[split] + seed * 100_003
    made = 0
    while made < count:
        s += 1
        try:
            scene = generate_scene(s, cfg)
        except GenerationError:
            continue
        rng = np.random.default_rng(s)
        for t in rng.permutation(len(scene.objects)):
            try:
                expr = generate_expression(scene, int(t), s, cfg.dead_zone)
            except GenerationError:
                continue
            yield scene, int(t), expr
            made += 1
            break


def generate_dataset(out_dir, counts=None, seed=0, cfg=None):
    """Write PNGs and ``manifest.jsonl`` under ``out_dir``; return the manifest path."""
    counts = counts or {"train": 2000, "val": 200, "test": 200}
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for split in SPLITS:
        for scene, t, expr in generate_samples(split, counts.get(split, 0), seed, cfg):
            name = f"{split}_{scene.seed}.png"
            Image.fromarray(scene.render(), "RGB").save(out / "images" / name)
            write_mask(out / "masks" / name, scene.objects[t].mask)
            records.append(SampleRecord(f"images/{name}", f"masks/{name}", expr, split, scene.seed))
    return write_manifest(records, out / "manifest.jsonl")


def load_split(manifest, split, image_size=None):
    """Load (images[N,H,W,3] float32, masks[N,H,W] bool, expressions) for one split."""
    manifest = Path(manifest)
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    recs = [r for r in read_manifest(manifest) if r.split == split]
    if not recs:
        raise DataError(f"split {split!r} is empty in {manifest}")
    root = manifest.parent
    images = np.stack([read_image(root / r.image, image_size) for r in recs])
    masks = np.stack([read_mask(root / r.mask, image_size) for r in recs])
    return images, masks, [r.expression for r in recs]
