"""Procedural person-retrieval corpora in two styles.

A source style and a target style share attribute semantics (shirt colour,
pants colour, hat, bag, build, accessory) but differ in caption templates,
word choice, colour rendering, background and noise. Every sample derives its
own RNG from ``(master seed, domain, split, index)``, so generation order
does not matter.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

COLORS = ("red", "blue", "green", "yellow", "black", "white", "purple", "orange")

SCHEMA: dict[str, tuple[str, ...]] = {
    "shirt": COLORS,
    "pants": COLORS,
    "hat": ("none", "cap", "beanie", "hood"),
    "bag": ("none", "backpack", "handbag", "suitcase"),
    "build": ("slim", "average", "broad", "heavy"),
    "accessory": ("none", "scarf", "glasses", "belt"),
}
SLOTS = tuple(SCHEMA)

_BASE_RGB = {
    "red": (0.85, 0.1, 0.1), "blue": (0.1, 0.2, 0.85), "green": (0.1, 0.7, 0.2),
    "yellow": (0.9, 0.85, 0.1), "black": (0.05, 0.05, 0.05), "white": (0.95, 0.95, 0.95),
    "purple": (0.55, 0.1, 0.7), "orange": (0.95, 0.5, 0.05),
    "skin": (0.85, 0.65, 0.5), "shoe": (0.2, 0.15, 0.1),
    "cap": (0.3, 0.3, 0.6), "beanie": (0.6, 0.3, 0.3), "hood": (0.35, 0.35, 0.35),
    "backpack": (0.4, 0.25, 0.1), "handbag": (0.8, 0.4, 0.6), "suitcase": (0.25, 0.45, 0.45),
    "scarf": (0.9, 0.9, 0.5), "glasses": (0.0, 0.0, 0.0), "belt": (0.5, 0.35, 0.1),
}

BUILD_WIDTH = {"slim": 6, "average": 8, "broad": 10, "heavy": 12}


@dataclass
class DomainStyle:
    name: str
    templates: tuple[str, ...]
    phrases: dict          # slot -> value -> tuple of phrase alternatives
    color_matrix: tuple    # 3x3 channel mixing applied to every palette colour
    color_offset: tuple
    background: tuple
    noise: float
    jitter: int

    def palette(self, key: str) -> np.ndarray:
        rgb = np.asarray(_BASE_RGB[key])
        out = np.asarray(self.color_matrix) @ rgb + np.asarray(self.color_offset)
        return np.clip(out, 0.0, 1.0)

    def words(self) -> set[str]:
        ws: set[str] = set()
        for t in self.templates:
            ws.update(w for w in t.lower().split() if not w.startswith("{"))
        for slot in self.phrases.values():
            for alts in slot.values():
                for a in alts:
                    ws.update(a.lower().split())
        return ws

    def attribute_words(self) -> set[str]:
        ws: set[str] = set()
        for slot in self.phrases.values():
            for alts in slot.values():
                for a in alts:
                    ws.update(a.lower().split())
        return ws


def _color_phrases(words: dict, nouns: Sequence[str]) -> dict:
    return {c: tuple(f"{words[c]} {n}" for n in nouns) for c in COLORS}


SOURCE_COLOR_WORDS = {c: c for c in COLORS}
TARGET_COLOR_WORDS = {"red": "crimson", "blue": "blue", "green": "green", "yellow": "golden",
                      "black": "black", "white": "ivory", "purple": "violet", "orange": "orange"}


def source_style(noise: float = 0.02, jitter: int = 1) -> DomainStyle:
    phrases = {
        "shirt": _color_phrases(SOURCE_COLOR_WORDS, ("shirt",)),
        "pants": _color_phrases(SOURCE_COLOR_WORDS, ("pants",)),
        "hat": {"none": ("no hat",), "cap": ("a cap",), "beanie": ("a beanie",), "hood": ("a hood",)},
        "bag": {"none": ("no bag",), "backpack": ("a backpack",), "handbag": ("a handbag",),
                "suitcase": ("a suitcase",)},
        "build": {"slim": ("slim build",), "average": ("average build",), "broad": ("broad build",),
                  "heavy": ("heavy build",)},
        "accessory": {"none": ("no accessory",), "scarf": ("a scarf",), "glasses": ("glasses",),
                      "belt": ("a belt",)},
    }
    templates = (
        "a photo of a person with {attrs}",
        "an image of someone with {attrs}",
        "a picture of a person having {attrs}",
    )
    return DomainStyle("source", templates, phrases,
                       color_matrix=((1, 0, 0), (0, 1, 0), (0, 0, 1)), color_offset=(0, 0, 0),
                       background=(0.55, 0.6, 0.55), noise=noise, jitter=jitter)


def target_style(noise: float = 0.06, jitter: int = 1) -> DomainStyle:
    phrases = {
        "shirt": _color_phrases(TARGET_COLOR_WORDS, ("top", "jacket")),
        "pants": _color_phrases(TARGET_COLOR_WORDS, ("trousers", "jeans")),
        "hat": {"none": ("bare head",), "cap": ("baseball hat",), "beanie": ("knit hat",),
                "hood": ("hooded head",)},
        "bag": {"none": ("empty hands",), "backpack": ("rucksack",), "handbag": ("purse",),
                "suitcase": ("luggage",)},
        "build": {"slim": ("thin figure",), "average": ("normal figure",), "broad": ("stocky figure",),
                  "heavy": ("large figure",)},
        "accessory": {"none": ("nothing extra",), "scarf": ("muffler",), "glasses": ("spectacles",),
                      "belt": ("waistband",)},
    }
    templates = (
        "the pedestrian is walking and has {attrs}",
        "this man wears {attrs}",
        "the woman in the video has {attrs}",
    )
    return DomainStyle("target", templates, phrases,
                       color_matrix=((0.7, 0.2, 0.1), (0.15, 0.6, 0.25), (0.1, 0.25, 0.65)),
                       color_offset=(0.12, 0.1, 0.05),
                       background=(0.3, 0.3, 0.38), noise=noise, jitter=jitter)


@dataclass
class IdentitySpec:
    person_id: int
    attributes: dict

    def vector(self) -> tuple:
        return tuple(SCHEMA[s].index(self.attributes[s]) for s in SLOTS)


def gen_identities(count: int, seed: int, schema: Optional[dict] = None, id_offset: int = 0) -> list[IdentitySpec]:
    """``count`` identities with distinct attribute vectors, deterministic in ``seed``."""
    schema = schema or SCHEMA
    slots = tuple(schema)
    dims = tuple(len(schema[s]) for s in slots)
    total = int(np.prod(dims))
    if count < 0 or count > total:
        raise ValueError(f"cannot draw {count} distinct identities from {total} combinations")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=count, replace=False)
    out = []
    for i, f in enumerate(flat):
        idx = np.unravel_index(int(f), dims)
        out.append(IdentitySpec(id_offset + i, {s: schema[s][int(j)] for s, j in zip(slots, idx)}))
    return out


def render_image(identity: IdentitySpec, style: DomainStyle, seed: int, H: int = 32, W: int = 16) -> np.ndarray:
    """Paint a (H, W, 3) figure whose regions encode the identity's attributes."""
    rng = np.random.default_rng(seed)
    a = identity.attributes
    sy, sx = H / 32.0, W / 16.0

    def rows(r0, r1):
        return slice(int(round(r0 * sy)), int(round(r1 * sy)))

    def cols(c0, c1):
        return slice(max(0, int(round(c0 * sx))), min(W, int(round(c1 * sx))))

    img = np.empty((H, W, 3))
    img[:] = np.asarray(style.background)
    width = BUILD_WIDTH[a["build"]]
    c0 = 8 - width // 2
    c1 = c0 + width
    img[rows(2, 8), cols(6, 10)] = style.palette("skin")
    if a["hat"] != "none":
        r = {"cap": (1, 3), "beanie": (0, 4), "hood": (0, 6)}[a["hat"]]
        c = (5, 11) if a["hat"] != "hood" else (4, 12)
        img[rows(*r), cols(*c)] = style.palette(a["hat"])
    img[rows(8, 16), cols(c0, c1)] = style.palette(a["shirt"])
    img[rows(16, 28), cols(c0, c1)] = style.palette(a["pants"])
    img[rows(28, 32), cols(c0 + 1, c1 - 1)] = style.palette("shoe")
    bag = a["bag"]
    if bag == "backpack":
        img[rows(9, 17), cols(c1, c1 + 3)] = style.palette("backpack")
    elif bag == "handbag":
        img[rows(15, 20), cols(c0 - 3, c0)] = style.palette("handbag")
    elif bag == "suitcase":
        img[rows(21, 30), cols(c1 + 1, c1 + 4)] = style.palette("suitcase")
    acc = a["accessory"]
    if acc == "scarf":
        img[rows(8, 10), cols(c0, c1)] = style.palette("scarf")
    elif acc == "glasses":
        img[rows(4, 5), cols(6, 10)] = style.palette("glasses")
    elif acc == "belt":
        img[rows(15, 17), cols(c0, c1)] = style.palette("belt")
    if style.jitter:
        dy, dx = rng.integers(-style.jitter, style.jitter + 1, size=2)
        shifted = np.empty_like(img)
        shifted[:] = np.asarray(style.background)
        ys = slice(max(0, dy), H + min(0, dy))
        yd = slice(max(0, -dy), H + min(0, -dy))
        xs = slice(max(0, dx), W + min(0, dx))
        xd = slice(max(0, -dx), W + min(0, -dx))
        shifted[ys, xs] = img[yd, xd]
        img = shifted
    if style.noise:
        img = img + rng.normal(0.0, style.noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def render_caption(identity: IdentitySpec, style: DomainStyle, seed: int, min_attrs: int = 3) -> str:
    """Template filled with the style's phrases for a random subset (>= ``min_attrs``) of attributes."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(min_attrs, len(SLOTS) + 1))
    chosen = [SLOTS[i] for i in sorted(rng.choice(len(SLOTS), size=k, replace=False))]
    parts = []
    for slot in chosen:
        alts = style.phrases[slot][identity.attributes[slot]]
        parts.append(alts[int(rng.integers(len(alts)))])
    attrs = " , ".join(parts[:-1]) + " and " + parts[-1]
    template = style.templates[int(rng.integers(len(style.templates)))]
    return template.format(attrs=attrs)


@dataclass
class DataConfig:
    source_train_ids: int = 160
    source_val_ids: int = 20
    source_test_ids: int = 20
    source_images_per_id: int = 6
    target_train_ids: int = 60
    target_val_ids: int = 0
    target_test_ids: int = 20
    target_images_per_id: int = 4
    captions_per_image: int = 2
    image_h: int = 32
    image_w: int = 16
    source_noise: float = 0.02
    target_noise: float = 0.06
    jitter: int = 1

    def validate(self) -> None:
        for k, v in asdict(self).items():
            if isinstance(v, (int, float)) and v < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.source_train_ids == 0 or self.target_train_ids == 0 or self.target_test_ids == 0:
            raise ValueError("train and test splits need at least one identity")
        if min(self.source_images_per_id, self.target_images_per_id, self.captions_per_image) < 1:
            raise ValueError("need at least one image per identity and one caption per image")


@dataclass
class Partition:
    """One split: images, their person ids, and captions pointing at images."""

    name: str
    domain: str
    images: np.ndarray
    image_ids: np.ndarray
    captions: list
    caption_ids: np.ndarray
    caption_image: np.ndarray

    def __len__(self) -> int:
        return len(self.captions)

    @property
    def identities(self) -> np.ndarray:
        return np.unique(self.image_ids)


@dataclass
class DatasetSplit:
    domain: str
    style: DomainStyle
    identities: list
    train: Partition
    val: Partition
    test: Partition

    def partition(self, name: str) -> Partition:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


_DOMAIN_CODE = {"source": 1, "target": 2}
_SPLIT_CODE = {"train": 1, "val": 2, "test": 3}


def _sample_seed(master: int, domain: str, split: str, kind: int, index: int) -> int:
    ss = np.random.SeedSequence([master, _DOMAIN_CODE[domain], _SPLIT_CODE[split], kind, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _build_partition(name, domain, idents, style, n_img, n_cap, master, H, W) -> Partition:
    images, image_ids, captions, caption_ids, caption_image = [], [], [], [], []
    for ident in idents:
        for _ in range(n_img):
            k = len(images)
            images.append(render_image(ident, style, _sample_seed(master, domain, name, 0, k), H, W))
            image_ids.append(ident.person_id)
            for c in range(n_cap):
                seed = _sample_seed(master, domain, name, 1, k * n_cap + c)
                captions.append(render_caption(ident, style, seed))
                caption_ids.append(ident.person_id)
                caption_image.append(k)
    imgs = np.stack(images) if images else np.zeros((0, H, W, 3))
    return Partition(name, domain, imgs, np.asarray(image_ids, dtype=np.int64), captions,
                     np.asarray(caption_ids, dtype=np.int64), np.asarray(caption_image, dtype=np.int64))


def make_domain(domain: str, style: DomainStyle, counts: tuple, n_img: int, n_cap: int,
                seed: int, id_offset: int, H: int, W: int) -> DatasetSplit:
    n_train, n_val, n_test = counts
    idents = gen_identities(n_train + n_val + n_test, seed * 7919 + _DOMAIN_CODE[domain], id_offset=id_offset)
    parts = {}
    bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val),
              "test": (n_train + n_val, n_train + n_val + n_test)}
    for name, (lo, hi) in bounds.items():
        parts[name] = _build_partition(name, domain, idents[lo:hi], style, n_img, n_cap, seed, H, W)
    return DatasetSplit(domain, style, idents, parts["train"], parts["val"], parts["test"])


TARGET_ID_OFFSET = 10_000


def make_domain_pair(config: Optional[DataConfig] = None, seed: int = 0) -> tuple[DatasetSplit, DatasetSplit]:
    cfg = config or DataConfig()
    cfg.validate()
    src = make_domain("source", source_style(cfg.source_noise, cfg.jitter),
                      (cfg.source_train_ids, cfg.source_val_ids, cfg.source_test_ids),
                      cfg.source_images_per_id, cfg.captions_per_image, seed, 0, cfg.image_h, cfg.image_w)
    tgt = make_domain("target", target_style(cfg.target_noise, cfg.jitter),
                      (cfg.target_train_ids, cfg.target_val_ids, cfg.target_test_ids),
                      cfg.target_images_per_id, cfg.captions_per_image, seed, TARGET_ID_OFFSET,
                      cfg.image_h, cfg.image_w)
    return src, tgt


def corpus_words(*styles: DomainStyle) -> list[str]:
    words: set[str] = {","}
    for s in styles:
        words |= s.words()
    return sorted(words)


# ---------------------------------------------------------------------------
# on-disk corpus
# ---------------------------------------------------------------------------

def save_partition(part: Partition, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    imgs = np.ascontiguousarray(part.images, dtype="<f8")
    (d / "images.bin").write_bytes(imgs.tobytes())
    (d / "images.json").write_text(json.dumps({
        "count": int(imgs.shape[0]), "shape": list(imgs.shape[1:]), "dtype": "float64",
        "byte_order": "little", "person_ids": [int(x) for x in part.image_ids]}, indent=1))
    with (d / "samples.jsonl").open("w") as fh:
        for cap, pid, img in zip(part.captions, part.caption_ids, part.caption_image):
            fh.write(json.dumps({"caption": cap, "person_id": int(pid),
                                 "image": f"images.bin#{int(img)}"}) + "\n")


def load_partition(directory, name: str, domain: str) -> Partition:
    d = Path(directory)
    meta = json.loads((d / "images.json").read_text())
    shape = (meta["count"], *meta["shape"])
    imgs = np.frombuffer((d / "images.bin").read_bytes(), dtype="<f8").reshape(shape).astype(np.float64)
    captions, cids, cimg = [], [], []
    with (d / "samples.jsonl").open() as fh:
        for line in fh:
            rec = json.loads(line)
            captions.append(rec["caption"])
            cids.append(rec["person_id"])
            cimg.append(int(rec["image"].split("#")[1]))
    return Partition(name, domain, imgs, np.asarray(meta["person_ids"], dtype=np.int64), captions,
                     np.asarray(cids, dtype=np.int64), np.asarray(cimg, dtype=np.int64))


def save_corpus(root, source: DatasetSplit, target: DatasetSplit, config: DataConfig, seed: int) -> Path:
    root = Path(root)
    for ds in (source, target):
        for name in ("train", "val", "test"):
            save_partition(ds.partition(name), root / ds.domain / name)
    (root / "generator.json").write_text(json.dumps({"seed": seed, "config": asdict(config)},
                                                    indent=1, sort_keys=True))
    return root


def load_corpus(root) -> tuple[DatasetSplit, DatasetSplit, DataConfig, int]:
    root = Path(root)
    gen_path = root / "generator.json"
    if not gen_path.exists():
        raise FileNotFoundError(f"no corpus at {root} (missing generator.json); run gen-data first")
    gen = json.loads(gen_path.read_text())
    cfg = DataConfig(**gen["config"])
    out = []
    for domain, style in (("source", source_style(cfg.source_noise, cfg.jitter)),
                          ("target", target_style(cfg.target_noise, cfg.jitter))):
        parts = {n: load_partition(root / domain / n, n, domain) for n in ("train", "val", "test")}
        out.append(DatasetSplit(domain, style, [], parts["train"], parts["val"], parts["test"]))
    return out[0], out[1], cfg, gen["seed"]
