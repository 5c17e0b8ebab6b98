"""Procedural blob world: scene specs, rendering, and the dataset container.

Scenes are additive radial bumps on a flat background.  The local-factor task
varies object coordinates; the global-factor task varies three binary
attributes (background level, border frame, disc/ring style) on a single
jittered blob.  Palettes give OOD splits a controlled style shift.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .concepts import ConceptSet, ConceptVector, coordinate_set, onehot_set
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    ParameterError,
    TruncationError,
    VersionError,
)

DATASET_MAGIC = b"CSDS"
DATASET_VERSION = 1

TASK_LOCAL = "local"
TASK_GLOBAL = "global"

# palette id -> blob amplitude, width multiplier, channel tint
PALETTES = {
    0: {"amplitude": 0.85, "edge": 1.0, "tint": (1.0, 0.85, 0.7)},
    1: {"amplitude": 0.60, "edge": 1.3, "tint": (0.7, 0.85, 1.0)},
}

_BG_LEVELS = (0.15, 0.45)     # attribute 0: dark / light background
_BORDER_VALUE = 0.9           # attribute 1: one-pixel frame
_PROFILE_GAIN = (1.0, 0.75, 0.55)


def pixel_centers(h: int, w: int) -> np.ndarray:
    """(h*w, 2) grid of pixel-center coordinates (px, py) in [0, 1]^2."""
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    py, px = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([px.ravel(), py.ravel()], axis=1)


@dataclass(frozen=True)
class BlobSpec:
    cx: float
    cy: float
    radius: float = 0.12
    profile: int = 0

    def to_dict(self):
        return {"cx": self.cx, "cy": self.cy, "radius": self.radius, "profile": self.profile}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cx"]), float(d["cy"]), float(d["radius"]), int(d["profile"]))


@dataclass(frozen=True)
class SceneSpec:
    """Everything the renderer needs; rendering is a pure function of this."""

    image_shape: tuple[int, int, int] = (32, 32, 1)
    objects: tuple[BlobSpec, ...] = ()
    attributes: tuple[int, ...] = (0, 0, 0)
    palette: int = 0
    margin: float = 0.1
    seed: int | None = None   # texture noise; None renders noise-free

    def to_dict(self):
        return {
            "image_shape": list(self.image_shape),
            "objects": [o.to_dict() for o in self.objects],
            "attributes": list(self.attributes),
            "palette": self.palette,
            "margin": self.margin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_shape=tuple(d["image_shape"]),
            objects=tuple(BlobSpec.from_dict(o) for o in d["objects"]),
            attributes=tuple(int(a) for a in d["attributes"]),
            palette=int(d["palette"]),
            margin=float(d["margin"]),
            seed=d["seed"],
        )


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Render to a float32 (H, W, C) image in [0, 1]."""
    h, w, c = spec.image_shape
    attrs = spec.attributes
    bg = _BG_LEVELS[attrs[0] if len(attrs) > 0 else 0]
    ring = bool(attrs[2]) if len(attrs) > 2 else False
    palette = PALETTES[spec.palette]

    grid = pixel_centers(h, w)
    img = np.full(h * w, bg)
    lo, hi = spec.margin, 1.0 - spec.margin
    for obj in spec.objects:
        if not (lo <= obj.cx <= hi and lo <= obj.cy <= hi):
            raise ParameterError(
                f"blob center ({obj.cx}, {obj.cy}) outside [{lo}, {hi}]"
            )
        sigma = 0.5 * obj.radius * palette["edge"]
        amp = palette["amplitude"] * _PROFILE_GAIN[obj.profile % len(_PROFILE_GAIN)]
        r2 = (grid[:, 0] - obj.cx) ** 2 + (grid[:, 1] - obj.cy) ** 2
        bump = np.exp(-r2 / (2.0 * sigma * sigma))
        if ring:
            bump = bump - np.exp(-2.0 * r2 / (sigma * sigma))
        img += amp * bump

    img = img.reshape(h, w)
    if len(attrs) > 1 and attrs[1]:
        img[0, :] = _BORDER_VALUE
        img[-1, :] = _BORDER_VALUE
        img[:, 0] = _BORDER_VALUE
        img[:, -1] = _BORDER_VALUE

    if spec.seed is not None:
        gen = np.random.default_rng(spec.seed)
        img = img + gen.normal(0.0, 0.01, img.shape)

    img = np.clip(img, 0.0, 1.0)
    if c == 1:
        out = img[:, :, None]
    else:
        tint = palette["tint"][:c]
        out = bg + (img[:, :, None] - bg) * np.asarray(tint)
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


def scene_concepts(spec: SceneSpec, task: str) -> ConceptSet:
    """Ground-truth concept set for a scene under the given task."""
    if task == TASK_LOCAL:
        return coordinate_set([(o.cx, o.cy) for o in spec.objects])
    if task == TASK_GLOBAL:
        return onehot_set(spec.attributes)
    raise ParameterError(f"unknown task {task!r}")


@dataclass
class SceneRecord:
    image: np.ndarray
    concepts: ConceptSet
    spec: SceneSpec


@dataclass
class DatasetHeader:
    image_shape: tuple[int, int, int]
    task: str
    concept_kind: str
    concept_dim: int
    count: int
    split: dict
    options: dict = field(default_factory=dict)
    version: int = DATASET_VERSION

    def to_dict(self):
        return {
            "image_shape": list(self.image_shape),
            "task": self.task,
            "concept_kind": self.concept_kind,
            "concept_dim": self.concept_dim,
            "count": self.count,
            "split": self.split,
            "options": self.options,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_shape=tuple(d["image_shape"]),
            task=d["task"],
            concept_kind=d["concept_kind"],
            concept_dim=int(d["concept_dim"]),
            count=int(d["count"]),
            split=dict(d["split"]),
            options=dict(d.get("options", {})),
            version=int(d["version"]),
        )


@dataclass
class SceneDataset:
    header: DatasetHeader
    records: list[SceneRecord]

    def __len__(self):
        return len(self.records)


def _place_centers(gen, k, margin, min_sep, max_restarts=20):
    lo, hi = margin, 1.0 - margin
    for _ in range(max_restarts):
        centers = []
        ok = True
        for _ in range(k):
            for _attempt in range(200):
                cand = gen.uniform(lo, hi, 2)
                if all(np.hypot(*(cand - c)) >= min_sep for c in centers):
                    centers.append(cand)
                    break
            else:
                ok = False
                break
        if ok:
            return centers
    raise ConfigError(
        f"could not place {k} centers with min separation {min_sep} "
        f"inside [{lo}, {hi}]^2"
    )


def sample_dataset(
    task: str,
    count: int,
    k_range: tuple[int, int] = (1, 2),
    palette: int = 0,
    seed: int = 0,
    image_shape: tuple[int, int, int] = (32, 32, 1),
    min_sep: float = 0.15,
    margin: float = 0.1,
    radius: float = 0.12,
    jitter: float = 0.08,
    n_attrs: int = 3,
    profiles: tuple[int, ...] = (0, 1, 2),
) -> SceneDataset:
    """Draw `count` seeded scenes and render them into a dataset.

    Local-task objects draw their intensity profile uniformly from
    `profiles`, so total brightness does not identify the object count.
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if task not in (TASK_LOCAL, TASK_GLOBAL):
        raise ParameterError(f"unknown task {task!r}")
    if palette not in PALETTES:
        raise ParameterError(f"unknown palette {palette!r}")
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if not 1 <= k_min <= k_max:
        raise ParameterError(f"bad k_range {k_range}")

    records = []
    for child in np.random.SeedSequence(seed).spawn(count):
        gen = np.random.default_rng(child)
        if task == TASK_LOCAL:
            k = int(gen.integers(k_min, k_max + 1))
            centers = _place_centers(gen, k, margin, min_sep)
            chosen = [int(p) for p in gen.choice(profiles, size=k)]
            spec = SceneSpec(
                image_shape=image_shape,
                objects=tuple(BlobSpec(float(c[0]), float(c[1]), radius, prof)
                              for c, prof in zip(centers, chosen)),
                attributes=(0, 0, 0),
                palette=palette,
                margin=margin,
            )
        else:
            center = 0.5 + gen.uniform(-jitter, jitter, 2)
            attrs = tuple(int(b) for b in gen.integers(0, 2, n_attrs))
            spec = SceneSpec(
                image_shape=image_shape,
                objects=(BlobSpec(float(center[0]), float(center[1]), 0.25),),
                attributes=attrs,
                palette=palette,
                margin=margin,
            )
        records.append(SceneRecord(render_scene(spec), scene_concepts(spec, task), spec))

    first = records[0].concepts
    header = DatasetHeader(
        image_shape=tuple(image_shape),
        task=task,
        concept_kind=first.kind,
        concept_dim=first.dim,
        count=count,
        split={"palette": palette, "k_min": k_min, "k_max": k_max},
        options={
            "min_sep": min_sep, "margin": margin, "radius": radius,
            "jitter": jitter, "n_attrs": n_attrs, "seed": seed,
        },
    )
    return SceneDataset(header, records)


def splits_disjoint(a: DatasetHeader, b: DatasetHeader) -> bool:
    """True when two split descriptors share no palette and no K value."""
    palettes_clash = a.split.get("palette") == b.split.get("palette")
    ks_clash = not (
        a.split["k_max"] < b.split["k_min"] or b.split["k_max"] < a.split["k_min"]
    )
    return not (palettes_clash or ks_clash)


# --- container ---------------------------------------------------------------
#
# magic "CSDS" | u32 version | u64 header length | header JSON (includes every
# SceneSpec and concept values) | count * H * W * C float32 LE image payload |
# sha256 of all preceding bytes.

def save_dataset(dataset: SceneDataset, path) -> None:
    header = dataset.header.to_dict()
    header["records"] = [
        {
            "spec": rec.spec.to_dict(),
            "concepts": [list(map(float, c.values)) for c in rec.concepts.concepts],
        }
        for rec in dataset.records
    ]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += DATASET_MAGIC
    blob += struct.pack("<I", DATASET_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for rec in dataset.records:
        blob += np.ascontiguousarray(rec.image, dtype="<f4").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_dataset(path) -> SceneDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: not a dataset file (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != DATASET_VERSION:
        raise VersionError(version, DATASET_VERSION)
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if 16 + header_len + 32 > len(blob):
        raise TruncationError(f"{path}: header extends past end of file")
    raw = json.loads(blob[16:16 + header_len].decode("utf-8"))
    rec_meta = raw.pop("records")
    header = DatasetHeader.from_dict(raw)
    h, w, c = header.image_shape
    frame = h * w * c * 4
    expected = 16 + header_len + frame * len(rec_meta) + 32
    if len(blob) < expected:
        raise TruncationError(
            f"{path}: file has {len(blob)} bytes, expected {expected}"
        )
    if len(blob) > expected:
        raise DataFormatError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    offset = 16 + header_len
    kind = header.concept_kind
    records = []
    for meta in rec_meta:
        img = np.frombuffer(body, dtype="<f4", count=h * w * c, offset=offset)
        img = img.reshape(h, w, c).copy()
        offset += frame
        spec = SceneSpec.from_dict(meta["spec"])
        cset = ConceptSet(tuple(
            ConceptVector(np.asarray(vals, dtype=np.float64), kind)
            for vals in meta["concepts"]
        ))
        records.append(SceneRecord(img, cset, spec))
    return SceneDataset(header, records)


def describe(header: DatasetHeader) -> str:
    """Human-readable header summary for the CLI."""
    lines = [
        f"format version : {header.version}",
        f"task           : {header.task}",
        f"records        : {header.count}",
        f"image shape    : {header.image_shape}",
        f"concept kind   : {header.concept_kind} (dim {header.concept_dim})",
        f"split          : {json.dumps(header.split, sort_keys=True)}",
        f"options        : {json.dumps(header.options, sort_keys=True)}",
    ]
    return "\n".join(lines)
