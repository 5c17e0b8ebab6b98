"""The conditional denoiser network and its exact gradients.

A small fully-connected stack maps a noised image x^t to a noise prediction,
conditioned on (t, c).  The conditioning row q = [time_embedding(t); c] is
injected twice per hidden layer: concatenated into the affine input and
through a learned per-feature affine modulation.  The read-out adds a gated
input skip (a per-pixel scale of x^t driven by the hidden features), which
carries the dominant linear term of a denoiser.  Composition over a concept
set is the plain sum of per-concept predictions.

Parameters are stored as float32 arrays (the checkpoint payload is float32
little-endian, so the in-memory representation round-trips bit-exactly);
every forward/backward pass upcasts to float64 so analytic gradients track
central finite differences to tight tolerances.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .concepts import ConceptSet, ConceptVector
from .errors import (
    ChecksumError,
    DataFormatError,
    NumericError,
    ParameterError,
    ShapeError,
    TruncationError,
    VersionError,
)
from .schedule import NoiseSchedule

_LAYER_PARTS = ("Wx", "Wq", "b", "G", "d", "S", "e")
_OUT_PARTS = ("Wx", "Wq", "b", "Vs", "Us", "cs")

CHECKPOINT_MAGIC = b"CSCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Shape descriptor: image dims, concept dim, stack widths, embedding dims.

    step_count is the diffusion T the time embedding is normalized by; it is
    part of the architecture because the network is only meaningful for the
    schedule length it was trained with.

    concept_encoding "rbf" expands a 2-D coordinate concept onto a grid of
    Gaussian bumps (raw entries kept in front); a small stack cannot express
    "pattern at position c" from raw coordinates, but it can from local
    features.  Gradients are chained through the encoding, so concept-space
    SGD is unaffected.  "raw" passes the concept through and is the right
    choice for one-hot label blocks.
    """

    image_shape: tuple[int, int, int]
    concept_dim: int
    step_count: int
    hidden_sizes: tuple[int, ...] = (64, 64)
    time_embed_dim: int = 16
    concept_encoding: str = "raw"
    rbf_grid: int = 6

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        object.__setattr__(self, "hidden_sizes", tuple(int(v) for v in self.hidden_sizes))
        if len(self.image_shape) != 3 or any(v < 1 for v in self.image_shape):
            raise ParameterError(f"image_shape must be (H, W, C) >= 1, got {self.image_shape}")
        if self.concept_dim < 1:
            raise ParameterError(f"concept_dim must be >= 1, got {self.concept_dim}")
        if self.step_count < 1:
            raise ParameterError(f"step_count must be >= 1, got {self.step_count}")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ParameterError(f"hidden_sizes must be non-empty positive, got {self.hidden_sizes}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ParameterError(f"time_embed_dim must be even >= 2, got {self.time_embed_dim}")
        if self.concept_encoding not in ("raw", "rbf"):
            raise ParameterError(f"concept_encoding must be raw or rbf, got {self.concept_encoding!r}")
        if self.concept_encoding == "rbf":
            if self.concept_dim != 2:
                raise ParameterError("rbf concept encoding requires concept_dim == 2")
            if self.rbf_grid < 2:
                raise ParameterError(f"rbf_grid must be >= 2, got {self.rbf_grid}")

    @property
    def n_pixels(self) -> int:
        h, w, c = self.image_shape
        return h * w * c

    @property
    def encoded_dim(self) -> int:
        if self.concept_encoding == "rbf":
            return self.concept_dim + self.rbf_grid ** 2
        return self.concept_dim

    @property
    def cond_dim(self) -> int:
        return self.time_embed_dim + self.encoded_dim

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Deterministic (name, shape) listing of every parameter tensor."""
        q = self.cond_dim
        shapes = []
        prev = self.n_pixels
        for l, h in enumerate(self.hidden_sizes):
            shapes += [
                (f"h{l}.Wx", (h, prev)), (f"h{l}.Wq", (h, q)), (f"h{l}.b", (h,)),
                (f"h{l}.G", (h, q)), (f"h{l}.d", (h,)),
                (f"h{l}.S", (h, q)), (f"h{l}.e", (h,)),
            ]
            prev = h
        n = self.n_pixels
        shapes += [
            ("out.Wx", (n, prev)), ("out.Wq", (n, q)), ("out.b", (n,)),
            ("out.Vs", (n, prev)), ("out.Us", (n, q)), ("out.cs", (n,)),
        ]
        return shapes

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "concept_dim": self.concept_dim,
            "step_count": self.step_count,
            "hidden_sizes": list(self.hidden_sizes),
            "time_embed_dim": self.time_embed_dim,
            "concept_encoding": self.concept_encoding,
            "rbf_grid": self.rbf_grid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            image_shape=tuple(d["image_shape"]),
            concept_dim=int(d["concept_dim"]),
            step_count=int(d["step_count"]),
            hidden_sizes=tuple(d["hidden_sizes"]),
            time_embed_dim=int(d["time_embed_dim"]),
            concept_encoding=d.get("concept_encoding", "raw"),
            rbf_grid=int(d.get("rbf_grid", 6)),
        )


class DenoiserParams:
    """All parameter tensors of one denoiser, float32, keyed by name.

    Mutation is owned by training; anything that writes into `arrays` must
    call invalidate() so the cached float64 views are rebuilt.
    """

    __slots__ = ("arch", "arrays", "_f64")

    def __init__(self, arch: Architecture, arrays: dict[str, np.ndarray]):
        expected = arch.param_shapes()
        if set(arrays) != {name for name, _ in expected}:
            raise ParameterError("parameter arrays do not match the architecture's tensor list")
        checked = {}
        for name, shape in expected:
            a = np.ascontiguousarray(arrays[name], dtype=np.float32)
            if a.shape != shape:
                raise ShapeError(f"tensor {name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise NumericError(f"tensor {name} contains non-finite entries")
            checked[name] = a
        self.arch = arch
        self.arrays = checked
        self._f64 = None

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def f64_views(self):
        """(layers, out) float64 tuples in kernel order; cached until invalidate()."""
        if self._f64 is None:
            layers = []
            for l in range(len(self.arch.hidden_sizes)):
                layers.append(tuple(
                    self.arrays[f"h{l}.{p}"].astype(np.float64) for p in _LAYER_PARTS
                ))
            out = tuple(self.arrays[f"out.{p}"].astype(np.float64) for p in _OUT_PARTS)
            self._f64 = (layers, out)
        return self._f64

    def invalidate(self) -> None:
        self._f64 = None

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def allclose(self, other: "DenoiserParams", **kw) -> bool:
        return all(np.allclose(self.arrays[k], other.arrays[k], **kw) for k in self.arrays)

    def equal_bits(self, other: "DenoiserParams") -> bool:
        return all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)

    @classmethod
    def zeros(cls, arch: Architecture) -> "DenoiserParams":
        return cls(arch, {n: np.zeros(s, np.float32) for n, s in arch.param_shapes()})


def init_params(arch: Architecture, seed: int) -> DenoiserParams:
    """Seeded initialization: scaled-normal affine weights, identity modulation,
    zero read-out (so a fresh network predicts exactly zero noise)."""
    gen = np.random.default_rng(seed)
    arrays = {}
    prev = arch.n_pixels
    q = arch.cond_dim
    for l, h in enumerate(arch.hidden_sizes):
        scale = 1.0 / np.sqrt(prev + q)
        arrays[f"h{l}.Wx"] = gen.normal(0.0, scale, (h, prev))
        arrays[f"h{l}.Wq"] = gen.normal(0.0, scale, (h, q))
        for p, shape in (("b", (h,)), ("G", (h, q)), ("d", (h,)),
                         ("S", (h, q)), ("e", (h,))):
            arrays[f"h{l}.{p}"] = np.zeros(shape)
        prev = h
    n = arch.n_pixels
    for name, shape in (("Wx", (n, prev)), ("Wq", (n, q)), ("b", (n,)),
                        ("Vs", (n, prev)), ("Us", (n, q)), ("cs", (n,))):
        arrays[f"out.{name}"] = np.zeros(shape)
    return DenoiserParams(arch, {k: v.astype(np.float32) for k, v in arrays.items()})


def time_embedding(t: int, step_count: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of t/step_count at octave-spaced frequencies."""
    tau = float(t) / float(step_count)
    half = dim // 2
    omegas = np.pi * np.exp2(np.arange(half, dtype=np.float64))
    return np.concatenate([np.sin(omegas * tau), np.cos(omegas * tau)])


def _rbf_basis(arch: Architecture):
    g = np.linspace(0.0, 1.0, arch.rbf_grid)
    gy, gx = np.meshgrid(g, g, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    scale = 1.0 / (arch.rbf_grid - 1)
    return centers, scale


def encode_concepts(arch: Architecture, concept_rows: np.ndarray) -> np.ndarray:
    """(B, concept_dim) raw concepts -> (B, encoded_dim) conditioning features."""
    C = np.ascontiguousarray(concept_rows, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != arch.concept_dim:
        raise ShapeError(f"concept rows have shape {C.shape}, expected (B, {arch.concept_dim})")
    if arch.concept_encoding == "raw":
        return C
    centers, scale = _rbf_basis(arch)
    d2 = ((C[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    phi = np.exp(-d2 / (2.0 * scale * scale))
    return np.concatenate([C, phi], axis=1)


def chain_encoding_grads(arch: Architecture, concept_rows: np.ndarray,
                         enc_grads: np.ndarray) -> np.ndarray:
    """Pull gradients w.r.t. encoded features back to the raw concepts."""
    if arch.concept_encoding == "raw":
        return enc_grads
    C = np.asarray(concept_rows, dtype=np.float64)
    centers, scale = _rbf_basis(arch)
    diff = centers[None, :, :] - C[:, None, :]
    phi = np.exp(-(diff ** 2).sum(axis=2) / (2.0 * scale * scale))
    jac = phi[:, :, None] * diff / (scale * scale)      # (B, G^2, 2)
    raw = enc_grads[:, :arch.concept_dim]
    return raw + np.einsum("bi,bij->bj", enc_grads[:, arch.concept_dim:], jac)


def build_queries(arch: Architecture, timesteps, concept_rows) -> np.ndarray:
    """Stack conditioning rows [time_embedding; encoded concept] for the kernels.

    timesteps is a scalar (shared by every row) or one integer per row;
    concept_rows is (B, concept_dim).
    """
    enc = encode_concepts(arch, concept_rows)
    B = enc.shape[0]
    Q = np.empty((B, arch.cond_dim))
    if np.isscalar(timesteps) or np.ndim(timesteps) == 0:
        Q[:, :arch.time_embed_dim] = time_embedding(int(timesteps), arch.step_count, arch.time_embed_dim)
    else:
        for i, t in enumerate(timesteps):
            Q[i, :arch.time_embed_dim] = time_embedding(int(t), arch.step_count, arch.time_embed_dim)
    Q[:, arch.time_embed_dim:] = enc
    return Q


def _check_timestep(arch: Architecture, t) -> int:
    t = int(t)
    if not 1 <= t <= arch.step_count:
        raise ParameterError(f"timestep {t} outside [1, {arch.step_count}]")
    return t


def _flat_image(arch: Architecture, xt, name="xt") -> np.ndarray:
    a = np.asarray(xt, dtype=np.float64)
    if a.shape != arch.image_shape:
        raise ShapeError(f"{name} has shape {a.shape}, expected {arch.image_shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a.reshape(-1)


def _concept_values(arch: Architecture, c) -> np.ndarray:
    values = c.values if isinstance(c, ConceptVector) else np.asarray(c, dtype=np.float64)
    if values.shape != (arch.concept_dim,):
        raise ShapeError(f"concept has dimension {values.shape}, expected ({arch.concept_dim},)")
    return values


def denoise(params: DenoiserParams, xt, t: int, c) -> np.ndarray:
    """Single-concept noise prediction; pure function of its inputs."""
    arch = params.arch
    t = _check_timestep(arch, t)
    X = _flat_image(arch, xt)[None, :]
    Q = build_queries(arch, t, _concept_values(arch, c)[None, :])
    layers, out = params.f64_views()
    EPS = kernels.forward(layers, out, X, Q, False)
    return EPS[0].reshape(arch.image_shape)


def composed_denoise(params: DenoiserParams, xt, t: int, cset: ConceptSet) -> np.ndarray:
    """Sum of per-concept predictions over the set (the composed denoiser)."""
    arch = params.arch
    t = _check_timestep(arch, t)
    x = _flat_image(arch, xt)
    C = cset.matrix()
    if C.shape[1] != arch.concept_dim:
        raise ShapeError(f"concept dim {C.shape[1]} != architecture's {arch.concept_dim}")
    X = np.tile(x, (cset.k, 1))
    Q = build_queries(arch, t, C)
    layers, out = params.f64_views()
    EPS = kernels.forward(layers, out, X, Q, False)
    return EPS.sum(axis=0).reshape(arch.image_shape)


def _composed_backward(params, xt, t, cset, target_eps,
                       need_param_grads, need_q_grads):
    arch = params.arch
    t = _check_timestep(arch, t)
    x = _flat_image(arch, xt)
    target = _flat_image(arch, target_eps, "target_eps")
    C = cset.matrix()
    if C.shape[1] != arch.concept_dim:
        raise ShapeError(f"concept dim {C.shape[1]} != architecture's {arch.concept_dim}")
    K = cset.k
    X = np.tile(x, (K, 1))
    Q = build_queries(arch, t, C)
    layers, out = params.f64_views()
    EPS, cache = kernels.forward(layers, out, X, Q, True)
    resid = target - EPS.sum(axis=0)
    dEPS = np.tile(-2.0 * resid, (K, 1))
    pg, dQ = kernels.backward(layers, out, X, Q, cache, dEPS,
                              need_param_grads, need_q_grads)
    return pg, dQ, resid


def grad_concepts(params: DenoiserParams, xt, t: int, cset: ConceptSet,
                  target_eps) -> list[np.ndarray]:
    """d/dc^k of ||target - composed prediction||^2, one array per concept."""
    _, dQ, _ = _composed_backward(params, xt, t, cset, target_eps, False, True)
    te = params.arch.time_embed_dim
    grads = chain_encoding_grads(params.arch, cset.matrix(), dQ[:, te:])
    return [grads[k].copy() for k in range(cset.k)]


def grad_params(params: DenoiserParams, xt, t: int, cset: ConceptSet,
                target_eps) -> dict[str, np.ndarray]:
    """d/dtheta of ||target - composed prediction||^2, keyed like params.arrays."""
    pg, _, _ = _composed_backward(params, xt, t, cset, target_eps, True, False)
    return grads_to_dict(params.arch, pg)


def grads_to_dict(arch: Architecture, pg) -> dict[str, np.ndarray]:
    """Flatten the kernel's (layers, out) gradient structure into a name map."""
    layer_grads, out_grads = pg
    grads = {}
    for l, parts in enumerate(layer_grads):
        for p, g in zip(_LAYER_PARTS, parts):
            grads[f"h{l}.{p}"] = g
    for p, g in zip(_OUT_PARTS, out_grads):
        grads[f"out.{p}"] = g
    return grads


class NetworkModel:
    """Adapter giving a trained denoiser the interface the inference
    routines consume: per-sample residuals, concept gradients, and
    per-concept prediction terms.

    Residuals are computed from (x, eps, t) by noising x internally, which
    keeps every candidate scored against the identical noised image.
    """

    def __init__(self, params: DenoiserParams, schedule: NoiseSchedule):
        if params.arch.step_count != schedule.step_count:
            raise ParameterError(
                f"architecture was built for T={params.arch.step_count}, "
                f"schedule has T={schedule.step_count}"
            )
        self.params = params
        self.schedule = schedule

    @property
    def concept_dim(self) -> int:
        return self.params.arch.concept_dim

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.params.arch.image_shape

    def _noised(self, x, eps, t):
        arch = self.params.arch
        x = _flat_image(arch, x, "x")
        e = _flat_image(arch, eps, "eps")
        s, w = self.schedule.coeffs(t)
        return s * x + w * e, e

    def _rows(self, xt_flat, t, C_rows):
        arch = self.params.arch
        X = np.tile(xt_flat, (C_rows.shape[0], 1))
        Q = build_queries(arch, t, C_rows)
        return X, Q

    def residuals(self, x, eps, t, sets: np.ndarray) -> np.ndarray:
        """(R, n_pixels) residuals eps - composed prediction, one row per set.

        sets is (R, K, concept_dim); every set is scored on the same x^t.
        """
        R, K, _ = sets.shape
        xt, e = self._noised(x, eps, t)
        X, Q = self._rows(xt, t, sets.reshape(R * K, -1))
        layers, out = self.params.f64_views()
        EPS = kernels.forward(layers, out, X, Q, False)
        return e[None, :] - EPS.reshape(R, K, -1).sum(axis=1)

    def concept_grads(self, x, eps, t, sets: np.ndarray):
        """Gradients of ||residual||^2 per set: ((R, K, concept_dim), (R,) losses)."""
        R, K, _ = sets.shape
        xt, e = self._noised(x, eps, t)
        X, Q = self._rows(xt, t, sets.reshape(R * K, -1))
        layers, out = self.params.f64_views()
        EPS, cache = kernels.forward(layers, out, X, Q, True)
        resid = e[None, :] - EPS.reshape(R, K, -1).sum(axis=1)
        losses = np.einsum("rn,rn->r", resid, resid)
        dEPS = np.repeat(-2.0 * resid, K, axis=0)
        _, dQ = kernels.backward(layers, out, X, Q, cache, dEPS, False, True)
        te = self.params.arch.time_embed_dim
        grads = chain_encoding_grads(self.params.arch, sets.reshape(R * K, -1),
                                     dQ[:, te:])
        return grads.reshape(R, K, -1), losses

    def predict_terms(self, x, eps, t, concept_rows: np.ndarray) -> np.ndarray:
        """(V, n_pixels) per-concept predictions on the shared x^t."""
        xt, _ = self._noised(x, eps, t)
        X, Q = self._rows(xt, t, np.asarray(concept_rows, dtype=np.float64))
        layers, out = self.params.f64_views()
        return kernels.forward(layers, out, X, Q, False)


# --- checkpoint container ---------------------------------------------------
#
# magic "CSCK" | u32 version | u64 header length | header JSON (utf-8) |
# float32 little-endian tensor payloads in header order | sha256 of all
# preceding bytes.

def save_params(params: DenoiserParams, path, schedule_config: dict | None = None) -> None:
    header = {
        "arch": params.arch.to_dict(),
        "schedule": schedule_config,
        "tensors": [{"name": n, "shape": list(s)} for n, s in params.arch.param_shapes()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for name, _ in params.arch.param_shapes():
        blob += params.arrays[name].astype("<f4").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_params(path) -> tuple[DenoiserParams, dict | None]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise VersionError(version, CHECKPOINT_VERSION)
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if 16 + header_len + 32 > len(blob):
        raise TruncationError(f"{path}: header extends past end of file")
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    arch = Architecture.from_dict(header["arch"])
    sizes = [4 * int(np.prod(entry["shape"], dtype=np.int64))
             for entry in header["tensors"]]
    expected = 16 + header_len + sum(sizes) + 32
    if len(blob) < expected:
        raise TruncationError(f"{path}: file has {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise DataFormatError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    offset = 16 + header_len
    arrays = {}
    for entry, nbytes in zip(header["tensors"], sizes):
        shape = tuple(entry["shape"])
        arrays[entry["name"]] = np.frombuffer(
            body, dtype="<f4", count=nbytes // 4, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    return DenoiserParams(arch, arrays), header.get("schedule")
