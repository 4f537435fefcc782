"""Binary encoding of datasets and exact Hamming-ranking search.

The index is a flat bit-packed matrix scanned with XOR + popcount; at desk
scale an exact linear scan beats any sublinear structure and keeps results
reproducible. Ties in distance are broken by database position, so rankings
are fully deterministic.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import codes as cd
from . import encoder as enc
from .pairdata import Dataset

MANIFEST_FORMAT = "HNBC-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True, eq=False)
class CodeIndex:
    """N packed codes of common length, with stable ids and optional labels."""

    words: np.ndarray
    code_bits: int
    ids: np.ndarray
    labels: tuple[frozenset[int], ...] | None = None

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != cd.word_count(self.code_bits):
            raise ValueError(
                f"expected (N, {cd.word_count(self.code_bits)}) words for "
                f"{self.code_bits}-bit codes, got shape {words.shape}"
            )
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if ids.shape != (words.shape[0],):
            raise ValueError(f"ids shape {ids.shape} does not match {words.shape[0]} codes")
        if self.labels is not None and len(self.labels) != words.shape[0]:
            raise ValueError("labels must align with codes")
        words.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "ids", ids)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(frozenset(ls) for ls in self.labels))

    def __len__(self) -> int:
        return self.words.shape[0]

    @classmethod
    def from_codes(cls, codes, ids=None, labels=None) -> "CodeIndex":
        words, code_bits = cd.stack_codes(codes)
        if ids is None:
            ids = np.arange(words.shape[0], dtype=np.int64)
        return cls(words, code_bits, ids, labels)

    def code(self, position: int) -> cd.BinaryCode:
        return cd.BinaryCode(self.words[position].copy(), self.code_bits)


@dataclass(frozen=True)
class RankedResult:
    """Ranked (id, distance) entries, ascending distance, position-stable ties."""

    ids: np.ndarray
    distances: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.distances.tolist()))


def hamming_scan(index: CodeIndex, query: cd.BinaryCode, parts: int = 1) -> np.ndarray:
    """Distances from the query to every indexed code, in database order.

    ``parts > 1`` splits the scan into contiguous chunks (optionally serviced
    by a thread pool); the concatenation order is fixed, so the result is
    byte-identical to the single-part scan.
    """
    if query.length != index.code_bits:
        raise ValueError(f"query has {query.length} bits, index holds {index.code_bits}")
    if parts < 1:
        raise ValueError("parts must be at least 1")
    if parts == 1 or len(index) == 0:
        return np.bitwise_count(index.words ^ query.words).sum(axis=1, dtype=np.int64)
    bounds = np.linspace(0, len(index), parts + 1, dtype=np.int64)
    chunks = [index.words[a:b] for a, b in zip(bounds, bounds[1:])]
    with ThreadPoolExecutor(max_workers=parts) as pool:
        results = list(
            pool.map(lambda w: np.bitwise_count(w ^ query.words).sum(axis=1, dtype=np.int64), chunks)
        )
    return np.concatenate(results)


def rank(index: CodeIndex, query: cd.BinaryCode, top_n: int, parts: int = 1) -> RankedResult:
    """The ``top_n`` nearest codes by Hamming distance (exhaustive, exact)."""
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    distances = hamming_scan(index, query, parts)
    order = np.argsort(distances, kind="stable")[:top_n]
    return RankedResult(index.ids[order], distances[order], order)


def radius_query(index: CodeIndex, query: cd.BinaryCode, radius: int, parts: int = 1) -> RankedResult:
    """All codes within the given Hamming radius, in ranked order."""
    if not 0 <= radius <= index.code_bits:
        raise ValueError(f"radius must be in [0, {index.code_bits}], got {radius}")
    distances = hamming_scan(index, query, parts)
    keep = np.flatnonzero(distances <= radius)
    order = keep[np.argsort(distances[keep], kind="stable")]
    return RankedResult(index.ids[order], distances[order], order)


def encode_dataset(params: enc.EncoderParams, dataset: Dataset) -> list[cd.BinaryCode]:
    """Binary codes for every point: the signs of the hash-layer pre-activation."""
    if dataset.dim != params.input_dim:
        raise ValueError(f"dataset dim {dataset.dim} does not match encoder dim {params.input_dim}")
    z = enc.hash_preactivation(params, dataset.features.astype(np.float64))
    words = cd.pack_sign_matrix(z)
    k = params.code_bits
    return [cd.BinaryCode(words[i], k) for i in range(words.shape[0])]


def lsh_encode(points, code_bits: int, rng_seed) -> list[cd.BinaryCode]:
    """Baseline codes from the signs of seeded random Gaussian projections."""
    if code_bits < 1:
        raise ValueError("code_bits must be at least 1")
    features = points.features if isinstance(points, Dataset) else np.asarray(points)
    if features.ndim != 2:
        raise ValueError(f"expected (N, D) features, got shape {features.shape}")
    rng = np.random.default_rng(rng_seed)
    projections = rng.standard_normal((code_bits, features.shape[1]))
    z = features.astype(np.float64) @ projections.T
    words = cd.pack_sign_matrix(z)
    return [cd.BinaryCode(words[i], code_bits) for i in range(words.shape[0])]


def save_index(index: CodeIndex, codes_path, manifest_path=None) -> None:
    """Write the HNBC code file plus the JSON sidecar with ids and labels."""
    cd.write_code_file(codes_path, index.words, index.code_bits)
    if manifest_path is None:
        manifest_path = default_manifest_path(codes_path)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "code_bits": index.code_bits,
        "count": len(index),
        "ids": index.ids.tolist(),
        "labels": None if index.labels is None else [sorted(ls) for ls in index.labels],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True)
        fh.write("\n")


def default_manifest_path(codes_path) -> str:
    path = str(codes_path)
    stem = path[: -len(".hnbc")] if path.endswith(".hnbc") else path
    return stem + ".manifest.json"


def load_index(codes_path, manifest_path=None, require_manifest: bool = False) -> CodeIndex:
    """Read codes (and the manifest sidecar when present) back into an index."""
    words, code_bits = cd.read_code_file(codes_path)
    if manifest_path is None:
        candidate = default_manifest_path(codes_path)
        manifest_path = candidate if os.path.exists(candidate) else None
    if manifest_path is None:
        if require_manifest:
            raise ValueError(f"{codes_path}: no manifest found and one is required")
        return CodeIndex(words, code_bits, np.arange(words.shape[0], dtype=np.int64))
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{manifest_path}: not a recognized manifest")
    if manifest["code_bits"] != code_bits or manifest["count"] != words.shape[0]:
        raise ValueError(f"{manifest_path}: manifest does not match the code file")
    labels = manifest.get("labels")
    return CodeIndex(
        words,
        code_bits,
        np.asarray(manifest["ids"], dtype=np.int64),
        None if labels is None else tuple(frozenset(ls) for ls in labels),
    )
