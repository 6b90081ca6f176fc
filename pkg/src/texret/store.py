"""Dataset ingestion, the binary signature index, and index queries.

Source images (PNG or portable pixmap) are cropped to 512x512, split
into 16 non-overlapping 128x128 patches, and normalized to [0, 1].  A
built index holds one signature per patch in a little-endian container
that round-trips every parameter bit-exactly.
"""

from __future__ import annotations

import hashlib
import io
import logging
import multiprocessing
import struct
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .divergence import (TLS_BACKEND_CLOSED, PreparedSignature, jeffery_prepared,
                         kld_prepared)
from .errors import (DataError, IncompatibleSignatureError,
                     IndexCorruptionError, IndexFormatError, IngestionError)
from .marginals import FAMILY_GG, FAMILY_TLS, GgParams, MarginalModel, TlsParams
from .nsst import NsstConfig
from .signatures import (SCHEME_INTRA, SCHEMES, CopulaGroup, Provenance,
                         Signature, extract_signature, scheme_groups,
                         subband_order)

log = logging.getLogger(__name__)

MAGIC = b"NSSTIDX1"
FORMAT_VERSION = 1

SOURCE_SIZE = 512
PATCH_SIZE = 128
PATCHES_PER_SIDE = SOURCE_SIZE // PATCH_SIZE
PATCHES_PER_SOURCE = PATCHES_PER_SIDE ** 2

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm"}

_FAMILY_TAGS = {FAMILY_GG: 1, FAMILY_TLS: 2}
_FAMILY_FROM_TAG = {v: k for k, v in _FAMILY_TAGS.items()}
_SCHEME_TAGS = {name: i + 1 for i, name in enumerate(SCHEMES)}
_SCHEME_FROM_TAG = {v: k for k, v in _SCHEME_TAGS.items()}


@dataclass
class PatchRecord:
    source: str
    patch_index: int
    pixels: np.ndarray  # (3, 128, 128) float64 in [0, 1]

    @property
    def class_id(self) -> str:
        return self.source

    @property
    def patch_id(self) -> str:
        return f"{self.source}_p{self.patch_index:02d}"


@dataclass
class DatasetManifest:
    """What was ingested: one row per accepted source image, plus a digest
    of the directory's image file names and byte sizes."""

    rows: list[tuple[str, int, int, int]] = field(default_factory=list)
    files: list[tuple[str, int]] = field(default_factory=list)

    def digest(self) -> bytes:
        return _fingerprint(self.files)

    def to_tsv(self) -> str:
        lines = ["stem\twidth\theight\tpatches"]
        lines += [f"{s}\t{w}\t{h}\t{c}" for s, w, h, c in sorted(self.rows)]
        return "\n".join(lines) + "\n"


def _fingerprint(files: list[tuple[str, int]]) -> bytes:
    h = hashlib.sha256()
    for name, size in sorted(files):
        h.update(f"{name}\t{size}\n".encode())
    return h.digest()


def dataset_fingerprint(directory) -> bytes:
    """Digest of a dataset directory's image file names and sizes; cheap
    enough to recompute without decoding anything."""
    directory = Path(directory)
    files = [(p.name, p.stat().st_size) for p in directory.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    return _fingerprint(files)


def verify_manifest(index: "Index", directory) -> None:
    """Raise if the dataset directory changed since the index was built."""
    actual = dataset_fingerprint(directory)
    if actual != index.manifest_digest:
        raise DataError(
            f"dataset directory {directory} does not match the index manifest "
            f"digest (files were added, removed, or resized)")


def _to_planes(img: Image.Image, name: str) -> np.ndarray:
    if img.mode in ("L", "I", "I;16"):
        log.warning("%s: grayscale source, replicating channel", name)
        img = img.convert("I;16") if img.mode == "I;16" else img
    if img.mode == "I;16":
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        arr = np.stack([arr] * 3, axis=0)
    else:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64).transpose(2, 0, 1) / 255.0
    return arr


def load_query_image(path) -> np.ndarray:
    """Decode one image to (3, H, W) planes normalized to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return _to_planes(img, path.name)
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot decode {path}: {exc}") from exc


def split_patches(planes: np.ndarray, source: str) -> list[PatchRecord]:
    """Crop to the top-left 512x512 and cut 16 patches in row-major order."""
    c, h, w = planes.shape
    if h < SOURCE_SIZE or w < SOURCE_SIZE:
        raise IngestionError(f"{source}: image {h}x{w} smaller than "
                             f"{SOURCE_SIZE}x{SOURCE_SIZE}")
    planes = planes[:, :SOURCE_SIZE, :SOURCE_SIZE]
    records = []
    for idx in range(PATCHES_PER_SOURCE):
        r = (idx // PATCHES_PER_SIDE) * PATCH_SIZE
        col = (idx % PATCHES_PER_SIDE) * PATCH_SIZE
        records.append(PatchRecord(
            source=source, patch_index=idx,
            pixels=planes[:, r:r + PATCH_SIZE, col:col + PATCH_SIZE].copy()))
    return records


def ingest_dataset(directory) -> tuple[list[PatchRecord], DatasetManifest]:
    """Split every decodable 512x512+ image in a directory into patches.

    Undecodable or undersized files are skipped with a warning.  The
    patch list is sorted by (stem, patch index) regardless of directory
    listing order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"not a directory: {directory}")
    records: list[PatchRecord] = []
    manifest = DatasetManifest()
    files = sorted(p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    for path in files:
        try:
            with Image.open(path) as img:
                planes = _to_planes(img, path.name)
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping %s: cannot decode (%s)", path.name, exc)
            continue
        try:
            patches = split_patches(planes, path.stem)
        except IngestionError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        records.extend(patches)
        manifest.rows.append((path.stem, planes.shape[2], planes.shape[1],
                              len(patches)))
        manifest.files.append((path.name, path.stat().st_size))
    if not records:
        log.warning("no usable images found in %s", directory)
    records.sort(key=lambda r: (r.source, r.patch_index))
    return records, manifest


# ---------------------------------------------------------------------------
# Binary index container
# ---------------------------------------------------------------------------

@dataclass
class Index:
    scheme: str
    family: str
    config: NsstConfig
    stride: int
    manifest_digest: bytes
    entries: dict[str, Signature] = field(default_factory=dict)


def _pack_signature(sig: Signature) -> bytes:
    buf = io.BytesIO()
    ident = sig.provenance.patch_id.encode()
    buf.write(struct.pack("<I", len(ident)))
    buf.write(ident)
    for model in sig.marginals:
        p = model.params
        if model.family == FAMILY_GG:
            vals = (p.alpha, p.beta, p.mu)
        else:
            vals = (p.mu, p.sigma, p.nu)
        buf.write(struct.pack("<B3d", _FAMILY_TAGS[model.family], *vals))
    for group in sig.groups:
        sigma = group.sigma
        k = sigma.shape[0]
        tri = sigma[np.tril_indices(k)]
        buf.write(struct.pack(f"<{tri.size}d", *tri))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexCorruptionError(f"truncated while reading {what}",
                                       offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _unpack_signature(reader: _Reader, scheme: str, family: str,
                      config: NsstConfig, stride: int) -> Signature:
    (id_len,) = reader.unpack("<I", "entry id length")
    patch_id = reader.take(id_len, "entry id").decode()
    marginals = []
    for _ in range(len(subband_order(config))):
        tag, a, b, c = reader.unpack("<B3d", "marginal record")
        fam = _FAMILY_FROM_TAG.get(tag)
        if fam != family:
            raise IndexCorruptionError(
                f"marginal family tag {tag} does not match index family",
                offset=reader.pos)
        if fam == FAMILY_GG:
            marginals.append(MarginalModel(fam, GgParams(alpha=a, beta=b, mu=c)))
        else:
            marginals.append(MarginalModel(fam, TlsParams(mu=a, sigma=b, nu=c)))
    groups = []
    member_lists = scheme_groups(scheme, config)
    for ids in member_lists:
        members = tuple(ids) * 2 if scheme == SCHEME_INTRA else tuple(ids)
        k = len(members)
        tri = np.array(reader.unpack(f"<{k * (k + 1) // 2}d", "sigma block"))
        sigma = np.zeros((k, k))
        sigma[np.tril_indices(k)] = tri
        sigma = sigma + np.tril(sigma, -1).T
        groups.append(CopulaGroup(members=members, sigma=sigma))
    return Signature(scheme=scheme, family=family, config=config,
                     marginals=marginals, groups=groups,
                     provenance=Provenance(patch_id=patch_id, stride=stride))


def save_index(index: Index, path) -> None:
    """Write the index container; entries are stored sorted by patch id."""
    path = Path(path)
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = index.config
    buf.write(struct.pack("<IBBBI", FORMAT_VERSION,
                          _SCHEME_TAGS[index.scheme],
                          _FAMILY_TAGS[index.family],
                          cfg.scales, index.stride))
    buf.write(struct.pack(f"<{cfg.scales}I", *cfg.directions_per_scale))
    buf.write(struct.pack("<I", cfg.pyramid_filter_length))
    buf.write(index.manifest_digest)
    buf.write(struct.pack("<Q", len(index.entries)))
    for patch_id in sorted(index.entries):
        buf.write(_pack_signature(index.entries[patch_id]))
    path.write_bytes(buf.getvalue())


def load_index(path) -> Index:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc}") from exc
    reader = _Reader(blob)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not an index file")
    version, scheme_tag, family_tag, scales, stride = reader.unpack(
        "<IBBBI", "header")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported format version {version}")
    scheme = _SCHEME_FROM_TAG.get(scheme_tag)
    family = _FAMILY_FROM_TAG.get(family_tag)
    if scheme is None or family is None:
        raise IndexFormatError(f"{path}: unknown scheme/family tags "
                               f"({scheme_tag}, {family_tag})")
    dirs = reader.unpack(f"<{scales}I", "directions")
    (filter_length,) = reader.unpack("<I", "filter length")
    config = NsstConfig(scales=scales, directions_per_scale=tuple(dirs),
                        pyramid_filter_length=filter_length)
    digest = reader.take(32, "manifest digest")
    (n_entries,) = reader.unpack("<Q", "entry count")
    entries: dict[str, Signature] = {}
    for _ in range(n_entries):
        sig = _unpack_signature(reader, scheme, family, config, stride)
        entries[sig.provenance.patch_id] = sig
    if reader.pos != len(reader.data):
        raise IndexCorruptionError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes",
            offset=reader.pos)
    if len(entries) != n_entries:
        raise IndexCorruptionError(f"{path}: duplicate entry ids")
    return Index(scheme=scheme, family=family, config=config, stride=stride,
                 manifest_digest=digest, entries=entries)


# ---------------------------------------------------------------------------
# Index building and querying
# ---------------------------------------------------------------------------

def _extract_task(task) -> tuple[str, Signature]:
    pixels, scheme, family, config, stride, patch_id = task
    sig = extract_signature(list(pixels), scheme, family, config,
                            stride=stride, patch_id=patch_id)
    return patch_id, sig


def build_index(records: list[PatchRecord], manifest: DatasetManifest,
                scheme: str, family: str, config: NsstConfig,
                stride: int = 1, jobs: int = 1,
                progress=None) -> Index:
    """Extract a signature per patch, optionally across worker processes.

    Extraction is pure per patch, so the result is identical at any
    parallelism degree; entries are assembled sorted by patch id.
    """
    index = Index(scheme=scheme, family=family, config=config, stride=stride,
                  manifest_digest=manifest.digest())
    tasks = [(r.pixels, scheme, family, config, stride, r.patch_id)
             for r in records]

    if jobs <= 1:
        results = map(_extract_task, tasks)
        for i, (patch_id, sig) in enumerate(results):
            index.entries[patch_id] = sig
            if progress:
                progress(i + 1, len(records))
    else:
        # Worker processes: the heavy lifting is numpy/scipy calls on
        # modest arrays whose Python overhead starves threads of speedup.
        ctx = multiprocessing.get_context("fork" if "fork" in
                                          multiprocessing.get_all_start_methods()
                                          else None)
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            for i, (patch_id, sig) in enumerate(pool.map(_extract_task, tasks,
                                                         chunksize=4)):
                index.entries[patch_id] = sig
                if progress:
                    progress(i + 1, len(records))
    index.entries = dict(sorted(index.entries.items()))
    return index


def check_query_compatible(index: Index, q: Signature) -> None:
    if (q.scheme, q.family, q.config) != (index.scheme, index.family,
                                          index.config):
        raise IncompatibleSignatureError(
            f"query ({q.scheme}, {q.family}, {q.config}) does not match index "
            f"({index.scheme}, {index.family}, {index.config})")


def query_index(index: Index, q: Signature, top_k: int, jobs: int = 1,
                tls_backend: str = TLS_BACKEND_CLOSED) -> list[tuple[str, float]]:
    """Rank index entries by symmetric divergence to the query, ascending.

    Ties break on ascending patch id; a ``top_k`` beyond the index size
    returns the full ranking.
    """
    check_query_compatible(index, q)
    q_prep = PreparedSignature.build(q)
    ids = sorted(index.entries)
    preps = _prepare_entries(index, ids, jobs)

    def jd_for(i: int) -> float:
        return jeffery_prepared(preps[i], q_prep, tls_backend)

    values = _parallel_map(jd_for, len(ids), jobs)
    ranked = sorted(zip(ids, values), key=lambda pair: (pair[1], pair[0]))
    return ranked[:max(0, min(top_k, len(ranked)))]


def _prepare_entries(index: Index, ids: list[str], jobs: int) -> list[PreparedSignature]:
    def prep(i: int) -> PreparedSignature:
        return PreparedSignature.build(index.entries[ids[i]])

    return _parallel_map(prep, len(ids), jobs)


def _parallel_map(fn, count: int, jobs: int) -> list:
    if jobs <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(count)))


def pairwise_jeffery(index: Index, jobs: int = 1,
                     tls_backend: str = TLS_BACKEND_CLOSED) -> tuple[list[str], np.ndarray]:
    """Full symmetric divergence matrix over all entries (diagonal zero)."""
    ids = sorted(index.entries)
    n = len(ids)
    preps = _prepare_entries(index, ids, jobs)
    matrix = np.zeros((n, n))

    def fill_row(i: int) -> np.ndarray:
        row = np.zeros(n)
        for j in range(i + 1, n):
            row[j] = (kld_prepared(preps[i], preps[j], tls_backend).value
                      + kld_prepared(preps[j], preps[i], tls_backend).value)
        return row

    rows = _parallel_map(fill_row, n, jobs)
    for i, row in enumerate(rows):
        matrix[i, i + 1:] = row[i + 1:]
        matrix[i + 1:, i] = row[i + 1:]
    return ids, matrix
