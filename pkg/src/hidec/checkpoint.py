"""Single-file model checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"HIDECKPT"
    8       4     format version (uint32) = FORMAT_VERSION
    12      8     manifest length L in bytes (uint64)
    20      L     manifest: UTF-8 JSON, keys sorted, no trailing newline
    20+L    D     array data: raw little-endian C-order arrays, concatenated
    20+L+D  32    SHA-256 digest of bytes [0, 20+L+D)

The manifest holds ``config`` (training/model hyper-parameters),
``taxonomy`` (names and parent ids), ``taxonomy_hash``, ``vocabulary`` and
``arrays``: a list of ``{name, dtype, shape, offset, nbytes}`` records whose
offsets are relative to the start of the data section. ``dtype`` is a numpy
type string such as ``"<f4"``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encoder import Vocabulary
from .exceptions import ChecksumError, IncompatibleCheckpoint, TaxonomyMismatch
from .model import HiDECNetwork
from .taxonomy import Taxonomy

MAGIC = b"HIDECKPT"
FORMAT_VERSION = 1
SUFFIX = ".ckpt"
_HEADER = struct.Struct("<8sIQ")


@dataclass
class ModelBundle:
    model: HiDECNetwork
    vocabulary: Vocabulary
    config: object
    taxonomy: Taxonomy


def resolve(path) -> Path:
    """Accept a checkpoint path with or without its ``.ckpt`` suffix."""
    p = Path(path)
    if not p.exists() and p.suffix != SUFFIX and p.with_name(p.name + SUFFIX).exists():
        return p.with_name(p.name + SUFFIX)
    return p


def save_checkpoint(path, model: HiDECNetwork, vocabulary: Vocabulary, config, params=None) -> Path:
    """Write ``params`` (default: the model's current arrays).

    ``config`` is the TrainConfig the model was built from.
    """
    arrays = params if params is not None else model.store.arrays()
    records, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes(order="C")
        records.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    t = model.taxonomy
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "model_seed": model.seed,
        "taxonomy": {"names": list(t.names), "parents": list(t.parents)},
        "taxonomy_hash": t.content_hash(),
        "vocabulary": vocabulary.to_dict(),
        "arrays": records,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, len(mbytes)) + mbytes + b"".join(chunks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    return path


def read_manifest(path) -> tuple[dict, bytes]:
    data = resolve(path).read_bytes()
    if len(data) < _HEADER.size + 32:
        raise ChecksumError("file too short to be a checkpoint")
    magic, version, mlen = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ChecksumError("bad magic bytes; not a checkpoint or corrupted")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch (truncated or corrupted file)")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpoint(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    start = _HEADER.size
    try:
        manifest = json.loads(body[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"unreadable manifest: {exc}") from None
    return manifest, body[start + mlen:]


def load_checkpoint(path, taxonomy: Taxonomy | None = None) -> ModelBundle:
    from .training import TrainConfig

    manifest, blob = read_manifest(path)
    if taxonomy is not None and taxonomy.content_hash() != manifest["taxonomy_hash"]:
        raise TaxonomyMismatch("checkpoint was trained on a different taxonomy")
    tax = Taxonomy(manifest["taxonomy"]["names"], manifest["taxonomy"]["parents"])
    if tax.content_hash() != manifest["taxonomy_hash"]:
        raise ChecksumError("embedded taxonomy does not match its recorded hash")
    config = TrainConfig(**manifest["config"])
    vocab = Vocabulary.from_dict(manifest["vocabulary"])
    model = HiDECNetwork(tax, len(vocab), config.model_config(), seed=manifest["model_seed"], dtype=config.dtype)
    arrays = {}
    for rec in manifest["arrays"]:
        raw = blob[rec["offset"]:rec["offset"] + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise ChecksumError(f"array {rec['name']} truncated")
        arrays[rec["name"]] = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"])
    missing = set(model.store.names()) - set(arrays)
    if missing:
        raise IncompatibleCheckpoint(f"checkpoint lacks parameters {sorted(missing)}")
    model.store.load_arrays(arrays)
    return ModelBundle(model, vocab, config, tax)
