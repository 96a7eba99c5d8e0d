"""On-disk formats and the synthetic layer-band dataset.

Stack file (``.emb``), all integers little-endian::

    offset  size  field
    0       4     magic  b"EMBS"
    4       4     version (u32) = 1
    8       4     T (u32)
    12      4     H (u32)
    16      4     L (u32)
    20      4*LTH payload, float32 LE, [l][t][h] order
    end     4     CRC-32 (u32) of every preceding byte

The [l][t][h] order means the first K layers are a prefix of the payload.

Parameter container (``.prm``)::

    b"PRMS", version (u32) = 1, meta length (u32), meta (UTF-8 JSON),
    count (u32), then per tensor: name length (u32), name (UTF-8),
    ndim (u32), dims (u32 each), payload float64 LE row-major;
    CRC-32 (u32) trailer over everything before it.

Key and score files are text, one ``<id> <bonafide|spoof>`` or
``<id> <float>`` record per line, single-space separated.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import tempfile
import zlib
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .encoder import EmbeddingStack
from .evaluation import LABELS, BONAFIDE, SPOOF
from .seeding import stream
from .tensor import Tensor

STACK_MAGIC = b"EMBS"
PARAM_MAGIC = b"PRMS"
FORMAT_VERSION = 1
STACK_HEADER = struct.Struct("<4sIIII")
STACK_SUFFIX = ".emb"
KEY_FILE = "key.txt"
MANIFEST_FILE = "manifest.json"


class FormatError(ValueError):
    """Base class for malformed files."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class LengthError(FormatError):
    """Declared dimensions disagree with the file size."""


class ChecksumError(FormatError):
    pass


class RecordError(FormatError):
    """Bad line in a key or score file."""


# --------------------------------------------------------------------------
# atomic writes
# --------------------------------------------------------------------------

def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# stack files
# --------------------------------------------------------------------------

def encode_stack(data: np.ndarray) -> bytes:
    T, H, L = data.shape
    header = STACK_HEADER.pack(STACK_MAGIC, FORMAT_VERSION, T, H, L)
    payload = np.ascontiguousarray(np.transpose(data, (2, 0, 1)), dtype="<f4").tobytes()
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_stack(raw: bytes, layer_cap: int | None = None) -> np.ndarray:
    """T x H x L float64 array from stack-file bytes."""
    if len(raw) < STACK_HEADER.size:
        raise TruncatedError(f"stack file has {len(raw)} bytes, header needs {STACK_HEADER.size}")
    magic, version, T, H, L = STACK_HEADER.unpack_from(raw)
    if magic != STACK_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {STACK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported stack version {version}")
    if min(T, H, L) < 1:
        raise LengthError(f"non-positive dimensions T={T} H={H} L={L}")
    expected = STACK_HEADER.size + 4 * T * H * L + 4
    if len(raw) < expected:
        raise TruncatedError(f"stack file has {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise LengthError(f"stack file has {len(raw)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", raw, expected - 4)
    if crc != zlib.crc32(raw[: expected - 4]):
        raise ChecksumError("stack file checksum mismatch")
    keep = L if layer_cap is None else layer_cap
    if not 1 <= keep <= L:
        raise ValueError(f"layer cap {keep} outside [1, {L}]")
    flat = np.frombuffer(raw, dtype="<f4", count=keep * T * H, offset=STACK_HEADER.size)
    return np.transpose(flat.reshape(keep, T, H), (1, 2, 0)).astype(np.float64)


def write_stack(path: str | os.PathLike, stack) -> None:
    data = stack.data.data if isinstance(stack, EmbeddingStack) else np.asarray(stack)
    if data.ndim != 3 or min(data.shape) < 1:
        raise ValueError(f"stack must be T x H x L, got {data.shape}")
    atomic_write_bytes(path, encode_stack(data))


def read_stack(path: str | os.PathLike, layer_cap: int | None = None) -> EmbeddingStack:
    path = Path(path)
    data = decode_stack(path.read_bytes(), layer_cap)
    return EmbeddingStack(Tensor(data), path.stem)


# --------------------------------------------------------------------------
# parameter container
# --------------------------------------------------------------------------

def encode_params(tensors: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> bytes:
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [PARAM_MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_raw)), meta_raw]
    parts.append(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_params(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(raw) < 20:
        raise TruncatedError(f"parameter file has only {len(raw)} bytes")
    if raw[:4] != PARAM_MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {PARAM_MAGIC!r}")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    body = raw[:-4]
    if crc != zlib.crc32(body):
        raise ChecksumError("parameter file checksum mismatch")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise TruncatedError("parameter file ends inside a record")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    version = u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported parameter file version {version}")
    try:
        meta = json.loads(take(u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from exc
    tensors = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8", errors="strict")
        ndim = u32()
        shape = tuple(u32() for _ in range(ndim))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(body):
        raise LengthError(f"{len(body) - pos} trailing bytes in parameter file")
    return tensors, meta


def save_params(path, tensors: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    atomic_write_bytes(path, encode_params(tensors, meta))


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_params(Path(path).read_bytes())


# --------------------------------------------------------------------------
# key and score files
# --------------------------------------------------------------------------

def _records(path) -> Iterable[tuple[int, str, str]]:
    text = Path(path).read_text(encoding="utf-8")
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise RecordError(f"{path}:{lineno}: expected '<id> <value>', got {line!r}")
        uid, value = parts
        if uid in seen:
            raise RecordError(f"{path}:{lineno}: duplicate id {uid!r}")
        seen.add(uid)
        yield lineno, uid, value


def read_key_file(path) -> dict[str, str]:
    keys = {}
    for lineno, uid, label in _records(path):
        if label not in LABELS:
            raise RecordError(f"{path}:{lineno}: unknown label {label!r}")
        keys[uid] = label
    return keys


def read_score_file(path) -> dict[str, float]:
    scores = {}
    for lineno, uid, value in _records(path):
        try:
            scores[uid] = float(value)
        except ValueError:
            raise RecordError(f"{path}:{lineno}: not a number: {value!r}") from None
    return scores


def write_key_file(path, keys: Mapping[str, str]) -> None:
    atomic_write_text(path, "".join(f"{u} {lab}\n" for u, lab in keys.items()))


def write_score_file(path, scores: Mapping[str, float]) -> None:
    atomic_write_text(path, "".join(f"{u} {s!r}\n" for u, s in scores.items()))


# --------------------------------------------------------------------------
# synthetic layer-band data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian stacks; spoofs get +effect_size along one unit direction in H,
    only inside the 1-based inclusive layer band."""

    num_utts: int = 200  # per class
    t_min: int = 16
    t_max: int = 16
    hidden_dim: int = 16
    num_layers: int = 6
    band: tuple[int, int] = (1, 2)
    effect_size: float = 5.0
    noise_std: float = 1.0
    seed: int = 0
    split: str = "train"

    def __post_init__(self):
        a, b = self.band
        if not 1 <= a <= b <= self.num_layers:
            raise ValueError(f"invalid band [{a}, {b}] for {self.num_layers} layers")
        if self.effect_size < 0:
            raise ValueError(f"effect_size must be >= 0, got {self.effect_size}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if self.num_utts < 1 or not 1 <= self.t_min <= self.t_max:
            raise ValueError("need num_utts >= 1 and 1 <= t_min <= t_max")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


def planted_direction(spec: SyntheticSpec) -> np.ndarray:
    # shared by every split of the same seed
    v = stream(spec.seed, "data", "direction").normal(size=spec.hidden_dim)
    return v / np.linalg.norm(v)


def generate_synthetic(spec: SyntheticSpec) -> list[tuple[EmbeddingStack, str]]:
    rng = stream(spec.seed, "data", spec.split)
    direction = planted_direction(spec)
    a, b = spec.band
    labels = np.array([BONAFIDE] * spec.num_utts + [SPOOF] * spec.num_utts)
    labels = labels[rng.permutation(labels.size)]
    out = []
    for k, label in enumerate(labels):
        T = int(rng.integers(spec.t_min, spec.t_max + 1))
        x = rng.normal(0.0, spec.noise_std, size=(T, spec.hidden_dim, spec.num_layers))
        if label == SPOOF:
            x[:, :, a - 1 : b] += spec.effect_size * direction[None, :, None]
        out.append((EmbeddingStack(Tensor(x), f"{spec.split}_{k:05d}"), str(label)))
    return out


@contextmanager
def staged_directory(directory, force: bool = False) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``directory`` only on success.

    An existing ``directory`` is an error unless ``force`` is set.  If the
    body raises, the scratch directory is removed and nothing is left behind.
    """
    directory = Path(directory)
    if directory.exists() and not force:
        raise FileExistsError(f"{directory} exists (use --force to overwrite)")
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        yield tmp
        if directory.exists():
            if directory.is_dir():
                shutil.rmtree(directory)
            else:
                directory.unlink()
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_dataset(directory, items, spec: SyntheticSpec | None = None, force: bool = False) -> Path:
    """Write stacks, key file and manifest; the directory appears atomically."""
    with staged_directory(directory, force) as tmp:
        keys = {}
        for stack, label in items:
            (tmp / f"{stack.utterance_id}{STACK_SUFFIX}").write_bytes(encode_stack(stack.data.data))
            keys[stack.utterance_id] = label
        (tmp / KEY_FILE).write_text("".join(f"{u} {lab}\n" for u, lab in keys.items()), encoding="utf-8")
        manifest = {
            "num_bonafide": sum(lab == BONAFIDE for lab in keys.values()),
            "num_spoof": sum(lab == SPOOF for lab in keys.values()),
        }
        if spec is not None:
            manifest["spec"] = asdict(spec)
            manifest["seed"] = spec.seed
        (tmp / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Path(directory)


@dataclass
class Utterance:
    utterance_id: str
    data: np.ndarray  # T x H x L
    label: str


def load_dataset(directory, layer_cap: int | None = None) -> list[Utterance]:
    """Every keyed utterance of a dataset directory, in key-file order."""
    directory = Path(directory)
    key_path = directory / KEY_FILE
    if not key_path.is_file():
        raise FileNotFoundError(f"missing key file {key_path}")
    keys = read_key_file(key_path)
    out = []
    for uid, label in keys.items():
        path = directory / f"{uid}{STACK_SUFFIX}"
        if not path.is_file():
            raise FileNotFoundError(f"key lists {uid!r} but {path} does not exist")
        out.append(Utterance(uid, decode_stack(path.read_bytes(), layer_cap), label))
    return out
