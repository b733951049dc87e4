"""Dataset model and file I/O.

Three concerns live here: the feature-file and manifest formats used to move
precomputed encoder features around, the phone-map application point (reduced
inventory mapping happens at ingestion, downstream code never sees unmapped
symbols), and a deterministic synthetic corpus generator that gives training
and scoring something desk-scale to chew on.

Feature file layout (little endian): magic "MVFT", u16 version (=1), u16
reserved (=0), u32 T, u32 D, then T*D float32 values in row-major frame order.

Checkpoint container layout (little endian): magic "MVCP", u16 version (=1),
u16 reserved (=0), u32 header length, UTF-8 JSON header
{"config": {...}, "tensors": [{"name", "shape"}, ...]} with tensors sorted by
name, then one float64 payload per tensor in header order.

Manifest: JSON Lines, one object per utterance with keys
id / canonical / perceived / mono / multi / frames; feature paths are
interpreted relative to the manifest's directory.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .af_inventory import SILENCE, AfTable, PhoneInventory, load_af_table
from .ctc import min_frames

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"MVFT"
CHECKPOINT_MAGIC = b"MVCP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class FeatureFormatError(ValueError):
    """Raised for malformed feature or checkpoint files."""


class ManifestError(ValueError):
    """Raised for invalid manifest rows; message names the row."""


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    canonical: tuple
    perceived: tuple
    mono_path: str
    multi_path: str
    frames: int


def write_features(x, path):
    """Write a T x D float matrix; values are stored as float32."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise FeatureFormatError(f"expected a 2-D matrix, got shape {x.shape}")
    t, d = x.shape
    if t >= 2 ** 32 or d >= 2 ** 32:
        raise FeatureFormatError(f"dimensions {t} x {d} overflow the u32 header")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, 0, t, d))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_feature_header(path):
    """Return (T, D) without reading the payload."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, _, t, d = _HEADER.unpack(header)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    return t, d


def read_features(path):
    """Read a feature file back as a float32 T x D matrix."""
    t, d = read_feature_header(path)
    with open(path, "rb") as f:
        f.seek(_HEADER.size)
        payload = f.read()
    expected = t * d * 4
    if len(payload) != expected:
        raise FeatureFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).copy()


def save_checkpoint(path, arrays, config):
    """Persist named float64 tensors plus the config that produced them."""
    names = sorted(arrays)
    header = {
        "config": config,
        "tensors": [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, 0, len(blob), 0))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (arrays, config)."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FeatureFormatError(f"{path}: truncated header")
        magic, version, _, blob_len, _ = _HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise FeatureFormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FeatureFormatError(f"{path}: unsupported version {version}")
        blob = f.read(blob_len)
        if len(blob) < blob_len:
            raise FeatureFormatError(f"{path}: truncated JSON header")
        meta = json.loads(blob.decode("utf-8"))
        arrays = {}
        for entry in meta["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) < count * 8:
                raise FeatureFormatError(f"{path}: truncated tensor {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays, meta["config"]


def load_phone_map(path):
    """TSV of source\ttarget rows; an empty target means the symbol is dropped."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected source<TAB>target")
            mapping[parts[0]] = parts[1]
    return mapping


def apply_phone_map(phones, mapping):
    """Map symbols through the table; unmapped symbols pass through unchanged."""
    out = []
    for p in phones:
        q = mapping.get(p, p)
        if q:
            out.append(q)
    return out


def _record_from_json(obj, lineno, path):
    try:
        return UtteranceRecord(
            id=str(obj["id"]),
            canonical=tuple(obj["canonical"]),
            perceived=tuple(obj["perceived"]),
            mono_path=str(obj["mono"]),
            multi_path=str(obj["multi"]),
            frames=int(obj["frames"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}:{lineno}: malformed record ({exc})") from exc


def _validate_record(rec, base_dir, inventory, lineno, path, check_features):
    if not rec.canonical or not rec.perceived:
        raise ManifestError(f"{path}:{lineno}: empty phone sequence")
    for field_name, seq in (("canonical", rec.canonical), ("perceived", rec.perceived)):
        for p in seq:
            if p not in inventory.phones:
                raise ManifestError(f"{path}:{lineno}: unknown phone {p!r} in {field_name}")
    need = min_frames(inventory.to_labels(rec.perceived))
    if rec.frames < need:
        raise ManifestError(
            f"{path}:{lineno}: {rec.frames} frames cannot emit the perceived "
            f"sequence (needs >= {need})")
    if check_features:
        for feat_path in (rec.mono_path, rec.multi_path):
            full = base_dir / feat_path
            if not full.exists():
                raise ManifestError(f"{path}:{lineno}: missing feature file {full}")
            t, _ = read_feature_header(full)
            if t != rec.frames:
                raise ManifestError(
                    f"{path}:{lineno}: {full} has {t} frames, manifest says {rec.frames}")


def load_manifest(path, inventory=None, phone_map=None, strict=True,
                  check_features=True):
    """Read and validate a JSON Lines manifest.

    With strict=False invalid rows are skipped with a logged warning instead
    of raising. Feature paths resolve relative to the manifest's directory.
    """
    path = Path(path)
    if inventory is None:
        inventory = PhoneInventory()
    base_dir = path.parent
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            rec = _record_from_json(obj, lineno, path)
            if phone_map is not None:
                rec = UtteranceRecord(
                    id=rec.id,
                    canonical=tuple(apply_phone_map(rec.canonical, phone_map)),
                    perceived=tuple(apply_phone_map(rec.perceived, phone_map)),
                    mono_path=rec.mono_path,
                    multi_path=rec.multi_path,
                    frames=rec.frames,
                )
            try:
                _validate_record(rec, base_dir, inventory, lineno, path, check_features)
            except ManifestError as exc:
                if strict:
                    raise
                log.warning("skipping record: %s", exc)
                continue
            records.append(rec)
    return records


def write_manifest(records, path):
    """Write records as JSON Lines in a stable key order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj = {
                "id": rec.id,
                "canonical": list(rec.canonical),
                "perceived": list(rec.perceived),
                "mono": rec.mono_path,
                "multi": rec.multi_path,
                "frames": rec.frames,
            }
            f.write(json.dumps(obj, separators=(", ", ": ")) + "\n")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic corpus.

    frames_per_phone[0] must be at least 2 so every utterance stays CTC-
    feasible for all five target sequences even when mapped articulatory
    labels create runs of adjacent duplicates.
    """

    n_train: int = 400
    n_dev: int = 50
    n_test: int = 50
    phones_per_utt: tuple = (3, 8)
    frames_per_phone: tuple = (2, 4)
    mispronunciation_rate: float = 0.15
    noise_sigma: float = 0.3
    seed: int = 0
    mono_dim: int = 768
    multi_dim: int = 1024
    code_dim: int = 32

    def __post_init__(self):
        if not 0.0 <= self.mispronunciation_rate < 1.0:
            raise ValueError("mispronunciation_rate must be in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        for name in ("phones_per_utt", "frames_per_phone"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} range ({lo}, {hi}) is degenerate")
        if self.frames_per_phone[0] < 2:
            raise ValueError("frames_per_phone lower bound must be >= 2")
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.min_pool_dim < 300:
            raise ValueError("feature dims must be at least 300")

    @property
    def min_pool_dim(self):
        return min(self.mono_dim, self.multi_dim)

    def to_dict(self):
        return {
            "n_train": self.n_train,
            "n_dev": self.n_dev,
            "n_test": self.n_test,
            "phones_per_utt": list(self.phones_per_utt),
            "frames_per_phone": list(self.frames_per_phone),
            "mispronunciation_rate": self.mispronunciation_rate,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "mono_dim": self.mono_dim,
            "multi_dim": self.multi_dim,
            "code_dim": self.code_dim,
        }


SPLITS = ("train", "dev", "test")


def generate(config: SynthConfig, out_dir, table: AfTable = None):
    """Build the synthetic corpus under out_dir.

    Frames are noisy stream-specific projections of a shared per-phone code:
    each canonical phone flips to a same-manner confusable with probability
    rho, and every frame of a position carries that perceived phone's
    prototype plus Gaussian noise. Silence never appears inside an utterance,
    so every sampled position has at least one confusable available. Feature
    files are written first and each split's manifest last, as the commit
    point. Returns a report dict with manifest paths, the prototypes, and
    per-frame phone labels for oracle checks.
    """
    if table is None:
        table = load_af_table()
    inv = table.inventory
    out_dir = Path(out_dir)
    rng = np.random.default_rng(config.seed)

    codes = rng.normal(size=(len(inv.phones), config.code_dim))
    proj_mono = rng.normal(size=(config.code_dim, config.mono_dim)) / np.sqrt(config.code_dim)
    proj_multi = rng.normal(size=(config.code_dim, config.multi_dim)) / np.sqrt(config.code_dim)
    proto_mono = codes @ proj_mono
    proto_multi = codes @ proj_multi

    sil_id = inv.id_of(SILENCE)
    sampleable = np.array([i for i in range(len(inv.phones)) if i != sil_id])
    confusions = {inv.id_of(p): [inv.id_of(q) for q in qs]
                  for p, qs in table.confusions().items()}

    manifests = {}
    frame_labels = {}
    positions = 0
    mispronounced = 0
    counts = dict(zip(SPLITS, (config.n_train, config.n_dev, config.n_test)))
    lo_p, hi_p = config.phones_per_utt
    lo_f, hi_f = config.frames_per_phone

    for split in SPLITS:
        records = []
        for i in range(counts[split]):
            utt_id = f"{split}-{i:04d}"
            n = int(rng.integers(lo_p, hi_p + 1))
            canonical = rng.choice(sampleable, size=n)
            flips = rng.random(n) < config.mispronunciation_rate
            perceived = canonical.copy()
            for j in np.flatnonzero(flips):
                options = confusions[int(canonical[j])]
                perceived[j] = options[int(rng.integers(len(options)))]
            n_frames = rng.integers(lo_f, hi_f + 1, size=n)
            labels = np.repeat(perceived, n_frames)
            t = int(labels.size)
            mono = proto_mono[labels] + config.noise_sigma * rng.normal(size=(t, config.mono_dim))
            multi = proto_multi[labels] + config.noise_sigma * rng.normal(size=(t, config.multi_dim))
            mono_rel = f"feats/{split}/{utt_id}.mono.mvft"
            multi_rel = f"feats/{split}/{utt_id}.multi.mvft"
            write_features(mono, out_dir / mono_rel)
            write_features(multi, out_dir / multi_rel)
            records.append(UtteranceRecord(
                id=utt_id,
                canonical=tuple(inv.phones[k] for k in canonical),
                perceived=tuple(inv.phones[k] for k in perceived),
                mono_path=mono_rel,
                multi_path=multi_rel,
                frames=t,
            ))
            frame_labels[utt_id] = labels.tolist()
            positions += n
            mispronounced += int(flips.sum())
        manifest_path = out_dir / f"{split}.jsonl"
        write_manifest(records, manifest_path)
        manifests[split] = manifest_path

    return {
        "manifests": manifests,
        "prototypes": {"mono": proto_mono, "multi": proto_multi},
        "frame_labels": frame_labels,
        "positions": positions,
        "mispronounced": mispronounced,
        "mispronounced_fraction": mispronounced / positions if positions else 0.0,
        "config": config.to_dict(),
    }
