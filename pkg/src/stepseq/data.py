"""Feature-sequence datasets: domain model, synthetic generator, file format.

A dataset is a collection of per-second feature sequences (L×N float
matrices) with optional step labels (7 classes) and per-second relevance
flags. The synthetic generator replaces proprietary recordings with a
multi-domain analog: all domains share one set of step embeddings (the
"same action" premise), while each domain mixes them through its own
rotation, controlled by the shift knob delta, before a tanh squash and
additive noise. Irrelevant spans are drawn from one benchmark-global
out-of-scene distribution.

Determinism: every random draw derives from the master seed through a
documented counter scheme. Video i of domain d uses
``SeedSequence(master_seed, spawn_key=(d, i))``; the split shuffle of a
domain with V videos uses ``spawn_key=(d, V)``; benchmark-global
structure uses ``spawn_key=(1000 + d,)`` per domain and ``(999,)`` for
shared arrays.

Sequence file format (.sfm), little-endian throughout: magic "SFM1",
u32 version=1, u64 L, u64 N, u8 has_labels, u8 has_relevance, then L
label bytes if present, L relevance bytes (0/1) if present, then L*N
float32 features, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUM_STEPS = 7
TEST_FRACTION = 0.25
VAL_FRACTION = 0.20  # of the remainder after the test split

_MAGIC = b"SFM1"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQBB")


class DataFormatError(Exception):
    """Base for malformed sequence files."""


class BadMagicError(DataFormatError):
    pass


class VersionError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


@dataclass
class FeatureSequence:
    """An L×N feature matrix with optional per-second labels and relevance."""

    features: np.ndarray
    labels: np.ndarray | None = None
    relevance: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64, order="C")
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2-d matrix, got {self.features.shape}")
        length = self.features.shape[0]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (length,):
                raise ValueError(f"labels length {self.labels.shape} != {length} rows")
            if self.labels.min() < 0 or self.labels.max() >= NUM_STEPS:
                raise ValueError(f"labels must lie in [0, {NUM_STEPS})")
        if self.relevance is not None:
            self.relevance = np.asarray(self.relevance, dtype=bool)
            if self.relevance.shape != (length,):
                raise ValueError(f"relevance length {self.relevance.shape} != {length} rows")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class DomainSpec:
    """Fully materialized emission model for one domain."""

    domain_id: str
    step_embeddings: np.ndarray  # 7 × E, shared across the benchmark
    projection: np.ndarray  # N × E, shared across the benchmark
    domain_rotation: np.ndarray  # N × N orthogonal
    domain_offset: np.ndarray  # N
    shift_magnitude: float  # delta in [0, 1]
    noise_std: float
    video_shift_std: float  # per-video latent offset scale
    duration_mean: np.ndarray  # mean seconds per step
    skip_prob: float
    revisit_prob: float
    irrelevant_span_rate: float  # expected spans per minute
    oob_center: np.ndarray  # N, shared out-of-scene emission center
    oob_std: float

    def __post_init__(self):
        if not 0.0 <= self.shift_magnitude <= 1.0:
            raise ValueError("shift_magnitude must be in [0, 1]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")
        for p in (self.skip_prob, self.revisit_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")

    def mix_matrix(self) -> np.ndarray:
        d = self.shift_magnitude
        eye = np.eye(self.domain_rotation.shape[0])
        return ((1.0 - d) * eye + d * self.domain_rotation) @ self.projection


@dataclass
class BenchmarkSpec:
    """Desk-scale four-domain benchmark layout and knobs."""

    n_features: int = 64
    embed_dim: int = 16
    # Per-frame signal-to-noise is embed_scale / noise_std; the default is
    # calibrated so a per-domain linear probe lands in the 70-80% band,
    # leaving headroom for temporal context to matter. video_shift_std
    # adds a per-video latent offset (camera/lighting analog) so small
    # training sets genuinely undersample the domain.
    embed_scale: float = 0.2
    video_shift_std: float = 0.12
    shift_magnitude: float = 0.4
    noise_std: float = 0.3
    source_videos: int = 120
    target_videos: tuple[int, ...] = (40, 44, 80)
    length_range: tuple[int, int] = (200, 600)
    master_seed: int = 0
    skip_prob: float = 0.08
    revisit_prob: float = 0.08
    irrelevant_span_rate: float = 0.5
    oob_std: float = 0.2
    duration_mean: tuple[float, ...] = (45.0, 55.0, 80.0, 65.0, 60.0, 45.0, 60.0)

    def __post_init__(self):
        if self.source_videos < 4 or any(v < 4 for v in self.target_videos):
            raise ValueError("every domain needs at least 4 videos to split")
        lo, hi = self.length_range
        if not (60 <= lo <= hi <= 3600):
            raise ValueError("length_range must lie within [60, 3600]")
        if len(self.duration_mean) != NUM_STEPS:
            raise ValueError(f"duration_mean needs {NUM_STEPS} entries")

    @property
    def domain_ids(self) -> list[str]:
        return ["source"] + [f"target_{c}" for c in "abc"[: len(self.target_videos)]]

    @property
    def videos_per_domain(self) -> list[int]:
        return [self.source_videos, *self.target_videos]


def split_sizes(n_videos: int) -> tuple[int, int, int]:
    """(train, val, test) counts: 25% test, then 20% of the rest validation."""
    test = round(n_videos * TEST_FRACTION)
    val = round((n_videos - test) * VAL_FRACTION)
    train = n_videos - test - val
    if min(train, val, test) < 1:
        raise ValueError(f"{n_videos} videos cannot be split into three non-empty subsets")
    return train, val, test


def build_domains(spec: BenchmarkSpec) -> list[DomainSpec]:
    """Materialize the emission model of every domain from the master seed."""
    shared_rng = np.random.default_rng(
        np.random.SeedSequence(spec.master_seed, spawn_key=(999,))
    )
    embeddings = spec.embed_scale * shared_rng.standard_normal(
        (NUM_STEPS, spec.embed_dim)
    )
    projection = shared_rng.standard_normal(
        (spec.n_features, spec.embed_dim)
    ) / np.sqrt(spec.embed_dim)
    oob_center = shared_rng.standard_normal(spec.n_features)

    domains = []
    for d_idx, domain_id in enumerate(spec.domain_ids):
        rng = np.random.default_rng(
            np.random.SeedSequence(spec.master_seed, spawn_key=(1000 + d_idx,))
        )
        rotation, _ = np.linalg.qr(
            rng.standard_normal((spec.n_features, spec.n_features))
        )
        offset = rng.standard_normal(spec.n_features) * 0.3
        domains.append(
            DomainSpec(
                domain_id=domain_id,
                step_embeddings=embeddings,
                projection=projection,
                domain_rotation=rotation,
                domain_offset=offset,
                shift_magnitude=spec.shift_magnitude,
                noise_std=spec.noise_std,
                video_shift_std=spec.video_shift_std,
                duration_mean=np.asarray(spec.duration_mean, dtype=float),
                skip_prob=spec.skip_prob,
                revisit_prob=spec.revisit_prob,
                irrelevant_span_rate=spec.irrelevant_span_rate,
                oob_center=oob_center,
                oob_std=spec.oob_std,
            )
        )
    return domains


def sample_label_sequence(
    spec: DomainSpec, length_range: tuple[int, int], rng: np.random.Generator
) -> np.ndarray:
    """Semi-Markov walk over the seven steps, truncated or extended to a
    drawn total length.

    Starts at step 0. After each visit the walk moves one step forward,
    skips a step with skip_prob, or (with revisit_prob) replays a
    uniformly chosen earlier step before resuming forward. Durations are
    geometric around each step's mean, never shorter than 5 seconds.
    """
    lo, hi = length_range
    if not (60 <= lo <= hi <= 3600):
        raise ValueError(f"length range ({lo}, {hi}) outside [60, 3600]")
    total = int(rng.integers(lo, hi + 1))

    labels: list[int] = []

    def emit(step: int) -> None:
        duration = max(5, int(rng.geometric(1.0 / spec.duration_mean[step])))
        labels.extend([step] * duration)

    emit(0)
    current = 0
    while current < NUM_STEPS - 1:
        if current >= 1 and rng.random() < spec.revisit_prob:
            emit(int(rng.integers(0, current)))
            nxt = current + 1
        elif rng.random() < spec.skip_prob:
            nxt = current + 2
        else:
            nxt = current + 1
        nxt = min(nxt, NUM_STEPS - 1)
        emit(nxt)
        current = nxt

    out = np.array(labels[:total], dtype=np.int64)
    if out.size < total:
        out = np.concatenate([out, np.full(total - out.size, out[-1], dtype=np.int64)])
    return out


def emit_features(
    labels: np.ndarray, spec: DomainSpec, rng: np.random.Generator
) -> FeatureSequence:
    """Per-second emission x_t = tanh(M_d (e_y + sigma eps)) + delta * offset,
    with irrelevant spans replaced by the shared out-of-scene distribution.

    Features are rounded through float32 so file round trips are exact.
    """
    labels = np.asarray(labels, dtype=np.int64)
    length = labels.shape[0]
    embed_dim = spec.step_embeddings.shape[1]
    mix = spec.mix_matrix()
    video_shift = spec.video_shift_std * rng.standard_normal(embed_dim)
    latent = (
        spec.step_embeddings[labels]
        + video_shift
        + spec.noise_std * rng.standard_normal((length, embed_dim))
    )
    x = np.tanh(latent @ mix.T) + spec.shift_magnitude * spec.domain_offset

    relevance = np.ones(length, dtype=bool)
    n_spans = rng.poisson(spec.irrelevant_span_rate * length / 60.0)
    for _ in range(n_spans):
        start = int(rng.integers(0, length))
        span = int(rng.integers(5, 21))
        relevance[start : start + span] = False
    n_irr = int((~relevance).sum())
    if n_irr:
        x[~relevance] = np.tanh(
            spec.oob_center
            + spec.oob_std * rng.standard_normal((n_irr, x.shape[1]))
        )

    x = x.astype(np.float32).astype(np.float64)
    return FeatureSequence(features=x, labels=labels, relevance=relevance)


# ---------------------------------------------------------------------------
# sequence files and manifests


def write_sequence(path, seq: FeatureSequence) -> None:
    path = Path(path)
    has_labels = seq.labels is not None
    has_relevance = seq.relevance is not None
    blob = bytearray(
        _HEADER.pack(
            _MAGIC, _VERSION, seq.length, seq.n_features, has_labels, has_relevance
        )
    )
    if has_labels:
        blob += seq.labels.astype(np.uint8).tobytes()
    if has_relevance:
        blob += seq.relevance.astype(np.uint8).tobytes()
    blob += seq.features.astype("<f4").tobytes()
    path.write_bytes(bytes(blob))


def read_sequence(path) -> FeatureSequence:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than the {_HEADER.size}-byte header")
    magic, version, length, width, has_labels, has_relevance = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise VersionError(f"{path}: version {version}, expected {_VERSION}")
    offset = _HEADER.size
    expected = offset + length * (has_labels + has_relevance) + 4 * length * width
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: {len(blob)} bytes, header promises {expected}"
        )
    if len(blob) > expected:
        raise DataFormatError(f"{path}: {len(blob) - expected} trailing bytes")

    labels = relevance = None
    if has_labels:
        labels = np.frombuffer(blob, dtype=np.uint8, count=length, offset=offset).astype(np.int64)
        offset += length
    if has_relevance:
        relevance = np.frombuffer(blob, dtype=np.uint8, count=length, offset=offset).astype(bool)
        offset += length
    feats = np.frombuffer(blob, dtype="<f4", count=length * width, offset=offset)
    return FeatureSequence(
        features=feats.reshape(length, width).astype(np.float64),
        labels=labels,
        relevance=relevance,
        id=path.stem,
    )


@dataclass
class ManifestEntry:
    id: str
    domain: str
    split: str
    path: str
    length: int


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    lines = [
        f"{e.id}\t{e.domain}\t{e.split}\t{e.path}\t{e.length}\n" for e in entries
    ]
    Path(path).write_text("".join(lines))


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        vid, domain, split, rel, length = line.split("\t")
        entries.append(ManifestEntry(vid, domain, split, rel, int(length)))
    return entries


def generate_benchmark(spec: BenchmarkSpec, out_dir) -> Path:
    """Generate every domain, write one .sfm per video plus the manifest.

    Byte-identical across runs with the same spec. Returns the manifest
    path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []

    for d_idx, (domain, n_videos) in enumerate(
        zip(build_domains(spec), spec.videos_per_domain)
    ):
        domain_dir = out_dir / domain.domain_id
        domain_dir.mkdir(exist_ok=True)
        n_train, n_val, n_test = split_sizes(n_videos)
        order = np.random.default_rng(
            np.random.SeedSequence(spec.master_seed, spawn_key=(d_idx, n_videos))
        ).permutation(n_videos)
        split_of = {}
        for pos, vid_idx in enumerate(order):
            if pos < n_test:
                split_of[vid_idx] = "test"
            elif pos < n_test + n_val:
                split_of[vid_idx] = "val"
            else:
                split_of[vid_idx] = "train"

        for i in range(n_videos):
            rng = np.random.default_rng(
                np.random.SeedSequence(spec.master_seed, spawn_key=(d_idx, i))
            )
            labels = sample_label_sequence(domain, spec.length_range, rng)
            seq = emit_features(labels, domain, rng)
            seq.id = f"{domain.domain_id}-{i:03d}"
            rel_path = f"{domain.domain_id}/{seq.id}.sfm"
            try:
                write_sequence(out_dir / rel_path, seq)
            except OSError as exc:
                raise OSError(f"failed writing {out_dir / rel_path}: {exc}") from exc
            entries.append(
                ManifestEntry(seq.id, domain.domain_id, split_of[i], rel_path, seq.length)
            )

    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest


def load_split(
    benchmark_dir, domain: str, split: str, manifest: list[ManifestEntry] | None = None
) -> list[FeatureSequence]:
    """Read every sequence of one (domain, split) pair, in manifest order."""
    benchmark_dir = Path(benchmark_dir)
    if manifest is None:
        manifest = read_manifest(benchmark_dir / "manifest.tsv")
    out = []
    for e in manifest:
        if e.domain == domain and e.split == split:
            out.append(read_sequence(benchmark_dir / e.path))
    if not out:
        raise ValueError(f"no sequences for domain={domain!r} split={split!r}")
    return out


def benchmark_domains(benchmark_dir) -> list[str]:
    """Domain ids present in a generated benchmark, source first."""
    entries = read_manifest(Path(benchmark_dir) / "manifest.tsv")
    seen: dict[str, None] = {}
    for e in entries:
        seen.setdefault(e.domain, None)
    return list(seen)
