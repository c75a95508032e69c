"""Synthetic corpora with planted target segments, annotation records,
distribution-shift split builders, and corpus serialization.

Feature extraction from real video/text is out of scope; externally
extracted features enter through the same corpus directory format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import mdff


@dataclass
class MomentAnnotation:
    """One (video, query) pair with its ground-truth segment(s)."""

    video_id: str
    query_id: str
    duration_s: float
    gt: list[tuple[float, float]]  # normalized (center, width)
    raw_gt_s: list[tuple[float, float]]  # seconds (start, end)

    @classmethod
    def from_seconds(
        cls, video_id: str, query_id: str, duration_s: float, intervals_s: list[tuple[float, float]]
    ) -> "MomentAnnotation":
        if duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {duration_s}")
        gt = []
        for start, end in intervals_s:
            if not 0.0 <= start < end <= duration_s:
                raise ValueError(f"invalid interval ({start}, {end}) for duration {duration_s}")
            gt.append(((start + end) / 2.0 / duration_s, (end - start) / duration_s))
        return cls(video_id, query_id, duration_s, gt, [tuple(iv) for iv in intervals_s])


@dataclass
class SyntheticConfig:
    n_samples: int = 2000
    n_frames: int = 32
    d_video: int = 64
    d_text: int = 64
    n_prototypes: int = 8
    feature_noise_sigma: float = 0.3
    query_noise_sigma: float | None = None  # defaults to feature_noise_sigma
    width_lo: float = 0.08
    width_hi: float = 0.5
    center_lo: float = 0.25
    center_hi: float = 0.75
    duration_s: float = 30.0
    n_query_tokens: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 1 or self.n_frames < 1:
            raise ValueError("n_samples and n_frames must be >= 1")
        if self.n_prototypes < 2:
            raise ValueError(f"need at least 2 prototypes, got {self.n_prototypes}")
        if not 0.0 < self.width_lo <= self.width_hi <= 1.0:
            raise ValueError(f"infeasible width bounds [{self.width_lo}, {self.width_hi}]")
        if not 0.0 <= self.center_lo <= self.center_hi <= 1.0:
            raise ValueError(f"infeasible center bounds [{self.center_lo}, {self.center_hi}]")
        if self.n_query_tokens < 1:
            raise ValueError("n_query_tokens must be >= 1")


@dataclass
class Corpus:
    video_features: np.ndarray  # (n, N_v, d_video) float32
    video_mask: np.ndarray  # (n, N_v) bool
    query_features: np.ndarray  # (n, N_t, d_text) float32
    query_mask: np.ndarray  # (n, N_t) bool
    annotations: list[MomentAnnotation]
    prototypes: np.ndarray | None = None  # (K, d_video), synthetic corpora only
    target_prototypes: np.ndarray | None = None  # (n,) int64, synthetic corpora only

    def __len__(self) -> int:
        return len(self.annotations)

    def subset(self, ids: list[int]) -> "Corpus":
        idx = np.asarray(ids, dtype=np.int64)
        return Corpus(
            video_features=self.video_features[idx],
            video_mask=self.video_mask[idx],
            query_features=self.query_features[idx],
            query_mask=self.query_mask[idx],
            annotations=[self.annotations[i] for i in ids],
            prototypes=self.prototypes,
            target_prototypes=None if self.target_prototypes is None else self.target_prototypes[idx],
        )


def _semi_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q = np.linalg.qr(rng.standard_normal((max(rows, cols), min(rows, cols))))[0]
    return q if q.shape == (rows, cols) else q.T


def frame_membership(center: float, width: float, n_frames: int) -> np.ndarray:
    """Boolean mask of frames whose center timestamp falls inside the span.

    Guarantees at least one member frame by falling back to the frame
    nearest to the span center.
    """
    t = (np.arange(n_frames) + 0.5) / n_frames
    inside = (t >= center - width / 2.0) & (t <= center + width / 2.0)
    if not inside.any():
        inside[int(np.argmin(np.abs(t - center)))] = True
    return inside


def frame_labels(annotation: MomentAnnotation, n_frames: int) -> np.ndarray:
    """Binary per-frame labels: 1 inside any ground-truth span."""
    labels = np.zeros(n_frames, dtype=bool)
    for c, w in annotation.gt:
        labels |= frame_membership(c, w, n_frames)
    return labels


def generate_corpus(cfg: SyntheticConfig) -> Corpus:
    """Deterministically sample a corpus of planted-segment feature sequences."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sigma_q = cfg.feature_noise_sigma if cfg.query_noise_sigma is None else cfg.query_noise_sigma

    protos = rng.standard_normal((cfg.n_prototypes, cfg.d_video))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    # semi-orthogonal maps keep the prototype recoverable from a noisy image
    query_maps = np.stack(
        [_semi_orthogonal(rng, cfg.d_text, cfg.d_video) for _ in range(cfg.n_query_tokens)]
    )

    video = np.empty((cfg.n_samples, cfg.n_frames, cfg.d_video), dtype=np.float32)
    query = np.empty((cfg.n_samples, cfg.n_query_tokens, cfg.d_text), dtype=np.float32)
    targets = np.empty(cfg.n_samples, dtype=np.int64)
    annotations: list[MomentAnnotation] = []

    for i in range(cfg.n_samples):
        p = int(rng.integers(cfg.n_prototypes))
        targets[i] = p
        w = float(rng.uniform(cfg.width_lo, cfg.width_hi))
        c = float(rng.uniform(cfg.center_lo, cfg.center_hi))
        c = min(max(c, w / 2.0), 1.0 - w / 2.0)  # clip to validity

        inside = frame_membership(c, w, cfg.n_frames)
        others = rng.integers(cfg.n_prototypes - 1, size=cfg.n_frames)
        others[others >= p] += 1  # uniform over the K-1 non-target prototypes
        proto_ids = np.where(inside, p, others)
        frames = protos[proto_ids] + cfg.feature_noise_sigma * rng.standard_normal((cfg.n_frames, cfg.d_video))
        video[i] = frames.astype(np.float32)

        tokens = query_maps @ protos[p] + sigma_q * rng.standard_normal((cfg.n_query_tokens, cfg.d_text))
        query[i] = tokens.astype(np.float32)

        start_s = (c - w / 2.0) * cfg.duration_s
        end_s = (c + w / 2.0) * cfg.duration_s
        annotations.append(
            MomentAnnotation.from_seconds(f"v{i:05d}", f"q{i:05d}", cfg.duration_s, [(start_s, end_s)])
        )

    return Corpus(
        video_features=video,
        video_mask=np.ones((cfg.n_samples, cfg.n_frames), dtype=bool),
        query_features=query,
        query_mask=np.ones((cfg.n_samples, cfg.n_query_tokens), dtype=bool),
        annotations=annotations,
        prototypes=protos.astype(np.float32),
        target_prototypes=targets,
    )


# ---------------------------------------------------------------------------
# nearest-prototype oracle (uses generator metadata; for sanity baselines)
# ---------------------------------------------------------------------------


def nearest_prototype_frames(corpus: Corpus) -> np.ndarray:
    """(n, N_v) boolean: frame's nearest prototype equals the sample's target."""
    if corpus.prototypes is None or corpus.target_prototypes is None:
        raise ValueError("corpus lacks prototype metadata")
    protos = corpus.prototypes.astype(np.float64)  # (K, d)
    feats = corpus.video_features.astype(np.float64)  # (n, Nv, d)
    d2 = ((feats[:, :, None, :] - protos[None, None, :, :]) ** 2).sum(-1)  # (n, Nv, K)
    nearest = d2.argmin(-1)
    return nearest == corpus.target_prototypes[:, None]


def nearest_prototype_frame_accuracy(corpus: Corpus) -> float:
    """Fraction of frames whose predicted gt-membership matches the truth."""
    predicted = nearest_prototype_frames(corpus)
    n_frames = corpus.video_features.shape[1]
    truth = np.stack([frame_labels(a, n_frames) for a in corpus.annotations])
    return float((predicted == truth).mean())


def nearest_prototype_spans(corpus: Corpus) -> np.ndarray:
    """(n, 2) oracle spans: best single interval over +/-1 frame membership scores."""
    member = nearest_prototype_frames(corpus)
    n, n_frames = member.shape
    spans = np.empty((n, 2))
    for i in range(n):
        score = np.where(member[i], 1.0, -1.0)
        best, run, best_a, best_b, a = -np.inf, 0.0, 0, 0, 0
        for j in range(n_frames):
            if run <= 0:
                run, a = score[j], j
            else:
                run += score[j]
            if run > best:
                best, best_a, best_b = run, a, j
        start, end = best_a / n_frames, (best_b + 1) / n_frames
        spans[i] = ((start + end) / 2.0, end - start)
    return spans


# ---------------------------------------------------------------------------
# distribution-shift splits
# ---------------------------------------------------------------------------


@dataclass
class SplitSpec:
    name: str  # "len" or "mom"
    threshold_s: float
    major_ratio: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.name not in ("len", "mom"):
            raise ValueError(f"unknown split kind {self.name!r}")
        if not 0.0 < self.major_ratio < 1.0:
            raise ValueError(f"major_ratio must be in (0, 1), got {self.major_ratio}")


class SplitError(ValueError):
    """Raised when the requested ratio cannot be met with the given counts."""


def _split_classes(annotations: list[MomentAnnotation], spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Indices of the train-majority and test-majority classes.

    The first ground-truth span decides the predicate. For the "mom" kind,
    pairs straddling the threshold (start <= t < end) belong to neither class
    and are excluded.
    """
    train_major, test_major = [], []
    for i, ann in enumerate(annotations):
        start_s, end_s = ann.raw_gt_s[0]
        if spec.name == "len":
            if end_s - start_s <= spec.threshold_s:
                train_major.append(i)
            else:
                test_major.append(i)
        else:
            if end_s <= spec.threshold_s:
                train_major.append(i)
            elif start_s > spec.threshold_s:
                test_major.append(i)
    return train_major, test_major


def _solve_minority_sizes(n_a: int, n_b: int, ratio: float) -> tuple[int, int]:
    """Minority sample sizes (a from class B into train, b from class A into test).

    Solves (n_a - b) : a = ratio : (1 - ratio) and (n_b - a) : b likewise,
    then searches the surrounding integer grid for the rounding that keeps
    both sides within one item of the ratio.
    """
    k = (1.0 - ratio) / ratio
    a_real = k * (n_a - k * n_b) / (1.0 - k * k)
    b_real = k * (n_b - k * n_a) / (1.0 - k * k)
    best: tuple[float, int, int] | None = None
    for a in {math.floor(a_real), math.ceil(a_real), math.floor(a_real) + 1, max(0, math.floor(a_real) - 1)}:
        for b in {math.floor(b_real), math.ceil(b_real), math.floor(b_real) + 1, max(0, math.floor(b_real) - 1)}:
            if a < 0 or b < 0 or a > n_b or b > n_a:
                continue
            train_major, test_major = n_a - b, n_b - a
            if train_major < 1 or test_major < 1:
                continue
            dev_train = abs(train_major - ratio * (train_major + a))
            dev_test = abs(test_major - ratio * (test_major + b))
            if dev_train > 1.0 + 1e-9 or dev_test > 1.0 + 1e-9:
                continue
            key = (max(dev_train, dev_test), a, b)
            if best is None or key < best:
                best = key
                best_ab = (a, b)
    if best is None:
        raise SplitError(
            f"ratio {ratio} unsatisfiable with class counts {n_a} / {n_b} within one item"
        )
    return best_ab


def _build_split(annotations: list[MomentAnnotation], spec: SplitSpec) -> tuple[list[int], list[int]]:
    spec.validate()
    class_a, class_b = _split_classes(annotations, spec)
    if not class_a or not class_b:
        raise SplitError(f"both sides of threshold {spec.threshold_s}s must be non-empty")
    a_size, b_size = _solve_minority_sizes(len(class_a), len(class_b), spec.major_ratio)
    rng = np.random.default_rng(spec.seed)
    test_minor = set(rng.choice(np.asarray(class_a), size=b_size, replace=False).tolist()) if b_size else set()
    train_minor = set(rng.choice(np.asarray(class_b), size=a_size, replace=False).tolist()) if a_size else set()
    train = sorted([i for i in class_a if i not in test_minor] + list(train_minor))
    test = sorted([i for i in class_b if i not in train_minor] + list(test_minor))
    return train, test


def build_len_split(annotations: list[MomentAnnotation], spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Train skews toward short segments (width <= threshold), test toward long."""
    if spec.name != "len":
        spec = replace(spec, name="len")
    return _build_split(annotations, spec)


def build_mom_split(annotations: list[MomentAnnotation], spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Train skews toward early segments (end <= threshold), test toward late starts."""
    if spec.name != "mom":
        spec = replace(spec, name="mom")
    return _build_split(annotations, spec)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CORPUS_VERSION = "1"


def save_annotations(annotations: list[MomentAnnotation], path: str | Path) -> None:
    """Tab-delimited records: video_id, query_id, duration_s, start_s, end_s."""
    lines = []
    for ann in annotations:
        for start_s, end_s in ann.raw_gt_s:
            lines.append(f"{ann.video_id}\t{ann.query_id}\t{ann.duration_s!r}\t{start_s!r}\t{end_s!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_annotations(path: str | Path) -> list[MomentAnnotation]:
    grouped: dict[tuple[str, str], MomentAnnotation] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        video_id, query_id, duration_s, start_s, end_s = parts
        key = (video_id, query_id)
        interval = (float(start_s), float(end_s))
        if key in grouped:
            ann = grouped[key]
            ann.raw_gt_s.append(interval)
            ann.gt.append(
                ((interval[0] + interval[1]) / 2.0 / ann.duration_s, (interval[1] - interval[0]) / ann.duration_s)
            )
        else:
            grouped[key] = MomentAnnotation.from_seconds(video_id, query_id, float(duration_s), [interval])
    return list(grouped.values())


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {
        "video_features": corpus.video_features.astype(np.float32),
        "video_mask": corpus.video_mask.astype(np.int64),
        "query_features": corpus.query_features.astype(np.float32),
        "query_mask": corpus.query_mask.astype(np.int64),
    }
    if corpus.prototypes is not None:
        tensors["prototypes"] = corpus.prototypes.astype(np.float32)
    if corpus.target_prototypes is not None:
        tensors["target_prototypes"] = corpus.target_prototypes.astype(np.int64)
    entries = {
        "format": "diffspan-corpus",
        "version": _CORPUS_VERSION,
        "n_samples": str(len(corpus)),
        "n_frames": str(corpus.video_features.shape[1]),
        "d_video": str(corpus.video_features.shape[2]),
        "n_query_tokens": str(corpus.query_features.shape[1]),
        "d_text": str(corpus.query_features.shape[2]),
        "annotations": "annotations.tsv",
    }
    for name, arr in tensors.items():
        mdff.write_tensor(out / f"{name}.mdff", arr)
        entries[f"tensor.{name}"] = f"{name}.mdff"
    mdff.write_manifest(out / "manifest.txt", entries)
    save_annotations(corpus.annotations, out / "annotations.tsv")


def load_corpus(path: str | Path) -> Corpus:
    root = Path(path)
    entries = mdff.read_manifest(root / "manifest.txt")
    if entries.get("format") != "diffspan-corpus":
        raise mdff.FormatError(f"{root}: not a corpus directory")
    if entries.get("version") != _CORPUS_VERSION:
        raise mdff.VersionMismatch(f"{root}: corpus version {entries.get('version')}")

    def tensor(name: str) -> np.ndarray | None:
        key = f"tensor.{name}"
        if key not in entries:
            return None
        return mdff.read_tensor(root / entries[key])

    protos = tensor("prototypes")
    targets = tensor("target_prototypes")
    return Corpus(
        video_features=tensor("video_features"),
        video_mask=tensor("video_mask").astype(bool),
        query_features=tensor("query_features"),
        query_mask=tensor("query_mask").astype(bool),
        annotations=load_annotations(root / entries["annotations"]),
        prototypes=protos,
        target_prototypes=targets,
    )
