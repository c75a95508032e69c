"""Training loop, iterative-denoising inference, retrieval metrics, reports
and checkpoints."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import mdff
from . import spans as span_ops
from .condition import similarity_loss, similarity_scores
from .data import Corpus, MomentAnnotation, frame_membership
from .denoiser import PredictionSet
from .diffusion import build_cosine_schedule, ddim_step, inference_ladder, sample_intensity
from .model import GroundingModel, ModelConfig, build_model
from .objective import LossWeights, pad_inputs, total_loss, vmr_loss

MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
R1_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    num_intensities: int = 1000
    span_scale: float = 2.0
    n_spans: int = 5
    infer_steps: int = 50
    eta: float = 0.0
    seed: int = 0
    embed_dim: int = 64
    n_heads: int | None = None
    ffn_dim: int | None = None
    use_intensity: bool = True
    embed_type: str = "fc"
    margin: float = 0.2
    s_offset: float = 0.008

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        if not 1 <= self.infer_steps <= self.num_intensities:
            raise ValueError("infer_steps must lie in [1, num_intensities]")
        self.weights.validate()

    def model_config(self, d_video: int, d_text: int) -> ModelConfig:
        return ModelConfig(
            d_video=d_video,
            d_text=d_text,
            embed_dim=self.embed_dim,
            n_heads=self.n_heads,
            n_spans=self.n_spans,
            num_intensities=self.num_intensities,
            span_scale=self.span_scale,
            ffn_dim=self.ffn_dim,
            use_intensity=self.use_intensity,
            embed_type=self.embed_type,
        )


@dataclass
class TrainResult:
    model: GroundingModel
    config: TrainConfig
    loss_history: list[float]


@dataclass
class EvalReport:
    r1: dict[float, float]  # IoU threshold -> percentage
    map_at: dict[float, float]
    map_avg: float
    per_query: list[dict]


def _corpus_tensors(corpus: Corpus, dtype: torch.dtype):
    video = torch.as_tensor(corpus.video_features, dtype=dtype)
    vmask = torch.as_tensor(corpus.video_mask).bool()
    query = torch.as_tensor(corpus.query_features, dtype=dtype)
    qmask = torch.as_tensor(corpus.query_mask).bool()
    return video, vmask, query, qmask


def _frame_label_matrix(corpus: Corpus) -> torch.Tensor:
    """Per-frame binary labels over valid frames (padded frames stay 0)."""
    n, n_frames = corpus.video_mask.shape
    labels = np.zeros((n, n_frames), dtype=bool)
    for i, ann in enumerate(corpus.annotations):
        n_valid = int(corpus.video_mask[i].sum())
        member = np.zeros(n_valid, dtype=bool)
        for c, w in ann.gt:
            member |= frame_membership(c, w, n_valid)
        labels[i, : n_valid] = member
    return torch.as_tensor(labels)


def _gt_tensors(annotations: list[MomentAnnotation], dtype: torch.dtype) -> list[torch.Tensor]:
    return [torch.tensor(ann.gt, dtype=dtype) for ann in annotations]


def _dump_state(epoch: int, step: int, parts: dict[str, float], model: GroundingModel) -> str:
    norms = {name: float(p.detach().norm()) for name, p in model.named_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
    lines = [f"non-finite loss at epoch {epoch} step {step}"]
    lines += [f"  {k} = {v}" for k, v in parts.items()]
    lines += [f"  |{k}| = {v:.4g}" for k, v in worst]
    return "\n".join(lines)


def train(corpus: Corpus, cfg: TrainConfig, dtype: torch.dtype = torch.float32) -> TrainResult:
    """Optimize the model on a corpus; fully reproducible given cfg.seed."""
    cfg.validate()
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    generator = torch.Generator().manual_seed(cfg.seed)
    model = build_model(cfg.model_config(corpus.video_features.shape[2], corpus.query_features.shape[2]), generator)
    model = model.to(dtype)
    schedule = build_cosine_schedule(cfg.num_intensities, cfg.s_offset)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay, betas=(0.9, 0.999), eps=1e-8
    )

    video, vmask, query, qmask = _corpus_tensors(corpus, dtype)
    labels = _frame_label_matrix(corpus)
    gts = _gt_tensors(corpus.annotations, dtype)
    w = cfg.weights
    n = len(corpus)

    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=generator)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            b = idx.shape[0]
            m = sample_intensity(cfg.num_intensities, generator, (b,))
            noisy = torch.stack(
                [
                    pad_inputs(gts[int(i)], cfg.n_spans, int(m[j]), schedule, cfg.span_scale, generator)
                    for j, i in enumerate(idx)
                ]
            )

            fusion = model.fusion(video[idx], vmask[idx], query[idx], qmask[idx])
            scores = similarity_scores(model.sim_head(fusion), vmask[idx])
            sim = torch.stack(
                [
                    similarity_loss(scores[j], labels[i], vmask[i], generator, margin=cfg.margin)
                    for j, i in enumerate(idx.tolist())
                ]
            ).mean()

            pred, conf = model.denoiser(noisy, m, fusion, vmask[idx])
            vmr = torch.stack(
                [vmr_loss(pred[j], conf[j], gts[int(i)], w) for j, i in enumerate(idx)]
            ).mean()

            loss = total_loss(sim, vmr, w)
            if not torch.isfinite(loss):
                parts = {"sim": sim.detach().item(), "vmr": vmr.detach().item()}
                raise RuntimeError(_dump_state(epoch, n_batches, parts, model))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        history.append(epoch_loss / n_batches)
    return TrainResult(model=model, config=cfg, loss_history=history)


def infer(
    model: GroundingModel,
    corpus: Corpus,
    steps: int = 50,
    eta: float = 0.0,
    seed: int = 0,
    batch_size: int = 256,
    s_offset: float = 0.008,
) -> list[PredictionSet]:
    """Denoise randomly initialized span sets down an intensity ladder.

    The final ladder entry's denoiser output is used directly; spans are
    clamped to the video extent only here, at the output boundary.
    """
    cfg = model.cfg
    ladder = inference_ladder(cfg.num_intensities, steps)
    schedule = build_cosine_schedule(cfg.num_intensities, s_offset)
    generator = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype
    video, vmask, query, qmask = _corpus_tensors(corpus, dtype)

    out: list[PredictionSet] = []
    with torch.no_grad():
        for start in range(0, len(corpus), batch_size):
            sl = slice(start, start + batch_size)
            fusion = model.fusion(video[sl], vmask[sl], query[sl], qmask[sl])
            b = fusion.shape[0]
            x = torch.randn(b, cfg.n_spans, 2, generator=generator, dtype=dtype)
            for i, m in enumerate(ladder):
                spans01 = span_ops.scale_down(x, cfg.span_scale)
                pred, conf = model.denoiser(spans01, m, fusion, vmask[sl])
                if i + 1 == len(ladder):
                    break
                x0_scaled = span_ops.scale_up(pred, cfg.span_scale)
                eps = torch.randn(x.shape, generator=generator, dtype=dtype) if eta > 0 else None
                x = ddim_step(x, x0_scaled, m, ladder[i + 1], schedule, eta, eps)
            pred = span_ops.clamp_unit(pred.double())
            for j in range(b):
                out.append(
                    PredictionSet(spans=pred[j].numpy(), confidence=conf[j].numpy().astype(np.float64))
                )
    return out


def _query_iou_matrix(pred_spans: np.ndarray, gt: list[tuple[float, float]]) -> np.ndarray:
    p = span_ops.clamp_unit(torch.as_tensor(pred_spans, dtype=torch.float64))
    g = torch.tensor(gt, dtype=torch.float64)
    return span_ops.pairwise_iou(p, g).numpy()


def _average_precision(order: np.ndarray, ious: np.ndarray, threshold: float) -> float:
    n_gt = ious.shape[1]
    matched: set[int] = set()
    hits, ap = 0, 0.0
    for rank, p in enumerate(order, start=1):
        best_gt, best_iou = -1, threshold
        for g in range(n_gt):
            if g not in matched and ious[p, g] > best_iou:
                best_gt, best_iou = g, ious[p, g]
        if best_gt >= 0:
            matched.add(best_gt)
            hits += 1
            ap += hits / rank
    return ap / n_gt


def eval_metrics(
    predictions: list[PredictionSet],
    annotations: list[MomentAnnotation],
    r1_thresholds: tuple[float, ...] = R1_THRESHOLDS,
    map_thresholds: tuple[float, ...] = MAP_THRESHOLDS,
) -> EvalReport:
    """Top-1 recall and mean average precision at IoU thresholds.

    A retrieval counts at threshold n only when IoU is strictly greater
    than n. Ranking ties keep the lower span index first.
    """
    if len(predictions) != len(annotations):
        raise ValueError(f"{len(predictions)} prediction sets vs {len(annotations)} annotations")
    r1_hits = {t: 0 for t in r1_thresholds}
    ap_sums = {t: 0.0 for t in map_thresholds}
    per_query: list[dict] = []
    for pred, ann in zip(predictions, annotations):
        ious = _query_iou_matrix(pred.spans, ann.gt)
        order = np.argsort(-pred.confidence, kind="stable")
        top1 = int(order[0])
        top1_best = float(ious[top1].max())
        for t in r1_thresholds:
            r1_hits[t] += int(top1_best > t)
        for t in map_thresholds:
            ap_sums[t] += _average_precision(order, ious, t)
        c, w = pred.spans[top1]
        per_query.append(
            {
                "query_id": ann.query_id,
                "video_id": ann.video_id,
                "top1_center": float(c),
                "top1_width": float(w),
                "top1_iou": top1_best,
            }
        )
    n = len(annotations)
    r1 = {t: 100.0 * r1_hits[t] / n for t in r1_thresholds}
    map_at = {t: 100.0 * ap_sums[t] / n for t in map_thresholds}
    map_avg = sum(map_at[t] for t in map_thresholds) / len(map_thresholds)
    return EvalReport(r1=r1, map_at=map_at, map_avg=map_avg, per_query=per_query)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, path: str | Path) -> None:
    """One metric per line: name, threshold, value."""
    lines = [f"r1\t{t:.2f}\t{v:.4f}\n" for t, v in sorted(report.r1.items())]
    lines += [f"map\t{t:.2f}\t{v:.4f}\n" for t, v in sorted(report.map_at.items())]
    lines.append(f"map_avg\t-\t{report.map_avg:.4f}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_span_table(
    predictions: list[PredictionSet], annotations: list[MomentAnnotation], path: str | Path
) -> None:
    """Delimited per-query table of predicted vs ground-truth span geometry."""
    header = "query_id\tvideo_id\tgt_center\tgt_width\tpred_center\tpred_width\tconfidence\n"
    rows = [header]
    for pred, ann in zip(predictions, annotations):
        top = int(np.argmax(pred.confidence))
        c, w = pred.spans[top]
        gc, gw = ann.gt[0]
        rows.append(
            f"{ann.query_id}\t{ann.video_id}\t{gc:.6f}\t{gw:.6f}\t{c:.6f}\t{w:.6f}\t{pred.confidence[top]:.6f}\n"
        )
    Path(path).write_text("".join(rows), encoding="utf-8")


def save_predictions(predictions: list[PredictionSet], annotations: list[MomentAnnotation], path: str | Path) -> None:
    """Delimited span lists: query_id, video_id, center, width, confidence."""
    lines = []
    for pred, ann in zip(predictions, annotations):
        for (c, w), z in zip(pred.spans, pred.confidence):
            lines.append(f"{ann.query_id}\t{ann.video_id}\t{float(c)!r}\t{float(w)!r}\t{float(z)!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_predictions(path: str | Path) -> tuple[list[str], list[PredictionSet]]:
    """Returns query ids (first-seen order) and their prediction sets."""
    grouped: dict[str, list[tuple[float, float, float]]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        qid, _vid, c, w, z = parts
        grouped.setdefault(qid, []).append((float(c), float(w), float(z)))
    ids, sets = [], []
    for qid, rows in grouped.items():
        ids.append(qid)
        arr = np.asarray(rows, dtype=np.float64)
        sets.append(PredictionSet(spans=arr[:, :2], confidence=arr[:, 2]))
    return ids, sets


# ---------------------------------------------------------------------------
# config and checkpoint serialization
# ---------------------------------------------------------------------------

# fields typed Optional[...] whose defaults are None
_OPTIONAL_FIELDS = {"n_heads": int, "ffn_dim": int, "query_noise_sigma": float}


def config_to_entries(cfg) -> dict[str, str]:
    """Flatten a (possibly nested) config dataclass to manifest entries."""
    out: dict[str, str] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out.update(config_to_entries(value))
        else:
            out[f.name] = "none" if value is None else repr(value) if isinstance(value, float) else str(value)
    return out


def _coerce(text: str, target_type) -> object:
    if text == "none":
        return None
    if target_type is bool:
        return text.lower() in ("1", "true", "yes")
    return target_type(text)


def config_from_entries(cls, entries: dict[str, str]):
    """Rebuild a config dataclass from manifest entries, ignoring extras."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if dataclasses.is_dataclass(f.type) or f.name == "weights":
            kwargs[f.name] = config_from_entries(LossWeights, entries)
            continue
        if f.name not in entries:
            continue
        text = entries[f.name]
        if f.name in _OPTIONAL_FIELDS:
            kwargs[f.name] = _coerce(text, _OPTIONAL_FIELDS[f.name])
        elif isinstance(f.default, bool):
            kwargs[f.name] = _coerce(text, bool)
        elif isinstance(f.default, int):
            kwargs[f.name] = _coerce(text, int)
        elif isinstance(f.default, float):
            kwargs[f.name] = _coerce(text, float)
        else:
            kwargs[f.name] = text
    return cls(**kwargs)


def save_checkpoint(result: TrainResult, d_video: int, d_text: int, path: str | Path) -> None:
    root = Path(path)
    (root / "params").mkdir(parents=True, exist_ok=True)
    entries = {"format": "diffspan-checkpoint", "version": "1", "d_video": str(d_video), "d_text": str(d_text)}
    entries.update(config_to_entries(result.config))
    for i, (name, p) in enumerate(result.model.named_parameters()):
        fname = f"params/p{i:04d}.mdff"
        mdff.write_tensor(root / fname, p.detach().numpy())
        entries[f"param.{name}"] = fname
    entries["loss_history"] = ",".join(repr(v) for v in result.loss_history)
    mdff.write_manifest(root / "manifest.txt", entries)


def load_checkpoint(path: str | Path) -> TrainResult:
    root = Path(path)
    entries = mdff.read_manifest(root / "manifest.txt")
    if entries.get("format") != "diffspan-checkpoint":
        raise mdff.FormatError(f"{root}: not a checkpoint directory")
    cfg = config_from_entries(TrainConfig, entries)
    model = build_model(cfg.model_config(int(entries["d_video"]), int(entries["d_text"])), cfg.seed)
    state = {}
    for key, fname in entries.items():
        if key.startswith("param."):
            state[key[len("param.") :]] = torch.as_tensor(mdff.read_tensor(root / fname))
    dtype = next(iter(state.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(state)
    history = [float(v) for v in entries.get("loss_history", "").split(",") if v]
    return TrainResult(model=model, config=cfg, loss_history=history)
