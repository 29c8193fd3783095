"""End-to-end model: distance series -> patches -> tokens -> frozen stack -> score."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autograd import Tensor, checksum, reshape, slice_
from .backbone import BackboneConfig, FrozenWeights, backbone_forward, build_backbone, preset_config
from .config import RunConfig, from_dict
from .connectome import sliding_window_connectomes
from .errors import ConnectomeLLMError, DimensionError, TooShortError
from .graph_distance import DistanceSeries, distance_series
from .layers import linear
from .patch_embed import PatchEmbedding, embed_patches, make_patches, patch_count
from .reprogram import CrossAttention, PrototypeBank, load_vocab, random_vocab, reprogram_patches
from .revrin import RevrinState, revrin_forward, save_states, load_states
from .tensorio import read_tensors, write_tensors
from .timeseries_io import Cohort, SubjectRecord


# ------------------------------------------------------------------ inputs


def subject_distances(record: SubjectRecord, cfg: RunConfig, metrics=None) -> DistanceSeries:
    """Connectome windows and consecutive-window distances for one subject."""
    try:
        seq = sliding_window_connectomes(record, cfg.window.length, cfg.window.stride)
        return distance_series(seq, metrics or cfg.metrics, order=cfg.wasserstein_p)
    except ConnectomeLLMError as exc:
        raise _with_subject(exc, record.subject_id)


def _with_subject(exc: ConnectomeLLMError, subject_id: str) -> ConnectomeLLMError:
    if getattr(exc, "subject_id", None) is None:
        exc.subject_id = subject_id
        exc.args = (f"subject {subject_id}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def _distances_job(args):
    record, cfg_dict, metrics = args
    return subject_distances(record, from_dict(cfg_dict), metrics)


def cohort_distances(cohort: Cohort, cfg: RunConfig, metrics=None, jobs: int = 1) -> dict[str, DistanceSeries]:
    if jobs > 1 and len(cohort) > 1:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_distances_job, [(r, cfg_dict, metrics) for r in cohort.records]))
        return {r.subject_id: x for r, x in zip(cohort.records, results)}
    return {r.subject_id: subject_distances(r, cfg, metrics) for r in cohort.records}


@dataclass
class PreparedInputs:
    """Model-ready arrays for a set of subjects."""

    ids: list[str]
    patches: np.ndarray  # (N, d*m, L), feature-major
    targets: np.ndarray
    diagnoses: list[str]
    states: dict[str, RevrinState]
    T: int
    d: int
    m: int

    def subset(self, ids) -> "PreparedInputs":
        index = {sid: i for i, sid in enumerate(self.ids)}
        rows = [index[s] for s in ids]
        return PreparedInputs(
            [self.ids[i] for i in rows],
            self.patches[rows],
            self.targets[rows],
            [self.diagnoses[i] for i in rows],
            {s: self.states[s] for s in ids if s in self.states},
            self.T,
            self.d,
            self.m,
        )

    @property
    def impaired(self) -> np.ndarray:
        return np.array([dx != "Normal" for dx in self.diagnoses])


def prepare_inputs(
    cohort: Cohort,
    cfg: RunConfig,
    series: dict[str, DistanceSeries] | None = None,
    T: int | None = None,
) -> PreparedInputs:
    """Distances (or cached ``series``), truncation to a common T, RevRIN, patching.

    Every subject is cut to the cohort-minimum number of distance steps (or
    ``T`` when given) so the head input size is fixed.
    """
    if series is None:
        series = cohort_distances(cohort, cfg)
    selected = {}
    for r in cohort.records:
        x = series[r.subject_id]
        if list(x.metric_names) != list(cfg.metrics):
            rows = [x.metric_names.index(mname) for mname in cfg.metrics]
            x = DistanceSeries(x.values[rows], list(cfg.metrics))
        selected[r.subject_id] = x
    if T is None:
        T = min(x.T for x in selected.values())
    if T < cfg.patch.length:
        raise TooShortError(f"distance series of length {T} is shorter than patch length {cfg.patch.length}")
    ids, patches, targets, diagnoses, states = [], [], [], [], {}
    for r in cohort.records:
        x = selected[r.subject_id].truncate(T).values
        if cfg.revrin:
            try:
                x, st = revrin_forward(x, names=cfg.metrics)
            except ConnectomeLLMError as exc:
                raise _with_subject(exc, r.subject_id)
            states[r.subject_id] = st
        p = make_patches(x, cfg.patch)  # (d, m, L)
        patches.append(p.reshape(-1, cfg.patch.length))
        ids.append(r.subject_id)
        targets.append(r.target)
        diagnoses.append(r.diagnosis)
    d = len(cfg.metrics)
    m = patch_count(T, cfg.patch.length, cfg.patch.stride)
    arr = np.stack(patches) if patches else np.zeros((0, d * m, cfg.patch.length))
    return PreparedInputs(ids, arr, np.array(targets, dtype=np.float64), diagnoses, states, T, d, m)


# ------------------------------------------------------------------ model


@dataclass
class OutputHead:
    weight: Tensor  # (in, 1)
    bias: Tensor  # (1,)
    pooling: str = "flatten"

    @classmethod
    def init(cls, n_in: int, rng: np.random.Generator, pooling: str = "flatten") -> "OutputHead":
        bound = 1.0 / np.sqrt(n_in)
        w = Tensor(rng.uniform(-bound, bound, size=(n_in, 1)), requires_grad=True, name="head.weight")
        return cls(w, Tensor(np.zeros(1), requires_grad=True, name="head.bias"), pooling)

    def parameters(self) -> dict[str, Tensor]:
        return {"head.weight": self.weight, "head.bias": self.bias}


@dataclass
class ModelState:
    """Trainable task modules plus the frozen backbone and vocabulary."""

    patch: PatchEmbedding
    bank: PrototypeBank
    attn: CrossAttention
    head: OutputHead
    backbone: FrozenWeights
    n_tokens: int

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.patch.parameters())
        out.update(self.bank.parameters())
        out.update(self.attn.parameters())
        out.update(self.head.parameters())
        return out

    def frozen(self) -> dict[str, Tensor]:
        out = {f"backbone.{k}": t for k, t in self.backbone.tensors().items()}
        out["vocab"] = self.bank.vocab_embeddings
        return out

    def module_checksums(self) -> dict[str, str]:
        groups = {
            "patch_embedding": self.patch.parameters(),
            "reprogramming": {**self.bank.parameters(), **self.attn.parameters()},
            "output_head": self.head.parameters(),
            "backbone": {k: t for k, t in self.frozen().items() if k != "vocab"},
            "vocab": {"vocab": self.bank.vocab_embeddings},
        }
        return {g: checksum(ts[k] for k in sorted(ts)) for g, ts in groups.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.trainable().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, t in self.trainable().items():
            t.data[...] = snap[k]


def backbone_config(cfg: RunConfig) -> BackboneConfig:
    b = cfg.backbone
    base = BackboneConfig(b.n_layers, b.d_h, b.n_attn_heads, b.d_ff, b.causal, b.positional)
    if b.preset is not None:
        base = preset_config(b.preset, base)
    return base


def frozen_parts(cfg: RunConfig) -> tuple[FrozenWeights, Tensor]:
    """Backbone and vocabulary: seeded, or loaded from files. Shared across runs."""
    bcfg = backbone_config(cfg)
    weights = build_backbone(bcfg, seed=cfg.backbone.seed, weight_file=cfg.backbone.weight_file)
    if cfg.backbone.use_layers is not None:
        weights = weights.truncated(cfg.backbone.use_layers)
    if cfg.reprogram.vocab_file is not None:
        vocab = load_vocab(cfg.reprogram.vocab_file, bcfg.d_h)
    else:
        vocab = random_vocab(cfg.reprogram.vocab_size, bcfg.d_h, cfg.reprogram.vocab_seed)
    return weights, vocab


def build_model(cfg: RunConfig, n_tokens: int, seed: int, frozen: tuple[FrozenWeights, Tensor] | None = None) -> ModelState:
    weights, vocab = frozen if frozen is not None else frozen_parts(cfg)
    d_h = weights.config.d_h
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x7A5C])
    patch = PatchEmbedding.init(cfg.patch, rng)
    bank = PrototypeBank.init(vocab, cfg.reprogram.prototypes, rng)
    attn = CrossAttention.init(cfg.patch.embed_dim, d_h, cfg.reprogram.heads, rng)
    n_in = n_tokens * d_h if cfg.train.pooling == "flatten" else d_h
    head = OutputHead.init(n_in, rng, cfg.train.pooling)
    return ModelState(patch, bank, attn, head, weights, n_tokens)


def tokens(model: ModelState, patches) -> Tensor:
    """(B, M, L) patches -> (B, M, d_h) reprogrammed tokens."""
    return reprogram_patches(embed_patches(patches, model.patch), model.bank, model.attn)


def forward(model: ModelState, patches) -> Tensor:
    """(B, M, L) patches -> (B,) predictions."""
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    if patches.ndim != 3 or patches.shape[1] != model.n_tokens:
        raise DimensionError(
            f"model expects (B, {model.n_tokens}, L) patches, got {patches.shape}", module="train_eval"
        )
    h = backbone_forward(tokens(model, patches), model.backbone)
    B, M, d_h = h.shape
    if model.head.pooling == "flatten":
        pooled = reshape(h, (B, M * d_h))
    else:
        pooled = reshape(slice_(h, (slice(None), M - 1, slice(None))), (B, d_h))
    return reshape(linear(pooled, model.head.weight, model.head.bias), (B,))


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(directory, model: ModelState, cfg: RunConfig, meta: dict | None = None, states=None) -> Path:
    """``config.json`` + ``tensors.bin`` + ``revrin.json`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = {k: t.data for k, t in model.trainable().items()}
    named.update({k: t.data for k, t in model.frozen().items()})
    entries = write_tensors(directory / "tensors.bin", named)
    trainable = set(model.trainable())
    for e in entries:
        e["trainable"] = e["name"] in trainable
    doc = {
        "run": cfg.to_dict(),
        "n_tokens": model.n_tokens,
        "backbone_layers": len(model.backbone.layers),
        "tensors": entries,
        "meta": meta or {},
    }
    (directory / "config.json").write_text(json.dumps(doc, indent=2) + "\n")
    save_states(states or {}, directory / "revrin.json")
    return directory


def load_checkpoint(directory) -> tuple[ModelState, RunConfig, dict, dict[str, RevrinState]]:
    directory = Path(directory)
    doc = json.loads((directory / "config.json").read_text())
    cfg = from_dict(doc["run"])
    arrays = read_tensors(directory / "tensors.bin", doc["tensors"])
    bcfg = replace(backbone_config(cfg), n_layers=doc["backbone_layers"])
    layers = []
    for i in range(bcfg.n_layers):
        prefix = f"backbone.layers.{i}."
        layers.append({k[len(prefix):]: Tensor(v) for k, v in arrays.items() if k.startswith(prefix)})
    final = {"ln.g": Tensor(arrays["backbone.final.ln.g"]), "ln.b": Tensor(arrays["backbone.final.ln.b"])}
    weights = FrozenWeights(bcfg, layers, final)
    vocab = Tensor(arrays["vocab"], name="vocab")
    model = build_model(cfg, doc["n_tokens"], seed=0, frozen=(weights, vocab))
    for k, t in model.trainable().items():
        t.data[...] = arrays[k]
    states = load_states(directory / "revrin.json") if (directory / "revrin.json").exists() else {}
    return model, cfg, doc.get("meta", {}), states
