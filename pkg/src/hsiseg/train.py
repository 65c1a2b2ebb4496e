"""Adam optimization and the two-stage training schedule.

Stage 1 minimizes the reconstruction loss alone and stops once two
consecutive epoch losses differ by less than epsilon (or at a safety cap).
Stage 2 initializes the cluster centers from k-means over the stage-1
embeddings, then jointly optimizes reconstruction plus the alpha-weighted
clustering loss over the network weights *and* the centers, refreshing the
target distribution at the start of every epoch, for at most
``stage2_epochs`` epochs.

One Adam state spans both stages (the centers enroll with zero moments when
stage 2 starts), so a stage-2 run with alpha = 0 reproduces bit-for-bit the
trajectory of simply continuing stage 1 - a useful diagnostic identity.

Random streams are split by role (shuffling, dropout, center seeding) so
every run is reproducible from one seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cae
from .autodiff import Tape, Tensor
from .cube import HsiCube, PatchBatch, SegmentationMap, extract_patches, patch_windows
from .errors import ParameterError, ShapeError

INFERENCE_CHUNK = 4096  # patches embedded per forward pass at inference


@dataclass
class AdamState:
    """First/second moment estimates per parameter, plus the shared step count."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[tuple[str, Tensor]], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place to the parameters."""
    state.step += 1
    t = state.step
    for name, tensor in params:
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match "
                             f"parameter {name} {tensor.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


@dataclass
class TrainConfig:
    """Knobs of the two-stage schedule."""

    batch_size: int = 256
    epsilon: float = 1e-6          # stage-1 stop: |L(t) - L(t-1)| < epsilon
    stage1_max_epochs: int = 500   # safety cap; the epsilon rule is the intended stop
    stage2_epochs: int = 25        # hard-capped at 25
    alpha: float = 0.1             # clustering-loss weight; 0 is a diagnostic setting
    lr: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch size must be at least 1")
        if self.stage1_max_epochs < 2:
            raise ParameterError("stage 1 needs at least two epochs to compare losses")
        if not 0 <= self.stage2_epochs <= 25:
            raise ParameterError("stage-2 epoch count must lie in [0, 25]")
        if not 0.0 <= self.alpha < 1.0:
            raise ParameterError(f"loss weight must lie in [0, 1), got {self.alpha}")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be non-negative")
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")


@dataclass
class TrainReport:
    """Per-epoch loss traces and provenance of one training run.

    Wall-clock figures are kept out of :meth:`to_dict` on purpose: the
    serialized report must be byte-identical across reruns of the same
    (config, seed), and timings never are.
    """

    seed: int
    stage1_epochs: int
    stage1_losses: list[float]
    stage2_losses: list[tuple[float, float, float]]  # (recon, clustering, total)
    wall_time: float
    phase_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stage1_epochs": self.stage1_epochs,
            "stage1_losses": self.stage1_losses,
            "stage2_losses": [list(entry) for entry in self.stage2_losses],
        }


def _as_patch_array(data) -> np.ndarray:
    patches = data.patches if isinstance(data, PatchBatch) else np.asarray(data)
    if patches.ndim != 4 or len(patches) == 0:
        raise ParameterError("training data must be a non-empty patch batch")
    return np.asarray(patches, dtype=np.float64)


def _collect_grads(items: list[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in items}


def _zero_grads(items: list[tuple[str, Tensor]]) -> None:
    for _, t in items:
        t.zero_grad()


def embed_all(params: cae.CaeParams, patches: np.ndarray,
              chunk: int = INFERENCE_CHUNK) -> np.ndarray:
    """Inference-mode embeddings of every patch, computed in bounded chunks."""
    outputs = [cae.encode_batch(params, patches[i:i + chunk]).data
               for i in range(0, len(patches), chunk)]
    return np.concatenate(outputs, axis=0)


def train_stage1(params: cae.CaeParams, data, cfg: TrainConfig,
                 adam: AdamState, shuffle_rng: np.random.Generator,
                 dropout_rng: np.random.Generator) -> list[float]:
    """Reconstruction-only pretraining; the clustering head stays untouched.

    Returns the per-epoch loss trace.  Each epoch's loss is the
    patch-weighted mean of its batch losses, and the run ends when two
    consecutive values differ by less than ``cfg.epsilon`` or the safety cap
    is reached.
    """
    patches = _as_patch_array(data)
    count = len(patches)
    items = params.weight_items()
    losses: list[float] = []
    for _ in range(cfg.stage1_max_epochs):
        order = shuffle_rng.permutation(count)
        epoch_sum = 0.0
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = patches[idx]
            _zero_grads(items)
            tape = Tape()
            latents = cae.encode_batch(params, batch, "train", dropout_rng, tape)
            recon = cae.decode_batch(params, latents, tape)
            loss = cae.reconstruction_loss(batch, recon, tape)
            tape.backward(loss)
            adam_step(items, _collect_grads(items), adam)
            epoch_sum += float(loss.data) * len(idx)
        losses.append(epoch_sum / count)
        if not np.isfinite(losses[-1]):
            raise ParameterError("reconstruction loss diverged to a non-finite value")
        if len(losses) >= 2 and abs(losses[-1] - losses[-2]) < cfg.epsilon:
            break
    return losses


def train_stage2(params: cae.CaeParams, data, cfg: TrainConfig,
                 adam: AdamState, shuffle_rng: np.random.Generator,
                 dropout_rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Joint reconstruction + clustering optimization over weights and centers.

    The target distribution is recomputed from inference-mode embeddings at
    the start of each epoch and held constant within it.  Returns per-epoch
    (reconstruction, clustering, total) triples; the epoch total recombines
    the two epoch aggregates with the configured weight.
    """
    centers = params.require_centers()
    patches = _as_patch_array(data)
    count = len(patches)
    items = params.trainable_items(include_centers=True)
    trace: list[tuple[float, float, float]] = []
    for _ in range(cfg.stage2_epochs):
        latents_all = embed_all(params, patches)
        q_all = cae.soft_assign(latents_all, centers.data).data
        target_all = cae.target_distribution(q_all)

        order = shuffle_rng.permutation(count)
        recon_sum = 0.0
        clust_sum = 0.0
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = patches[idx]
            _zero_grads(items)
            tape = Tape()
            latents = cae.encode_batch(params, batch, "train", dropout_rng, tape)
            recon_out = cae.decode_batch(params, latents, tape)
            recon = cae.reconstruction_loss(batch, recon_out, tape)
            q = cae.soft_assign(latents, centers, tape)
            clust = cae.clustering_loss(target_all[idx], q, tape)
            loss = ad.add(recon, ad.scale(clust, cfg.alpha, tape), tape)
            tape.backward(loss)
            adam_step(items, _collect_grads(items), adam)
            recon_sum += float(recon.data) * len(idx)
            clust_sum += float(clust.data)
        epoch_recon = recon_sum / count
        trace.append((epoch_recon, clust_sum, epoch_recon + cfg.alpha * clust_sum))
    return trace


def run_training(cube: HsiCube, config: cae.CaeConfig, cfg: TrainConfig,
                 seed: int) -> tuple[cae.CaeParams, TrainReport]:
    """The full two-stage schedule on one scene.

    Background pixels (label 0) never enter the training batches, the center
    initialization, or the target distribution; they still get labels at
    inference time via :func:`segment`.
    """
    started = time.perf_counter()
    streams = np.random.SeedSequence(seed).spawn(4)
    init_rng, shuffle_rng, dropout_rng, centers_rng = map(np.random.default_rng, streams)

    batch = extract_patches(cube, spatial=config.patch_spatial)
    params = cae.build_cae(config, init_rng)
    adam = AdamState(lr=cfg.lr)

    stage1 = train_stage1(params, batch, cfg, adam, shuffle_rng, dropout_rng)
    t_stage1 = time.perf_counter()
    latents = embed_all(params, batch.patches)
    params.centers = Tensor(cae.init_centers(latents, config.clusters, centers_rng),
                            requires_grad=True)
    t_centers = time.perf_counter()
    stage2 = train_stage2(params, batch, cfg, adam, shuffle_rng, dropout_rng)
    t_stage2 = time.perf_counter()

    report = TrainReport(seed=seed, stage1_epochs=len(stage1), stage1_losses=stage1,
                         stage2_losses=stage2, wall_time=t_stage2 - started,
                         phase_seconds={"stage1": t_stage1 - started,
                                        "centers": t_centers - t_stage1,
                                        "stage2": t_stage2 - t_centers})
    return params, report


def segment(params: cae.CaeParams, cube: HsiCube,
            chunk: int = INFERENCE_CHUNK) -> SegmentationMap:
    """Label every pixel with its most likely cluster (1-based).

    All pixels get a label, background included; background pixels are
    flagged in the returned map.  Pure function of (params, cube).
    """
    centers = params.require_centers()
    if cube.bands != params.config.bands:
        raise ShapeError(f"cube has {cube.bands} bands, model expects "
                         f"{params.config.bands}")
    win = patch_windows(cube, params.config.patch_spatial)
    flat_labels = np.empty(cube.height * cube.width, dtype=np.int64)
    ys, xs = np.divmod(np.arange(cube.height * cube.width), cube.width)
    for start in range(0, len(flat_labels), chunk):
        sel = slice(start, start + chunk)
        patches = np.ascontiguousarray(win[ys[sel], xs[sel]])
        latents = cae.encode_batch(params, patches).data
        q = cae.soft_assign(latents, centers.data).data
        flat_labels[sel] = q.argmax(axis=1) + 1
    background = (cube.labels == 0) if cube.labels is not None else None
    return SegmentationMap(labels=flat_labels.reshape(cube.height, cube.width),
                           background=background)
