"""The 3D convolutional autoencoder and its clustering head.

The encoder applies two valid 3D convolutions (interleaved with one dropout
layer) whose spatial extents collapse a patch to its central pixel, flattens
the result, and projects it through a dense embedding layer.  The decoder
mirrors the encoder with transposed convolutions.  The clustering head holds
one trainable center per cluster and converts embeddings into soft
assignments through a Student's-t kernel; its target distribution sharpens
confident assignments while normalizing by cluster frequency.

Checkpoints are a single zip archive: ``config.json``, ``manifest.json``
listing (name, shape, dtype, file) for each tensor, and one raw
little-endian float64 payload per tensor.  Entry order and timestamps are
fixed so identical parameters give byte-identical archives.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .archive import load_archive, save_archive
from .autodiff import Tape, Tensor
from .clustering import kmeans
from .cube import PatchBatch
from .errors import (ConfigError, DegenerateDataError, ParameterError,
                     ShapeError, StateError)


@dataclass(frozen=True)
class CaeConfig:
    """Architecture hyperparameters.

    The spatial kernel extent must satisfy 2*(kernel_spatial-1)+1 ==
    patch_spatial so that the two valid convolutions collapse the patch to a
    single central position, and the spectral kernel depth must leave at
    least one spectral position after both layers.
    """

    bands: int
    clusters: int
    patch_spatial: int = 5
    kernels_per_layer: int = 32
    kernel_spatial: int = 3
    kernel_depth: int = 9
    embedding_dim: int = 25
    dropout_p: float = 0.5

    def __post_init__(self):
        for name in ("bands", "clusters", "patch_spatial", "kernels_per_layer",
                     "kernel_spatial", "kernel_depth", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if 2 * (self.kernel_spatial - 1) + 1 != self.patch_spatial:
            raise ConfigError(
                f"two valid {self.kernel_spatial}x{self.kernel_spatial} stages do not "
                f"collapse a {self.patch_spatial}x{self.patch_spatial} patch to 1x1")
        if self.bands - 2 * (self.kernel_depth - 1) < 1:
            raise ConfigError(
                f"kernel depth {self.kernel_depth} leaves no spectral extent "
                f"after two layers on {self.bands} bands")
        if self.clusters < 2:
            raise ConfigError("clustering needs at least two clusters")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {self.dropout_p}")

    @property
    def conv1_depth(self) -> int:
        return self.bands - self.kernel_depth + 1

    @property
    def conv2_depth(self) -> int:
        return self.conv1_depth - self.kernel_depth + 1

    @property
    def flat_dim(self) -> int:
        """Length of the flattened central-pixel feature vector."""
        return self.kernels_per_layer * self.conv2_depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CaeConfig":
        return cls(**data)


# parameter tensors in build (and checkpoint) order
WEIGHT_NAMES = (
    "enc_conv1_w", "enc_conv1_b", "enc_conv2_w", "enc_conv2_b",
    "enc_dense_w", "enc_dense_b", "dec_dense_w", "dec_dense_b",
    "dec_conv1_w", "dec_conv1_b", "dec_conv2_w", "dec_conv2_b",
)
CENTERS_NAME = "centers"


class CaeParams:
    """All trainable tensors of the autoencoder plus the cluster centers.

    ``centers`` stays None until initialized from stage-1 embeddings; the
    decoder tensors mirror the encoder tensors shape-for-shape.
    """

    def __init__(self, config: CaeConfig, weights: dict[str, Tensor],
                 centers: Tensor | None = None):
        missing = set(WEIGHT_NAMES) - set(weights)
        if missing:
            raise ParameterError(f"missing parameter tensors: {sorted(missing)}")
        self.config = config
        self.weights = weights
        self.centers = centers

    def weight_items(self) -> list[tuple[str, Tensor]]:
        return [(name, self.weights[name]) for name in WEIGHT_NAMES]

    def trainable_items(self, include_centers: bool = True) -> list[tuple[str, Tensor]]:
        items = self.weight_items()
        if include_centers and self.centers is not None:
            items.append((CENTERS_NAME, self.centers))
        return items

    def require_centers(self) -> Tensor:
        if self.centers is None:
            raise StateError("cluster centers have not been initialized")
        return self.centers


def build_cae(config: CaeConfig, rng: np.random.Generator) -> CaeParams:
    """Fresh parameters, weights uniform in +/- sqrt(6 / fan_in), zero biases."""
    k, ks, kd = config.kernels_per_layer, config.kernel_spatial, config.kernel_depth
    n, flat = config.embedding_dim, config.flat_dim

    def uniform(shape, fan_in):
        limit = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)

    def zeros(size):
        return Tensor(np.zeros(size), requires_grad=True)

    kernel_volume = ks * ks * kd
    weights = {
        "enc_conv1_w": uniform((k, 1, ks, ks, kd), kernel_volume),
        "enc_conv1_b": zeros(k),
        "enc_conv2_w": uniform((k, k, ks, ks, kd), k * kernel_volume),
        "enc_conv2_b": zeros(k),
        "enc_dense_w": uniform((n, flat), flat),
        "enc_dense_b": zeros(n),
        "dec_dense_w": uniform((flat, n), n),
        "dec_dense_b": zeros(flat),
        "dec_conv1_w": uniform((k, k, ks, ks, kd), k * kernel_volume),
        "dec_conv1_b": zeros(k),
        "dec_conv2_w": uniform((k, 1, ks, ks, kd), k * kernel_volume),
        "dec_conv2_b": zeros(1),
    }
    return CaeParams(config, weights)


def _check_patch_shape(config: CaeConfig, patches: np.ndarray, rank: int):
    expected = (config.patch_spatial, config.patch_spatial, config.bands)
    if patches.ndim != rank or patches.shape[-3:] != expected:
        raise ShapeError(f"patch shape {patches.shape} does not match config {expected}")


def encode_batch(params: CaeParams, patches, mode: str = "infer",
                 rng: np.random.Generator | None = None,
                 tape: Tape | None = None) -> Tensor:
    """Embed a (count, s, s, bands) batch of patches into (count, n) latents."""
    x = patches.data if isinstance(patches, Tensor) else np.asarray(patches, dtype=np.float64)
    _check_patch_shape(params.config, x, 4)
    w = params.weights
    h = ad.conv3d(Tensor(x[:, None]), w["enc_conv1_w"], w["enc_conv1_b"], tape)
    h = ad.dropout(h, params.config.dropout_p, mode, rng, tape)
    h = ad.conv3d(h, w["enc_conv2_w"], w["enc_conv2_b"], tape)
    flat = ad.reshape(h, (len(x), params.config.flat_dim), tape)
    return ad.dense(flat, w["enc_dense_w"], w["enc_dense_b"], tape)


def encode(params: CaeParams, patch, mode: str = "infer",
           rng: np.random.Generator | None = None,
           tape: Tape | None = None) -> Tensor:
    """Embed a single (s, s, bands) patch into an n-vector."""
    x = patch.data if isinstance(patch, Tensor) else np.asarray(patch, dtype=np.float64)
    _check_patch_shape(params.config, x, 3)
    z = encode_batch(params, x[None], mode, rng, tape)
    return ad.reshape(z, (params.config.embedding_dim,), tape)


def decode_batch(params: CaeParams, latents, tape: Tape | None = None) -> Tensor:
    """Reconstruct (count, s, s, bands) patches from (count, n) latents."""
    z = latents if isinstance(latents, Tensor) else Tensor(latents)
    cfg = params.config
    if z.data.ndim != 2 or z.data.shape[1] != cfg.embedding_dim:
        raise ShapeError(f"latents {z.data.shape} do not match embedding size "
                         f"{cfg.embedding_dim}")
    w = params.weights
    g = ad.dense(z, w["dec_dense_w"], w["dec_dense_b"], tape)
    g = ad.reshape(g, (len(z.data), cfg.kernels_per_layer, 1, 1, cfg.conv2_depth), tape)
    u = ad.conv3d_transpose(g, w["dec_conv1_w"], w["dec_conv1_b"], tape)
    return ad.conv3d_transpose(u, w["dec_conv2_w"], w["dec_conv2_b"], tape)


def decode(params: CaeParams, latent, tape: Tape | None = None) -> Tensor:
    """Reconstruct one (s, s, bands) patch from an n-vector latent."""
    z = latent if isinstance(latent, Tensor) else Tensor(latent)
    if z.data.shape != (params.config.embedding_dim,):
        raise ShapeError(f"latent must have shape ({params.config.embedding_dim},), "
                         f"got {z.data.shape}")
    zb = ad.reshape(z, (1, params.config.embedding_dim), tape)
    out = decode_batch(params, zb, tape)
    cfg = params.config
    return ad.reshape(out, (cfg.patch_spatial, cfg.patch_spatial, cfg.bands), tape)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def reconstruction_loss(batch_in, batch_out, tape: Tape | None = None) -> Tensor:
    """Mean over patches of the summed squared reconstruction error."""
    x = batch_in.patches if isinstance(batch_in, PatchBatch) else batch_in
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    out = batch_out if isinstance(batch_out, Tensor) else Tensor(batch_out)
    if x.shape != out.data.shape:
        raise ShapeError(f"input {x.shape} and reconstruction {out.data.shape} disagree")
    if x.ndim < 1 or len(x) == 0:
        raise ParameterError("reconstruction loss needs at least one patch")
    diff = ad.sub(out, Tensor(x), tape)
    return ad.scale(ad.sum_all(ad.mul(diff, diff, tape), tape), 1.0 / len(x), tape)


def soft_assign(latents, centers, tape: Tape | None = None) -> Tensor:
    """Soft cluster assignments from the Student's-t kernel.

    q[i, j] is proportional to 1 / (1 + ||z_i - center_j||^2), normalized so
    each row sums to one.
    """
    if centers is None:
        raise StateError("cluster centers have not been initialized")
    z = latents if isinstance(latents, Tensor) else Tensor(latents)
    c = centers if isinstance(centers, Tensor) else Tensor(centers)
    return ad.student_t_rows(ad.pairwise_sqdist(z, c, tape), tape)


def target_distribution(q: np.ndarray) -> np.ndarray:
    """Sharpened, frequency-normalized target for the clustering loss.

    t[i, j] ~ q[i, j]^2 / f_j with f_j the soft cluster frequency, rows
    renormalized.  The result is treated as a constant during
    backpropagation, so this is a plain array function.
    """
    q = np.asarray(q, dtype=np.float64)
    freq = q.sum(axis=0)
    if np.any(freq <= 0.0):
        raise DegenerateDataError("a cluster has zero soft frequency")
    weighted = q * q / freq
    return weighted / weighted.sum(axis=1, keepdims=True)


def clustering_loss(target: np.ndarray, q, tape: Tape | None = None) -> Tensor:
    """KL divergence of the soft assignments from the (constant) target."""
    return ad.kl_divergence(target, q, tape)


def total_loss(recon, clust, alpha: float = 0.1, tape: Tape | None = None) -> Tensor:
    """Weighted sum of reconstruction and clustering losses."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"loss weight must lie in (0, 1), got {alpha}")
    recon = recon if isinstance(recon, Tensor) else Tensor(recon)
    clust = clust if isinstance(clust, Tensor) else Tensor(clust)
    return ad.add(recon, ad.scale(clust, alpha, tape), tape)


def init_centers(latents, clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Cluster centers from k-means over the stage-1 embeddings."""
    latents = np.asarray(latents, dtype=np.float64)
    if len(np.unique(latents, axis=0)) < clusters:
        raise DegenerateDataError(
            f"fewer than {clusters} distinct embeddings; cannot place centers")
    model, _ = kmeans(latents, clusters, seed=rng)
    return model.centers


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_checkpoint(params: CaeParams, path: str | Path,
                    extra_meta: dict | None = None) -> None:
    """Write parameters as a deterministic archive (see :mod:`.archive`).

    ``extra_meta`` lets callers record pipeline context (e.g. which
    reduction preceded training) alongside the architecture config.
    """
    entries = params.trainable_items(include_centers=True)
    meta = {"format": "hsiseg-checkpoint", "version": _CHECKPOINT_VERSION,
            "config": params.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    save_archive(path, meta, [(name, t.data) for name, t in entries])


def load_checkpoint(path: str | Path) -> tuple[CaeParams, dict]:
    """Rebuild parameters (and the stored metadata) from a checkpoint."""
    meta, arrays = load_archive(path)
    if meta.get("format") != "hsiseg-checkpoint":
        raise ParameterError(f"{path} is not a parameter checkpoint")
    config = CaeConfig.from_dict(meta["config"])
    tensors = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    centers = tensors.pop(CENTERS_NAME, None)
    return CaeParams(config, tensors, centers), meta
