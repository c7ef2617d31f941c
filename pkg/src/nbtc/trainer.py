"""Texture-set compression: fit latent BC1 pyramids + MLP decoder by SGD.

Each step draws a batch of (uv, lod) points, fetches trilinear reference
features and quantized latent samples, pushes the latents through the
decoder, and applies an L1 loss.  Gradients flow back through the MLP, the
trilinear/bilinear filter weights, and the straight-through quantizer into
the raw latent parameters; two Adam groups update the MLP (lr 1e-3) and
the latents (lr 1e-2).

Quantization is active from the very first step.  Its straight-through
backward makes every decode-path Jacobian equal the smooth (sigmoid +
interpolation) one, which is what the finite-difference checks verify on
the quantize-disabled path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp, pyramid, qat

CHANNEL_ROLES = (
    "albedo_r",
    "albedo_g",
    "albedo_b",
    "normal_x",
    "normal_y",
    "normal_z",
    "roughness",
    "metalness",
    "ao",
)
NUM_CHANNELS = len(CHANNEL_ROLES)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; carries the step and group."""

    def __init__(self, step: int, group: str):
        self.step = step
        self.group = group
        super().__init__(f"non-finite loss at step {step} (parameter group: {group})")


class TextureSet:
    """9-channel reference stack (albedo, normal, roughness, metalness, AO)
    with a box-filtered mip chain down to 4x4."""

    def __init__(self, base: np.ndarray):
        base = np.asarray(base, dtype=np.float64)
        if base.ndim != 3 or base.shape[2] != NUM_CHANNELS:
            raise ValueError(f"expected (H, W, {NUM_CHANNELS}) array, got {base.shape}")
        h, w = base.shape[:2]
        self.mips = pyramid.build_mip_chain(base, qat.mip_chain_length(w, h))

    @property
    def width(self) -> int:
        return self.mips[0].shape[1]

    @property
    def height(self) -> int:
        return self.mips[0].shape[0]

    @property
    def n_mips(self) -> int:
        return len(self.mips)

    @property
    def max_lod(self) -> float:
        return float(self.n_mips - 1)


@dataclass
class TrainConfig:
    variant: str = "A"
    hidden_dim: int = 32
    steps: int = 5000
    batch_size: int = 2**14
    lr_mlp: float = 1e-3
    lr_latent: float = 1e-2
    seed: int = 0
    num_hidden_layers: int = 1

    def __post_init__(self):
        if self.lr_mlp <= 0 or self.lr_latent <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class TrainingLog:
    lr_mlp: float
    lr_latent: float
    losses: list[float] = field(default_factory=list)
    wall_seconds: float = 0.0

    def as_lines(self):
        """Line-oriented log: `step loss lr_mlp lr_latent` per step."""
        for step, loss in enumerate(self.losses):
            yield f"{step} {loss:.17g} {self.lr_mlp:g} {self.lr_latent:g}"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.as_lines():
                fh.write(line + "\n")


@dataclass
class TrainResult:
    pyramid: pyramid.LatentPyramid  # frozen BC1 backing
    decoder: mlp.MLPDecoder
    log: TrainingLog
    degenerate_blocks: int


def sample_training_point(rng: np.random.Generator, max_lod: float):
    """Draw one (uv, lod) training point.

    uv is uniform on [0, 1)^2.  The LOD is -log2(u') with u' uniform on
    (2^-max_lod, 1], which biases sampling toward fine mips while covering
    every level of the chain.
    """
    uv = rng.random(2)
    lod = _lod_from_uniform(rng.random(), max_lod)
    return uv, float(lod)


def sample_training_batch(rng: np.random.Generator, n: int, max_lod: float):
    uv = rng.random((n, 2))
    lod = _lod_from_uniform(rng.random(n), max_lod)
    return uv, lod


def _lod_from_uniform(x, max_lod: float):
    if max_lod <= 0:
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    span = 1.0 - 2.0**-max_lod
    u = 1.0 - np.asarray(x, dtype=np.float64) * span  # in (2^-max_lod, 1]
    return np.clip(-np.log2(u), 0.0, max_lod)


def expected_lod_mean(max_lod: float) -> float:
    """Closed-form mean of the training LOD distribution."""
    if max_lod <= 0:
        return 0.0
    a = np.log(2.0)
    tail = 2.0**-max_lod
    return float((1.0 / a - (1.0 / a + max_lod) * tail) / (1.0 - tail))


def reference_fetch(ts: TextureSet, uv, lod: float) -> np.ndarray:
    """Trilinear reference features at one (uv, lod); 9-vector."""
    return reference_fetch_batch(ts, np.asarray(uv, dtype=np.float64)[None, :], lod)[0]


def reference_fetch_batch(ts: TextureSet, uv: np.ndarray, lod) -> np.ndarray:
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    lod = np.broadcast_to(np.asarray(lod, dtype=np.float64), (uv.shape[0],))
    return pyramid.sample_mip_chain(ts.mips, uv, lod)


def batch_loss_and_grads(
    p: pyramid.LatentPyramid,
    decoder: mlp.MLPDecoder,
    ts: TextureSet,
    uv: np.ndarray,
    lod: np.ndarray,
    quantize: bool = True,
):
    """Loss plus gradients for every latent raw parameter and MLP parameter.

    Returns (loss, latent_grads, mlp_grads) where latent_grads is ordered
    like `latent_parameters(p)`.  With `quantize=False` the pipeline runs on
    the smooth path; gradients are identical by construction, which is what
    finite-difference verification exercises.
    """
    p.refresh(quantize=quantize)
    latents, cache = pyramid.sample_latents_with_cache(p, uv, lod)
    refs = reference_fetch_batch(ts, uv, lod)
    y, fcache = mlp.forward_batch_cached(decoder, latents)
    resid = y - refs
    loss = float(np.mean(np.abs(resid)))

    d_y = np.sign(resid) / resid.size
    mlp_grads, d_latents = mlp.backward_batch(decoder, fcache, d_y)
    texel_grads = pyramid.scatter_latent_grads(p, cache, d_latents)

    latent_grads: list[np.ndarray] = []
    for tex, tex_grads in zip(p.textures, texel_grads):
        for m, g in enumerate(tex_grads):
            d_alpha, d_e0, d_e1 = qat.texel_grads_to_raw(tex.caches[m], g)
            latent_grads.extend((d_alpha, d_e0, d_e1))
    return loss, latent_grads, mlp_grads


def batch_loss(p, decoder, ts, uv, lod, quantize: bool = True) -> float:
    """Forward-only loss; used by finite-difference oracles."""
    p.refresh(quantize=quantize)
    latents = pyramid.sample_latents_batch(p, uv, lod)
    refs = reference_fetch_batch(ts, uv, lod)
    y = mlp.forward_batch(decoder, latents)
    return float(np.mean(np.abs(y - refs)))


def latent_parameters(p: pyramid.LatentPyramid) -> list[np.ndarray]:
    """Raw latent arrays in the fixed order used for gradients and Adam."""
    params: list[np.ndarray] = []
    for tex in p.textures:
        params.extend(tex.texture.parameters())
    return params


def train(ts: TextureSet, cfg: TrainConfig) -> TrainResult:
    """Run the compression loop and return frozen artifacts plus the log."""
    variant = pyramid.get_variant(cfg.variant)
    pyramid.check_base_dims(ts.width, ts.height)

    seq = np.random.SeedSequence(cfg.seed)
    rng_latent, rng_mlp, rng_batch = (np.random.default_rng(s) for s in seq.spawn(3))

    p = pyramid.LatentPyramid.create_trainable(variant, ts.width, ts.height, rng_latent)
    decoder = mlp.MLPDecoder.create(cfg.hidden_dim, cfg.num_hidden_layers, rng_mlp)

    latent_params = latent_parameters(p)
    mlp_params = decoder.parameters()
    adam_latent = qat.AdamState.for_params(latent_params, lr=cfg.lr_latent)
    adam_mlp = qat.AdamState.for_params(mlp_params, lr=cfg.lr_mlp)

    log = TrainingLog(lr_mlp=cfg.lr_mlp, lr_latent=cfg.lr_latent)
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        uv, lod = sample_training_batch(rng_batch, cfg.batch_size, ts.max_lod)
        loss, latent_grads, mlp_grads = batch_loss_and_grads(p, decoder, ts, uv, lod)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, _diagnose_group(latent_params, mlp_params))
        qat.adam_step(latent_params, latent_grads, adam_latent)
        qat.adam_step(mlp_params, mlp_grads.as_list(), adam_mlp)
        log.losses.append(loss)
    log.wall_seconds = time.perf_counter() - t0

    frozen, degenerate = p.freeze()
    return TrainResult(
        pyramid=frozen, decoder=decoder, log=log, degenerate_blocks=degenerate
    )


def _diagnose_group(latent_params, mlp_params) -> str:
    for name, params in (("latent", latent_params), ("mlp", mlp_params)):
        if any(not np.all(np.isfinite(a)) for a in params):
            return name
    return "unknown"


def synthetic_texture_set(
    width: int, height: int, seed: int = 0, detail: int = 8
) -> TextureSet:
    """Deterministic smooth 9-channel set with correlated channels.

    Three low-frequency random fields drive all nine channels, so the
    cross-channel structure resembles a real PBR stack.  Useful for tests
    and demos.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.random((detail, detail, 3))
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    uu, vv = np.meshgrid(xs, ys)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    fields = pyramid.bilinear_batch(coarse, uv).reshape(height, width, 3)
    f1, f2, f3 = fields[..., 0], fields[..., 1], fields[..., 2]

    gy, gx = np.gradient(f1)
    norm = np.sqrt(gx**2 + gy**2 + 1.0)
    base = np.empty((height, width, NUM_CHANNELS))
    base[..., 0] = f1
    base[..., 1] = 0.5 * f1 + 0.5 * f2
    base[..., 2] = f2
    base[..., 3] = 0.5 + 0.5 * (gx / norm)
    base[..., 4] = 0.5 + 0.5 * (gy / norm)
    base[..., 5] = 0.5 + 0.5 * (1.0 / norm)
    base[..., 6] = 0.3 + 0.4 * f3
    base[..., 7] = np.clip(2.0 * f2 - 0.5, 0.0, 1.0)
    base[..., 8] = 0.5 + 0.5 * f1
    return TextureSet(np.clip(base, 0.0, 1.0))
