"""Neural block-compressed texture sets.

Texture sets (albedo, normal, roughness, metalness, AO) are compressed
into four BC1 latent texture pyramids plus a small MLP decoder, trained
with quantization active from the start.  The package covers the full
pipeline: bit-exact BC1 packing, quantization-aware training, filtered
latent sampling, quality/footprint evaluation, a tile-classified runtime
simulator, and the .nbtc container format.
"""

from . import bc1, container, eval, mlp, pyramid, qat, tilesim, trainer

__version__ = "0.1.0"

__all__ = [
    "bc1",
    "container",
    "eval",
    "mlp",
    "pyramid",
    "qat",
    "tilesim",
    "trainer",
    "__version__",
]
