"""Conditioned denoiser: predicts the noise in x_t given the image I and step t.

The network is a U-Net whose encoder input is the merge of two feature maps:
a single conv applied to the current map estimate, and an RRDB-based encoder
applied to the image. The step index enters every residual block through a
shared learned embedding table.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, embedding_lookup, leaky_relu, reshape, silu

CONDITIONING_MODES = ("sum", "feature_concat", "raw_concat")
RESIDUAL_SCALE = 0.2  # dense-block and RRDB residual scaling


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    depth: int = 4
    channel_multipliers: tuple = (1, 1, 2, 2)
    attention_resolutions: frozenset = frozenset({8, 4})
    rrdb_blocks: int = 2
    heads: int = 4
    time_embed_dim: int = 128
    conditioning_mode: str = "sum"
    input_size: tuple = (32, 32)
    norm_groups: int = 8

    def __post_init__(self):
        if len(self.channel_multipliers) != self.depth:
            raise ConfigurationError(
                f"{len(self.channel_multipliers)} channel multipliers for depth {self.depth}"
            )
        H, W = self.input_size
        down = 2 ** (self.depth - 1)
        if H % down or W % down:
            raise ConfigurationError(f"input size {self.input_size} not divisible by {down}")
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ConfigurationError(f"unknown conditioning mode {self.conditioning_mode!r}")
        produced = {H >> i for i in range(self.depth)}
        if not set(self.attention_resolutions) <= produced:
            raise ConfigurationError(
                f"attention resolutions {set(self.attention_resolutions)} "
                f"not among produced resolutions {produced}"
            )

    def resolutions(self):
        """Spatial size at each encoder level, halving from the input."""
        H = self.input_size[0]
        return [H >> i for i in range(self.depth)]


def tiny_config():
    """Smallest config that still exercises every block type; used by the
    gradient-check suite."""
    return ModelConfig(
        base_channels=4,
        depth=2,
        channel_multipliers=(1, 2),
        attention_resolutions=frozenset({4}),
        rrdb_blocks=1,
        heads=2,
        time_embed_dim=16,
        input_size=(8, 8),
        norm_groups=2,
    )


# ---------------------------------------------------------------------------
# Parameter containers


class Module:
    """Minimal parameter container; children are discovered from attribute
    order, which makes checkpoint manifests deterministic."""

    def named_params(self, prefix=""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_params(f"{key}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{key}.{i}.")

    def params(self):
        return [t for _, t in self.named_params()]


def _kaiming(rng, shape, fan_in):
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, zero_init=False):
        self.stride = stride
        self.padding = (k - 1) // 2
        if zero_init:
            self.w = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        else:
            self.w = _kaiming(rng, (cout, cin, k, k), cin * k * k)
        self.b = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, rng, din, dout):
        self.w = _kaiming(rng, (din, dout), din)
        self.b = Tensor(np.zeros(dout), requires_grad=True)

    def __call__(self, x):
        return ops.linear(x, self.w, self.b)


class GroupNorm(Module):
    def __init__(self, groups, channels):
        if channels % groups:
            raise ConfigurationError(f"{channels} channels not divisible by {groups} groups")
        self.groups = groups
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x):
        return ops.group_norm(x, self.groups, self.gamma, self.beta)


class AttentionLayer(Module):
    """Spatial self-attention with a residual add; the output projection is
    zero-initialized so the layer starts as an identity."""

    def __init__(self, rng, channels, heads):
        if channels % heads:
            raise ConfigurationError(f"{channels} channels not divisible by {heads} heads")
        self.heads = heads
        scale = 1.0 / np.sqrt(channels)
        self.wq = Tensor(rng.standard_normal((channels, channels)) * scale, requires_grad=True)
        self.wk = Tensor(rng.standard_normal((channels, channels)) * scale, requires_grad=True)
        self.wv = Tensor(rng.standard_normal((channels, channels)) * scale, requires_grad=True)
        self.wo = Tensor(np.zeros((channels, channels)), requires_grad=True)

    def __call__(self, x):
        return ops.attention(x, self.heads, self.wq, self.wk, self.wv, self.wo)


class ResBlock(Module):
    """Two conv blocks (group-norm, SiLU, conv) with the time embedding added
    after the first, and a residual connection around the whole block."""

    def __init__(self, rng, cin, cout, temb_dim, groups):
        self.norm1 = GroupNorm(groups, cin)
        self.conv1 = Conv2d(rng, cin, cout)
        self.temb1 = Linear(rng, temb_dim, temb_dim)
        self.temb2 = Linear(rng, temb_dim, cout)
        self.norm2 = GroupNorm(groups, cout)
        self.conv2 = Conv2d(rng, cout, cout)
        self.skip = Conv2d(rng, cin, cout, k=1) if cin != cout else None

    def __call__(self, x, temb):
        h = self.conv1(silu(self.norm1(x)))
        emb = self.temb2(silu(self.temb1(temb)))
        B, c = emb.shape
        h = h + reshape(emb, (B, c, 1, 1))
        h = self.conv2(silu(self.norm2(h)))
        res = x if self.skip is None else self.skip(x)
        return res + h


class ResidualDenseBlock(Module):
    """Five densely connected convs; the output is residually scaled back
    onto the input."""

    def __init__(self, rng, channels, growth):
        self.convs = [
            Conv2d(rng, channels + i * growth, growth if i < 4 else channels) for i in range(5)
        ]

    def __call__(self, x):
        feats = [x]
        for conv in self.convs[:4]:
            feats.append(leaky_relu(conv(ops.channel_concat(feats) if len(feats) > 1 else x)))
        out = self.convs[4](ops.channel_concat(feats))
        return x + out * RESIDUAL_SCALE


class RRDB(Module):
    """Residual-in-residual dense block: three dense blocks, scaled residual."""

    def __init__(self, rng, channels, growth):
        self.blocks = [ResidualDenseBlock(rng, channels, growth) for _ in range(3)]

    def __call__(self, x):
        h = x
        for block in self.blocks:
            h = block(h)
        return x + h * RESIDUAL_SCALE


class ImageEncoder(Module):
    """RRDB-based image encoder: input conv, RRDB stack with a residual
    connection around it, conv, leaky ReLU, output conv."""

    def __init__(self, rng, cfg: ModelConfig):
        C = cfg.base_channels
        growth = max(1, C // 2)
        self.conv_in = Conv2d(rng, 3, C)
        self.rrdbs = [RRDB(rng, C, growth) for _ in range(cfg.rrdb_blocks)]
        self.conv_mid = Conv2d(rng, C, C)
        self.conv_out = Conv2d(rng, C, C)

    def __call__(self, image):
        if image.shape[1] != 3:
            raise DimensionError(f"image encoder expects 3 channels, got {image.shape}")
        fea = self.conv_in(image)
        h = fea
        for block in self.rrdbs:
            h = block(h)
        fea = fea + h
        return self.conv_out(leaky_relu(self.conv_mid(fea)))


class ConditionalDenoiser(Module):
    """The full noise predictor; construct via ``init_params``."""

    def __init__(self, rng, cfg: ModelConfig, T: int):
        C = cfg.base_channels
        te = cfg.time_embed_dim
        g = cfg.norm_groups
        self.cfg = cfg
        self.T = T
        self.time_table = Tensor(rng.standard_normal((T, te)) * 0.02, requires_grad=True)

        if cfg.conditioning_mode == "raw_concat":
            self.stem = Conv2d(rng, 4, C)
        else:
            self.state_conv = Conv2d(rng, 1, C)  # F
            self.image_encoder = ImageEncoder(rng, cfg)  # G
            if cfg.conditioning_mode == "feature_concat":
                self.merge_conv = Conv2d(rng, 2 * C, C, k=1)

        chans = [C * m for m in cfg.channel_multipliers]
        res = cfg.resolutions()
        self.enc_blocks = []
        self.enc_attn = []
        self.downs = []
        prev = C
        for i, ch in enumerate(chans):
            self.enc_blocks.append(ResBlock(rng, prev, ch, te, g))
            self.enc_attn.append(
                AttentionLayer(rng, ch, cfg.heads) if res[i] in cfg.attention_resolutions else None
            )
            if i < cfg.depth - 1:
                self.downs.append(Conv2d(rng, ch, ch, stride=2))
            prev = ch

        self.mid_block1 = ResBlock(rng, prev, prev, te, g)
        self.mid_attn = AttentionLayer(rng, prev, cfg.heads)
        self.mid_block2 = ResBlock(rng, prev, prev, te, g)

        self.dec_blocks = []
        self.dec_attn = []
        self.ups = []
        h_ch = prev
        for i in reversed(range(cfg.depth)):
            ch = chans[i]
            self.dec_blocks.append(ResBlock(rng, h_ch + ch, ch, te, g))
            self.dec_attn.append(
                AttentionLayer(rng, ch, cfg.heads) if res[i] in cfg.attention_resolutions else None
            )
            if i > 0:
                self.ups.append(Conv2d(rng, ch, ch))
            h_ch = ch

        self.out_norm = GroupNorm(g, chans[0])
        self.out_conv = Conv2d(rng, chans[0], 1, zero_init=True)

    # -- sub-network surfaces -------------------------------------------------

    def encode_image(self, image):
        """G: image features, cacheable across diffusion steps at inference.

        Returns None in raw_concat mode, which has no image encoder.
        """
        if self.cfg.conditioning_mode == "raw_concat":
            return None
        return self.image_encoder(image)

    def encode_state(self, x_t):
        """F: single conv lifting the 1-channel map estimate to C channels."""
        if x_t.shape[1] != 1:
            raise DimensionError(f"state encoder expects 1 channel, got {x_t.shape}")
        return self.state_conv(x_t)

    def _merge(self, x_t, image, image_features):
        mode = self.cfg.conditioning_mode
        if mode == "raw_concat":
            return self.stem(ops.channel_concat([x_t, image]))
        if image_features is None:
            image_features = self.encode_image(image)
        fx = self.encode_state(x_t)
        if mode == "sum":
            return fx + image_features
        return self.merge_conv(ops.channel_concat([fx, image_features]))

    # -- full forward ---------------------------------------------------------

    def __call__(self, x_t, image, t, image_features=None):
        """Predicted noise for map estimate ``x_t`` conditioned on ``image``
        at step ``t`` (int, or per-element int array).

        ``image_features`` may carry a precomputed ``encode_image`` result.
        """
        B = x_t.shape[0]
        tarr = np.broadcast_to(np.asarray(t), (B,))
        if np.any(tarr < 1) or np.any(tarr > self.T):
            raise IndexError(f"timestep {t} outside [1, {self.T}]")
        if x_t.shape[2:] != tuple(self.cfg.input_size):
            raise DimensionError(f"input {x_t.shape} does not match {self.cfg.input_size}")
        if image.shape[0] != B or image.shape[2:] != x_t.shape[2:]:
            raise DimensionError(f"image {image.shape} inconsistent with x_t {x_t.shape}")
        temb = embedding_lookup(self.time_table, tarr - 1)

        h = self._merge(x_t, image, image_features)
        skips = []
        for i in range(self.cfg.depth):
            h = self.enc_blocks[i](h, temb)
            if self.enc_attn[i] is not None:
                h = self.enc_attn[i](h)
            skips.append(h)
            if i < self.cfg.depth - 1:
                h = self.downs[i](h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h)
        h = self.mid_block2(h, temb)

        for j in range(self.cfg.depth):
            h = ops.channel_concat([h, skips.pop()])
            h = self.dec_blocks[j](h, temb)
            if self.dec_attn[j] is not None:
                h = self.dec_attn[j](h)
            if j < self.cfg.depth - 1:
                h = self.ups[j](ops.nearest_upsample_x2(h))

        return self.out_conv(silu(self.out_norm(h)))

    def param_groups(self):
        """Coarse parameter grouping for diagnostics: encoder/decoder halves,
        conditioning nets, and the time table."""
        groups = {"time": ["time_table"], "merge": [], "encoder": [], "decoder": []}
        for name, _ in self.named_params():
            if name == "time_table":
                continue
            head = name.split(".")[0]
            if head in ("stem", "state_conv", "image_encoder", "merge_conv"):
                groups["merge"].append(name)
            elif head.startswith(("enc_", "downs")):
                groups["encoder"].append(name)
            else:
                groups["decoder"].append(name)
        return groups


def init_params(cfg: ModelConfig, T: int, seed: int) -> ConditionalDenoiser:
    """Build a model with freshly initialized weights; same seed, same bits."""
    rng = np.random.default_rng(seed)
    return ConditionalDenoiser(rng, cfg, T)
