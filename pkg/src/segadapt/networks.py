"""Network architectures: translator G, dual-head discriminator D, segmenter F.

All modules are CPU-friendly miniatures. The translator is an encoder-decoder
with an 8x spatial bottleneck and no encoder-decoder skips, carrying the
style-transfer machinery (pixel norm, equalized learning rate, adaptive
instance normalization driven by a learned global style code, per-layer
stochastic noise) as toggleable layers. The discriminator runs a frozen
feature trunk, three residual blocks, and two decoder heads that both emit
maps at input resolution: a domain/real-fake head with one map per class on
top of the global map, and an auxiliary per-pixel classifier head.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


def to_nchw(images: np.ndarray | torch.Tensor) -> torch.Tensor:
    """(B, H, W, C) or (H, W, C) float array -> (B, C, H, W) float32 tensor."""
    t = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).contiguous().cpu().numpy()


class EqualizedConv2d(nn.Module):
    """Convolution with runtime weight scaling (equalized learning rate).

    With `equalized=True` the weights are stored at unit variance and scaled
    by sqrt(gain / fan_in) in the forward pass; with `equalized=False` the
    same scale is baked into the initialisation instead.
    """

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, gain=2.0,
                 equalized=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * kernel * kernel
        he_scale = math.sqrt(gain / fan_in)
        if equalized:
            self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
            self.scale = he_scale
        else:
            self.weight = nn.Parameter(
                torch.randn(out_ch, in_ch, kernel, kernel) * he_scale
            )
            self.scale = 1.0
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        stride=self.stride, padding=self.padding)


class EqualizedConvTranspose2d(nn.Module):
    """Transposed convolution with the same runtime weight scaling."""

    def __init__(self, in_ch, out_ch, kernel, stride=2, padding=1, gain=2.0,
                 equalized=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        # Each output location receives (kernel / stride)^2 taps per input map.
        fan_in = in_ch * (kernel / stride) ** 2
        he_scale = math.sqrt(gain / fan_in)
        if equalized:
            self.weight = nn.Parameter(torch.randn(in_ch, out_ch, kernel, kernel))
            self.scale = he_scale
        else:
            self.weight = nn.Parameter(
                torch.randn(in_ch, out_ch, kernel, kernel) * he_scale
            )
            self.scale = 1.0
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight * self.scale, self.bias,
                                  stride=self.stride, padding=self.padding)


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-8)


class ChannelAffine(nn.Module):
    """Learned per-channel scale and bias, applied after normalisation."""

    def __init__(self, ch):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(ch))
        self.bias = nn.Parameter(torch.zeros(ch))

    def forward(self, x):
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class NoiseInjection(nn.Module):
    """Adds a single-channel noise map scaled by a learned per-channel weight."""

    def __init__(self, ch, init=0.05):
        super().__init__()
        self.weight = nn.Parameter(torch.full((ch,), float(init)))

    def forward(self, x, noise=None):
        if noise is None:
            return x
        return x + self.weight[:, None, None] * noise


class AdaIN(nn.Module):
    """Instance statistics replaced by a style-driven per-channel affine."""

    def __init__(self, ch, style_dim):
        super().__init__()
        self.scale_head = nn.Linear(style_dim, ch)
        self.bias_head = nn.Linear(style_dim, ch)
        nn.init.zeros_(self.scale_head.weight)
        nn.init.zeros_(self.scale_head.bias)
        nn.init.zeros_(self.bias_head.weight)
        nn.init.zeros_(self.bias_head.bias)

    def forward(self, x, style):
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        normed = (x - mean) * torch.rsqrt(var + 1e-8)
        s = 1.0 + self.scale_head(style)
        b = self.bias_head(style)
        return normed * s[None, :, None, None] + b[None, :, None, None]


class GeneratorResBlock(nn.Module):
    def __init__(self, ch, slope, equalized=True):
        super().__init__()
        self.conv1 = EqualizedConv2d(ch, ch, 3, padding=1, equalized=equalized)
        self.conv2 = EqualizedConv2d(ch, ch, 3, padding=1, equalized=equalized)
        self.slope = slope

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), self.slope)
        return x + self.conv2(h)


class Generator(nn.Module):
    """Encoder-decoder translator with an 8x bottleneck and no enc-dec skips.

    forward(x, noise_seed) is deterministic for a fixed seed; omitting the
    seed disables the stochastic-variation noise entirely.
    """

    DOWNSAMPLE_FACTOR = 8

    def __init__(self, base_width=24, style_dim=64, use_pixelnorm=True,
                 use_adain=True, use_noise=True, equalized=True, slope=0.2):
        super().__init__()
        self.base_width = base_width
        self.use_pixelnorm = use_pixelnorm
        self.use_adain = use_adain
        self.use_noise = use_noise
        self.slope = slope
        b = base_width
        self.enc_channels = (b, 2 * b, 4 * b, 4 * b)
        self.dec_channels = (2 * b, b, b)

        self.from_rgb = EqualizedConv2d(3, b, 3, padding=1, equalized=equalized)
        self.from_rgb_affine = ChannelAffine(b)
        self.enc = nn.ModuleList()
        self.enc_affine = nn.ModuleList()
        in_ch = b
        for out_ch in self.enc_channels[1:]:
            self.enc.append(
                EqualizedConv2d(in_ch, out_ch, 3, stride=2, padding=1,
                                equalized=equalized)
            )
            self.enc_affine.append(ChannelAffine(out_ch))
            in_ch = out_ch
        self.bottleneck = GeneratorResBlock(in_ch, slope, equalized=equalized)

        self.style = nn.Parameter(torch.zeros(style_dim))
        self.dec = nn.ModuleList()
        self.dec_noise = nn.ModuleList()
        self.dec_adain = nn.ModuleList()
        self.dec_affine = nn.ModuleList()
        for out_ch in self.dec_channels:
            self.dec.append(
                EqualizedConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1,
                                         equalized=equalized)
            )
            self.dec_noise.append(NoiseInjection(out_ch))
            self.dec_adain.append(AdaIN(out_ch, style_dim))
            self.dec_affine.append(ChannelAffine(out_ch))
            in_ch = out_ch
        self.to_rgb = EqualizedConv2d(in_ch, 3, 1, equalized=equalized)
        self.pixel_norm = PixelNorm()

    def _decoder_noise(self, shapes, noise_seed, device):
        if not self.use_noise or noise_seed is None:
            return [None] * len(shapes)
        gen = torch.Generator(device="cpu").manual_seed(int(noise_seed))
        return [
            torch.randn((shape[0], 1, shape[2], shape[3]), generator=gen).to(device)
            for shape in shapes
        ]

    def forward(self, x: torch.Tensor, noise_seed: int | None = None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        h_in, w_in = x.shape[2], x.shape[3]
        f = self.DOWNSAMPLE_FACTOR
        if h_in % f != 0 or w_in % f != 0:
            raise ShapeError(f"spatial size {h_in}x{w_in} not divisible by {f}")

        h = self.from_rgb(x)
        if self.use_pixelnorm:
            h = self.pixel_norm(h)
        h = F.leaky_relu(self.from_rgb_affine(h), self.slope)
        for conv, affine in zip(self.enc, self.enc_affine):
            h = conv(h)
            if self.use_pixelnorm:
                h = self.pixel_norm(h)
            h = F.leaky_relu(affine(h), self.slope)
        h = self.bottleneck(h)

        shapes = []
        cur_h, cur_w = h_in // f, w_in // f
        for out_ch in self.dec_channels:
            cur_h, cur_w = cur_h * 2, cur_w * 2
            shapes.append((x.shape[0], out_ch, cur_h, cur_w))
        noises = self._decoder_noise(shapes, noise_seed, x.device)

        for deconv, noise_layer, adain, affine, noise in zip(
            self.dec, self.dec_noise, self.dec_adain, self.dec_affine, noises
        ):
            h = deconv(h)
            h = noise_layer(h, noise)
            if self.use_adain:
                h = adain(h, self.style)
            elif self.use_pixelnorm:
                h = self.pixel_norm(h)
            h = F.leaky_relu(affine(h), self.slope)
        return torch.tanh(self.to_rgb(h))

    @classmethod
    def near_identity(cls, base_width=24, style_dim=64) -> "Generator":
        """A generator whose initial weights approximately reproduce the input.

        The carried signal is shifted positive so every leaky ReLU acts as the
        identity; stride-2 stages average 2x2 blocks and the transposed stages
        duplicate them back, so flat regions survive the 8x bottleneck. Exact
        reconstruction is impossible through the bottleneck by construction;
        the output matches the input up to edge blur and tanh compression.
        """
        g = cls(base_width=base_width, style_dim=style_dim, use_pixelnorm=False,
                use_adain=False, use_noise=True, equalized=True)
        shift = 1.5
        out_gain = 1.1
        with torch.no_grad():
            for p in g.parameters():
                p.zero_()
            for affine in [g.from_rgb_affine, *g.enc_affine, *g.dec_affine]:
                affine.weight.fill_(1.0)
            for c in range(3):
                g.from_rgb.weight[c, c, 1, 1] = 1.0 / g.from_rgb.scale
            g.from_rgb.bias[:3] = shift
            for conv in g.enc:
                for c in range(3):
                    conv.weight[c, c, 1:3, 1:3] = 0.25 / conv.scale
            for deconv in g.dec:
                for c in range(3):
                    deconv.weight[c, c, 1:3, 1:3] = 1.0 / deconv.scale
            for c in range(3):
                g.to_rgb.weight[c, c, 0, 0] = out_gain / g.to_rgb.scale
            g.to_rgb.bias[:] = -shift * out_gain
        return g


class DiscriminatorTrunk(nn.Module):
    """Feature stack shared by both discriminator heads; frozen after attach."""

    def __init__(self, width=48, slope=0.2):
        super().__init__()
        w = width
        self.convs = nn.ModuleList([
            nn.Conv2d(3, w, 3, padding=1),
            nn.Conv2d(w, w, 3, stride=2, padding=1),
            nn.Conv2d(w, w, 3, padding=1),
            nn.Conv2d(w, w, 3, stride=2, padding=1),
        ])
        self.slope = slope
        self.width = width

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), self.slope)
        return h


class DiscResBlock(nn.Module):
    def __init__(self, ch, slope=0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.slope = slope

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), self.slope)
        return F.leaky_relu(x + self.conv2(h), self.slope)


class DecoderHead(nn.Module):
    """Upsamples trunk-resolution features back to image resolution."""

    def __init__(self, in_ch, out_ch, slope=0.2):
        super().__init__()
        self.up1 = nn.ConvTranspose2d(in_ch, in_ch // 2, 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(in_ch // 2, in_ch // 4, 4, stride=2, padding=1)
        self.out = nn.Conv2d(in_ch // 4, out_ch, 1)
        self.slope = slope

    def forward(self, x):
        h = F.leaky_relu(self.up1(x), self.slope)
        h = F.leaky_relu(self.up2(h), self.slope)
        return self.out(h)


class Discriminator(nn.Module):
    """Frozen trunk + residual blocks + GAN head (1 + K maps) and AC head (K)."""

    def __init__(self, num_classes=5, width=48, trunk: DiscriminatorTrunk | None = None):
        super().__init__()
        self.num_classes = num_classes
        self.trunk = trunk if trunk is not None else DiscriminatorTrunk(width)
        w = self.trunk.width
        self.res_blocks = nn.ModuleList([DiscResBlock(w) for _ in range(3)])
        self.gan_head = DecoderHead(w, 1 + num_classes)
        self.ac_head = DecoderHead(w, num_classes)
        self.trunk.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        if x.shape[2] % 4 != 0 or x.shape[3] % 4 != 0:
            raise ShapeError("discriminator input size must be divisible by 4")
        feats = self.trunk(x)
        for block in self.res_blocks:
            feats = block(feats)
        return self.gan_head(feats), self.ac_head(feats)

    def trainable_parameters(self):
        for module in (self.res_blocks, self.gan_head, self.ac_head):
            yield from module.parameters()


class Segmenter(nn.Module):
    """Small dilated-convolution segmenter with a multi-rate pooling decoder.

    The final 1x1 `classifier` is the only layer retrained by a linear probe.
    Logits are returned at input resolution via bilinear upsampling.
    """

    def __init__(self, num_classes=5, width=64, dilation_rates=(1, 2, 4), slope=0.2):
        super().__init__()
        self.num_classes = num_classes
        self.dilation_rates = tuple(dilation_rates)
        w = width
        self.stem1 = nn.Conv2d(3, w // 2, 3, stride=2, padding=1)
        self.stem2 = nn.Conv2d(w // 2, w, 3, stride=2, padding=1)
        self.body1 = nn.Conv2d(w, w, 3, padding=2, dilation=2)
        self.body2 = nn.Conv2d(w, w, 3, padding=4, dilation=4)
        self.pyramid = nn.ModuleList(
            [nn.Conv2d(w, w // 2, 3, padding=r, dilation=r) for r in self.dilation_rates]
        )
        self.merge = nn.Conv2d(len(self.dilation_rates) * (w // 2), w, 1)
        self.classifier = nn.Conv2d(w, num_classes, 1)
        self.slope = slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        h = F.leaky_relu(self.stem1(x), self.slope)
        h = F.leaky_relu(self.stem2(h), self.slope)
        h = F.leaky_relu(self.body1(h), self.slope)
        h = F.leaky_relu(self.body2(h), self.slope)
        branches = [F.leaky_relu(conv(h), self.slope) for conv in self.pyramid]
        h = F.leaky_relu(self.merge(torch.cat(branches, dim=1)), self.slope)
        logits = self.classifier(h)
        return F.interpolate(logits, size=x.shape[2:], mode="bilinear",
                             align_corners=False)

    @torch.no_grad()
    def predict_logits(self, images: np.ndarray, batch: int = 16) -> np.ndarray:
        """Whole-image logits for (N, H, W, 3) float images, channels-last out."""
        was_training = self.training
        self.eval()
        chunks = []
        for start in range(0, len(images), batch):
            t = to_nchw(images[start:start + batch])
            chunks.append(to_nhwc(self.forward(t)))
        if was_training:
            self.train()
        return np.concatenate(chunks, axis=0)


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(
        p.numel() for p in module.parameters()
        if p.requires_grad or not trainable_only
    )
