"""Per-modality tokenizers, the frozen universal encoder stub, and the
pre-trainable tailored encoders.

Every modality flows through two routes: tokenize -> universal stub for
pre-aligned initial embeddings, and a family-specific convolutional/point
backbone plus a dimension-alignment MLP for fine-grained feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .bases import patch_basis
from .errors import ConfigError
from .modality import ModalityKind, PayloadGeometry, family_of
from .nn import (Conv1d, Conv2d, Linear, Module, Parameter,
                 TransformerBlock, sinusoidal_positions)
from .seeding import derive_rng
from .tensor import Tensor, adaptive_avg_pool_1d, default_dtype, gelu

DEFAULT_STUB_SEED = 101  # shipped constant: the stub plays a pretrained encoder


@dataclass
class EncoderConfig:
    d_m: int = 64
    heads: int = 4
    patch: int = 8
    voxel_grid: int = 2
    window: int = 10
    grid_h: int = 4
    grid_w: int = 4
    image_channels: tuple = (8, 16, 32)
    point_features: tuple = (32, 48, 64)
    seq_channels: tuple = (16, 24, 32)
    calibrated_image_init: bool = True
    pe_scale: float = 0.25
    universal_depth: int = 2
    universal_seed: int = DEFAULT_STUB_SEED
    # near-identity stub keeps the calibrated token geometry visible to the
    # projector; larger values make the initial embeddings coarser
    stub_init_scale: float = 0.02


@dataclass
class Tokens:
    """Tokenizer output; ``sentinel`` marks degenerate (empty) inputs."""

    data: Tensor
    sentinel: bool = False

    @property
    def count(self) -> int:
        return self.data.shape[0]


def _as_input(payload: np.ndarray) -> np.ndarray:
    return np.asarray(payload, dtype=default_dtype())


class PatchTokenizer(Module):
    """Non-overlapping patches per frame, then a trainable linear embedding.

    With ``calibrated=True`` the embedding starts as the canonical patch-DCT
    analysis (see bases.py), emulating an encoder whose token space is already
    organized; training is free to move it.
    """

    def __init__(self, geom: PayloadGeometry, d_m: int, patch: int,
                 rng: np.random.Generator, calibrated: bool = True):
        if geom.height % patch or geom.width % patch:
            raise ConfigError(
                f"patch {patch} must divide image {geom.height}x{geom.width}")
        self.patch = patch
        self.channels = geom.channels
        raw = patch * patch * geom.channels
        self.proj = Linear(raw, d_m, rng, init_scale=0.01)
        if calibrated:
            n_atoms = min(d_m, patch * patch - 1)
            atoms = patch_basis(patch, n_atoms)  # [n_atoms, p*p]
            w = self.proj.weight.value.data
            for k in range(n_atoms):
                tiled = np.tile(atoms[k], geom.channels) / geom.channels
                w[:, k] += tiled.astype(w.dtype)

    def __call__(self, payload: np.ndarray) -> Tokens:
        x = _as_input(payload)
        t, h, w, c = x.shape
        p = self.patch
        nh, nw = h // p, w // p
        raw = (x.transpose(0, 3, 1, 2)
               .reshape(t, c, nh, p, nw, p)
               .transpose(0, 2, 4, 1, 3, 5)
               .reshape(t * nh * nw, c * p * p))
        return Tokens(self.proj(Tensor(raw)))


class PointTokenizer(Module):
    """Fixed voxel-grid pooling per frame; cell feature is the centroid offset
    plus normalized occupancy. Clouds are centered on their global centroid
    before binning so a rigid translation of the scene changes nothing.
    Empty clouds yield a single sentinel token."""

    def __init__(self, geom: PayloadGeometry, d_m: int, grid: int,
                 rng: np.random.Generator, bound: float = 1.5):
        self.grid = grid
        self.bound = bound
        self.d_m = d_m
        raw = geom.point_dim + 1
        self.proj = Linear(raw, d_m, rng)

    def __call__(self, payload: np.ndarray) -> Tokens:
        x = _as_input(payload)
        t, n_pts, d = x.shape
        if n_pts == 0:
            return Tokens(Tensor(np.zeros((1, self.d_m), dtype=x.dtype)), sentinel=True)
        x = x.copy()
        x[:, :, :3] -= x[:, :, :3].mean(axis=(0, 1), keepdims=True)
        g = self.grid
        edges = np.linspace(-self.bound, self.bound, g + 1)[1:-1]
        centers = -self.bound + (2 * self.bound / g) * (np.arange(g) + 0.5)
        rows = np.zeros((t * g * g * g, d + 1), dtype=x.dtype)
        for ti in range(t):
            pts = x[ti]
            idx = [np.digitize(pts[:, ax], edges) for ax in range(3)]
            cell = (idx[0] * g + idx[1]) * g + idx[2]
            for ci in range(g * g * g):
                mask = cell == ci
                if not mask.any():
                    continue
                sel = pts[mask]
                cx = np.array([centers[ci // (g * g)], centers[(ci // g) % g],
                               centers[ci % g]])
                feat = sel.mean(axis=0)
                feat[:3] = feat[:3] - cx
                rows[ti * g * g * g + ci, :d] = feat
                rows[ti * g * g * g + ci, d] = mask.sum() / n_pts
        return Tokens(self.proj(Tensor(rows)))


class WindowTokenizer(Module):
    """Fixed-length time windows over [time, sensors] traces."""

    def __init__(self, geom: PayloadGeometry, d_m: int, window: int,
                 rng: np.random.Generator):
        self.window = window
        self.d_m = d_m
        self.sensors = geom.sensors
        self.proj = Linear(window * geom.sensors, d_m, rng)

    def __call__(self, payload: np.ndarray) -> Tokens:
        x = _as_input(payload)
        steps, sensors = x.shape
        w = self.window
        n = steps // w
        if n == 0:
            padded = np.zeros((w, sensors), dtype=x.dtype)
            padded[:steps] = x
            return Tokens(self.proj(Tensor(padded.reshape(1, -1))), sentinel=True)
        raw = x[: n * w].reshape(n, w * sensors)
        return Tokens(self.proj(Tensor(raw)))


def build_tokenizer(kind: ModalityKind, geom: PayloadGeometry, cfg: EncoderConfig,
                    rng: np.random.Generator) -> Module:
    fam = family_of(kind)
    if fam == "image":
        return PatchTokenizer(geom, cfg.d_m, cfg.patch, rng,
                              calibrated=cfg.calibrated_image_init)
    if fam == "point":
        return PointTokenizer(geom, cfg.d_m, cfg.voxel_grid, rng)
    return WindowTokenizer(geom, cfg.d_m, cfg.window, rng)


class UniversalEncoder(Module):
    """Frozen 2-block transformer applied identically to every modality's
    tokens. Weights come from a fixed shipped seed, never from run seeds, and
    never receive gradient updates."""

    def __init__(self, d_m: int, heads: int = 4, depth: int = 2,
                 seed: int = DEFAULT_STUB_SEED, pe_scale: float = 0.25,
                 init_scale: float = 0.15):
        self.d_m = d_m
        self.pe_scale = pe_scale
        self.blocks = [
            TransformerBlock(d_m, heads, derive_rng(seed, "universal-stub", i),
                             init_scale=init_scale)
            for i in range(depth)
        ]
        self.freeze()

    def __call__(self, tokens: Tensor) -> Tensor:
        n = tokens.shape[-2]
        pe = sinusoidal_positions(n, self.d_m, dtype=tokens.dtype)
        x = tokens + self.pe_scale * pe
        for block in self.blocks:
            x = block(x)
        return x


class AlignMLP(Module):
    """One-hidden-layer projector aligning backbone width to d_m."""

    def __init__(self, c_in: int, d_m: int, rng: np.random.Generator):
        self.up = Linear(c_in, d_m, rng)
        self.down = Linear(d_m, d_m, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class ResConvBlock2d(Module):
    def __init__(self, ch: int, rng: np.random.Generator):
        self.conv1 = Conv2d(ch, ch, 3, rng, padding=1)
        self.conv2 = Conv2d(ch, ch, 3, rng, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(gelu(self.conv1(x)))


class ImageBackbone(Module):
    """Small residual conv net; 32x32 inputs leave as a grid_h x grid_w map."""

    def __init__(self, in_channels: int, channels: tuple, rng: np.random.Generator):
        c0, c1, c2 = channels
        self.stem = Conv2d(in_channels, c0, 3, rng, padding=1)
        self.res1 = ResConvBlock2d(c0, rng)
        self.down1 = Conv2d(c0, c1, 2, rng, stride=2)
        self.res2 = ResConvBlock2d(c1, rng)
        self.down2 = Conv2d(c1, c2, 2, rng, stride=2)
        self.res3 = ResConvBlock2d(c2, rng)
        self.down3 = Conv2d(c2, c2, 2, rng, stride=2)
        self.out_channels = c2

    def __call__(self, x: Tensor) -> Tensor:
        x = gelu(self.stem(x))
        x = self.down1(gelu(self.res1(x)))
        x = self.down2(gelu(self.res2(x)))
        x = self.down3(gelu(self.res3(x)))
        return x  # [B, C, h, w]


class PointBackbone(Module):
    """Per-point MLP with exact max-pooling into grid_h x grid_w spatial cells;
    invariant to point order by construction."""

    def __init__(self, point_dim: int, features: tuple, grid_hw: tuple,
                 rng: np.random.Generator, bound: float = 1.5):
        f0, f1, f2 = features
        self.l1 = Linear(point_dim, f0, rng)
        self.l2 = Linear(f0, f1, rng)
        self.l3 = Linear(f1, f2, rng)
        self.grid_hw = grid_hw
        self.bound = bound
        self.out_channels = f2

    def _encode_cloud(self, pts: np.ndarray) -> Tensor:
        gh, gw = self.grid_hw
        feat_dim = self.out_channels
        flat = _as_input(pts).reshape(-1, pts.shape[-1]).copy()
        if flat.shape[0] == 0:
            return Tensor(np.zeros((gh, gw, feat_dim), dtype=default_dtype()))
        flat[:, :3] -= flat[:, :3].mean(axis=0, keepdims=True)
        h = self.l3(gelu(self.l2(gelu(self.l1(Tensor(flat))))))
        ex = np.linspace(-self.bound, self.bound, gh + 1)[1:-1]
        ey = np.linspace(-self.bound, self.bound, gw + 1)[1:-1]
        ci = np.digitize(flat[:, 0], ex)
        cj = np.digitize(flat[:, 1], ey)
        cells = []
        zero = Tensor(np.zeros(feat_dim, dtype=h.dtype))
        for i in range(gh):
            for j in range(gw):
                sel = np.nonzero((ci == i) & (cj == j))[0]
                cells.append(T.tmax(h[sel], axis=0) if sel.size else zero)
        return T.stack(cells).reshape(gh, gw, feat_dim)

    def __call__(self, batch: np.ndarray) -> Tensor:
        return T.stack([self._encode_cloud(pts) for pts in batch])


class ResConvBlock1d(Module):
    def __init__(self, ch: int, rng: np.random.Generator):
        self.conv1 = Conv1d(ch, ch, 3, rng, padding=1)
        self.conv2 = Conv1d(ch, ch, 3, rng, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(gelu(self.conv1(x)))


class SequenceBackbone(Module):
    """Small temporal conv net over [time, sensors] traces."""

    def __init__(self, sensors: int, channels: tuple, grid_hw: tuple,
                 rng: np.random.Generator):
        c0, c1, c2 = channels
        self.stem = Conv1d(sensors, c0, 3, rng, padding=1)
        self.res1 = ResConvBlock1d(c0, rng)
        self.down1 = Conv1d(c0, c1, 2, rng, stride=2)
        self.res2 = ResConvBlock1d(c1, rng)
        self.down2 = Conv1d(c1, c2, 2, rng, stride=2)
        self.grid_hw = grid_hw
        self.out_channels = c2

    def __call__(self, x: Tensor) -> Tensor:
        # x: [B, time, sensors] -> channels-first
        x = T.swapaxes(x, -1, -2)
        x = gelu(self.stem(x))
        x = self.down1(gelu(self.res1(x)))
        x = self.down2(gelu(self.res2(x)))
        gh, gw = self.grid_hw
        pooled = adaptive_avg_pool_1d(T.swapaxes(x, -1, -2), gh * gw)
        b = pooled.shape[0]
        return pooled.reshape(b, gh, gw, self.out_channels)


class TailoredEncoder(Module):
    """Family backbone followed by the width-alignment MLP; emits
    [B, grid_h, grid_w, d_m] feature maps."""

    def __init__(self, kind: ModalityKind, geom: PayloadGeometry,
                 cfg: EncoderConfig, rng: np.random.Generator):
        self.kind = kind
        self.family = family_of(kind)
        grid_hw = (cfg.grid_h, cfg.grid_w)
        if self.family == "image":
            in_ch = geom.frames * geom.channels
            self.backbone = ImageBackbone(in_ch, cfg.image_channels, rng)
        elif self.family == "point":
            self.backbone = PointBackbone(geom.point_dim, cfg.point_features,
                                          grid_hw, rng)
        else:
            self.backbone = SequenceBackbone(geom.sensors, cfg.seq_channels,
                                             grid_hw, rng)
        self.align = AlignMLP(self.backbone.out_channels, cfg.d_m, rng)

    def features(self, batch: np.ndarray) -> Tensor:
        """Backbone output as a [B, h, w, C] grid, before alignment."""
        if self.family == "image":
            x = _as_input(batch)
            b, t, h, w, c = x.shape
            grid = self.backbone(Tensor(x.transpose(0, 1, 4, 2, 3).reshape(b, t * c, h, w)))
            return T.transpose(grid, (0, 2, 3, 1))
        if self.family == "point":
            return self.backbone(batch)
        return self.backbone(Tensor(_as_input(batch)))

    def __call__(self, batch: np.ndarray) -> Tensor:
        return self.align(self.features(batch))

    def freeze_backbone(self):
        for name, p in self.named_parameters():
            if name.startswith("backbone"):
                p.freeze()


class Stage1Head(Module):
    """Global-average-pool over the feature grid, then a linear classifier.

    When class anchor directions are supplied, the weight matrix is those
    anchors, frozen; recognition pre-training then shapes tailored features
    directly in the shared text space (a fixed-prototype classifier). A
    trainable gain and bias keep the logits calibratable.
    """

    def __init__(self, d_m: int, n_classes: int, rng: np.random.Generator,
                 anchors: Optional[np.ndarray] = None):
        if n_classes < 2:
            raise ConfigError("need at least two action classes")
        self.n_classes = n_classes
        if anchors is None:
            self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_m),
                                               (d_m, n_classes)))
            self.gain = None
        else:
            unit = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
            self.weight = Parameter(unit.T.copy(), frozen=True)
            self.gain = Parameter(np.array(4.0))
        self.bias = Parameter(np.zeros(n_classes))

    def __call__(self, features: Tensor) -> Tensor:
        if features.ndim == 3:
            pooled = features.reshape(-1, features.shape[-1]).mean(axis=0, keepdims=True)
        else:
            b = features.shape[0]
            pooled = features.reshape(b, -1, features.shape[-1]).mean(axis=1)
        logits = T.matmul(pooled, self.weight.value)
        if self.gain is not None:
            logits = logits * self.gain.value
        return logits + self.bias.value


def universal_encode(tokenizer: Module, universal: UniversalEncoder,
                     sample_payload: np.ndarray) -> Tensor:
    """tokenize -> frozen stub; the Y_clip route."""
    return universal(tokenizer(sample_payload).data)
