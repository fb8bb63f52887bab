"""The two-view masked autoencoder: Siamese ViT encoder, cross-view decoder, loss, training step."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import CrossBlock, EncoderBlock, ViewEmbeddings, cat_block
from .errors import ConfigError, DimensionError, EmptyInputError, NumericalError
from .nn import LayerNorm, Linear, Module, Parameter
from .optim import OptimState, adamw_step
from .patches import (MaskSpec, PatchSet, normalize_tokens, patchify, pos_embed_2d, sample_mask,
                      unnormalize_tokens, unpatchify)

DECODERS = ("cross", "cat")

# independent random streams split off the root seed
STREAM_INIT, STREAM_MASK, STREAM_ORDER, STREAM_SWAP, STREAM_NOISE = range(5)


def derive_seed(root: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(root), *map(int, keys)]).generate_state(1, np.uint64)[0])


@dataclass
class ModelConfig:
    img_size: int = 224
    patch_size: int = 16
    channels: int = 3
    enc_dim: int = 768
    enc_depth: int = 12
    enc_heads: int = 12
    dec_dim: int = 512
    dec_depth: int = 8
    dec_heads: int = 16
    decoder: str = "cross"
    mask_ratio: float = 0.9
    normalized_targets: bool = True
    norm_eps: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.img_size % self.patch_size:
            raise ConfigError(f"img_size {self.img_size} not divisible by patch_size {self.patch_size}")
        if self.enc_dim % self.enc_heads:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ConfigError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if self.enc_dim % 4 or self.dec_dim % 4:
            raise ConfigError("encoder and decoder widths must be divisible by 4")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(img_size=64, patch_size=8, enc_dim=64, enc_depth=4, enc_heads=4,
                    dec_dim=48, dec_depth=2, dec_heads=4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def grid(self) -> tuple[int, int]:
        g = self.img_size // self.patch_size
        return g, g

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


class CrossViewNet(Module):
    """Encoder and decoder parameters plus the forward pass.

    Both views go through the same encoder parameters. ``seed=None`` allocates
    zero-filled parameters without sampling, which is enough for counting.
    """

    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        self.cfg = cfg
        rng = None if seed is None else np.random.default_rng(derive_seed(seed, STREAM_INIT))
        D, Dd, eps = cfg.enc_dim, cfg.dec_dim, cfg.norm_eps
        self.patch_embed = Linear(cfg.patch_dim, D, rng)
        self.enc_blocks = [EncoderBlock(D, cfg.enc_heads, rng, eps) for _ in range(cfg.enc_depth)]
        self.enc_norm = LayerNorm(D, eps)
        self.dec_embed = Linear(D, Dd, rng)
        mask_init = np.zeros(Dd) if rng is None else rng.standard_normal(Dd) * 0.02
        self.mask_token = Parameter(mask_init.astype(ad.default_dtype()))
        if cfg.decoder == "cross":
            self.dec_blocks = [CrossBlock(Dd, cfg.dec_heads, rng, eps) for _ in range(cfg.dec_depth)]
        else:
            self.view_embed = ViewEmbeddings(Dd, rng)
            self.dec_blocks = [EncoderBlock(Dd, cfg.dec_heads, rng, eps) for _ in range(cfg.dec_depth)]
        self.dec_norm = LayerNorm(Dd, eps)
        self.head = Linear(Dd, cfg.patch_dim, rng)
        rows, cols = cfg.grid
        self._enc_pos = pos_embed_2d(rows, cols, D)
        self._dec_pos = pos_embed_2d(rows, cols, Dd)

    def enc_pos(self) -> np.ndarray:
        return self._enc_pos.astype(ad.default_dtype())

    def dec_pos(self) -> np.ndarray:
        return self._dec_pos.astype(ad.default_dtype())

    def encode(self, tokens: np.ndarray, visible: np.ndarray | None = None) -> Tensor:
        """Encode (B, N, K) patch tokens; with ``visible`` (B, Nv) only those rows enter."""
        tokens = np.asarray(tokens, dtype=ad.default_dtype())
        if tokens.ndim != 3 or tokens.shape[1:] != (self.cfg.num_patches, self.cfg.patch_dim):
            raise DimensionError(f"expected (B, {self.cfg.num_patches}, {self.cfg.patch_dim}) tokens, got {tokens.shape}")
        pos = self.enc_pos()
        if visible is not None:
            tokens = np.take_along_axis(tokens, visible[:, :, None], axis=1)
            pos = pos[visible]
        x = self.patch_embed(tokens) + pos
        if x.shape[1] == 0:
            # everything masked: nothing to attend over, the decoder sees only mask tokens
            return x
        for blk in self.enc_blocks:
            x = blk(x)
        return self.enc_norm(x)

    def decoder_features(self, enc1: Tensor, visible: np.ndarray | None, enc2: Tensor,
                         full: bool = False) -> Tensor:
        """Decoder output before the prediction head, (B, N, D') (or all 2N rows for ``full`` cat)."""
        B = enc1.shape[0]
        N, Dd = self.cfg.num_patches, self.cfg.dec_dim
        x1 = self.dec_embed(enc1)
        if visible is not None:
            nv = visible.shape[1]
            if enc1.shape[1] != nv:
                raise DimensionError(f"{enc1.shape[1]} encoded tokens but mask leaves {nv} visible")
            slot = np.full((B, N), nv, dtype=np.intp)
            np.put_along_axis(slot, visible, np.broadcast_to(np.arange(nv), (B, nv)), axis=1)
            filler = ad.add(np.zeros((B, 1, Dd), dtype=ad.default_dtype()), self.mask_token)
            x1 = ad.take_rows(ad.concat([x1, filler], axis=1), slot)
        elif enc1.shape[1] != N:
            raise DimensionError(f"unmasked first view needs {N} tokens, got {enc1.shape[1]}")
        pos = self.dec_pos()
        x1 = x1 + pos
        x2 = self.dec_embed(enc2) + pos
        if self.cfg.decoder == "cross":
            for blk in self.dec_blocks:
                x1 = blk(x1, x2)
        else:
            x1 = cat_block(x1, x2, self.view_embed, self.dec_blocks, full=full)
        return self.dec_norm(x1)

    def decode(self, enc1: Tensor, visible: np.ndarray | None, enc2: Tensor) -> Tensor:
        return self.head(self.decoder_features(enc1, visible, enc2))

    def forward(self, tok1: np.ndarray, tok2: np.ndarray, visible: np.ndarray | None) -> Tensor:
        return self.decode(self.encode(tok1, visible), visible, self.encode(tok2))

    def forward_loss(self, tok1: np.ndarray, tok2: np.ndarray, masks: list[MaskSpec]):
        visible = stack_visible(masks)
        pred = self.forward(tok1, tok2, visible)
        mask = np.stack([m.mask for m in masks])
        loss = masked_mse(pred, targets_for(tok1, self.cfg.normalized_targets), mask)
        return loss, pred


def stack_visible(masks: list[MaskSpec]) -> np.ndarray:
    vis = [m.visible_indices() for m in masks]
    if len({len(v) for v in vis}) != 1:
        raise DimensionError("all masks in a batch must leave the same number of visible tokens")
    return np.stack(vis).astype(np.intp)


def targets_for(tokens: np.ndarray, normalized: bool, eps: float = 1e-6) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=ad.default_dtype())
    return normalize_tokens(tokens, eps)[0] if normalized else tokens


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over the masked tokens only, averaged per element."""
    mask = np.asarray(mask, dtype=bool).reshape(pred.shape[:-1])
    if mask.ndim == 1:
        pred, target, mask = ad.reshape(pred, (1,) + pred.shape), target[None], mask[None]
    counts = mask.sum(axis=1)
    if counts.min() == 0:
        raise EmptyInputError("loss is undefined without masked tokens")
    if len(set(counts.tolist())) != 1:
        raise DimensionError("all masks in a batch must hide the same number of tokens")
    idx = np.stack([np.flatnonzero(m) for m in mask]).astype(np.intp)
    p = ad.take_rows(pred, idx)
    t = np.take_along_axis(np.asarray(target, dtype=pred.dtype), idx[:, :, None], axis=1)
    diff = p - t
    return ad.mean(diff * diff)


# single-sample functional API

def encode(ps: PatchSet, visible: MaskSpec | None, model: CrossViewNet) -> Tensor:
    vis = None if visible is None else visible.visible_indices()[None].astype(np.intp)
    return model.encode(ps.tokens[None], vis)[0]


def decode(enc1: Tensor, mask: MaskSpec, enc2: Tensor, model: CrossViewNet) -> Tensor:
    vis = mask.visible_indices()[None].astype(np.intp)
    return model.decode(ad.reshape(enc1, (1,) + enc1.shape), vis,
                        ad.reshape(enc2, (1,) + enc2.shape))[0]


def pretrain_loss(pred: Tensor, target_ps: PatchSet, mask: MaskSpec, normalized: bool) -> Tensor:
    pred = ad.tensor(pred)
    return masked_mse(pred, targets_for(target_ps.tokens, normalized), mask.mask)


def forward_mono_dup(img: np.ndarray, model: CrossViewNet, full: bool = False) -> Tensor:
    """Decoder features for a single image, feeding its encoding as both streams."""
    tokens = patchify(img, model.cfg.patch_size).tokens[None]
    enc = model.encode(tokens)
    return model.decoder_features(enc, None, enc, full=full)[0]


def sample_batch_masks(cfg: ModelConfig, batch: int, seed: int, step: int) -> list[MaskSpec]:
    return [sample_mask(cfg.num_patches, cfg.mask_ratio, derive_seed(seed, STREAM_MASK, step, b))
            for b in range(batch)]


def pretrain_step(model: CrossViewNet, optim: OptimState, pairs, seed: int) -> float:
    """Forward, backward and one AdamW update on a batch of (first, reference) image pairs.

    The masks are drawn from the seed stream keyed by the optimizer step, so a
    resumed run sees the same masks as an uninterrupted one.
    """
    step = optim.step
    P = model.cfg.patch_size
    tok1 = np.stack([patchify(a, P).tokens for a, _ in pairs])
    tok2 = np.stack([patchify(b, P).tokens for _, b in pairs])
    masks = sample_batch_masks(model.cfg, len(pairs), seed, step)
    loss, _ = model.forward_loss(tok1, tok2, masks)
    ad.check_finite(loss, "pre-training loss")
    model.zero_grad()
    loss.backward()
    params = model.parameters()
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient for {p.name}")
    adamw_step(params, optim, optim.lr_at(step))
    return float(loss.data)


def reconstruct(model: CrossViewNet, img1: np.ndarray, img2: np.ndarray, mask: MaskSpec) -> dict:
    """Reconstruction of the masked first view, composited with its visible patches."""
    P = model.cfg.patch_size
    ps1, ps2 = patchify(img1, P), patchify(img2, P)
    vis = mask.visible_indices()[None].astype(np.intp)
    with ad.no_grad():
        if mask.num_masked:
            pred = model.forward(ps1.tokens[None], ps2.tokens[None], vis).data[0].astype(np.float64)
        else:
            pred = ps1.tokens.copy()
    if model.cfg.normalized_targets and mask.num_masked:
        # un-normalize with the statistics of the target patches
        pred = unnormalize_tokens(pred, ps1.tokens)
    composite = ps1.tokens.copy()
    composite[mask.mask] = np.clip(pred[mask.mask], 0.0, 1.0)
    masked_in = ps1.tokens.copy()
    masked_in[mask.mask] = 0.5
    grid = ps1.grid
    return {"reference": img2,
            "masked": unpatchify(PatchSet(masked_in, grid, P)),
            "prediction": unpatchify(PatchSet(composite, grid, P)),
            "target": img1}
