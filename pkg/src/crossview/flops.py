"""Closed-form FLOPs estimates and exact parameter counts.

Additions and multiplications count separately, so each matrix product of
shapes (n, a) x (a, b) costs 2nab. Per transformer layer the dominant terms
are K/Q/V projections 3ND^2, scores DN^2, weighted average DN^2, output
projection ND^2 and the two MLP layers 4ND^2 each.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import CrossViewNet, ModelConfig
from .patches import num_masked


def encoder_layer_flops(n: int, d: int) -> int:
    return 2 * (3 * n * d * d + d * n * n + d * n * n + n * d * d + 4 * n * d * d + 4 * n * d * d)


def encoder_flops(depth: int, n: int, d: int) -> int:
    return depth * encoder_layer_flops(n, d)


def cross_layer_flops(n: int, m: int, d: int) -> int:
    """Self-attention over n query tokens plus cross-attention into m context tokens."""
    self_attn = 3 * n * d * d + 2 * d * n * n + n * d * d
    cross_attn = n * d * d + 2 * m * d * d + 2 * d * n * m + n * d * d
    mlp = 8 * n * d * d
    return 2 * (self_attn + cross_attn + mlp)


def cat_layer_flops(n: int, m: int, d: int) -> int:
    return encoder_layer_flops(n + m, d)


def linear_flops(n: int, d_in: int, d_out: int) -> int:
    return 2 * n * d_in * d_out


@dataclass
class CostReport:
    params: dict[str, int] = field(default_factory=dict)
    flops: dict[str, int] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())


_COMPONENTS = {
    "patch_embed": "embed", "enc_blocks": "encoder", "enc_norm": "encoder",
    "dec_embed": "decoder", "mask_token": "decoder", "view_embed": "decoder",
    "dec_blocks": "decoder", "dec_norm": "decoder", "head": "head",
}


def cost_report(cfg: ModelConfig, masked: bool = True) -> CostReport:
    """Parameters of the constructed network and FLOPs of one pre-training forward pass.

    With ``masked`` the first view enters the encoder with only its visible tokens.
    """
    net = CrossViewNet(cfg, seed=None)
    rep = CostReport()
    for name, p in net.named_parameters():
        key = _COMPONENTS[name.split(".")[0]]
        rep.params[key] = rep.params.get(key, 0) + p.data.size
    N, K = cfg.num_patches, cfg.patch_dim
    nv = N - num_masked(N, cfg.mask_ratio) if masked else N
    D, Dd = cfg.enc_dim, cfg.dec_dim
    rep.flops["embed"] = linear_flops(nv + N, K, D)
    rep.flops["encoder"] = encoder_flops(cfg.enc_depth, nv, D) + encoder_flops(cfg.enc_depth, N, D)
    layer = cross_layer_flops if cfg.decoder == "cross" else cat_layer_flops
    rep.flops["decoder"] = linear_flops(nv + N, D, Dd) + cfg.dec_depth * layer(N, N, Dd)
    rep.flops["head"] = linear_flops(N, Dd, K)
    return rep


def count_params_flops(cfg: ModelConfig) -> tuple[int, int]:
    rep = cost_report(cfg)
    return rep.total_params, rep.total_flops
