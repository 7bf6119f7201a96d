"""State space primitives: zero-order-hold discretization, the selective scan,
the four-direction 2D scan (SS2D) and the VSS block built on top of it.

Tensors are channels-first throughout: sequences are ``(batch, channels, length)``
and feature maps are ``(batch, channels, height, width)``.
"""
import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "SERIES_THRESHOLD",
    "DIRECTIONS",
    "discretize_zoh",
    "selective_scan",
    "linear_recurrence",
    "scan_expand",
    "scan_merge",
    "ss2d",
    "SelectiveSSM",
    "SS2D",
    "ChannelLayerNorm",
    "VSSBlock",
]

SERIES_THRESHOLD = 1e-6
DIRECTIONS = ("row_forward", "row_backward", "col_forward", "col_backward")

_CHUNK = 8


def _phi(z):
    # (e^z - 1) / z, with the 3-term Taylor series near zero
    small = z.abs() < SERIES_THRESHOLD
    z_safe = torch.where(small, torch.ones_like(z), z)
    exact = torch.expm1(z_safe) / z_safe
    series = 1.0 + z / 2.0 + z * z / 6.0
    return torch.where(small, series, exact)


def discretize_zoh(A, B, delta):
    """Zero-order-hold discretization of a diagonal continuous-time SSM.

    Returns ``(A_bar, B_bar)`` with ``A_bar = exp(delta * A)`` and
    ``B_bar = (delta A)^-1 (exp(delta A) - 1) * delta * B``. Inputs broadcast
    elementwise; python floats and arrays are promoted to float64 tensors.
    """
    A, B, delta = (
        t if isinstance(t, torch.Tensor) else torch.as_tensor(t, dtype=torch.float64)
        for t in (A, B, delta)
    )
    for name, t in (("A", A), ("B", B), ("delta", delta)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite values in {name}")
    if (delta < 0).any():
        raise ValueError("delta must be non-negative")
    dA = delta * A
    return torch.exp(dA), _phi(dA) * delta * B


def linear_recurrence(log_a, u, chunk: int = _CHUNK):
    """Solve ``h_k = exp(log_a_k) * h_{k-1} + u_k`` with ``h_0 = 0`` along the last axis.

    Works blockwise: inside a block of ``chunk`` steps the solution is a masked
    lower-triangular matrix product, and block boundary states are themselves a
    (shorter) linear recurrence solved the same way. Only differences of
    cumulative log-decays are exponentiated, so the result is stable whenever
    ``log_a <= 0``.
    """
    L = u.shape[-1]
    if L <= chunk:
        cs = torch.cumsum(log_a, dim=-1)
        seg = cs.unsqueeze(-1) - cs.unsqueeze(-2)
        causal = torch.ones(L, L, dtype=torch.bool, device=u.device).tril()
        weights = torch.exp(seg.masked_fill(~causal, float("-inf")))
        return (weights @ u.unsqueeze(-1)).squeeze(-1)

    n = -(-L // chunk)
    pad = n * chunk - L
    if pad:
        log_a = F.pad(log_a, (0, pad))
        u = F.pad(u, (0, pad))
    lead = u.shape[:-1]
    la = log_a.reshape(*lead, n, chunk)
    uu = u.reshape(*lead, n, chunk)

    local = linear_recurrence(la, uu, chunk)
    cs = torch.cumsum(la, dim=-1)
    carry = linear_recurrence(cs[..., -1], local[..., -1], chunk)
    carry = torch.cat([torch.zeros_like(carry[..., :1]), carry[..., :-1]], dim=-1)
    h = local + torch.exp(cs) * carry.unsqueeze(-1)
    return h.reshape(*lead, n * chunk)[..., :L]


def selective_scan(x, delta, A, B, C, D):
    """Run the discretized selective SSM over a batch of sequences.

    Args:
        x: inputs, ``(batch, channels, L)``.
        delta: positive per-step timescales, same shape as ``x``.
        A: diagonal decay coefficients, ``(channels, N)``.
        B, C: per-step input/output projections, ``(batch, N, L)``.
        D: feedthrough, ``(channels,)``.

    Returns:
        ``y`` of shape ``(batch, channels, L)`` with ``y_k = C_k h_k + D x_k``.
    """
    if x.dim() != 3 or x.shape[-1] == 0:
        raise ValueError(f"expected a non-empty (batch, channels, L) sequence, got {tuple(x.shape)}")
    dA = delta.unsqueeze(2) * A[None, :, :, None]  # (b, d, n, L)
    B_bar = _phi(dA) * delta.unsqueeze(2) * B.unsqueeze(1)
    h = linear_recurrence(dA, B_bar * x.unsqueeze(2))
    y = (h * C.unsqueeze(1)).sum(dim=2)
    return y + D[None, :, None] * x


def scan_expand(x, direction: str):
    """Flatten ``(b, c, H, W)`` into a ``(b, c, H*W)`` sequence in the given traversal order."""
    if direction == "row_forward":
        return x.flatten(2)
    if direction == "row_backward":
        return x.flatten(2).flip(-1)
    if direction == "col_forward":
        return x.transpose(2, 3).flatten(2)
    if direction == "col_backward":
        return x.transpose(2, 3).flatten(2).flip(-1)
    raise ValueError(f"unknown scan direction {direction!r}")


def scan_merge(seq, direction: str, H: int, W: int):
    """Inverse of :func:`scan_expand`: put a traversal-ordered sequence back on the grid."""
    b, c, _ = seq.shape
    if direction == "row_forward":
        return seq.reshape(b, c, H, W)
    if direction == "row_backward":
        return seq.flip(-1).reshape(b, c, H, W)
    if direction == "col_forward":
        return seq.reshape(b, c, W, H).transpose(2, 3)
    if direction == "col_backward":
        return seq.flip(-1).reshape(b, c, W, H).transpose(2, 3)
    raise ValueError(f"unknown scan direction {direction!r}")


def ss2d(x, ssms: Sequence):
    """Scan ``x`` in all four directions with one sequence model each and sum the realigned outputs."""
    if len(ssms) != len(DIRECTIONS):
        raise ValueError(f"need {len(DIRECTIONS)} sequence models, got {len(ssms)}")
    H, W = x.shape[-2:]
    out = 0
    for direction, ssm in zip(DIRECTIONS, ssms):
        out = out + scan_merge(ssm(scan_expand(x, direction)), direction, H, W)
    return out


class SelectiveSSM(nn.Module):
    """Input-dependent (selective) diagonal SSM over ``(batch, channels, L)`` sequences.

    ``B``, ``C`` and a low-rank ``delta`` are projected from the input at every
    step; ``delta`` goes through a softplus so it stays positive.
    """

    def __init__(self, channels: int, d_state: int = 4, dt_rank=None,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        if channels < 1 or d_state < 1:
            raise ValueError("channels and d_state must be >= 1")
        self.channels = channels
        self.d_state = d_state
        self.dt_rank = dt_rank or max(1, math.ceil(channels / 16))

        self.x_proj = nn.Linear(channels, self.dt_rank + 2 * d_state, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, channels)
        nn.init.uniform_(self.dt_proj.weight, -self.dt_rank ** -0.5, self.dt_rank ** -0.5)
        dt = torch.exp(torch.rand(channels) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

        A = torch.arange(1, d_state + 1, dtype=torch.float32).repeat(channels, 1)
        self.A_log = nn.Parameter(torch.log(A))
        self.D = nn.Parameter(torch.ones(channels))

    @property
    def A(self):
        return -torch.exp(self.A_log)

    def project(self, x):
        """Return the per-step ``(delta, B, C)`` for input ``x``."""
        proj = self.x_proj(x.transpose(1, 2))  # (b, L, r + 2n)
        dt, B, C = proj.split([self.dt_rank, self.d_state, self.d_state], dim=-1)
        delta = F.softplus(self.dt_proj(dt)).transpose(1, 2)
        return delta, B.transpose(1, 2), C.transpose(1, 2)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        delta, B, C = self.project(x)
        return selective_scan(x, delta, self.A, B, C, self.D)


class SS2D(nn.Module):
    """Four-direction 2D selective scan with independent parameters per direction."""

    def __init__(self, channels: int, d_state: int = 4):
        super().__init__()
        self.ssms = nn.ModuleList(SelectiveSSM(channels, d_state) for _ in DIRECTIONS)

    def forward(self, x):
        return ss2d(x, self.ssms)


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of a ``(b, c, H, W)`` map."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=1, keepdim=True)
        var = (x - mean).pow(2).mean(dim=1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


def _pointwise(c_in, c_out, bias=True):
    return nn.Conv2d(c_in, c_out, kernel_size=1, bias=bias)


class VSSBlock(nn.Module):
    """Gated SS2D block with two residual additions.

    ::

        s   = LN(SS2D(silu(w1 LN(x))))
        a   = silu(w2 LN(x))
        f1  = w3(s * a) + x
        out = w4(LN(f1)) + f1
    """

    def __init__(self, channels: int, d_state: int = 4, zero_init: bool = False):
        super().__init__()
        self.channels = channels
        self.norm_in = ChannelLayerNorm(channels)
        self.w1 = _pointwise(channels, channels)
        self.w2 = _pointwise(channels, channels)
        self.ss2d = SS2D(channels, d_state)
        self.norm_scan = ChannelLayerNorm(channels)
        self.w3 = _pointwise(channels, channels)
        self.norm_out = ChannelLayerNorm(channels)
        self.w4 = _pointwise(channels, channels)
        if zero_init:
            for w in (self.w3, self.w4):
                nn.init.zeros_(w.weight)
                nn.init.zeros_(w.bias)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected (b, {self.channels}, H, W) input, got {tuple(x.shape)}")
        xn = self.norm_in(x)
        s = self.norm_scan(self.ss2d(F.silu(self.w1(xn))))
        gate = F.silu(self.w2(xn))
        f1 = self.w3(s * gate) + x
        return self.w4(self.norm_out(f1)) + f1
