"""Adaptive multimodal recurrent fusion.

Two modality vectors are projected into a common d-dimensional space, turned
into circulant ("recurrent") matrices whose rows are the cyclic rotations of
the projected vector, mixed with those rotations, and combined with two
learnable weights through an output projection.  The mixing step exists in
four variants because the defining formula admits several readings; all four
share one interface and the default is the verbatim matrix form:

- matrix_literal:     X' = (1/d) * sum_i (a_i (*) A), with row a_i broadcast
                      over the rows of A = recur(X).  Every column of a
                      circulant matrix sums to sum(X), so this collapses to
                      the closed form X' = (sum(X)/d) * A, a d x d output.
- scalar_elementwise: X' = (1/d) * sum_i (a_i (*) X) = (sum(X)/d) * X, 1 x d.
- corr_self:          X'_i = (1/d) * <a_i, X>   (circular autocorrelation).
- corr_cross:         X'_i = (1/d) * <a_i, other> (correlate with the partner
                      modality's projection).

The 1 x d variants are re-lifted through `recur` before the weighted fusion
so the block's output is d x k regardless of variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Array,
    Node,
    ParamStore,
    Tape,
    add,
    he_normal,
    matmul,
    scalar_mul,
    scale,
    sigmoid,
    sum_all,
    transpose,
)
from .errors import ConfigError, ShapeError

MIX_VARIANTS = ("matrix_literal", "scalar_elementwise", "corr_self", "corr_cross")


def check_variant(variant: str) -> str:
    if variant not in MIX_VARIANTS:
        raise ConfigError(
            f"unknown mix variant {variant!r}; expected one of {MIX_VARIANTS}"
        )
    return variant


@dataclass
class AmrfParams:
    """One fusion block's learnables, bound to a tape.

    w1 (d x m) projects the first (non-text) input, w2 (d x n) the second
    (text) input, w3 (d x k) maps the fused d x d matrix to the output.  The
    fusion weights are stored as logits; sigmoid keeps the effective weights
    strictly inside (0, 1).
    """

    w1: Node
    w2: Node
    w3: Node
    alpha_logit: Node
    beta_logit: Node

    @classmethod
    def bind(cls, tape: Tape, store: ParamStore, prefix: str) -> "AmrfParams":
        return cls(
            w1=tape.param(store, f"{prefix}.w1"),
            w2=tape.param(store, f"{prefix}.w2"),
            w3=tape.param(store, f"{prefix}.w3"),
            alpha_logit=tape.param(store, f"{prefix}.alpha_logit"),
            beta_logit=tape.param(store, f"{prefix}.beta_logit"),
        )


def init_amrf_params(
    store: ParamStore, prefix: str, m: int, n: int, d: int, k: int,
    rng: np.random.Generator,
) -> None:
    """Register one block's parameters under `prefix`. Requires d <= min(m, n)."""
    if d > min(m, n):
        raise ConfigError(f"{prefix}: need d <= min(m, n), got d={d}, m={m}, n={n}")
    store.add(f"{prefix}.w1", he_normal(rng, d, m, m))
    store.add(f"{prefix}.w2", he_normal(rng, d, n, n))
    store.add(f"{prefix}.w3", he_normal(rng, d, k, d))
    store.add(f"{prefix}.alpha_logit", np.zeros((1, 1)))
    store.add(f"{prefix}.beta_logit", np.zeros((1, 1)))


def fusion_weights(store: ParamStore, prefix: str) -> tuple[float, float]:
    """Effective (alpha, beta) of a block; both always in (0, 1)."""
    from .autodiff import sigmoid_values

    a = sigmoid_values(store.value(f"{prefix}.alpha_logit"))[0, 0]
    b = sigmoid_values(store.value(f"{prefix}.beta_logit"))[0, 0]
    return float(a), float(b)


def project_pair(x: Node, y: Node, p: AmrfParams) -> tuple[Node, Node]:
    """Map x (1 x m) and y (1 x n) into the common space: X = x W1^T, Y = y W2^T."""
    if x.value.shape != (1, p.w1.value.shape[1]):
        raise ShapeError(
            f"projection w1 expects 1x{p.w1.value.shape[1]}, got {x.value.shape}"
        )
    if y.value.shape != (1, p.w2.value.shape[1]):
        raise ShapeError(
            f"projection w2 expects 1x{p.w2.value.shape[1]}, got {y.value.shape}"
        )
    return matmul(x, transpose(p.w1)), matmul(y, transpose(p.w2))


def recur(v: Node) -> Node:
    """Circulant matrix of a 1 x d vector: A[i][j] = v[(i + j) mod d].

    Row 0 is v itself; each subsequent row is the previous one rotated left
    by one, so the rows are exactly the d cyclic rotations of v.
    """
    if v.value.shape[0] != 1 or v.value.shape[1] < 1:
        raise ShapeError(f"recur expects a nonempty row vector, got {v.value.shape}")
    d = v.value.shape[1]
    idx = (np.arange(d)[:, None] + np.arange(d)[None, :]) % d
    out = v.value[0, idx]

    def vjp(adj: Array):
        dv = np.zeros((1, d))
        np.add.at(dv[0], idx, adj)
        return (dv,)

    return v.tape.apply("recur", out, (v,), vjp)


def mix(x: Node, other: Node, variant: str = "matrix_literal") -> Node:
    """Fuse a projected vector with the rows of its circulant matrix.

    Returns d x d for matrix_literal, 1 x d for the other variants; `other`
    participates only in corr_cross.
    """
    check_variant(variant)
    d = x.value.shape[1]
    if variant == "matrix_literal":
        s = scale(sum_all(x), 1.0 / d)
        return scalar_mul(s, recur(x))
    if variant == "scalar_elementwise":
        s = scale(sum_all(x), 1.0 / d)
        return scalar_mul(s, x)
    if variant == "corr_self":
        a = recur(x)
        return scale(transpose(matmul(a, transpose(x))), 1.0 / d)
    # corr_cross
    if other.value.shape != x.value.shape:
        raise ShapeError(
            f"corr_cross: operands {x.value.shape} vs {other.value.shape}"
        )
    a = recur(x)
    return scale(transpose(matmul(a, transpose(other))), 1.0 / d)


def adaptive_fuse(xp: Node, yp: Node, p: AmrfParams) -> Node:
    """Z = (alpha * Xp + beta * Yp) W3 with sigmoid-constrained weights."""
    if xp.value.shape != yp.value.shape:
        raise ShapeError(f"adaptive_fuse: {xp.value.shape} vs {yp.value.shape}")
    alpha = sigmoid(p.alpha_logit)
    beta = sigmoid(p.beta_logit)
    mixed = add(scalar_mul(alpha, xp), scalar_mul(beta, yp))
    return matmul(mixed, p.w3)


def amrf(
    x_other: Node, x_text: Node, p: AmrfParams, variant: str = "matrix_literal"
) -> Node:
    """Full fusion block: project, mix, adaptively fuse. Output d x k.

    The text modality is always the second (beta-weighted) operand.  Under
    the 1 x d mix variants both mixed vectors are lifted back to d x d via
    `recur` so downstream shapes never depend on the variant.
    """
    check_variant(variant)
    x_proj, y_proj = project_pair(x_other, x_text, p)
    xp = mix(x_proj, y_proj, variant)
    yp = mix(y_proj, x_proj, variant)
    if variant != "matrix_literal":
        xp = recur(xp)
        yp = recur(yp)
    return adaptive_fuse(xp, yp, p)
