"""Hybrid attention: cross-modal attention, recurrent fusion, self-attention.

The query comes from the sentiment-text fusion; keys and values come from the
audio-text and visual-text fusions.  Both cross-modal outputs are flattened,
fused once more by a fourth recurrent-fusion block, and passed through a
single-head scaled dot-product self-attention with learned square projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .amrf import AmrfParams, amrf, check_variant, init_amrf_params
from .autodiff import (
    Node,
    ParamStore,
    Tape,
    flatten_row,
    he_normal,
    matmul,
    scale,
    softmax_rows,
    transpose,
)
from .errors import ShapeError


@dataclass
class SelfAttentionParams:
    """Three learned k x k projections for single-head self-attention."""

    wq: Node
    wk: Node
    wv: Node

    @classmethod
    def bind(cls, tape: Tape, store: ParamStore, prefix: str) -> "SelfAttentionParams":
        return cls(
            wq=tape.param(store, f"{prefix}.wq"),
            wk=tape.param(store, f"{prefix}.wk"),
            wv=tape.param(store, f"{prefix}.wv"),
        )


@dataclass
class HybridAttentionParams:
    """Four fusion blocks plus the final self-attention projections."""

    amrf_st: AmrfParams
    amrf_vt: AmrfParams
    amrf_at: AmrfParams
    amrf_final: AmrfParams
    self_attn: SelfAttentionParams

    @classmethod
    def bind(cls, tape: Tape, store: ParamStore, prefix: str) -> "HybridAttentionParams":
        return cls(
            amrf_st=AmrfParams.bind(tape, store, f"{prefix}.st"),
            amrf_vt=AmrfParams.bind(tape, store, f"{prefix}.vt"),
            amrf_at=AmrfParams.bind(tape, store, f"{prefix}.at"),
            amrf_final=AmrfParams.bind(tape, store, f"{prefix}.final"),
            self_attn=SelfAttentionParams.bind(tape, store, f"{prefix}.selfattn"),
        )


def init_hybrid_params(
    store: ParamStore,
    prefix: str,
    dims: dict[str, int],
    d: int,
    k: int,
    rng: np.random.Generator,
) -> None:
    """Register all hybrid-attention parameters.

    `dims` maps modality name -> its projected (post-frontend) dimension.
    The final block consumes the flattened d x k cross-attention outputs.
    """
    init_amrf_params(store, f"{prefix}.st", dims["sentiment"], dims["text"], d, k, rng)
    init_amrf_params(store, f"{prefix}.vt", dims["visual"], dims["text"], d, k, rng)
    init_amrf_params(store, f"{prefix}.at", dims["audio"], dims["text"], d, k, rng)
    init_amrf_params(store, f"{prefix}.final", d * k, d * k, d, k, rng)
    store.add(f"{prefix}.selfattn.wq", he_normal(rng, k, k, k))
    store.add(f"{prefix}.selfattn.wk", he_normal(rng, k, k, k))
    store.add(f"{prefix}.selfattn.wv", he_normal(rng, k, k, k))


def cross_modal_attention(q: Node, k: Node, v: Node) -> Node:
    """softmax_rows(Q K^T / sqrt(d_k)) V with d_k = the key width."""
    if q.value.shape[1] != k.value.shape[1]:
        raise ShapeError(
            f"attention: query width {q.value.shape} vs key width {k.value.shape}"
        )
    if k.value.shape[0] != v.value.shape[0]:
        raise ShapeError(
            f"attention: key rows {k.value.shape} vs value rows {v.value.shape}"
        )
    d_k = k.value.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    return matmul(softmax_rows(scores), v)


def self_attention(x: Node, p: SelfAttentionParams) -> Node:
    """Single-head scaled dot-product attention over x's rows."""
    return cross_modal_attention(
        matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv)
    )


def _stage(label: str, fn):
    try:
        return fn()
    except ShapeError as exc:
        raise ShapeError(f"{label}: {exc}") from exc


def hybrid_attention(
    x_text: Node,
    x_audio: Node,
    x_visual: Node,
    x_sentiment: Node,
    p: HybridAttentionParams,
    variant: str = "matrix_literal",
) -> Node:
    """Fuse the four projected modality vectors into the final d x k feature.

    Shape errors are re-raised with a label naming the pipeline stage that
    failed.
    """
    check_variant(variant)
    q = _stage(
        "query fusion (sentiment-text)",
        lambda: amrf(x_sentiment, x_text, p.amrf_st, variant),
    )
    x_vt = _stage(
        "visual-text fusion", lambda: amrf(x_visual, x_text, p.amrf_vt, variant)
    )
    x_at = _stage(
        "audio-text fusion", lambda: amrf(x_audio, x_text, p.amrf_at, variant)
    )
    z_ats = _stage(
        "cross-modal attention (audio-text)",
        lambda: cross_modal_attention(q, x_at, x_at),
    )
    z_vts = _stage(
        "cross-modal attention (visual-text)",
        lambda: cross_modal_attention(q, x_vt, x_vt),
    )
    # The visual-text side takes the text (beta) role in the final fusion.
    fused = _stage(
        "final recurrent fusion",
        lambda: amrf(flatten_row(z_ats), flatten_row(z_vts), p.amrf_final, variant),
    )
    return _stage("self-attention", lambda: self_attention(fused, p.self_attn))
