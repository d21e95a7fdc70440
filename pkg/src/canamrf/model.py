"""End-to-end model: conv frontends, hybrid attention fusion, focal-loss head.

Each modality's raw T x f sequence is collapsed by a temporal convolution
frontend into a single 1 x d vector (d is the shared common dimension), the
four vectors are fused by the hybrid attention module into a d x k feature,
and a two-layer fully-connected head with a sigmoid output turns the flattened
feature into the probability of the positive class.  Training minimizes the
focal loss, a cross-entropy variant that down-weights already-confident
predictions by (1 - p_true)^gamma.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attention import HybridAttentionParams, hybrid_attention, init_hybrid_params
from .autodiff import (
    LOG_FLOOR,
    Node,
    ParamStore,
    Tape,
    add,
    add_const,
    flatten_row,
    he_normal,
    log_floor,
    matmul,
    mean_of,
    mul,
    powc,
    scale,
    sigmoid,
    temporal_conv1d_meanpool,
)
from .amrf import check_variant
from .data import MODALITIES, Dataset, Sample
from .errors import ConfigError, DataError

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Hyperparameters; dims are the raw per-modality feature widths."""

    text_dim: int = 768
    audio_dim: int = 128
    visual_dim: int = 136
    sentiment_dim: int = 8
    window: int = 3
    d: int = 8
    k: int = 4
    hidden: int = 16
    gamma: float = 2.0
    variant: str = "matrix_literal"

    def __post_init__(self):
        for name, dim in self.raw_dims().items():
            if dim < 1:
                raise ConfigError(f"{name} dim must be >= 1, got {dim}")
        for name in ("window", "d", "k", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        check_variant(self.variant)

    def raw_dims(self) -> dict[str, int]:
        return {
            "text": self.text_dim,
            "audio": self.audio_dim,
            "visual": self.visual_dim,
            "sentiment": self.sentiment_dim,
        }

    @classmethod
    def for_dataset(cls, ds: Dataset, **overrides) -> "ModelConfig":
        return cls(
            text_dim=ds.dims["text"],
            audio_dim=ds.dims["audio"],
            visual_dim=ds.dims["visual"],
            sentiment_dim=ds.dims["sentiment"],
            **overrides,
        )


@dataclass
class ModelParams:
    """Per-pass view of the whole parameter tree, bound to one tape."""

    frontends: dict[str, tuple[Node, Node]]  # modality -> (kernel, bias)
    hybrid: HybridAttentionParams
    head_w1: Node
    head_b1: Node
    head_w2: Node
    head_b2: Node

    @classmethod
    def bind(cls, tape: Tape, store: ParamStore) -> "ModelParams":
        return cls(
            frontends={
                name: (
                    tape.param(store, f"frontend.{name}.kernel"),
                    tape.param(store, f"frontend.{name}.bias"),
                )
                for name in MODALITIES
            },
            hybrid=HybridAttentionParams.bind(tape, store, "hybrid"),
            head_w1=tape.param(store, "head.w1"),
            head_b1=tape.param(store, "head.b1"),
            head_w2=tape.param(store, "head.w2"),
            head_b2=tape.param(store, "head.b2"),
        )


def init_model_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """Fresh parameter store with Gaussian weights and zero logits/biases."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, f in cfg.raw_dims().items():
        fan = cfg.window * f
        store.add(f"frontend.{name}.kernel", he_normal(rng, fan, cfg.d, fan))
        store.add(f"frontend.{name}.bias", np.zeros((1, cfg.d)))
    # Every frontend emits a 1 x d vector, so all first-level fusion blocks
    # project d -> d and the final block projects the flattened d*k.
    init_hybrid_params(
        store,
        "hybrid",
        {name: cfg.d for name in MODALITIES},
        cfg.d,
        cfg.k,
        rng,
    )
    flat = cfg.d * cfg.k
    store.add("head.w1", he_normal(rng, flat, cfg.hidden, flat))
    store.add("head.b1", np.zeros((1, cfg.hidden)))
    store.add("head.w2", he_normal(rng, cfg.hidden, 1, cfg.hidden))
    store.add("head.b2", np.zeros((1, 1)))
    return store


def build_forward(tape: Tape, store: ParamStore, sample: Sample, cfg: ModelConfig) -> Node:
    """Graph for one sample's predicted probability, as a 1x1 node."""
    params = ModelParams.bind(tape, store)
    vectors: dict[str, Node] = {}
    for name in MODALITIES:
        seq = sample.seq(name)
        if seq.shape[0] < 1:
            raise DataError(f"sample {sample.id!r}: missing {name} modality")
        if seq.shape[1] != cfg.raw_dims()[name]:
            raise DataError(
                f"sample {sample.id!r}: {name} dim {seq.shape[1]} != "
                f"configured {cfg.raw_dims()[name]}"
            )
        kernel, bias = params.frontends[name]
        vectors[name] = temporal_conv1d_meanpool(tape.constant(seq), kernel, bias)
    fused = hybrid_attention(
        vectors["text"],
        vectors["audio"],
        vectors["visual"],
        vectors["sentiment"],
        params.hybrid,
        cfg.variant,
    )
    h = sigmoid(add(matmul(flatten_row(fused), params.head_w1), params.head_b1))
    logit = add(matmul(h, params.head_w2), params.head_b2)
    return sigmoid(logit)


def predict(store: ParamStore, sample: Sample, cfg: ModelConfig) -> float:
    """Probability of the positive class, in (0, 1)."""
    return build_forward(Tape(record=False), store, sample, cfg).item()


def focal_loss(y_hat: float, label: int, gamma: float) -> float:
    """-(1 - p_true)^gamma * log(p_true) with the log floored at 1e-12.

    p_true is y_hat for positive labels and 1 - y_hat for negatives, so both
    classes contribute.  gamma = 0 reduces to binary cross-entropy.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label}")
    p_true = y_hat if label == 1 else 1.0 - y_hat
    return -((1.0 - p_true) ** gamma) * math.log(max(p_true, LOG_FLOOR))


def focal_loss_node(y_hat: Node, label: int, gamma: float) -> Node:
    """Taped focal loss of one 1x1 prediction node."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if label == 1:
        p_true = y_hat
    else:
        p_true = add_const(scale(y_hat, -1.0), 1.0)
    miss = add_const(scale(p_true, -1.0), 1.0)  # 1 - p_true
    return scale(mul(powc(miss, gamma), log_floor(p_true)), -1.0)


def loss_and_grads(
    batch: list[Sample],
    store: ParamStore,
    cfg: ModelConfig,
    gamma: float | None = None,
) -> float:
    """Mean focal loss over `batch`; gradients land in `store`.

    Samples are reduced in sorted-id order, so any permutation of the same
    batch produces bit-identical loss and gradients.
    """
    if not batch:
        raise DataError("loss_and_grads: empty batch")
    g = cfg.gamma if gamma is None else gamma
    tape = Tape()
    losses = [
        focal_loss_node(build_forward(tape, store, s, cfg), s.label, g)
        for s in sorted(batch, key=lambda s: s.id)
    ]
    mean_loss = mean_of(losses)
    tape.backward(mean_loss)
    return mean_loss.item()


# ---------------------------------------------------------------------------
# Checkpoints: manifest line with the config, then one record per parameter
# ---------------------------------------------------------------------------


def save_checkpoint(store: ParamStore, cfg: ModelConfig, path: str | Path) -> None:
    """Write params + config; floats keep full precision so reload is bit-exact."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = {"version": CHECKPOINT_VERSION, "config": asdict(cfg)}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for p in store.paths():
            v = store.value(p)
            rec = {
                "path": p,
                "rows": v.shape[0],
                "cols": v.shape[1],
                "data": v.reshape(-1).tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParamStore, ModelConfig]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty checkpoint")
    try:
        header = json.loads(lines[0])
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version {header.get('version')!r}"
            )
        cfg = ModelConfig(**header["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: line 1: bad checkpoint header: {exc}") from exc
    store = ParamStore()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            values = np.array(rec["data"], dtype=np.float64).reshape(
                rec["rows"], rec["cols"]
            )
            store.add(rec["path"], values)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: bad parameter record: {exc}") from exc
    return store, cfg
