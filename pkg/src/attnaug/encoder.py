"""Miniature transformer dual-encoder with exact analytic gradients.

Architecture (per encoder side): token + learned position embeddings, then L
post-norm blocks of multi-head self-attention and a GELU feed-forward, each
wrapped as ``x = LN(x + sublayer(x))``.  The sequence embedding is the
final-layer hidden state at the CLS position, and query/passage relevance is
the raw (unnormalized) dot product of the two CLS embeddings.

Training uses the in-batch-negative objective: each question scores against
every positive passage in the batch plus all attached hard negatives, and
the loss is the negative log-likelihood of its own positive under a softmax
over those scores.

Everything runs in float64 by default so finite-difference gradient checks
are meaningful; float32 is available behind ``EncoderConfig.dtype`` for
speed (it routes through the pure NumPy kernels, which are dtype-generic).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels, _kernels_py
from .errors import TrainingError
from .tokenizer import TokenSequence, Vocabulary, encode as tokenize

CHECKPOINT_MAGIC = b"ATNCKPT1"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    ffn_dim: int = 128
    max_len: int = 160
    vocab_size: int = 512
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} must be divisible by heads {self.heads}"
            )
        for name in ("layers", "heads", "model_dim", "ffn_dim", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


@dataclass
class TrainConfig:
    batch_size: int = 16
    hard_negatives_per_example: int = 1
    learning_rate: float = 0.05
    epochs: int = 10
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass
class TrainExample:
    question: str
    positive_passage_id: str
    hard_negative_ids: list[str] = field(default_factory=list)


@dataclass
class EncodedOutput:
    """CLS embedding plus the full attention stack of one forward pass."""

    embedding: np.ndarray  # (d,)
    attentions: list[np.ndarray]  # per layer: (heads, S, S), rows are queries


def _layer_param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i in range(cfg.layers):
        p = f"l{i}."
        shapes += [
            (p + "attn.wq", (d, d)), (p + "attn.bq", (d,)),
            (p + "attn.wk", (d, d)), (p + "attn.bk", (d,)),
            (p + "attn.wv", (d, d)), (p + "attn.bv", (d,)),
            (p + "attn.wo", (d, d)), (p + "attn.bo", (d,)),
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "ffn.w1", (d, f)), (p + "ffn.b1", (f,)),
            (p + "ffn.w2", (f, d)), (p + "ffn.b2", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
        ]
    return shapes


def param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("tok_emb", (cfg.vocab_size, cfg.model_dim)),
        ("pos_emb", (cfg.max_len, cfg.model_dim)),
    ] + _layer_param_shapes(cfg)


def _init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(cfg.model_dim)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg):
        if name.endswith("ln1.g") or name.endswith("ln2.g"):
            params[name] = np.ones(shape, dtype=cfg.np_dtype)
        elif name.endswith("ln1.b") or name.endswith("ln2.b"):
            params[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.np_dtype)
    return params


@dataclass
class DualEncoderModel:
    config: EncoderConfig
    params_q: dict[str, np.ndarray]
    params_p: dict[str, np.ndarray]
    tie_encoders: bool = False

    def params(self, side: str) -> dict[str, np.ndarray]:
        if side == "query":
            return self.params_q
        if side == "passage":
            return self.params_p
        raise ValueError(f"side must be 'query' or 'passage', got {side!r}")

    def named_parameters(self) -> Iterator[tuple[str, str, np.ndarray]]:
        """Yield (side, name, tensor) once per distinct tensor."""
        for name in sorted(self.params_q):
            yield "query", name, self.params_q[name]
        if not self.tie_encoders:
            for name in sorted(self.params_p):
                yield "passage", name, self.params_p[name]


def init_model(cfg: EncoderConfig, tie_encoders: bool = False) -> DualEncoderModel:
    rng = np.random.default_rng(cfg.seed)
    params_q = _init_params(cfg, rng)
    params_p = params_q if tie_encoders else _init_params(cfg, rng)
    return DualEncoderModel(
        config=cfg, params_q=params_q, params_p=params_p, tie_encoders=tie_encoders
    )


def _kern(cfg: EncoderConfig):
    # The C kernels are float64-only; float32 runs use the NumPy fallback.
    return kernels if cfg.dtype == "float64" else _kernels_py


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def forward(
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    ids: np.ndarray,
    mask: np.ndarray,
) -> dict:
    """Batched forward pass.

    ids: (B, S) int64 token ids; mask: (B, S) with 1.0 for real tokens.
    Returns a cache holding every intermediate needed for ``backward`` plus
    ``cls`` (B, d) and ``probs`` per layer (B, H, S, S).
    """
    K = _kern(cfg)
    B, S = ids.shape
    if S > cfg.max_len:
        raise ValueError(f"sequence length {S} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        bad = int(ids.max() if ids.max() >= cfg.vocab_size else ids.min())
        raise ValueError(f"token id {bad} out of range for vocab_size {cfg.vocab_size}")
    d, H, dh = cfg.model_dim, cfg.heads, cfg.head_dim
    scale = 1.0 / float(np.sqrt(dh))
    mask = mask.astype(cfg.np_dtype)

    x = params["tok_emb"][ids] + params["pos_emb"][:S][None, :, :]
    cache: dict = {"ids": ids, "mask": mask, "x0": x, "layers": [], "probs": []}
    for i in range(cfg.layers):
        p = f"l{i}."
        lc: dict = {"x_in": x}
        q = x @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = x @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = x @ params[p + "attn.wv"] + params[p + "attn.bv"]
        qh = q.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * scale
        probs = K.masked_softmax(
            np.ascontiguousarray(scores.reshape(B, H * S, S)), mask
        ).reshape(B, H, S, S)
        ctxh = np.matmul(probs, vh)
        ctx = ctxh.transpose(0, 2, 1, 3).reshape(B, S, d)
        attn_out = ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]
        res1 = x + attn_out
        y1, mean1, rstd1 = K.layer_norm(
            res1.reshape(B * S, d), params[p + "ln1.g"], params[p + "ln1.b"]
        )
        x1 = y1.reshape(B, S, d)
        h_pre = x1 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        h = K.gelu(h_pre)
        ffn_out = h @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        res2 = x1 + ffn_out
        y2, mean2, rstd2 = K.layer_norm(
            res2.reshape(B * S, d), params[p + "ln2.g"], params[p + "ln2.b"]
        )
        x = y2.reshape(B, S, d)
        lc.update(
            qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx, res1=res1,
            mean1=mean1, rstd1=rstd1, x1=x1, h_pre=h_pre, h=h, res2=res2,
            mean2=mean2, rstd2=rstd2,
        )
        cache["layers"].append(lc)
        cache["probs"].append(probs)
    cache["cls"] = x[:, 0, :]
    return cache


def backward(
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    cache: dict,
    dcls: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. all parameters.

    ``dcls`` (B, d) is the loss gradient at the CLS embeddings returned by
    ``forward``.  Returns a dict with the same keys as ``params``.
    """
    K = _kern(cfg)
    ids, mask = cache["ids"], cache["mask"]
    B, S = ids.shape
    d, H, dh = cfg.model_dim, cfg.heads, cfg.head_dim
    scale = 1.0 / float(np.sqrt(dh))
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}

    dx = np.zeros((B, S, d), dtype=cfg.np_dtype)
    dx[:, 0, :] = dcls
    for i in reversed(range(cfg.layers)):
        p = f"l{i}."
        lc = cache["layers"][i]
        # x = LN2(res2)
        dres2, dg2, db2 = K.layer_norm_backward(
            np.ascontiguousarray(dx.reshape(B * S, d)),
            np.ascontiguousarray(lc["res2"].reshape(B * S, d)),
            params[p + "ln2.g"], lc["mean2"], lc["rstd2"],
        )
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dres2 = dres2.reshape(B, S, d)
        # res2 = x1 + ffn_out
        dffn_out = dres2
        dx1 = dres2.copy()
        # ffn_out = gelu(x1 w1 + b1) w2 + b2
        h2d = lc["h"].reshape(B * S, cfg.ffn_dim)
        dffn2d = dffn_out.reshape(B * S, d)
        grads[p + "ffn.w2"] += h2d.T @ dffn2d
        grads[p + "ffn.b2"] += dffn2d.sum(axis=0)
        dhid = dffn_out @ params[p + "ffn.w2"].T
        dh_pre = K.gelu_backward(lc["h_pre"], dhid)
        x1_2d = lc["x1"].reshape(B * S, d)
        dh_pre2d = dh_pre.reshape(B * S, cfg.ffn_dim)
        grads[p + "ffn.w1"] += x1_2d.T @ dh_pre2d
        grads[p + "ffn.b1"] += dh_pre2d.sum(axis=0)
        dx1 += dh_pre @ params[p + "ffn.w1"].T
        # x1 = LN1(res1)
        dres1, dg1, db1 = K.layer_norm_backward(
            np.ascontiguousarray(dx1.reshape(B * S, d)),
            np.ascontiguousarray(lc["res1"].reshape(B * S, d)),
            params[p + "ln1.g"], lc["mean1"], lc["rstd1"],
        )
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dres1 = dres1.reshape(B, S, d)
        # res1 = x_in + attn_out
        dattn_out = dres1
        dx = dres1.copy()
        # attn_out = ctx wo + bo
        ctx2d = lc["ctx"].reshape(B * S, d)
        dattn2d = dattn_out.reshape(B * S, d)
        grads[p + "attn.wo"] += ctx2d.T @ dattn2d
        grads[p + "attn.bo"] += dattn2d.sum(axis=0)
        dctx = dattn_out @ params[p + "attn.wo"].T
        dctxh = dctx.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        # ctxh = probs @ vh
        probs = lc["probs"]
        dprobs = np.matmul(dctxh, lc["vh"].transpose(0, 1, 3, 2))
        dvh = np.matmul(probs.transpose(0, 1, 3, 2), dctxh)
        dscores = K.masked_softmax_backward(
            np.ascontiguousarray(probs.reshape(B, H * S, S)),
            np.ascontiguousarray(dprobs.reshape(B, H * S, S)),
        ).reshape(B, H, S, S) * scale
        dqh = np.matmul(dscores, lc["kh"])
        dkh = np.matmul(dscores.transpose(0, 1, 3, 2), lc["qh"])
        dq = dqh.transpose(0, 2, 1, 3).reshape(B, S, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, S, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, S, d)
        x_in2d = lc["x_in"].reshape(B * S, d)
        for dmat, w, bias in ((dq, "wq", "bq"), (dk, "wk", "bk"), (dv, "wv", "bv")):
            dmat2d = dmat.reshape(B * S, d)
            grads[p + "attn." + w] += x_in2d.T @ dmat2d
            grads[p + "attn." + bias] += dmat2d.sum(axis=0)
            dx += dmat @ params[p + "attn." + w].T
    # x0 = tok_emb[ids] + pos_emb[:S]
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, d))
    grads["pos_emb"][:S] += dx.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Single-sequence API
# ---------------------------------------------------------------------------

def _to_arrays(tokens: TokenSequence, dtype) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray([tokens.ids], dtype=np.int64)
    mask = np.ones_like(ids, dtype=dtype)
    return ids, mask


def encode(model: DualEncoderModel, side: str, tokens: TokenSequence) -> EncodedOutput:
    """Deterministic forward pass for one sequence."""
    cfg = model.config
    ids, mask = _to_arrays(tokens, cfg.np_dtype)
    cache = forward(model.params(side), cfg, ids, mask)
    return EncodedOutput(
        embedding=cache["cls"][0].copy(),
        attentions=[probs[0].copy() for probs in cache["probs"]],
    )


def score(model: DualEncoderModel, q_tokens: TokenSequence, p_tokens: TokenSequence) -> float:
    """Unnormalized dot product of the two CLS embeddings."""
    q = encode(model, "query", q_tokens).embedding
    p = encode(model, "passage", p_tokens).embedding
    return float(q @ p)


def pad_batch(
    sequences: Sequence[TokenSequence], dtype, pad_id: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Pad token sequences to a common length; mask marks real tokens."""
    if not sequences:
        raise ValueError("cannot pad an empty batch")
    max_len = max(len(s) for s in sequences)
    ids = np.full((len(sequences), max_len), pad_id, dtype=np.int64)
    mask = np.zeros((len(sequences), max_len), dtype=dtype)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s.ids
        mask[i, : len(s)] = 1.0
    return ids, mask


def encode_many(
    model: DualEncoderModel,
    side: str,
    sequences: Sequence[TokenSequence],
    batch_size: int = 32,
    workers: int | None = None,
) -> np.ndarray:
    """CLS embeddings for many sequences, (N, d).

    Sequences are processed in fixed-size chunks so results are identical
    no matter how the caller shards the input; padding cannot leak into the
    CLS embedding because attention masks padded keys out entirely.
    """
    cfg = model.config
    if not sequences:
        return np.zeros((0, cfg.model_dim), dtype=cfg.np_dtype)
    params = model.params(side)
    chunks = [
        sequences[start : start + batch_size]
        for start in range(0, len(sequences), batch_size)
    ]

    def run(chunk: Sequence[TokenSequence]) -> np.ndarray:
        ids, mask = pad_batch(chunk, cfg.np_dtype)
        return forward(params, cfg, ids, mask)["cls"]

    if workers is not None and workers > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class BatchItem:
    q_tokens: TokenSequence
    pos_tokens: TokenSequence
    neg_tokens: list[TokenSequence] = field(default_factory=list)


def in_batch_loss_and_grads(
    model: DualEncoderModel, batch: Sequence[BatchItem]
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Loss plus per-side parameter gradients for one batch.

    Scores every question against all batch positives followed by all hard
    negatives; question i's target is column i.  Returns
    (loss, query-side grads, passage-side grads); for tied encoders the two
    grad dicts still come back separately and the optimizer adds them.
    """
    cfg = model.config
    B = len(batch)
    n_negs = sum(len(item.neg_tokens) for item in batch)
    if B < 2 and n_negs == 0:
        raise TrainingError("a batch needs >= 2 examples or >= 1 hard negative")
    q_ids, q_mask = pad_batch([item.q_tokens for item in batch], cfg.np_dtype)
    passage_tokens = [item.pos_tokens for item in batch]
    for item in batch:
        passage_tokens.extend(item.neg_tokens)
    p_ids, p_mask = pad_batch(passage_tokens, cfg.np_dtype)

    q_cache = forward(model.params_q, cfg, q_ids, q_mask)
    p_cache = forward(model.params_p, cfg, p_ids, p_mask)
    Q, P = q_cache["cls"], p_cache["cls"]  # (B, d), (M, d)
    scores = Q @ P.T  # (B, M)

    row_max = scores.max(axis=1, keepdims=True)
    exp = np.exp(scores - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = scores - row_max - np.log(denom)
    targets = np.arange(B)
    loss = float(-log_probs[targets, targets].mean())

    dscores = exp / denom
    dscores[targets, targets] -= 1.0
    dscores /= B
    dQ = dscores @ P
    dP = dscores.T @ Q
    q_grads = backward(model.params_q, cfg, q_cache, dQ.astype(cfg.np_dtype))
    p_grads = backward(model.params_p, cfg, p_cache, dP.astype(cfg.np_dtype))
    return loss, q_grads, p_grads


class Optimizer:
    """Fixed-rate gradient descent, with optional adaptive moments."""

    def __init__(self, model: DualEncoderModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self._m = {key: np.zeros_like(arr) for key, arr in self._tensors().items()}
            self._v = {key: np.zeros_like(arr) for key, arr in self._tensors().items()}

    def _tensors(self) -> dict[tuple[str, str], np.ndarray]:
        out = {("query", name): arr for name, arr in self.model.params_q.items()}
        if not self.model.tie_encoders:
            for name, arr in self.model.params_p.items():
                out[("passage", name)] = arr
        return out

    def step(self, q_grads: dict[str, np.ndarray], p_grads: dict[str, np.ndarray]) -> None:
        merged: dict[tuple[str, str], np.ndarray] = {}
        if self.model.tie_encoders:
            for name in q_grads:
                merged[("query", name)] = q_grads[name] + p_grads[name]
        else:
            merged.update({("query", n): g for n, g in q_grads.items()})
            merged.update({("passage", n): g for n, g in p_grads.items()})
        tensors = self._tensors()
        self.t += 1
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            for key, g in merged.items():
                tensors[key] -= lr * g
            return
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        for key, g in merged.items():
            m = self._m[key]
            v = self._v[key]
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            mhat = m / (1 - beta1**self.t)
            vhat = v / (1 - beta2**self.t)
            tensors[key] -= lr * mhat / (np.sqrt(vhat) + eps)


def train_step(
    model: DualEncoderModel, batch: Sequence[BatchItem], optimizer: Optimizer
) -> float:
    """One loss evaluation, backprop and optimizer update.

    Raises TrainingError with diagnostics when the loss is not finite.
    """
    loss, q_grads, p_grads = in_batch_loss_and_grads(model, batch)
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss!r} at optimizer step {optimizer.t + 1} "
            f"(batch of {len(batch)}, lr={optimizer.cfg.learning_rate})"
        )
    optimizer.step(q_grads, p_grads)
    return loss


def run_schedule(
    model: DualEncoderModel,
    pretrain_set: Sequence[TrainExample],
    finetune_set: Sequence[TrainExample],
    pretrain_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    vocab: Vocabulary,
    passage_texts: dict[str, str],
    checkpoint_dir: str | Path | None = None,
) -> tuple[DualEncoderModel, dict[str, list[float]]]:
    """Pretrain (when a pretrain set exists) then fine-tune.

    Both phases shuffle with their own seeded generator, so the whole
    schedule is reproducible from the configs alone.  A checkpoint tagged
    with the phase name is written after each phase when ``checkpoint_dir``
    is given.  Returns the model and per-epoch mean loss curves.
    """
    curves: dict[str, list[float]] = {}
    phases: list[tuple[str, Sequence[TrainExample], TrainConfig]] = []
    if pretrain_set:
        phases.append(("pretrain", pretrain_set, pretrain_cfg))
    if finetune_set:
        phases.append(("finetune", finetune_set, finetune_cfg))
    token_cache: dict[str, TokenSequence] = {}

    def passage_tokens(pid: str) -> TokenSequence:
        if pid not in token_cache:
            token_cache[pid] = tokenize(vocab, passage_texts[pid], model.config.max_len)
        return token_cache[pid]

    for phase, dataset, cfg in phases:
        optimizer = Optimizer(model, cfg)
        rng = np.random.default_rng(cfg.seed)
        q_tokens = [tokenize(vocab, ex.question, model.config.max_len) for ex in dataset]
        losses: list[float] = []
        for _epoch in range(cfg.epochs):
            order = rng.permutation(len(dataset))
            epoch_losses: list[float] = []
            for start in range(0, len(order), cfg.batch_size):
                chosen = order[start : start + cfg.batch_size]
                items = []
                for j in chosen:
                    ex = dataset[j]
                    negs = [
                        passage_tokens(pid)
                        for pid in ex.hard_negative_ids[: cfg.hard_negatives_per_example]
                    ]
                    items.append(
                        BatchItem(
                            q_tokens=q_tokens[j],
                            pos_tokens=passage_tokens(ex.positive_passage_id),
                            neg_tokens=negs,
                        )
                    )
                if len(items) < 2 and not any(it.neg_tokens for it in items):
                    continue  # a lone example with no negatives has no signal
                epoch_losses.append(train_step(model, items, optimizer))
            losses.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        curves[phase] = losses
        if checkpoint_dir is not None:
            save_checkpoint(model, Path(checkpoint_dir) / f"model_{phase}.ckpt", phase)
    return model, curves


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: DualEncoderModel, path: str | Path, phase: str = "") -> None:
    """Write a checkpoint: magic, JSON header, flat little-endian float64."""
    tensors = []
    blobs = []
    offset = 0
    for side, name, arr in model.named_parameters():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append(
            {"side": side, "name": name, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "version": CHECKPOINT_VERSION,
        "phase": phase,
        "tie_encoders": model.tie_encoders,
        "config": asdict(model.config),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> DualEncoderModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise TrainingError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint version {header['version']}")
        body = fh.read()
    cfg = EncoderConfig(**header["config"])
    sides: dict[str, dict[str, np.ndarray]] = {"query": {}, "passage": {}}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start).reshape(shape)
        sides[spec["side"]][spec["name"]] = arr.astype(cfg.np_dtype).copy()
    tie = bool(header["tie_encoders"])
    params_q = sides["query"]
    params_p = params_q if tie else sides["passage"]
    return DualEncoderModel(config=cfg, params_q=params_q, params_p=params_p, tie_encoders=tie)
