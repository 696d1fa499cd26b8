"""Autoregressive encoder-decoder over token sequences.

The encoder reads study metadata tokens; the decoder predicts history tokens
left to right.  Everything runs in float64 on CPU: the gradient checks and
the bit-identical re-run guarantees need the headroom, and desk-scale models
are small enough that speed is not the bottleneck.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .core import Study
from .tokenizer import (
    INFERENCE_AFFINE,
    TokenizedStudy,
    Vocab,
    build_loss_weights,
    sample_augmentation,
    serialize_metadata,
    tokenize_study,
)

CHECKPOINT_MAGIC = b"STCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the defaults are the desk-scale model."""

    vocab_size: int
    embed_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    feedforward_dim: int = 512
    max_meta_len: int = 320
    max_history_len: int = 512
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads",
                     "feedforward_dim", "max_meta_len", "max_history_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    steps: int = 1000
    peak_lr: float = 1e-3
    warmup_steps: int = 1000
    val_every: int = 100
    patience: int = 5  # validation rounds without improvement before stopping
    data_seed: int = 0
    augment_permutation: bool = True
    augment_y_affine: bool = True
    augment_metadata_drop: bool = True
    drop_prob: float = 0.25  # chance of dropping text / ranges, each

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.peak_lr <= 0 or self.warmup_steps < 1:
            raise ValueError("need peak_lr > 0 and warmup_steps >= 1")
        if self.val_every < 1 or self.patience < 1:
            raise ValueError("val_every and patience must be >= 1")
        if not (0.0 <= self.drop_prob <= 1.0):
            raise ValueError("drop_prob must be in [0, 1]")


class _Attention(nn.Module):
    """Multi-head attention with externally managed KV tensors."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)

    def split(self, x: torch.Tensor) -> torch.Tensor:
        # [..., T, dim] -> [..., heads, T, head_dim]
        t = x.shape[-2]
        return x.view(*x.shape[:-2], t, self.heads, self.head_dim).transpose(-3, -2)

    def merge(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[-2]
        return x.transpose(-3, -2).reshape(*x.shape[:-3], t, self.heads * self.head_dim)

    def forward(
        self,
        q_in: torch.Tensor,
        k_in: torch.Tensor,
        v_in: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        q = self.split(self.wq(q_in))
        k = self.split(self.wk(k_in))
        v = self.split(self.wv(v_in))
        return self.wo(self.merge(self.attend(q, k, v, mask)))

    def attend(
        self,
        q: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        mask: torch.Tensor | None,
    ) -> torch.Tensor:
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            scores = scores.masked_fill(mask, float("-inf"))
        return torch.softmax(scores, dim=-1) @ v


class _Ffn(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float) -> None:
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = _Attention(cfg.embed_dim, cfg.num_heads)
        self.ln2 = nn.LayerNorm(cfg.embed_dim)
        self.ffn = _Ffn(cfg.embed_dim, cfg.feedforward_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h, h, pad_mask))
        return x + self.drop(self.ffn(self.ln2(x)))


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.embed_dim)
        self.self_attn = _Attention(cfg.embed_dim, cfg.num_heads)
        self.ln2 = nn.LayerNorm(cfg.embed_dim)
        self.cross_attn = _Attention(cfg.embed_dim, cfg.num_heads)
        self.ln3 = nn.LayerNorm(cfg.embed_dim)
        self.ffn = _Ffn(cfg.embed_dim, cfg.feedforward_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        enc: torch.Tensor,
        causal_mask: torch.Tensor,
        enc_pad_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.self_attn(h, h, h, causal_mask))
        x = x + self.drop(self.cross_attn(self.ln2(x), enc, enc, enc_pad_mask))
        return x + self.drop(self.ffn(self.ln3(x)))


class DecodeCache:
    """Per-session KV state for incremental decoding.

    ``length`` counts processed decoder positions including the leading BOS.
    ``truncate`` rolls back speculative tokens without recomputation.
    """

    def __init__(self, model: "SeqModel", enc_out: torch.Tensor) -> None:
        cfg = model.cfg
        n_max = cfg.max_history_len + 1
        dh = cfg.embed_dim // cfg.num_heads
        self.enc_out = enc_out
        self.length = 0
        self.self_k = [torch.zeros(cfg.num_heads, n_max, dh, dtype=torch.float64)
                       for _ in range(cfg.num_layers)]
        self.self_v = [torch.zeros(cfg.num_heads, n_max, dh, dtype=torch.float64)
                       for _ in range(cfg.num_layers)]
        # cross-attention keys/values depend only on the encoder output
        self.cross_k = []
        self.cross_v = []
        for layer in model.decoder:
            self.cross_k.append(layer.cross_attn.split(layer.cross_attn.wk(enc_out)))
            self.cross_v.append(layer.cross_attn.split(layer.cross_attn.wv(enc_out)))
        self.last_logits: torch.Tensor | None = None

    def truncate(self, length: int) -> None:
        if not (0 <= length <= self.length):
            raise ValueError(f"cannot truncate cache of length {self.length} to {length}")
        self.length = length
        self.last_logits = None


class SeqModel(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.tok_embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.enc_pos = nn.Embedding(cfg.max_meta_len, cfg.embed_dim)
        self.dec_pos = nn.Embedding(cfg.max_history_len + 1, cfg.embed_dim)
        self.embed_drop = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(_EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.enc_ln = nn.LayerNorm(cfg.embed_dim)
        self.decoder = nn.ModuleList(_DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.dec_ln = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.vocab_size)
        self.double()
        self._init_weights()

    def _init_weights(self) -> None:
        g = torch.Generator().manual_seed(self.cfg.seed)
        for p in self.parameters():
            if p.dim() >= 2:
                with torch.no_grad():
                    p.normal_(0.0, 0.02, generator=g)
            else:
                nn.init.zeros_(p)
        # LayerNorm gains back to 1 (zeroed by the bias pass above)
        for m in self.modules():
            if isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)

    # -- validation helpers --------------------------------------------------

    def _check_tokens(self, tokens: Sequence[int], limit: int, what: str) -> torch.Tensor:
        if len(tokens) > limit:
            raise ValueError(f"{what} length {len(tokens)} exceeds limit {limit}")
        t = torch.as_tensor(tokens, dtype=torch.long)
        if t.numel() and (t.min() < 0 or t.max() >= self.cfg.vocab_size):
            raise ValueError(f"{what} token id outside [0, {self.cfg.vocab_size})")
        return t

    # -- batched forward (training path) -------------------------------------

    def encode(self, meta: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """meta: [B, M] token ids; pad_mask: [B, M] True at padding."""
        pos = torch.arange(meta.shape[-1])
        x = self.embed_drop(self.tok_embed(meta) + self.enc_pos(pos))
        attn_mask = None
        if pad_mask is not None:
            attn_mask = pad_mask[:, None, None, :]  # broadcast over heads and queries
        for layer in self.encoder:
            x = layer(x, attn_mask)
        return self.enc_ln(x)

    def decode(
        self,
        enc_out: torch.Tensor,
        dec_in: torch.Tensor,
        enc_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """dec_in: [B, N] ids (BOS-prefixed); returns logits [B, N, vocab]."""
        n = dec_in.shape[-1]
        pos = torch.arange(n)
        x = self.embed_drop(self.tok_embed(dec_in) + self.dec_pos(pos))
        causal = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        cross_mask = None
        if enc_pad_mask is not None:
            cross_mask = enc_pad_mask[:, None, None, :]
        for layer in self.decoder:
            x = layer(x, enc_out, causal, cross_mask)
        return self.head(self.dec_ln(x))

    def forward(
        self,
        meta: torch.Tensor,
        dec_in: torch.Tensor,
        enc_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.decode(self.encode(meta, enc_pad_mask), dec_in, enc_pad_mask)

    # -- incremental decoding (inference path) --------------------------------

    def start_cache(self, meta_tokens: Sequence[int]) -> DecodeCache:
        """Run the encoder and process the BOS position; returns a live cache."""
        meta = self._check_tokens(meta_tokens, self.cfg.max_meta_len, "meta")
        with torch.no_grad():
            enc_out = self.encode(meta[None, :])[0]
        cache = DecodeCache(self, enc_out)
        self._advance(cache, [self.bos_token])
        return cache

    @property
    def bos_token(self) -> int:
        # vocab layout: Q value bins, pad, bos, star, pipe, amp, 9 keywords,
        # 8 enums, 256 byte fallbacks -> bos = vocab_size - 277
        return self.cfg.vocab_size - 277

    def extend_cache(self, cache: DecodeCache, tokens: Sequence[int]) -> torch.Tensor:
        """Process new history tokens; returns logits at the final position."""
        toks = self._check_tokens(tokens, self.cfg.max_history_len, "history chunk")
        if cache.length + len(toks) > self.cfg.max_history_len + 1:
            raise ValueError("history exceeds max_history_len")
        if len(toks) == 0:
            if cache.last_logits is None:
                raise ValueError("empty extension on a truncated cache")
            return cache.last_logits
        return self._advance(cache, toks.tolist())

    def _advance(self, cache: DecodeCache, tokens: list[int]) -> torch.Tensor:
        start = cache.length
        s = len(tokens)
        with torch.no_grad():
            pos = torch.arange(start, start + s)
            x = self.tok_embed(torch.as_tensor(tokens, dtype=torch.long)) + self.dec_pos(pos)
            # causal mask within the chunk; cached positions are always visible
            chunk_mask = torch.triu(torch.ones(s, s, dtype=torch.bool), diagonal=1)
            for i, layer in enumerate(self.decoder):
                h = layer.ln1(x)
                q = layer.self_attn.split(layer.self_attn.wq(h))
                k = layer.self_attn.split(layer.self_attn.wk(h))
                v = layer.self_attn.split(layer.self_attn.wv(h))
                cache.self_k[i][:, start : start + s] = k
                cache.self_v[i][:, start : start + s] = v
                full_k = cache.self_k[i][:, : start + s]
                full_v = cache.self_v[i][:, : start + s]
                mask = torch.zeros(s, start + s, dtype=torch.bool)
                mask[:, start:] = chunk_mask
                att = layer.self_attn.attend(q, full_k, full_v, mask)
                x = x + layer.self_attn.wo(layer.self_attn.merge(att))
                h2 = layer.ln2(x)
                q2 = layer.cross_attn.split(layer.cross_attn.wq(h2))
                att2 = layer.cross_attn.attend(q2, cache.cross_k[i], cache.cross_v[i], None)
                x = x + layer.cross_attn.wo(layer.cross_attn.merge(att2))
                x = x + layer.ffn(layer.ln3(x))
            logits = self.head(self.dec_ln(x[-1]))
        cache.length = start + s
        cache.last_logits = logits
        return logits


# ---------------------------------------------------------------------------
# loss and distributions

def sequence_loss(
    model: SeqModel,
    meta_tokens: Sequence[int],
    history_tokens: Sequence[int],
    weights: Sequence[float],
) -> torch.Tensor:
    """Weighted NLL of one study's history under the model (scalar tensor)."""
    if len(weights) != len(history_tokens):
        raise ValueError("weights must align one-to-one with history tokens")
    meta = model._check_tokens(meta_tokens, model.cfg.max_meta_len, "meta")
    hist = model._check_tokens(history_tokens, model.cfg.max_history_len, "history")
    bos = torch.tensor([model.bos_token], dtype=torch.long)
    dec_in = torch.cat([bos, hist[:-1]]) if len(hist) else bos[:0]
    if len(hist) == 0:
        return torch.zeros((), dtype=torch.float64)
    logits = model(meta[None, :], dec_in[None, :])[0]
    logp = torch.log_softmax(logits, dim=-1)
    token_logp = logp[torch.arange(len(hist)), hist]
    w = torch.as_tensor(weights, dtype=torch.float64)
    return -(w * token_logp).sum()


def next_token_dist(
    model: SeqModel, meta_tokens: Sequence[int], history_prefix: Sequence[int]
) -> np.ndarray:
    """P(next token | meta, prefix) as a float64 numpy vector."""
    meta = model._check_tokens(meta_tokens, model.cfg.max_meta_len, "meta")
    prefix = model._check_tokens(history_prefix, model.cfg.max_history_len, "prefix")
    bos = torch.tensor([model.bos_token], dtype=torch.long)
    dec_in = torch.cat([bos, prefix])
    with torch.no_grad():
        logits = model(meta[None, :], dec_in[None, :])[0, -1]
        probs = torch.softmax(logits, dim=-1)
    return probs.numpy()


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainRecord:
    step: int
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainState:
    """Mid-run snapshot (current weights, optimizer moments, best-so-far
    bookkeeping).  Because batches key on (data_seed, step), continuing from
    a snapshot reproduces the uninterrupted run's losses bit for bit."""

    step: int = 0
    best_val: float = math.inf
    stale: int = 0
    model_state: dict | None = None
    opt_state: dict | None = None
    best_state: dict | None = None


def check_study_fits(
    study: Study, model_cfg: ModelConfig, vocab: Vocab | None = None, what: str = "study"
) -> None:
    """Raise if a study cannot be tokenized within the model's length caps.

    Augmentations only reorder or remove metadata tokens, so the full
    serialization bounds every augmented variant.
    """
    vocab = vocab if vocab is not None else Vocab()
    n_meta = len(serialize_metadata(study.metadata))
    if n_meta > model_cfg.max_meta_len:
        raise ValueError(
            f"{what} study '{study.metadata.name}' metadata is {n_meta} tokens, "
            f"over max_meta_len={model_cfg.max_meta_len}"
        )
    t = len(study.trials)
    n_hist = (study.metadata.space.dimension + 3) * t - 1 if t else 0
    if n_hist > model_cfg.max_history_len:
        raise ValueError(
            f"{what} study '{study.metadata.name}' history is {n_hist} tokens, "
            f"over max_history_len={model_cfg.max_history_len}"
        )


def _augmented_tokenize(
    study: Study, vocab: Vocab, cfg: TrainConfig, rng: np.random.Generator
) -> TokenizedStudy:
    perm, affine, drop = sample_augmentation(
        study.metadata.space.dimension,
        rng,
        permute=cfg.augment_permutation,
        y_affine=cfg.augment_y_affine,
        metadata_drop=cfg.augment_metadata_drop,
        drop_prob=cfg.drop_prob,
    )
    return tokenize_study(study, vocab=vocab, perm=perm, affine=affine, drop_mask=drop)


def _fixed_tokenize(study: Study, vocab: Vocab) -> TokenizedStudy:
    return tokenize_study(study, vocab=vocab, affine=INFERENCE_AFFINE)


def _batch_loss(
    model: SeqModel, items: list[TokenizedStudy], vocab: Vocab
) -> tuple[torch.Tensor, float]:
    """Summed weighted NLL over the batch and the total token weight."""
    b = len(items)
    m_max = max(len(it.meta_tokens) for it in items)
    n_max = max(1, max(len(it.history_tokens) for it in items))
    meta = torch.full((b, m_max), vocab.pad, dtype=torch.long)
    pad_mask = torch.ones(b, m_max, dtype=torch.bool)
    dec_in = torch.full((b, n_max), vocab.pad, dtype=torch.long)
    target = torch.zeros(b, n_max, dtype=torch.long)
    w = torch.zeros(b, n_max, dtype=torch.float64)
    for i, it in enumerate(items):
        m, n = len(it.meta_tokens), len(it.history_tokens)
        meta[i, :m] = torch.as_tensor(it.meta_tokens, dtype=torch.long)
        pad_mask[i, :m] = False
        hist = torch.as_tensor(it.history_tokens, dtype=torch.long)
        dec_in[i, 0] = vocab.bos
        dec_in[i, 1:n] = hist[:-1]
        target[i, :n] = hist
        w[i, :n] = torch.as_tensor(build_loss_weights(it.history_tokens, vocab), dtype=torch.float64)
    logits = model(meta, dec_in, pad_mask)
    logp = torch.log_softmax(logits, dim=-1)
    token_logp = logp.gather(-1, target[..., None])[..., 0]
    return -(w * token_logp).sum(), float(w.sum())


def _eval_loss(model: SeqModel, items: list[TokenizedStudy], vocab: Vocab, batch: int = 16) -> float:
    """Mean weighted NLL per weighted token over a fixed tokenized set."""
    total, weight = 0.0, 0.0
    model.eval()
    with torch.no_grad():
        for i in range(0, len(items), batch):
            chunk = items[i : i + batch]
            loss, w = _batch_loss(model, chunk, vocab)
            total += float(loss)
            weight += w
    if weight == 0.0:
        raise ValueError("evaluation set has zero weighted tokens")
    return total / weight


def _lr_at(step: int, cfg: TrainConfig) -> float:
    # inverse-square-root schedule with linear warmup
    return cfg.peak_lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_studies: Sequence[Study],
    val_studies: Sequence[Study],
    vocab: Vocab | None = None,
    state: TrainState | None = None,
) -> tuple[SeqModel, list[TrainRecord]]:
    """Train; returns the best-validation model and loss curves.

    Batch composition and augmentation draws are keyed on
    (data_seed, step) only, so a fixed seed reproduces the loss curve bit for
    bit regardless of interruptions.  Pass a TrainState to resume: a state
    with step > 0 restores weights, optimizer moments, and early-stop
    bookkeeping, and the remaining steps match the uninterrupted run.  The
    passed object is updated in place with the end-of-run snapshot.
    """
    vocab = vocab if vocab is not None else Vocab()
    if vocab.size != model_cfg.vocab_size:
        raise ValueError("model vocab_size does not match the tokenizer vocabulary")
    if not train_studies or not val_studies:
        raise ValueError("need nonempty train and validation sets")
    if all(len(s.trials) == 0 for s in train_studies):
        raise ValueError("training dataset has zero weighted tokens")
    resuming = state is not None and state.step > 0
    if resuming and (state.model_state is None or state.best_state is None):
        raise ValueError("resume state lacks model weights")
    if resuming and state.step > train_cfg.steps:
        raise ValueError(f"state is already past step {train_cfg.steps}")
    for group, studies in (("train", train_studies), ("val", val_studies)):
        for s in studies:
            check_study_fits(s, model_cfg, vocab, what=group)

    torch.set_num_threads(max(torch.get_num_threads(), 1))
    model = SeqModel(model_cfg)
    val_items = [_fixed_tokenize(s, vocab) for s in val_studies]
    records: list[TrainRecord] = []

    def snapshot(opt_state: dict | None, step: int, best_val: float, stale: int, best_state: dict) -> None:
        if state is None:
            return
        state.step = step
        state.best_val = best_val
        state.stale = stale
        state.model_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        state.opt_state = opt_state
        state.best_state = {k: v.clone() for k, v in best_state.items()}

    if resuming:
        model.load_state_dict(state.model_state)
        best_val = state.best_val
        best_state = {k: v.clone() for k, v in state.best_state.items()}
        stale = state.stale
    else:
        best_val = _eval_loss(model, val_items, vocab)
        best_state = {k: v.clone() for k, v in model.state_dict().items()}
        records.append(TrainRecord(step=0, train_loss=math.nan, val_loss=best_val))
        stale = 0
    if train_cfg.steps == 0:
        snapshot(None, 0, best_val, stale, best_state)
        return model, records

    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.peak_lr)
    if resuming and state.opt_state is not None:
        opt.load_state_dict(state.opt_state)
    start_step = state.step + 1 if resuming else 1
    step = start_step - 1
    for step in range(start_step, train_cfg.steps + 1):
        rng = np.random.default_rng(np.random.SeedSequence((train_cfg.data_seed, step)))
        idx = rng.integers(len(train_studies), size=train_cfg.batch_size)
        items = []
        for i in idx:
            study = train_studies[int(i)]
            if len(study.trials) == 0:
                continue
            items.append(_augmented_tokenize(study, vocab, train_cfg, rng))
        if not items:
            continue
        lr = _lr_at(step, train_cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        loss, w = _batch_loss(model, items, vocab)
        if w == 0.0:
            raise ValueError("batch has zero weighted tokens")
        mean_loss = loss / w
        opt.zero_grad()
        mean_loss.backward()
        opt.step()

        step_loss = float(mean_loss.detach())
        if step % train_cfg.val_every == 0 or step == train_cfg.steps:
            val = _eval_loss(model, val_items, vocab)
            records.append(TrainRecord(step=step, train_loss=step_loss, val_loss=val))
            if val < best_val:
                best_val = val
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    break
        else:
            records.append(TrainRecord(step=step, train_loss=step_loss))

    snapshot(opt.state_dict(), step, best_val, stale, best_state)
    model.load_state_dict(best_state)
    model.eval()
    return model, records


# ---------------------------------------------------------------------------
# gradient check

def greedy_gradient_check(
    model: SeqModel,
    meta_tokens: Sequence[int],
    history_tokens: Sequence[int],
    weights: Sequence[float],
    n_samples: int = 120,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    loss = sequence_loss(model, meta_tokens, history_tokens, weights)
    model.zero_grad()
    loss.backward()
    params = [p for p in model.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    with torch.no_grad():
        for flat_idx in picks:
            pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            local = int(flat_idx - offsets[pi])
            p = params[pi]
            orig = float(p.view(-1)[local])
            analytic = float(p.grad.view(-1)[local]) if p.grad is not None else 0.0
            p.view(-1)[local] = orig + step
            up = float(sequence_loss(model, meta_tokens, history_tokens, weights))
            p.view(-1)[local] = orig - step
            down = float(sequence_loss(model, meta_tokens, history_tokens, weights))
            p.view(-1)[local] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(analytic), abs(fd), 1e-8)
            worst = max(worst, abs(analytic - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: SeqModel, path: str, extra: dict | None = None) -> None:
    """Flat binary: magic, version, config digest, JSON header, raw arrays.

    Every byte is a function of the weights and config (no timestamps), so
    identical runs write identical files.
    """
    arrays = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        a = tensor.detach().numpy()
        raw = a.astype(a.dtype.newbyteorder("<")).tobytes()
        arrays.append(
            {"name": name, "shape": list(a.shape), "dtype": str(a.dtype), "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(model.cfg),
        "arrays": arrays,
        "extra": extra or {},
    }
    header_raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(bytes.fromhex(model.cfg.digest()))
        f.write(struct.pack("<Q", len(header_raw)))
        f.write(header_raw)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str) -> tuple[SeqModel, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        digest = f.read(32).hex()
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len))
        cfg = ModelConfig(**header["config"])
        if cfg.digest() != digest:
            raise ValueError("checkpoint header digest mismatch")
        model = SeqModel(cfg)
        state = {}
        body = f.read()
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = spec["offset"]
        a = np.frombuffer(body, dtype=dt, count=count, offset=start).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(a.copy())
    model.load_state_dict(state)
    model.eval()
    return model, header["extra"]
