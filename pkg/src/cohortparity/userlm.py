"""User-token LSTM language model.

Every utterance becomes the sequence ``[<user>, <s>, w1, ..., wn, </s>]``
where ``<user>`` is a vocabulary entry of its own for the author. A
single-layer LSTM is trained on next-token cross-entropy with truncated
backpropagation through time, and the input-embedding row of each user token
serves as that user's vector representation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset
from .serialize import load_arrays, save_arrays
from .trainer import TrainingError

logger = logging.getLogger(__name__)

UNK, BOS, EOS = "<unk>", "<s>", "</s>"
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2


def user_token(user_id: str) -> str:
    return f"<user:{user_id}>"


@dataclass(frozen=True)
class Vocab:
    """Reserved ids 0-2, then word tokens (sorted), then user tokens (sorted)."""

    itos: tuple[str, ...]
    num_words: int

    def __post_init__(self):
        object.__setattr__(self, "_stoi", {s: i for i, s in enumerate(self.itos)})

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def stoi(self) -> dict[str, int]:
        return self._stoi  # type: ignore[attr-defined]

    @property
    def user_ids(self) -> list[str]:
        return [s[len("<user:"):-1] for s in self.itos[3 + self.num_words:]]

    def word_id(self, token: str) -> int:
        i = self.stoi.get(token, UNK_ID)
        return i if i < 3 + self.num_words else UNK_ID

    def user_id(self, user: str) -> int:
        try:
            return self.stoi[user_token(user)]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None

    def encode(self, tokens: Sequence[str], user: str) -> list[int]:
        return [self.user_id(user), BOS_ID, *(self.word_id(t) for t in tokens), EOS_ID]


def build_vocab(dataset: Dataset, min_count: int = 1) -> Vocab:
    if len(dataset) == 0:
        raise ValueError("cannot build a vocabulary from an empty dataset")
    counts: dict[str, int] = {}
    for ex in dataset.examples:
        for t in ex.text:
            counts[t] = counts.get(t, 0) + 1
    words = sorted(t for t, n in counts.items() if n >= min_count)
    users = sorted(dataset.user_ids)
    return Vocab((UNK, BOS, EOS, *words, *(user_token(u) for u in users)), len(words))


@dataclass(frozen=True)
class LMConfig:
    d_e: int = 32
    d_h: int = 64
    epochs: int = 15
    lr: float = 1.0
    bptt_len: int = 35
    batch_size: int = 4
    seed: int = 0
    clip: float = 5.0
    min_count: int = 1

    def validate(self) -> None:
        if min(self.d_e, self.d_h, self.bptt_len, self.batch_size) <= 0:
            raise ValueError("LM dimensions, bptt_len and batch_size must be positive")
        if self.epochs < 0 or self.lr <= 0 or self.clip <= 0:
            raise ValueError("epochs >= 0, lr > 0 and clip > 0 required")


PARAM_NAMES = ("E", "Wx", "Wh", "b", "Wo", "bo")


@dataclass
class LMModel:
    """Parameters: embeddings ``E`` (V x d_e), gate weights ``Wx`` (d_e x 4d_h),
    ``Wh`` (d_h x 4d_h), bias ``b`` (4d_h, gates ordered input/forget/candidate/
    output), output projection ``Wo`` (d_h x V) and ``bo`` (V)."""

    vocab: Vocab
    E: np.ndarray
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    seed: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def d_e(self) -> int:
        return self.E.shape[1]

    @property
    def d_h(self) -> int:
        return self.Wh.shape[0]

    def params(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "LMModel":
        return LMModel(self.vocab, *(p.copy() for p in self.params()), seed=self.seed,
                       history=list(self.history))


def init_lm(vocab: Vocab, d_e: int, d_h: int, seed: int) -> LMModel:
    rng = np.random.default_rng(seed)
    V = len(vocab)
    se, sh = 1.0 / math.sqrt(d_e), 1.0 / math.sqrt(d_h)
    E = rng.uniform(-se, se, (V, d_e))
    Wx = rng.uniform(-sh, sh, (d_e, 4 * d_h))
    Wh = rng.uniform(-sh, sh, (d_h, 4 * d_h))
    Wo = rng.uniform(-sh, sh, (d_h, V))
    b = np.zeros(4 * d_h)
    b[d_h:2 * d_h] = 1.0
    return LMModel(vocab, E, Wx, Wh, b, Wo, np.zeros(V), seed=seed)


# ---------------------------------------------------------------------------
# forward / backward over one chunk


def chunk_loss_and_grads(model: LMModel, inputs: np.ndarray, targets: np.ndarray,
                         h0: np.ndarray, c0: np.ndarray, need_grads: bool = True):
    """Mean cross-entropy over unmasked targets of a ``(B, T)`` chunk.

    ``targets < 0`` are masked. Returns ``(loss, n_tokens, grads, h_T, c_T)``;
    ``grads`` follows :data:`PARAM_NAMES` order and is ``None`` when not needed.
    """
    B, T = inputs.shape
    H = model.d_h
    h, c = h0, c0
    xs, hs_prev, cs_prev, gates_all, tanh_all = [], [], [], [], []
    hs = np.empty((B, T, H))
    for t in range(T):
        x = model.E[inputs[:, t]]
        z = x @ model.Wx + h @ model.Wh + model.b
        gates, c_new, h_new, tanh_c = kernels.lstm_pointwise_forward(z, c)
        if need_grads:
            xs.append(x)
            hs_prev.append(h)
            cs_prev.append(c)
            gates_all.append(gates)
            tanh_all.append(tanh_c)
        h, c = h_new, c_new
        hs[:, t] = h
    flat_h = hs.reshape(B * T, H)
    flat_t = targets.reshape(B * T).astype(np.int64)
    logits = flat_h @ model.Wo + model.bo
    probs, losses = kernels.softmax_xent(logits, flat_t)
    n = int((flat_t >= 0).sum())
    if n == 0:
        return 0.0, 0, None, h, c
    loss = float(losses.sum() / n)
    if not need_grads:
        return loss, n, None, h, c

    live = flat_t >= 0
    dlogits = probs
    dlogits[~live] = 0.0
    rows = np.nonzero(live)[0]
    dlogits[rows, flat_t[rows]] -= 1.0
    dlogits /= n
    dWo = flat_h.T @ dlogits
    dbo = dlogits.sum(axis=0)
    dH = (dlogits @ model.Wo.T).reshape(B, T, H)

    dE = np.zeros_like(model.E)
    dWx = np.zeros_like(model.Wx)
    dWh = np.zeros_like(model.Wh)
    db = np.zeros_like(model.b)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dH[:, t] + dh_next
        dz, dc_next = kernels.lstm_pointwise_backward(
            gates_all[t], cs_prev[t], tanh_all[t], dh, dc_next)
        dWx += xs[t].T @ dz
        dWh += hs_prev[t].T @ dz
        db += dz.sum(axis=0)
        np.add.at(dE, inputs[:, t], dz @ model.Wx.T)
        dh_next = dz @ model.Wh.T
    return loss, n, [dE, dWx, dWh, db, dWo, dbo], h, c


def _pad(seqs: Sequence[Sequence[int]]):
    """Inputs/targets for next-token prediction, padded with masked targets."""
    T = max(len(s) for s in seqs) - 1
    inputs = np.full((len(seqs), T), EOS_ID, dtype=np.int64)
    targets = np.full((len(seqs), T), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        inputs[i, :len(s) - 1] = s[:-1]
        targets[i, :len(s) - 1] = s[1:]
    return inputs, targets


def sequence_loss_and_grads(model: LMModel, seqs: Sequence[Sequence[int]]):
    """Full-sequence (untruncated) mean loss and gradients; used by gradient checks."""
    inputs, targets = _pad(seqs)
    zeros = np.zeros((len(seqs), model.d_h))
    loss, _, grads, _, _ = chunk_loss_and_grads(model, inputs, targets, zeros, zeros.copy())
    return loss, grads


def encode_dataset(vocab: Vocab, dataset: Dataset) -> list[list[int]]:
    return [vocab.encode(ex.text, ex.user_id) for ex in dataset.examples]


# ---------------------------------------------------------------------------
# training


def train_lm(dataset: Dataset, config: LMConfig, vocab: Vocab | None = None) -> LMModel:
    """SGD with global-norm clipping; ``model.history`` holds per-epoch mean loss."""
    config.validate()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    vocab = vocab if vocab is not None else build_vocab(dataset, config.min_count)
    model = init_lm(vocab, config.d_e, config.d_h, config.seed)
    seqs = encode_dataset(vocab, dataset)
    rng = np.random.default_rng(config.seed)
    params = model.params()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        order = rng.permutation(len(seqs))
        for bi, start in enumerate(range(0, len(seqs), config.batch_size)):
            inputs, targets = _pad([seqs[i] for i in order[start:start + config.batch_size]])
            B, T = inputs.shape
            h = np.zeros((B, config.d_h))
            c = np.zeros((B, config.d_h))
            for t0 in range(0, T, config.bptt_len):
                sl = slice(t0, t0 + config.bptt_len)
                loss, n, grads, h, c = chunk_loss_and_grads(
                    model, inputs[:, sl], targets[:, sl], h, c)
                if n == 0:
                    continue
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite LM loss at epoch {epoch}, batch {bi}")
                norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
                if not math.isfinite(norm):
                    raise TrainingError(f"non-finite LM gradient at epoch {epoch}, batch {bi}")
                scale = config.lr * (min(1.0, config.clip / norm) if norm > 0 else 1.0)
                for p, g in zip(params, grads):
                    p -= scale * g
                total += loss * n
                count += n
        model.history.append(total / count)
        logger.info("lm epoch %d loss %.4f", epoch, model.history[-1])
    return model


def perplexity(model: LMModel, dataset: Dataset, batch_size: int = 256) -> float:
    """``exp`` of the mean next-token cross-entropy; unknown users map to ``<unk>``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    v = model.vocab
    seqs = []
    for ex in dataset.examples:
        u = v.stoi.get(user_token(ex.user_id), UNK_ID)
        seqs.append([u, BOS_ID, *(v.word_id(t) for t in ex.text), EOS_ID])
    total, count = 0.0, 0
    for start in range(0, len(seqs), batch_size):
        inputs, targets = _pad(seqs[start:start + batch_size])
        zeros = np.zeros((len(inputs), model.d_h))
        loss, n, _, _, _ = chunk_loss_and_grads(model, inputs, targets, zeros, zeros.copy(),
                                                need_grads=False)
        total += loss * n
        count += n
    return math.exp(total / count)


# ---------------------------------------------------------------------------
# embeddings


@dataclass(frozen=True)
class UserEmbedding:
    user_id: str
    vector: np.ndarray


def user_embedding(model: LMModel, user_id: str) -> UserEmbedding:
    return UserEmbedding(user_id, model.E[model.vocab.user_id(user_id)].copy())


def user_embeddings(model: LMModel) -> list[UserEmbedding]:
    return [user_embedding(model, u) for u in model.vocab.user_ids]


def write_embeddings(embeddings: Sequence[UserEmbedding], path: str | Path) -> None:
    """Text format: ``"N d"`` header, then ``user_id v1 ... vd`` per line."""
    d = len(embeddings[0].vector) if embeddings else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(embeddings)} {d}\n")
        for e in embeddings:
            if len(e.vector) != d:
                raise ValueError("embeddings differ in dimension")
            fh.write(e.user_id + " " + " ".join(repr(float(x)) for x in e.vector) + "\n")


def read_embeddings(path: str | Path) -> list[UserEmbedding]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header")
        n, d = int(header[0]), int(header[1])
        out = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
            out.append(UserEmbedding(parts[0], np.array([float(x) for x in parts[1:]])))
    if len(out) != n:
        raise ValueError(f"{path}: header says {n} rows, found {len(out)}")
    return out


def save_lm(model: LMModel, path: str | Path) -> None:
    meta = {"kind": "userlm", "itos": list(model.vocab.itos), "num_words": model.vocab.num_words,
            "seed": model.seed, "history": model.history}
    save_arrays(path, dict(zip(PARAM_NAMES, model.params())), meta)


def load_lm(path: str | Path) -> LMModel:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "userlm":
        raise ValueError(f"{path}: not a user-LM checkpoint")
    vocab = Vocab(tuple(meta["itos"]), meta["num_words"])
    return LMModel(vocab, *(arrays[n] for n in PARAM_NAMES), seed=meta["seed"],
                   history=list(meta["history"]))
