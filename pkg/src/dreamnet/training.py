"""Two-phase training: masked-token pretraining, then fine-tuning of the
joint emotion/theme objective with Adam, decoupled weight decay, and
early stopping on validation loss.

The fine-tuning objective per sample is
lambda_e * sum_j BCE(e_hat_j, e_j) + lambda_s * sum_k BCE(s_hat_k, s_k),
averaged over the batch; probabilities are clamped away from 0 and 1 so
the loss stays finite.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InputError, NumericalError
from .model import DreamNet
from .tensor import Tensor
from .text import Vocab, mask_tokens, tokenize


@dataclass
class TrainConfig:
    pre_epochs: int = 25
    pre_lr: float = 1e-5
    ft_epochs: int = 15
    ft_lr: float = 2e-5
    batch_size: int = 8
    lambda_e: float = 1.0
    lambda_s: float = 1.0
    dropout: float = 0.1
    weight_decay: float = 0.01
    mask_rate: float = 0.15
    patience: int | None = 3
    prob_clamp: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.lambda_e < 0 or self.lambda_s < 0:
            raise InputError("loss weights must be nonnegative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise InputError(f"mask_rate {self.mask_rate} outside [0, 1]")
        if not 0.0 < self.prob_clamp < 0.5:
            raise InputError(f"prob_clamp {self.prob_clamp} outside (0, 0.5)")


class AdamState:
    """Per-parameter first/second moment estimates plus a step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(named_params, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """One Adam update with bias correction; weight decay is decoupled
    (applied directly to the parameter, not mixed into the moments)."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if weight_decay:
            p.data -= lr * weight_decay * p.data


def bce(p, y, eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy with the probability clamped to [eps, 1-eps].

    ``p`` may be a scalar or vector tensor (or plain value); ``y`` is a
    matching 0/1 array. Elementwise output with the same shape as ``p``.
    """
    p = p if isinstance(p, Tensor) else Tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.data.shape:
        raise InputError(f"bce: prediction shape {p.data.shape} vs label shape {y.shape}")
    clamped = T.clamp(p, eps, 1.0 - eps)
    one_minus = T.add(T.scale(clamped, -1.0), Tensor(1.0))
    terms = T.add(T.mul(T.log(clamped), Tensor(y)),
                  T.mul(T.log(one_minus), Tensor(1.0 - y)))
    return T.scale(terms, -1.0)


def total_loss(e_hats, s_hats, e_labels, s_labels, lambda_e: float = 1.0,
               lambda_s: float = 1.0, eps: float = 1e-7) -> Tensor:
    """Weighted emotion + theme BCE, averaged over the batch.

    Accepts a single sample (tensors of shape (8,) and (12,)) or lists
    of per-sample tensors and label arrays.
    """
    if isinstance(e_hats, Tensor):
        e_hats, s_hats = [e_hats], [s_hats]
        e_labels, s_labels = [e_labels], [s_labels]
    if len(e_hats) == 0:
        raise InputError("total_loss: empty batch")
    per_sample = []
    for e_hat, s_hat, e_lab, s_lab in zip(e_hats, s_hats, e_labels, s_labels):
        if e_hat.data.shape != (8,) or s_hat.data.shape != (12,):
            raise InputError(f"total_loss: expected (8,) and (12,), got "
                             f"{e_hat.data.shape} and {s_hat.data.shape}")
        term = T.add(T.scale(T.sum_all(bce(e_hat, e_lab, eps)), lambda_e),
                     T.scale(T.sum_all(bce(s_hat, s_lab, eps)), lambda_s))
        per_sample.append(term)
    return T.scale(T.add_n(per_sample), 1.0 / len(per_sample))


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss during {context}: {value}")


def pretrain(corpus: list[str], vocab: Vocab, model: DreamNet,
             cfg: TrainConfig) -> list[float]:
    """Masked-token pretraining; returns one mean loss per epoch."""
    if not corpus:
        raise InputError("pretrain: empty corpus")
    if cfg.mask_rate <= 0.0:
        raise InputError("pretrain: mask_rate of 0 yields no prediction targets")
    rng = np.random.default_rng(cfg.seed)
    seqs = [tokenize(text, vocab, model.cfg.max_len) for text in corpus]
    state = AdamState()
    history = []
    for _ in range(cfg.pre_epochs):
        order = rng.permutation(len(seqs))
        loss_sum = 0.0
        n_positions = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            losses = []
            count = 0
            for idx in batch:
                masked, targets = mask_tokens(seqs[idx], cfg.mask_rate, rng)
                if not targets:
                    continue
                h_x = model.encode_text(masked, train=True, rng=rng)
                losses.append(model.mlm_loss(h_x, targets, reduction="sum"))
                count += len(targets)
            if not losses:
                continue
            loss = T.scale(T.add_n(losses), 1.0 / count)
            _check_finite(loss.item(), "pretraining")
            T.backward(loss)
            adam_step(model.params.items(), state, cfg.pre_lr, cfg.weight_decay)
            loss_sum += loss.item() * count
            n_positions += count
        history.append(loss_sum / max(1, n_positions))
    return history


def _epoch_loss(model, samples, cfg) -> float:
    with T.no_grad():
        total = 0.0
        for seq, feats, e_lab, s_lab in samples:
            e_hat, s_hat = model.forward(seq, feats, train=False)
            total += total_loss(e_hat, s_hat, e_lab, s_lab,
                                cfg.lambda_e, cfg.lambda_s, cfg.prob_clamp).item()
    return total / len(samples)


def prepare_samples(records, vocab: Vocab, max_len: int, features=None):
    """Tokenize records and attach per-record feature vectors (or None)."""
    features = features or {}
    out = []
    for rec in records:
        seq = tokenize(rec.text, vocab, max_len)
        out.append((seq, features.get(rec.id), np.asarray(rec.emotions, dtype=float),
                    np.asarray(rec.themes, dtype=float)))
    return out


def finetune(train_records, val_records, model: DreamNet, vocab: Vocab,
             cfg: TrainConfig, features=None) -> tuple[list[float], list[float]]:
    """Joint-objective fine-tuning with early stopping.

    Records with a feature vector take the multimodal path; the rest run
    text-only. Validation loss is computed each epoch with dropout off;
    training stops once it fails to improve for ``patience`` epochs and
    the best-validation parameters are restored.
    """
    if not train_records or not val_records:
        raise InputError("finetune: empty split")
    rng = np.random.default_rng(cfg.seed)
    train_samples = prepare_samples(train_records, vocab, model.cfg.max_len, features)
    val_samples = prepare_samples(val_records, vocab, model.cfg.max_len, features)
    state = AdamState()
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_state = None
    bad_epochs = 0
    for _ in range(cfg.ft_epochs):
        order = rng.permutation(len(train_samples))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            e_hats, s_hats, e_labs, s_labs = [], [], [], []
            for seq, feats, e_lab, s_lab in batch:
                e_hat, s_hat = model.forward(seq, feats, train=True, rng=rng)
                e_hats.append(e_hat)
                s_hats.append(s_hat)
                e_labs.append(e_lab)
                s_labs.append(s_lab)
            loss = total_loss(e_hats, s_hats, e_labs, s_labs,
                              cfg.lambda_e, cfg.lambda_s, cfg.prob_clamp)
            _check_finite(loss.item(), "fine-tuning")
            T.backward(loss)
            adam_step(model.params.items(), state, cfg.ft_lr, cfg.weight_decay)
            loss_sum += loss.item() * len(batch)
        train_hist.append(loss_sum / len(train_samples))
        val = _epoch_loss(model, val_samples, cfg)
        val_hist.append(val)
        if val < best_val:
            best_val = val
            best_state = model.params.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if cfg.patience is not None and bad_epochs >= cfg.patience:
                break
    if best_state is not None:
        model.params.load_state(best_state)
    return train_hist, val_hist


def write_loss_csv(path, train_hist, val_hist=None) -> None:
    """Loss curves as ``epoch,train_loss,val_loss`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, tr in enumerate(train_hist, start=1):
            val = "" if val_hist is None or i > len(val_hist) else f"{val_hist[i - 1]:.6f}"
            writer.writerow([i, f"{tr:.6f}", val])
