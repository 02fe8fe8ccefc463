"""The DreamNet architecture and its parameter store.

A narrative flows through a small transformer encoder into a
bidirectional LSTM whose final states form the text summary h_t. When a
physiological feature vector is present it is chunked into tokens,
encoded by a shared MLP, and fused into h_t by multi-head
cross-attention (queries from text, keys/values from physiology);
otherwise the fused state is h_t itself. Two sigmoid heads read the
fused state, and an extra linear head over encoder states serves
masked-token pretraining.

``variant`` selects ablated architectures: "no_lstm" replaces the LSTM
with a mean-pool plus linear map, and "no_xattn" replaces fusion with
concat + linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, InputError
from .tensor import Tensor
from .text import TokenSequence

VARIANTS = ("full", "no_lstm", "no_xattn")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads_text: int = 4
    max_len: int = 256
    lstm_hidden: int = 128
    mlp_dims: tuple = (256, 128)
    fusion_heads: int = 8
    fusion_d_k: int = 16
    n_emotions: int = 8
    n_themes: int = 12
    dropout: float = 0.1
    phys_tokens: int = 4
    feature_dim: int = 768
    variant: str = "full"
    # Embeddings are scaled by sqrt(d_model) in the encoder; the positional
    # table is scaled by pe_scale so position stays subordinate to content.
    pe_scale: float = 0.1
    # Positive forget-gate offset keeps early-sequence evidence alive in the
    # recurrent state at initialization.
    lstm_forget_bias: float = 2.5

    def __post_init__(self):
        if isinstance(self.mlp_dims, list):
            self.mlp_dims = tuple(self.mlp_dims)
        if self.d_model % self.n_heads_text != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads_text} heads")
        if self.lstm_hidden % 2 != 0:
            raise ConfigError("lstm_hidden must be even (two directions)")
        if self.fusion_heads * self.fusion_d_k != self.lstm_hidden:
            raise ConfigError(
                f"fusion_heads*fusion_d_k = {self.fusion_heads * self.fusion_d_k} "
                f"must equal the fused state width {self.lstm_hidden}")
        if self.mlp_dims[-1] != self.lstm_hidden:
            raise ConfigError("physiological token width must match the fused state width")
        if (self.n_emotions, self.n_themes) != (8, 12):
            raise ConfigError("label schema is fixed at 8 emotions and 12 themes")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.phys_tokens < 1:
            raise ConfigError("phys_tokens must be >= 1")

    @property
    def chunk_dim(self) -> int:
        return -(-self.feature_dim // self.phys_tokens)  # ceil division

    def to_header(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_header(cls, header: str) -> "ModelConfig":
        kv = {}
        for line in header.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name == "mlp_dims":
                kwargs[f.name] = tuple(int(x) for x in raw.split(","))
            elif f.name in ("dropout", "pe_scale", "lstm_forget_bias"):
                kwargs[f.name] = float(raw)
            elif f.name == "variant":
                kwargs[f.name] = raw
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


class ModelParams:
    """Insertion-ordered name -> Tensor store for all learnable weights."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    def tensors(self):
        return list(self._tensors.values())

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray], subset: bool = False):
        for name, t in self._tensors.items():
            if name not in state:
                if subset:
                    continue
                raise CheckpointError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"parameter {name!r}: shape {arr.shape} does not match {t.data.shape}")
            t.data = arr.copy()


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pe = np.zeros((max_len, d_model))
    pos = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: (d_model + 1) // 2])
    return pe


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for every weight and bias;
    layer-norm gains start at 1 and offsets at 0."""
    rng = np.random.default_rng(seed)
    params = ModelParams()

    def u(fan_in, *shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    d = cfg.d_model
    params.add("tok_emb", u(d, cfg.vocab_size, d))
    for i in range(cfg.n_layers):
        p = f"enc{i}."
        for name in ("wq", "wk", "wv", "wo"):
            params.add(p + name, u(d, d, d))
            if name != "wk":
                # a key bias shifts every key equally, which softmax ignores
                params.add(p + name[1] + "b", u(d, d))
        params.add(p + "ln1.g", np.ones(d))
        params.add(p + "ln1.b", np.zeros(d))
        ff = 4 * d
        params.add(p + "ff.w1", u(d, d, ff))
        params.add(p + "ff.b1", u(d, ff))
        params.add(p + "ff.w2", u(ff, ff, d))
        params.add(p + "ff.b2", u(ff, d))
        params.add(p + "ln2.g", np.ones(d))
        params.add(p + "ln2.b", np.zeros(d))

    h = cfg.lstm_hidden // 2
    if cfg.variant == "no_lstm":
        params.add("pool.w", u(d, d, cfg.lstm_hidden))
        params.add("pool.b", u(d, cfg.lstm_hidden))
    else:
        for direction in ("fw", "bw"):
            params.add(f"lstm.{direction}.w", u(d + h, 4 * h, d + h))
            bias = u(d + h, 4 * h)
            bias[h:2 * h] += cfg.lstm_forget_bias
            params.add(f"lstm.{direction}.b", bias)

    m1, m2 = cfg.mlp_dims
    c = cfg.chunk_dim
    params.add("phys.w1", u(c, c, m1))
    params.add("phys.b1", u(c, m1))
    params.add("phys.w2", u(m1, m1, m2))
    params.add("phys.b2", u(m1, m2))

    hh = cfg.lstm_hidden
    if cfg.variant == "no_xattn":
        params.add("fuse.w", u(2 * hh, 2 * hh, hh))
        params.add("fuse.b", u(2 * hh, hh))
    else:
        for name in ("wq", "wk", "wv", "wo"):
            params.add(f"xattn.{name}", u(hh, hh, hh))
        params.add("xattn.bo", u(hh, hh))

    params.add("emo.w", u(hh, hh, cfg.n_emotions))
    params.add("emo.b", u(hh, cfg.n_emotions))
    params.add("theme.w", u(hh, hh, cfg.n_themes))
    params.add("theme.b", u(hh, cfg.n_themes))
    params.add("mlm.w", u(d, d, cfg.vocab_size))
    params.add("mlm.b", u(d, cfg.vocab_size))
    return params


class DreamNet:
    """Configured model instance: weights plus the forward computations."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed)
        self._pe = cfg.pe_scale * sinusoidal_positions(cfg.max_len, cfg.d_model)
        self._emb_scale = math.sqrt(cfg.d_model)

    # -- text encoder -------------------------------------------------------

    def encode_text(self, seq: TokenSequence, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        """Encoder states for all max_len positions, PAD masked out of attention."""
        cfg, P = self.cfg, self.params
        ids = np.asarray(seq.ids)
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise InputError(f"token id out of range for vocab of {cfg.vocab_size}")
        x = T.add(T.scale(T.gather_rows(P["tok_emb"], seq.ids), self._emb_scale),
                  Tensor(self._pe))
        key_mask = None
        if seq.true_len < cfg.max_len:
            m = np.zeros(cfg.max_len)
            m[seq.true_len:] = -1e9
            key_mask = Tensor(m)
        dh = cfg.d_model // cfg.n_heads_text
        inv_sqrt = 1.0 / math.sqrt(dh)
        for i in range(cfg.n_layers):
            p = f"enc{i}."
            q = T.add(T.matmul(x, P[p + "wq"]), P[p + "qb"])
            k = T.matmul(x, P[p + "wk"])
            v = T.add(T.matmul(x, P[p + "wv"]), P[p + "vb"])
            heads = []
            for hidx in range(cfg.n_heads_text):
                s = hidx * dh
                qh = T.narrow(q, 1, s, dh)
                kh = T.narrow(k, 1, s, dh)
                vh = T.narrow(v, 1, s, dh)
                scores = T.scale(T.matmul(qh, T.transpose(kh)), inv_sqrt)
                if key_mask is not None:
                    scores = T.add(scores, key_mask)
                heads.append(T.matmul(T.softmax_rows(scores), vh))
            attn = T.add(T.matmul(T.concat(heads, axis=1), P[p + "wo"]), P[p + "ob"])
            if train and cfg.dropout > 0:
                attn = T.dropout(attn, cfg.dropout, rng)
            x = T.layer_norm_rows(T.add(x, attn), P[p + "ln1.g"], P[p + "ln1.b"])
            ff = T.add(T.matmul(T.relu(T.add(T.matmul(x, P[p + "ff.w1"]), P[p + "ff.b1"])),
                                P[p + "ff.w2"]), P[p + "ff.b2"])
            if train and cfg.dropout > 0:
                ff = T.dropout(ff, cfg.dropout, rng)
            x = T.layer_norm_rows(T.add(x, ff), P[p + "ln2.g"], P[p + "ln2.b"])
        return x

    # -- temporal summary ---------------------------------------------------

    def bilstm(self, h_x: Tensor, true_len: int) -> Tensor:
        """Final forward and backward LSTM states over the non-PAD prefix."""
        if true_len <= 0:
            raise InputError("bilstm: empty sequence")
        P = self.params
        prefix = T.narrow(h_x, 0, 0, true_len)
        fwd = T.lstm_direction(prefix, P["lstm.fw.w"], P["lstm.fw.b"])
        bwd = T.lstm_direction(prefix, P["lstm.bw.w"], P["lstm.bw.b"], reverse=True)
        return T.concat([fwd, bwd])

    def _pooled_text_state(self, h_x: Tensor, true_len: int) -> Tensor:
        pooled = T.mean_rows(T.narrow(h_x, 0, 0, true_len))
        return T.add(T.vecmat(pooled, self.params["pool.w"]), self.params["pool.b"])

    def text_state(self, h_x: Tensor, true_len: int) -> Tensor:
        if self.cfg.variant == "no_lstm":
            return self._pooled_text_state(h_x, true_len)
        return self.bilstm(h_x, true_len)

    # -- physiological encoder ----------------------------------------------

    def phys_encode(self, features) -> Tensor:
        """Shared two-layer MLP over contiguous feature chunks, one token per chunk."""
        cfg, P = self.cfg, self.params
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 1 or feats.size != cfg.feature_dim:
            raise ConfigError(
                f"feature vector of length {feats.size} does not match model feature_dim "
                f"{cfg.feature_dim}")
        c = cfg.chunk_dim
        padded = np.zeros(c * cfg.phys_tokens)
        padded[:feats.size] = feats
        tokens = []
        for k in range(cfg.phys_tokens):
            chunk = Tensor(padded[k * c:(k + 1) * c])
            hidden = T.relu(T.add(T.vecmat(chunk, P["phys.w1"]), P["phys.b1"]))
            tokens.append(T.add(T.vecmat(hidden, P["phys.w2"]), P["phys.b2"]))
        return T.stack_rows(tokens)

    # -- fusion ---------------------------------------------------------------

    def cross_attention(self, h_t: Tensor, h_p: Tensor,
                        return_weights: bool = False):
        """Multi-head attention with text query and physiological keys/values,
        output projection, and a residual connection to h_t."""
        cfg, P = self.cfg, self.params
        if h_t.data.shape != (cfg.lstm_hidden,) or h_p.data.ndim != 2 \
                or h_p.data.shape[1] != cfg.lstm_hidden:
            raise ConfigError(f"cross_attention: got h_t {h_t.data.shape}, h_p {h_p.data.shape}")
        dk = cfg.fusion_d_k
        inv_sqrt = 1.0 / math.sqrt(dk)
        q = T.vecmat(h_t, P["xattn.wq"])
        keys = T.matmul(h_p, P["xattn.wk"])
        vals = T.matmul(h_p, P["xattn.wv"])
        heads, weights = [], []
        for i in range(cfg.fusion_heads):
            s = i * dk
            qi = T.narrow(q, 0, s, dk)
            ki = T.narrow(keys, 1, s, dk)
            vi = T.narrow(vals, 1, s, dk)
            w = T.softmax_rows(T.scale(T.matvec(ki, qi), inv_sqrt))
            weights.append(w)
            heads.append(T.vecmat(w, vi))
        fused = T.add(T.add(T.vecmat(T.concat(heads), P["xattn.wo"]), P["xattn.bo"]), h_t)
        if return_weights:
            return fused, weights
        return fused

    def _concat_fusion(self, h_t: Tensor, h_p: Tensor) -> Tensor:
        joint = T.concat([h_t, T.mean_rows(h_p)])
        return T.add(T.vecmat(joint, self.params["fuse.w"]), self.params["fuse.b"])

    def fuse(self, h_t: Tensor, h_p: Tensor) -> Tensor:
        if self.cfg.variant == "no_xattn":
            return self._concat_fusion(h_t, h_p)
        return self.cross_attention(h_t, h_p)

    # -- heads ----------------------------------------------------------------

    def forward(self, seq: TokenSequence, features=None, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Emotion and theme probabilities for one narrative.

        ``features`` of None selects the text-only path (fused state is
        the text state), mirroring records without physiology.
        """
        cfg = self.cfg
        h_x = self.encode_text(seq, train=train, rng=rng)
        h_t = self.text_state(h_x, seq.true_len)
        if features is not None:
            h_f = self.fuse(h_t, self.phys_encode(features))
        else:
            h_f = h_t
        if train and cfg.dropout > 0:
            h_f = T.dropout(h_f, cfg.dropout, rng)
        e_hat = T.sigmoid(T.add(T.vecmat(h_f, self.params["emo.w"]), self.params["emo.b"]))
        s_hat = T.sigmoid(T.add(T.vecmat(h_f, self.params["theme.w"]), self.params["theme.b"]))
        return e_hat, s_hat

    def mlm_logits(self, h_x: Tensor) -> Tensor:
        """Per-position vocabulary logits."""
        return T.add(T.matmul(h_x, self.params["mlm.w"]), self.params["mlm.b"])

    def mlm_loss(self, h_x: Tensor, targets: list[tuple[int, int]],
                 reduction: str = "mean") -> Tensor:
        """Softmax cross-entropy at the masked positions only."""
        if not targets:
            raise InputError("mlm_loss: no masked positions")
        positions = [p for p, _ in targets]
        ids = [t for _, t in targets]
        rows = T.gather_rows(h_x, positions)
        logits = T.add(T.matmul(rows, self.params["mlm.w"]), self.params["mlm.b"])
        return T.cross_entropy_rows(logits, ids, reduction=reduction)

    # -- prediction and persistence --------------------------------------------

    def predict(self, seq: TokenSequence, features=None) -> np.ndarray:
        """Concatenated (emotions, themes) probabilities without graph recording."""
        with T.no_grad():
            e_hat, s_hat = self.forward(seq, features, train=False)
        return np.concatenate([e_hat.data, s_hat.data])

    def save(self, path) -> None:
        T.save_checkpoint(path, dict(self.params.items()), header=self.cfg.to_header())

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> "DreamNet":
        header, state = T.load_checkpoint(path)
        cfg = ModelConfig.from_header(header)
        if expect is not None and cfg != expect:
            raise CheckpointError(f"{path}: checkpoint config {cfg} does not match expected {expect}")
        model = cls(cfg, seed=0)
        model.params.load_state(state)
        return model
