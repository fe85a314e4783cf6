"""Self-cross attention over a pair of feature matrices.

Self-attention scores carry an additive term computed from heat-kernel
signature embeddings; cross-attention reads queries from one frame's
self-attended features and keys/values from the other frame's FFN-processed,
normalized features. Both frames share one parameter set.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ParameterStore, Tensor

SELF_ATTENTION_MODES = ("hks", "vanilla", "off")


def _register_linear(store, rng, name, n_in, n_out, bias=True):
    store.add(f"{name}.w", T.glorot_uniform(rng, n_in, n_out))
    if bias:
        store.add(f"{name}.b", np.zeros((1, n_out)))


def _register_layer_norm(store, name, width):
    store.add(f"{name}.g", np.ones((1, width)))
    store.add(f"{name}.b", np.zeros((1, width)))


class SelfCrossAttention:
    """One self-attention + one cross-attention block per side, joined per
    the residual structure: F_sc = LN(FFN(self + cross) + (self + cross))."""

    def __init__(self, store: ParameterStore, *, width: int, heads: int, head_dim: int,
                 mode: str = "hks", rng: np.random.Generator | None = None):
        if heads * head_dim != width:
            raise ValueError(f"heads ({heads}) x head_dim ({head_dim}) must equal "
                             f"the feature width ({width})")
        if mode not in SELF_ATTENTION_MODES:
            raise ValueError(f"self-attention mode must be one of {SELF_ATTENTION_MODES}")
        self.width = width
        self.heads = heads
        self.head_dim = head_dim
        self.mode = mode
        self.store = store
        if rng is not None:
            for i in range(heads):
                for role in ("q", "k", "v"):
                    _register_linear(store, rng, f"attn.self.{role}{i}", width, head_dim,
                                     bias=False)
                    _register_linear(store, rng, f"attn.cross.{role}{i}", width, head_dim,
                                     bias=False)
                for role in ("q", "k"):
                    _register_linear(store, rng, f"attn.hks.{role}{i}", width, head_dim,
                                     bias=False)
            _register_linear(store, rng, "attn.self.out", width, width, bias=False)
            _register_linear(store, rng, "attn.cross.out", width, width, bias=False)
            for ffn in ("attn.ffn1", "attn.ffn2"):
                _register_linear(store, rng, f"{ffn}.l1", width, width)
                _register_linear(store, rng, f"{ffn}.l2", width, width)
                _register_layer_norm(store, f"{ffn}.ln", width)
            for ln in ("attn.ln_feat", "attn.ln_hks", "attn.ln_kv", "attn.ln_out"):
                _register_layer_norm(store, ln, width)

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return T.layer_norm(x, self.store[f"{name}.g"], self.store[f"{name}.b"])

    def self_attention(self, feats: Tensor, hks_emb: Tensor | None) -> Tensor:
        """Multi-head self-attention with additive signature scores; inputs are
        expected row-normalized. Residual adds the input back."""
        inv_scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for i in range(self.heads):
            q = T.matmul(feats, self.store[f"attn.self.q{i}.w"])
            k = T.matmul(feats, self.store[f"attn.self.k{i}.w"])
            v = T.matmul(feats, self.store[f"attn.self.v{i}.w"])
            scores = T.smul(T.matmul(q, T.transpose(k)), inv_scale)
            if self.mode == "hks":
                if hks_emb is None:
                    raise ValueError("hks mode needs the signature embedding")
                hq = T.matmul(hks_emb, self.store[f"attn.hks.q{i}.w"])
                hk = T.matmul(hks_emb, self.store[f"attn.hks.k{i}.w"])
                scores = T.add(scores, T.smul(T.matmul(hq, T.transpose(hk)), inv_scale))
            outs.append(T.matmul(T.softmax_rows(scores), v))
        joined = T.matmul(T.concat(outs), self.store["attn.self.out.w"])
        return T.add(joined, feats)

    def ffn(self, feats: Tensor, which: str) -> Tensor:
        """Two linear layers with a normalization + ReLU between; residual output."""
        name = f"attn.{which}"
        h = T.add(T.matmul(feats, self.store[f"{name}.l1.w"]), self.store[f"{name}.l1.b"])
        h = T.relu(self._ln(h, f"{name}.ln"))
        h = T.add(T.matmul(h, self.store[f"{name}.l2.w"]), self.store[f"{name}.l2.b"])
        return T.add(h, feats)

    def cross_attention(self, queries_from: Tensor, kv_from: Tensor) -> Tensor:
        """Multi-head cross attention; no residual here (it lives in the block sum)."""
        inv_scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for i in range(self.heads):
            q = T.matmul(queries_from, self.store[f"attn.cross.q{i}.w"])
            k = T.matmul(kv_from, self.store[f"attn.cross.k{i}.w"])
            v = T.matmul(kv_from, self.store[f"attn.cross.v{i}.w"])
            scores = T.smul(T.matmul(q, T.transpose(k)), inv_scale)
            outs.append(T.matmul(T.softmax_rows(scores), v))
        return T.matmul(T.concat(outs), self.store["attn.cross.out.w"])

    def _self_branch(self, feats_n: Tensor, hks_n: Tensor | None) -> Tensor:
        if self.mode == "off":
            return feats_n
        return self.self_attention(feats_n, hks_n)

    def __call__(self, f_x: Tensor, f_y: Tensor,
                 h_x: Tensor | None, h_y: Tensor | None) -> tuple[Tensor, Tensor]:
        """Joint embedding for both frames; swapping the frames swaps the outputs."""
        fx_n = self._ln(f_x, "attn.ln_feat")
        fy_n = self._ln(f_y, "attn.ln_feat")
        hx_n = self._ln(h_x, "attn.ln_hks") if (h_x is not None and self.mode == "hks") else None
        hy_n = self._ln(h_y, "attn.ln_hks") if (h_y is not None and self.mode == "hks") else None
        s_x = self._self_branch(fx_n, hx_n)
        s_y = self._self_branch(fy_n, hy_n)
        kv_x = self._ln(self.ffn(s_x, "ffn1"), "attn.ln_kv")
        kv_y = self._ln(self.ffn(s_y, "ffn1"), "attn.ln_kv")
        sc_x = T.add(s_x, self.cross_attention(s_x, kv_y))
        sc_y = T.add(s_y, self.cross_attention(s_y, kv_x))
        out_x = self._ln(self.ffn(sc_x, "ffn2"), "attn.ln_out")
        out_y = self._ln(self.ffn(sc_y, "ffn2"), "attn.ln_out")
        return out_x, out_y
