"""Deterministic miniature transformer denoiser for desk-scale verification.

The denoiser maps a (C, h, w) latent plus a timestep and a conditioning
sequence to a predicted noise tensor of the same shape. Architecture: the
h*w latent pixels become M tokens through a linear embedding plus learned
positions plus a sinusoidal timestep embedding, followed by B pre-layer-norm
transformer blocks (self-attention, cross-attention, SiLU feed-forward, all
with residuals) and a final layer norm with a linear projection back to C
channels.

Every learnable tensor is drawn from the documented splitmix64 stream of
``weight_seed`` in a fixed order (embedding, positions, then per block the
self qkv/o, cross qkv/o and feed-forward matrices, then the output head),
uniform in +-1/sqrt(fan_in); biases start at zero and layer-norm gains at
one. Identical seeds therefore give bit-identical weights everywhere.

Parameter count at config (C, D, M, B) is

    P = 2*C*D + 3*D + M*D + B * (16*D^2 + 19*D) + C

(59,524 at the defaults C=4, D=32, M=256, B=3), which the tests check
against the arrays actually allocated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .attention import AttnProbMap, attention_with_probs, sigmoid
from .errors import ConfigurationError
from .rng import SplitMix64, fnv1a64

LN_EPS = 1e-5

# Labeled demo prompts; anything else hashes through fnv1a64.
PROMPT_REGISTRY = {
    "a cat": 1101,
    "a glass bottle": 2201,
    "a campfire": 3303,
    "a table": 4404,
    "a forest": 5505,
    "a beach, night time": 6606,
}


@dataclass(frozen=True)
class ToyDenoiserConfig:
    latent_channels: int = 4
    latent_size: tuple[int, int] = (16, 16)
    model_dim: int = 32
    heads: int = 4
    blocks: int = 3
    text_len: int = 8
    weight_seed: int = 0

    def __post_init__(self):
        dims = (self.latent_channels, *self.latent_size, self.model_dim, self.heads,
                self.blocks, self.text_len)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"all dimensions must be positive: {self}")
        if self.model_dim % self.heads != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )

    @property
    def tokens(self) -> int:
        h, w = self.latent_size
        return h * w


@dataclass(frozen=True)
class ToyConditioning:
    """Seeded stand-in for an encoded prompt: (T, D) tokens plus EOS slot."""

    tokens: np.ndarray
    eos_index: int
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.eos_index < self.tokens.shape[0]:
            raise ValueError(
                f"eos_index {self.eos_index} out of range for {self.tokens.shape[0]} tokens"
            )


def prompt_seed(prompt: str) -> int:
    return PROMPT_REGISTRY.get(prompt, fnv1a64(prompt))


def conditioning_from_prompt(
    prompt: str, cfg: ToyDenoiserConfig, eos_index: Optional[int] = None
) -> ToyConditioning:
    """Deterministic token embeddings for a prompt string.

    The registry maps the prompt to a seed (FNV-1a hash as fallback); token
    embeddings are standard normals from that seed. EOS defaults to the
    last slot.
    """
    stream = SplitMix64(prompt_seed(prompt))
    tokens = stream.normal(cfg.text_len * cfg.model_dim).astype(np.float32)
    tokens = tokens.reshape(cfg.text_len, cfg.model_dim)
    eos = cfg.text_len - 1 if eos_index is None else eos_index
    return ToyConditioning(tokens=tokens, eos_index=eos, label=prompt)


def null_conditioning(cfg: ToyDenoiserConfig) -> ToyConditioning:
    """All-zero conditioning for the unconditional guidance branch."""
    tokens = np.zeros((cfg.text_len, cfg.model_dim), dtype=np.float32)
    return ToyConditioning(tokens=tokens, eos_index=cfg.text_len - 1, label="<null>")


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + np.float32(LN_EPS)) * gain + bias


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features of the raw sampler time, DDPM-style frequencies."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(np.float32)


class ToyDenoiser:
    """Noise predictor with per-layer attention capture and hook points.

    Layer ids are ``block{i}.self`` and ``block{i}.cross``; the designated
    structure-prior capture layer is the last block's self-attention and can
    be repointed at any self-attention layer id.
    """

    def __init__(self, cfg: ToyDenoiserConfig):
        self.cfg = cfg
        self.params = self._init_params(cfg)
        self.capture_layer_id = f"block{cfg.blocks - 1}.self"

    @staticmethod
    def _init_params(cfg: ToyDenoiserConfig) -> dict[str, np.ndarray]:
        stream = SplitMix64(cfg.weight_seed)
        c, d, m = cfg.latent_channels, cfg.model_dim, cfg.tokens
        ff = 4 * d

        def draw(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
            bound = 1.0 / np.sqrt(fan_in)
            n = int(np.prod(shape))
            return stream.uniform(n, -bound, bound).astype(np.float32).reshape(shape)

        p: dict[str, np.ndarray] = {}
        p["embed.w"] = draw(c, (c, d))
        p["embed.b"] = np.zeros(d, dtype=np.float32)
        p["embed.pos"] = stream.uniform(m * d, -0.1, 0.1).astype(np.float32).reshape(m, d)
        for i in range(cfg.blocks):
            for stage, prefix in (("self", f"block{i}.self"), ("cross", f"block{i}.cross")):
                for name in ("wq", "wk", "wv", "wo"):
                    p[f"{prefix}.{name}"] = draw(d, (d, d))
                for name in ("bq", "bk", "bv", "bo"):
                    p[f"{prefix}.{name}"] = np.zeros(d, dtype=np.float32)
            p[f"block{i}.ff.w1"] = draw(d, (d, ff))
            p[f"block{i}.ff.b1"] = np.zeros(ff, dtype=np.float32)
            p[f"block{i}.ff.w2"] = draw(ff, (ff, d))
            p[f"block{i}.ff.b2"] = np.zeros(d, dtype=np.float32)
            for ln in ("ln1", "ln2", "ln3"):
                p[f"block{i}.{ln}.g"] = np.ones(d, dtype=np.float32)
                p[f"block{i}.{ln}.b"] = np.zeros(d, dtype=np.float32)
        p["out.ln.g"] = np.ones(d, dtype=np.float32)
        p["out.ln.b"] = np.zeros(d, dtype=np.float32)
        p["out.w"] = draw(d, (d, c))
        p["out.b"] = np.zeros(c, dtype=np.float32)
        return p

    # --- introspection -------------------------------------------------

    def param_count(self) -> int:
        return sum(arr.size for arr in self.params.values())

    @staticmethod
    def expected_param_count(cfg: ToyDenoiserConfig) -> int:
        c, d, m, b = cfg.latent_channels, cfg.model_dim, cfg.tokens, cfg.blocks
        return 2 * c * d + 3 * d + m * d + b * (16 * d * d + 19 * d) + c

    def weight_checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].tobytes())
        return digest.hexdigest()

    def layer_ids(self) -> list[str]:
        out = []
        for i in range(self.cfg.blocks):
            out += [f"block{i}.self", f"block{i}.cross"]
        return out

    def set_capture_layer(self, layer_id: str) -> None:
        if layer_id not in self.layer_ids() or not layer_id.endswith(".self"):
            raise ConfigurationError(
                f"capture layer must be a self-attention layer id, got '{layer_id}'"
            )
        self.capture_layer_id = layer_id

    # --- building blocks (the joint pipeline calls these directly) -----

    def _ln(self, prefix: str) -> Callable[[np.ndarray], np.ndarray]:
        g, b = self.params[f"{prefix}.g"], self.params[f"{prefix}.b"]
        return lambda x: layer_norm(x, g, b)

    def self_norm(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        return self._ln(f"block{i}.ln1")

    def cross_norm(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        return self._ln(f"block{i}.ln2")

    def ff_norm(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        return self._ln(f"block{i}.ln3")

    def _attend(self, prefix: str) -> Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, AttnProbMap]]:
        p = self.params
        wq, bq = p[f"{prefix}.wq"], p[f"{prefix}.bq"]
        wk, bk = p[f"{prefix}.wk"], p[f"{prefix}.bk"]
        wv, bv = p[f"{prefix}.wv"], p[f"{prefix}.bv"]
        wo, bo = p[f"{prefix}.wo"], p[f"{prefix}.bo"]
        heads = self.cfg.heads

        def attend(q_in: np.ndarray, kv_in: np.ndarray) -> tuple[np.ndarray, AttnProbMap]:
            out, probs = attention_with_probs(
                q_in @ wq + bq, kv_in @ wk + bk, kv_in @ wv + bv, heads
            )
            return out @ wo + bo, probs

        return attend

    def self_attend(self, i: int):
        return self._attend(f"block{i}.self")

    def cross_attend(self, i: int):
        return self._attend(f"block{i}.cross")

    def ff(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        p = self.params
        w1, b1 = p[f"block{i}.ff.w1"], p[f"block{i}.ff.b1"]
        w2, b2 = p[f"block{i}.ff.w2"], p[f"block{i}.ff.b2"]

        def feed_forward(xn: np.ndarray) -> np.ndarray:
            h = xn @ w1 + b1
            return (h * sigmoid(h)) @ w2 + b2

        return feed_forward

    def embed(self, z: np.ndarray, t: float) -> np.ndarray:
        c, (h, w) = self.cfg.latent_channels, self.cfg.latent_size
        if z.shape != (c, h, w):
            raise ValueError(f"latent shape {z.shape} != {(c, h, w)}")
        tokens = z.reshape(c, h * w).T
        x = tokens @ self.params["embed.w"] + self.params["embed.b"]
        return x + self.params["embed.pos"] + timestep_embedding(t, self.cfg.model_dim)[None, :]

    def project_out(self, x: np.ndarray) -> np.ndarray:
        c, (h, w) = self.cfg.latent_channels, self.cfg.latent_size
        xn = layer_norm(x, self.params["out.ln.g"], self.params["out.ln.b"])
        eps = xn @ self.params["out.w"] + self.params["out.b"]
        return eps.T.reshape(c, h, w)

    # --- standard forward ----------------------------------------------

    def forward(
        self,
        z: np.ndarray,
        t: float,
        cond: ToyConditioning,
        capture: Optional[Iterable[str]] = None,
    ) -> tuple[np.ndarray, dict[str, AttnProbMap]]:
        """Full single-stream forward; optionally captures attention maps.

        ``capture`` is a set of layer ids whose post-softmax probability
        maps are returned. Composed of exactly the same sublayer callables
        the multi-stream executor uses, so a hook-free joint run is
        bit-identical to this path.
        """
        wanted = set(capture) if capture else set()
        unknown = wanted - set(self.layer_ids())
        if unknown:
            raise ConfigurationError(f"unknown capture layers: {sorted(unknown)}")
        captured: dict[str, AttnProbMap] = {}
        x = self.embed(z, t)
        for i in range(self.cfg.blocks):
            xn = self.self_norm(i)(x)
            a, probs = self.self_attend(i)(xn, xn)
            if f"block{i}.self" in wanted:
                captured[f"block{i}.self"] = probs
            x = x + a
            xn = self.cross_norm(i)(x)
            a, probs = self.cross_attend(i)(xn, cond.tokens)
            if f"block{i}.cross" in wanted:
                captured[f"block{i}.cross"] = probs
            x = x + a
            x = x + self.ff(i)(self.ff_norm(i)(x))
        return self.project_out(x), captured


def build_denoiser(cfg: ToyDenoiserConfig) -> ToyDenoiser:
    """Construct a denoiser with seeded weights (see module docstring)."""
    return ToyDenoiser(cfg)
