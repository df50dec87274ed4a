"""Network: per-modality embeddings, embedding fusion, shared two-stream
transformer encoders, and projection heads.

Temporal tokens are frames (frames x n_joints*n_channels), spatial tokens
are joints (n_joints x frames*n_channels). Each modality has its own
embedding MLP per stream; a learned positional table per stream is shared
across modalities. The encoders are shared by every modality and by the
fused path within a stream, so encoder parameter count is independent of
how many modalities are enabled. Projection heads (one per modality plus
one multimodal head, per stream) share structure but never parameters.

The unified inference feature is concat(fused_temporal, fused_spatial),
width 2*embed_dim; per-modality global features use the same
(temporal, spatial) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import nn
from .errors import NumericalError, SchemaError
from .modalities import MODALITIES, ModalityBundle, stack_bundles

STREAMS = ("t", "s")
MULTI_HEAD = "multi"
GLOBAL_SPACE = "g"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; desk-scale defaults."""

    embed_dim: int = 64
    n_layers: int = 1
    n_heads: int = 1
    ffn_mult: int = 4
    frames: int = 16
    n_joints: int = 11
    n_channels: int = 3
    modalities: tuple[str, ...] = MODALITIES
    fusion_mode: str = "average"
    projector_hidden_mult: int = 1
    global_heads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if not self.modalities or not set(self.modalities) <= set(MODALITIES):
            raise ValueError(f"modalities must be a nonempty subset of {MODALITIES}")
        if self.fusion_mode not in ("average", "linear"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """The NTU-sized configuration: 64 frames, 25 joints, width 1024."""
        base = dict(embed_dim=1024, n_layers=1, n_heads=1, frames=64, n_joints=25)
        base.update(overrides)
        return cls(**base)

    def token_shape(self, stream: str) -> tuple[int, int]:
        if stream == "t":
            return self.frames, self.n_joints * self.n_channels
        if stream == "s":
            return self.n_joints, self.frames * self.n_channels
        raise ValueError(f"unknown stream {stream!r}")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "ffn_mult": self.ffn_mult,
            "frames": self.frames,
            "n_joints": self.n_joints,
            "n_channels": self.n_channels,
            "modalities": list(self.modalities),
            "fusion_mode": self.fusion_mode,
            "projector_hidden_mult": self.projector_hidden_mult,
            "global_heads": self.global_heads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["modalities"] = tuple(d.get("modalities", MODALITIES))
        return cls(**d)


@dataclass
class RepresentationSet:
    """Pooled encoder outputs for one batch.

    per_modality[stream][modality] and fused[stream] are (B, embed_dim)
    arrays; unified() is the inference feature of width 2*embed_dim.
    """

    per_modality: dict[str, dict[str, np.ndarray]]
    fused: dict[str, np.ndarray]

    def unified(self) -> np.ndarray:
        return np.concatenate([self.fused["t"], self.fused["s"]], axis=-1)

    def global_feature(self, modality: str) -> np.ndarray:
        return np.concatenate(
            [self.per_modality["t"][modality], self.per_modality["s"][modality]],
            axis=-1,
        )


@dataclass
class ProjectedFeatures:
    """All projector outputs for one batch, grouped by projection space.

    Spaces are "t"/"s" (per-stream training) or "g" (global-feature
    training). Per space: `uni[k]` projects modality k's own features,
    `dec[k]` applies the same modality head to the fused-path features,
    `comp` is the multimodal head on the averaged unimodal features, and
    `fused` is the multimodal head on the fused-path features.
    """

    uni: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    dec: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    comp: dict[str, np.ndarray] = field(default_factory=dict)
    fused: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def spaces(self) -> tuple[str, ...]:
        return tuple(self.comp)

    @property
    def modalities(self) -> tuple[str, ...]:
        first = next(iter(self.uni.values()))
        return tuple(first)

    @property
    def n_samples(self) -> int:
        return next(iter(self.comp.values())).shape[0]

    def matrices(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every feature matrix with a stable dotted name."""
        for sp in self.spaces:
            for k in self.uni[sp]:
                yield f"uni.{sp}.{k}", self.uni[sp][k]
            for k in self.dec[sp]:
                yield f"dec.{sp}.{k}", self.dec[sp][k]
            yield f"comp.{sp}", self.comp[sp]
            yield f"fused.{sp}", self.fused[sp]

    def zeros_like(self) -> "ProjectedFeatures":
        return ProjectedFeatures(
            uni={sp: {k: np.zeros_like(a) for k, a in d.items()} for sp, d in self.uni.items()},
            dec={sp: {k: np.zeros_like(a) for k, a in d.items()} for sp, d in self.dec.items()},
            comp={sp: np.zeros_like(a) for sp, a in self.comp.items()},
            fused={sp: np.zeros_like(a) for sp, a in self.fused.items()},
        )


def _mean_exact(arrays: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean accumulated in float64 so averaging identical
    float32 arrays is exactly idempotent."""
    out = np.mean(arrays, axis=0, dtype=np.float64)
    return out.astype(arrays[0].dtype)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    return x, False


class Model:
    """The trainable network; parameters live in a flat name->array dict."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        d = cfg.embed_dim
        for k in cfg.modalities:
            for stream in STREAMS:
                _, din = cfg.token_shape(stream)
                nn.init_mlp2(self.params, f"embed.{k}.{stream}", din, d, d, rng, dtype)
        for stream in STREAMS:
            n_tokens, _ = cfg.token_shape(stream)
            self.params[f"pos.{stream}"] = rng.normal(0.0, 0.02, (n_tokens, d)).astype(dtype)
        if cfg.fusion_mode == "linear":
            for stream in STREAMS:
                nn.init_affine(
                    self.params, f"fuse.{stream}", len(cfg.modalities) * d, d, rng, dtype
                )
        for stream in STREAMS:
            for i in range(cfg.n_layers):
                nn.init_block(self.params, f"enc.{stream}.{i}", d, cfg.ffn_mult, rng, dtype)
        hidden = cfg.projector_hidden_mult * d
        for head in self.heads:
            for stream in STREAMS:
                nn.init_mlp2(self.params, f"proj.{head}.{stream}", d, hidden, d, rng, dtype)
            if cfg.global_heads:
                nn.init_mlp2(
                    self.params, f"proj.{head}.{GLOBAL_SPACE}", 2 * d, 2 * hidden, d, rng, dtype
                )

    # ------------------------------------------------------------------ ops

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(self.cfg.modalities) + (MULTI_HEAD,)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def encoder_parameter_count(self) -> int:
        return sum(p.size for n, p in self.params.items() if n.startswith("enc."))

    def copy(self) -> "Model":
        clone = Model.__new__(Model)
        clone.cfg = self.cfg
        clone.dtype = self.dtype
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def embed(self, x_view: np.ndarray, modality: str, stream: str) -> np.ndarray:
        """Tokenwise MLP into the embedding space plus the stream's positional table."""
        if modality not in self.cfg.modalities:
            raise SchemaError(f"unknown modality {modality!r}")
        x, single = _as_batch(np.asarray(x_view, dtype=self.dtype))
        expect = self.cfg.token_shape(stream)
        if x.shape[1:] != expect:
            raise SchemaError(f"{stream}-view shape {x.shape[1:]} != expected {expect}")
        out, _ = nn.mlp2_fwd(self.params, f"embed.{modality}.{stream}", x)
        out = out + self.params[f"pos.{stream}"]
        return out[0] if single else out

    def fuse(self, h_list: Sequence[np.ndarray], stream: str = "t",
             mode: str | None = None) -> np.ndarray:
        """Merge per-modality token embeddings (element mean or learned linear map)."""
        if len(h_list) == 0:
            raise SchemaError("cannot fuse an empty embedding list")
        shapes = {h.shape for h in h_list}
        if len(shapes) != 1:
            raise SchemaError(f"embedding shapes differ: {shapes}")
        mode = mode or self.cfg.fusion_mode
        if mode == "average":
            return _mean_exact(h_list)
        if mode == "linear":
            cat = np.concatenate(h_list, axis=-1)
            out, _ = nn.affine_fwd(self.params, f"fuse.{stream}", cat)
            return out
        raise ValueError(f"unknown fusion mode {mode!r}")

    def encode(self, h: np.ndarray, stream: str) -> np.ndarray:
        """Shared per-stream transformer stack, mean-pooled to one vector per sample."""
        x, single = _as_batch(np.asarray(h, dtype=self.dtype))
        if not np.isfinite(x).all():
            raise NumericalError(f"non-finite encoder input on stream {stream!r}")
        if x.shape[-1] != self.cfg.embed_dim:
            raise SchemaError(f"token width {x.shape[-1]} != embed_dim {self.cfg.embed_dim}")
        pooled, _ = nn.encoder_fwd(
            self.params, f"enc.{stream}", x, self.cfg.n_layers, self.cfg.n_heads
        )
        return pooled[0] if single else pooled

    def project(self, y: np.ndarray, head: str, stream: str) -> np.ndarray:
        """One projection head; heads share structure, never parameters."""
        name = f"proj.{head}.{stream}"
        if f"{name}.fc1.w" not in self.params:
            raise SchemaError(f"unknown projection head {head!r}/{stream!r}")
        x, single = _as_batch(np.asarray(y, dtype=self.dtype))
        out, _ = nn.mlp2_fwd(self.params, name, x)
        return out[0] if single else out

    # ------------------------------------------------- full training forward

    def _stacked_views(self, batch, modalities=None) -> dict[str, dict[str, np.ndarray]]:
        if isinstance(batch, dict):
            views = batch
        else:
            views = stack_bundles(list(batch))
        out: dict[str, dict[str, np.ndarray]] = {}
        for stream in STREAMS:
            out[stream] = {}
            for k in modalities or self.cfg.modalities:
                if k not in views[stream]:
                    raise SchemaError(f"batch is missing modality {k!r}")
                x = np.asarray(views[stream][k], dtype=self.dtype)
                expect = self.cfg.token_shape(stream)
                if x.ndim != 3 or x.shape[1:] != expect:
                    raise SchemaError(
                        f"{stream}-view of {k!r} has shape {x.shape}, expected (B,)+{expect}"
                    )
                out[stream][k] = x
        return out

    def _fuse_fwd(self, h: dict[str, np.ndarray], stream: str):
        mods = self.cfg.modalities
        if self.cfg.fusion_mode == "average":
            return _mean_exact([h[k] for k in mods]), None
        cat = np.concatenate([h[k] for k in mods], axis=-1)
        fused, _ = nn.affine_fwd(self.params, f"fuse.{stream}", cat)
        return fused, cat

    def _fuse_bwd(self, g: np.ndarray, stream: str, cache, grads: dict):
        mods = self.cfg.modalities
        if self.cfg.fusion_mode == "average":
            share = g / len(mods)
            return {k: share for k in mods}
        dcat = nn.affine_bwd(self.params, f"fuse.{stream}", g, cache, grads)
        d = self.cfg.embed_dim
        return {k: dcat[..., i * d:(i + 1) * d] for i, k in enumerate(mods)}

    def forward_batch(self, batch, loss_space: str = "stream", with_cache: bool = False):
        """Run the complete pretraining graph on a batch of modality bundles.

        Returns (RepresentationSet, ProjectedFeatures) and, with with_cache,
        the cache consumed by backward_batch.
        """
        views = self._stacked_views(batch)
        if next(iter(views["t"].values())).shape[0] == 0:
            raise SchemaError("empty batch")
        mods = self.cfg.modalities
        cache: dict = {"emb": {}, "enc": {}, "fuse": {}, "proj": {}}
        per_modality: dict[str, dict[str, np.ndarray]] = {}
        fused: dict[str, np.ndarray] = {}
        for stream in STREAMS:
            h = {}
            for k in mods:
                tok, c = nn.mlp2_fwd(self.params, f"embed.{k}.{stream}", views[stream][k])
                cache["emb"][(k, stream)] = c
                h[k] = tok + self.params[f"pos.{stream}"]
            hf, cf = self._fuse_fwd(h, stream)
            cache["fuse"][stream] = cf
            per_modality[stream] = {}
            for k in mods:
                per_modality[stream][k], cache["enc"][(k, stream)] = nn.encoder_fwd(
                    self.params, f"enc.{stream}", h[k], self.cfg.n_layers, self.cfg.n_heads
                )
            fused[stream], cache["enc"][("fused", stream)] = nn.encoder_fwd(
                self.params, f"enc.{stream}", hf, self.cfg.n_layers, self.cfg.n_heads
            )
        reps = RepresentationSet(per_modality, fused)
        proj = self._project_all(reps, loss_space, cache)
        if with_cache:
            return reps, proj, cache
        return reps, proj

    def _proj_fwd(self, name: str, x: np.ndarray, cache: dict, key):
        out, c = nn.mlp2_fwd(self.params, name, x)
        cache["proj"][key] = c
        return out

    def _project_all(self, reps: RepresentationSet, loss_space: str, cache: dict
                     ) -> ProjectedFeatures:
        mods = self.cfg.modalities
        p = ProjectedFeatures()
        if loss_space == "stream":
            spaces = STREAMS
        elif loss_space == "global":
            if not self.cfg.global_heads:
                raise SchemaError("global loss space requires ModelConfig.global_heads")
            spaces = (GLOBAL_SPACE,)
        else:
            raise ValueError(f"unknown loss space {loss_space!r}")
        for sp in spaces:
            if sp in STREAMS:
                y = reps.per_modality[sp]
                yf = reps.fused[sp]
                uni_in = {k: y[k] for k in mods}
                fused_in = yf
            else:
                uni_in = {k: reps.global_feature(k) for k in mods}
                fused_in = reps.unified()
            p.uni[sp] = {}
            p.dec[sp] = {}
            for k in mods:
                p.uni[sp][k] = self._proj_fwd(
                    f"proj.{k}.{sp}", uni_in[k], cache, ("uni", sp, k)
                )
                p.dec[sp][k] = self._proj_fwd(
                    f"proj.{k}.{sp}", fused_in, cache, ("dec", sp, k)
                )
            comp_in = _mean_exact([uni_in[k] for k in mods])
            p.comp[sp] = self._proj_fwd(
                f"proj.{MULTI_HEAD}.{sp}", comp_in, cache, ("comp", sp)
            )
            p.fused[sp] = self._proj_fwd(
                f"proj.{MULTI_HEAD}.{sp}", fused_in, cache, ("fused", sp)
            )
        return p

    def backward_batch(self, cache: dict, pgrads: ProjectedFeatures,
                       grads: dict | None = None) -> dict:
        """Backpropagate projection-space gradients into parameter gradients."""
        grads = {} if grads is None else grads
        mods = self.cfg.modalities
        d = self.cfg.embed_dim
        dy = {st: {k: 0.0 for k in mods} for st in STREAMS}
        dyf = {st: 0.0 for st in STREAMS}

        def split_global(g):
            return g[..., :d], g[..., d:]

        for sp in pgrads.spaces:
            uni_bwd = {
                k: nn.mlp2_bwd(self.params, f"proj.{k}.{sp}", pgrads.uni[sp][k],
                               cache["proj"][("uni", sp, k)], grads)
                for k in mods
            }
            dec_bwd = {
                k: nn.mlp2_bwd(self.params, f"proj.{k}.{sp}", pgrads.dec[sp][k],
                               cache["proj"][("dec", sp, k)], grads)
                for k in mods
            }
            dcomp_in = nn.mlp2_bwd(self.params, f"proj.{MULTI_HEAD}.{sp}",
                                   pgrads.comp[sp], cache["proj"][("comp", sp)], grads)
            dfused_in = nn.mlp2_bwd(self.params, f"proj.{MULTI_HEAD}.{sp}",
                                    pgrads.fused[sp], cache["proj"][("fused", sp)], grads)
            if sp in STREAMS:
                for k in mods:
                    dy[sp][k] = dy[sp][k] + uni_bwd[k] + dcomp_in / len(mods)
                    dyf[sp] = dyf[sp] + dec_bwd[k]
                dyf[sp] = dyf[sp] + dfused_in
            else:
                for k in mods:
                    gt, gs = split_global(uni_bwd[k] + dcomp_in / len(mods))
                    dy["t"][k] = dy["t"][k] + gt
                    dy["s"][k] = dy["s"][k] + gs
                    ft, fs = split_global(dec_bwd[k])
                    dyf["t"] = dyf["t"] + ft
                    dyf["s"] = dyf["s"] + fs
                ft, fs = split_global(dfused_in)
                dyf["t"] = dyf["t"] + ft
                dyf["s"] = dyf["s"] + fs

        def as_pooled_grad(g, enc_cache):
            if np.isscalar(g):
                b, _, width = enc_cache[1]
                return np.zeros((b, width), dtype=self.dtype)
            return g

        for stream in STREAMS:
            dtok = {}
            for k in mods:
                g = as_pooled_grad(dy[stream][k], cache["enc"][(k, stream)])
                dtok[k] = nn.encoder_bwd(
                    self.params, f"enc.{stream}", g, cache["enc"][(k, stream)], grads
                )
            dfused_tok = nn.encoder_bwd(
                self.params, f"enc.{stream}",
                as_pooled_grad(dyf[stream], cache["enc"][("fused", stream)]),
                cache["enc"][("fused", stream)], grads
            )
            dh_fuse = self._fuse_bwd(dfused_tok, stream, cache["fuse"][stream], grads)
            for k in mods:
                dtok_k = dtok[k] + dh_fuse[k]
                nn.accumulate(grads, f"pos.{stream}", dtok_k.sum(0))
                nn.mlp2_bwd(self.params, f"embed.{k}.{stream}", dtok_k,
                            cache["emb"][(k, stream)], grads)
        return grads

    # ------------------------------------------------- unified inference path

    def forward_unified(self, batch, modality_subset: Sequence[str] | None = None,
                        with_cache: bool = False):
        """Inference path: mean-fuse the requested modalities' embeddings,
        encode both streams, concatenate (temporal, spatial)."""
        subset = tuple(
            self.cfg.modalities if modality_subset is None else modality_subset
        )
        if not subset:
            raise SchemaError("modality subset must be nonempty")
        unknown = set(subset) - set(self.cfg.modalities)
        if unknown:
            raise SchemaError(f"model has no modalities {sorted(unknown)}")
        views = self._stacked_views(batch, modalities=subset)
        cache: dict = {"emb": {}, "enc": {}, "subset": subset}
        pooled = {}
        for stream in STREAMS:
            toks = []
            for k in subset:
                tok, c = nn.mlp2_fwd(self.params, f"embed.{k}.{stream}", views[stream][k])
                cache["emb"][(k, stream)] = c
                toks.append(tok + self.params[f"pos.{stream}"])
            hf = _mean_exact(toks)
            pooled[stream], cache["enc"][stream] = nn.encoder_fwd(
                self.params, f"enc.{stream}", hf, self.cfg.n_layers, self.cfg.n_heads
            )
        unified = np.concatenate([pooled["t"], pooled["s"]], axis=-1)
        if with_cache:
            return unified, cache
        return unified

    def backward_unified(self, cache: dict, dunified: np.ndarray,
                         grads: dict | None = None) -> dict:
        grads = {} if grads is None else grads
        d = self.cfg.embed_dim
        subset = cache["subset"]
        for stream, g in (("t", dunified[..., :d]), ("s", dunified[..., d:])):
            dh = nn.encoder_bwd(self.params, f"enc.{stream}", g, cache["enc"][stream], grads)
            share = dh / len(subset)
            for k in subset:
                nn.accumulate(grads, f"pos.{stream}", share.sum(0))
                nn.mlp2_bwd(self.params, f"embed.{k}.{stream}", share,
                            cache["emb"][(k, stream)], grads)
        return grads

    def extract_unified(self, bundle: ModalityBundle | list[ModalityBundle],
                        modality_subset: Sequence[str] | None = None) -> np.ndarray:
        """Unified feature(s) of width 2*embed_dim for one bundle or a list."""
        single = isinstance(bundle, ModalityBundle)
        bundles = [bundle] if single else list(bundle)
        out = self.forward_unified(bundles, modality_subset)
        return out[0] if single else out
