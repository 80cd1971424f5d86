"""ViT backbone + transposed-conv heatmap head, LoRA adapters and checkpoints."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import nn
from .heatmap import keypoint_mse, keypoint_mse_grad

LORA_SITES = ("qkv", "proj")
TRAINABLE_MODES = ("full", "lora_only", "head_only")
MAGIC = b"MSAP"
VERSION = 1
LN_EPS = 1e-6


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class HeadConfig:
    deconv_stages: int = 2
    deconv_channels: int = 32


@dataclass
class ModelConfig:
    input_size: tuple[int, int] = (256, 256)
    in_channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 2
    mlp_ratio: float = 4.0
    head: HeadConfig = field(default_factory=HeadConfig)
    dataset_heads: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.head, dict):
            self.head = HeadConfig(**self.head)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.dataset_heads = [(str(n), int(k)) for n, k in self.dataset_heads]

    def validate(self) -> "ModelConfig":
        h, w = self.input_size
        p = self.patch_size
        if p < 1 or h % p or w % p:
            raise ConfigError(f"patch size {p} must divide input size {self.input_size}")
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0 or self.in_channels < 1:
            raise ConfigError("depth must be >= 0 and in_channels >= 1")
        if self.head.deconv_stages < 1 or self.head.deconv_channels < 1:
            raise ConfigError("head needs at least one deconv stage and one channel")
        if int(self.embed_dim * self.mlp_ratio) < 1:
            raise ConfigError("mlp_ratio too small")
        names = [n for n, _ in self.dataset_heads]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dataset head names in {names}")
        for name, n in self.dataset_heads:
            if n < 1:
                raise ConfigError(f"dataset head {name!r} needs >= 1 landmark, got {n}")
        return self

    @property
    def grid(self) -> tuple[int, int]:
        return self.input_size[0] // self.patch_size, self.input_size[1] // self.patch_size

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def stride(self) -> float:
        return self.patch_size / 2 ** self.head.deconv_stages

    @property
    def heatmap_size(self) -> tuple[int, int]:
        gh, gw = self.grid
        f = 2 ** self.head.deconv_stages
        return gh * f, gw * f

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["dataset_heads"] = [[n, k] for n, k in self.dataset_heads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head"] = HeadConfig(**d.get("head", {}))
        return cls(**d)


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: Optional[float] = None
    target_sites: tuple[str, ...] = LORA_SITES

    def __post_init__(self):
        object.__setattr__(self, "target_sites", tuple(self.target_sites))
        if not isinstance(self.rank, int) or self.rank < 1:
            raise ConfigError(f"LoRA rank must be a positive integer, got {self.rank!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError(f"LoRA alpha must be positive, got {self.alpha}")
        bad = set(self.target_sites) - set(LORA_SITES)
        if bad or not self.target_sites:
            raise ConfigError(f"LoRA target sites must be a nonempty subset of {LORA_SITES}")

    @property
    def scaling(self) -> float:
        return (self.alpha if self.alpha is not None else self.rank) / self.rank

    def to_dict(self):
        return {"rank": self.rank, "alpha": self.alpha, "target_sites": list(self.target_sites)}


def _site_weight(i: int, site: str) -> str:
    return f"blocks.{i}.attn.{site}.weight"


def _lora_names(i: int, site: str) -> tuple[str, str]:
    return f"blocks.{i}.attn.{site}.lora_A", f"blocks.{i}.attn.{site}.lora_B"


def is_lora(name: str) -> bool:
    return ".lora_" in name


def is_head(name: str) -> bool:
    return name.startswith("head.")


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    lora: Optional[LoraConfig] = None
    trainable: frozenset = frozenset()

    @property
    def stride(self) -> float:
        return self.config.stride

    @property
    def dtype(self):
        return self.params["patch_embed.weight"].dtype

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()},
                     self.lora, frozenset(self.trainable))

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                     self.lora, frozenset(self.trainable))

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def lora_pairs(self) -> list[tuple[str, str]]:
        return [_lora_names(i, s) for i in range(self.config.depth) for s in LORA_SITES
                if _lora_names(i, s)[0] in self.params]

    def effective_weight(self, i: int, site: str) -> np.ndarray:
        W = self.params[_site_weight(i, site)]
        a_name, b_name = _lora_names(i, site)
        if a_name not in self.params:
            return W
        A, B = self.params[a_name], self.params[b_name]
        return W + self.lora.scaling * (B @ A)


# -- construction -----------------------------------------------------------

def _trunc_normal(rng, shape, std=0.02):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, p, C = cfg.embed_dim, cfg.patch_size, cfg.in_channels
    hid = cfg.hidden_dim
    shapes = {
        "patch_embed.weight": (d, C * p * p),
        "patch_embed.bias": (d,),
        "pos_embed": (cfg.tokens, d),
    }
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        shapes.update({
            pre + "norm1.weight": (d,), pre + "norm1.bias": (d,),
            pre + "attn.qkv.weight": (3 * d, d), pre + "attn.qkv.bias": (3 * d,),
            pre + "attn.proj.weight": (d, d), pre + "attn.proj.bias": (d,),
            pre + "norm2.weight": (d,), pre + "norm2.bias": (d,),
            pre + "mlp.fc1.weight": (hid, d), pre + "mlp.fc1.bias": (hid,),
            pre + "mlp.fc2.weight": (d, hid), pre + "mlp.fc2.bias": (d,),
        })
    shapes["norm.weight"] = (d,)
    shapes["norm.bias"] = (d,)
    cin = d
    c = cfg.head.deconv_channels
    for j in range(cfg.head.deconv_stages):
        pre = f"head.deconv.{j}."
        shapes.update({pre + "weight": (cin, c, 4, 4), pre + "bias": (c,),
                       pre + "norm.weight": (c,), pre + "norm.bias": (c,)})
        cin = c
    for name, n in cfg.dataset_heads:
        shapes[f"head.final.{name}.weight"] = (n, c)
        shapes[f"head.final.{name}.bias"] = (n,)
    return shapes


def _init_param(rng, name, shape):
    if name.endswith("norm.weight") or ".norm1.weight" in name or ".norm2.weight" in name:
        return np.ones(shape)
    if name.endswith(".bias") or name == "pos_embed":
        return np.zeros(shape)
    return _trunc_normal(rng, shape)


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {name: _init_param(rng, name, shape).astype(dtype)
              for name, shape in param_shapes(cfg).items()}
    return Model(cfg, params, None, frozenset(params))


def add_dataset_head(m: Model, name: str, n: int, seed: int = 0) -> Model:
    """Attach a freshly initialised output conv for a new dataset."""
    if any(k == name for k, _ in m.config.dataset_heads):
        raise ConfigError(f"dataset head {name!r} already exists")
    cfg = ModelConfig.from_dict(m.config.to_dict())
    cfg.dataset_heads.append((name, int(n)))
    cfg.validate()
    out = m.copy()
    out.config = cfg
    rng = np.random.default_rng(seed)
    c = cfg.head.deconv_channels
    w, b = f"head.final.{name}.weight", f"head.final.{name}.bias"
    out.params[w] = _trunc_normal(rng, (n, c)).astype(m.dtype)
    out.params[b] = np.zeros(n, dtype=m.dtype)
    out.trainable = frozenset(out.trainable | {w, b})
    return out


# -- forward / backward -----------------------------------------------------

def _forward(m: Model, batch: np.ndarray, dataset: str):
    cfg = m.config
    heads = dict(cfg.dataset_heads)
    if dataset not in heads:
        raise KeyError(f"no output head for dataset {dataset!r}; have {sorted(heads)}")
    if batch.ndim != 4 or batch.shape[1:] != (cfg.in_channels, *cfg.input_size):
        raise ValueError(f"expected batch (B, {cfg.in_channels}, {cfg.input_size[0]}, "
                         f"{cfg.input_size[1]}), got {batch.shape}")
    P = m.params
    x = batch.astype(m.dtype, copy=False)
    tape = {}
    h, tape["patch"] = nn.patch_embed_forward(x, P["patch_embed.weight"], P["patch_embed.bias"],
                                              cfg.patch_size)
    h = h + P["pos_embed"]
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        n1, c1 = nn.layer_norm_forward(h, P[pre + "norm1.weight"], P[pre + "norm1.bias"], LN_EPS)
        a, ca = nn.multi_head_attention_forward(
            n1, m.effective_weight(i, "qkv"), P[pre + "attn.qkv.bias"],
            m.effective_weight(i, "proj"), P[pre + "attn.proj.bias"], cfg.heads)
        h = h + a
        n2, c2 = nn.layer_norm_forward(h, P[pre + "norm2.weight"], P[pre + "norm2.bias"], LN_EPS)
        f1, cf1 = nn.linear_forward(n2, P[pre + "mlp.fc1.weight"], P[pre + "mlp.fc1.bias"])
        g1, cg = nn.gelu_forward(f1)
        f2, cf2 = nn.linear_forward(g1, P[pre + "mlp.fc2.weight"], P[pre + "mlp.fc2.bias"])
        h = h + f2
        tape[i] = (c1, ca, c2, cf1, cg, cf2)
    hn, tape["norm"] = nn.layer_norm_forward(h, P["norm.weight"], P["norm.bias"], LN_EPS)
    B = x.shape[0]
    gh, gw = cfg.grid
    feat = hn.reshape(B, gh, gw, cfg.embed_dim).transpose(0, 3, 1, 2)
    for j in range(cfg.head.deconv_stages):
        pre = f"head.deconv.{j}."
        feat, cd = nn.conv_transpose2d_forward(feat, P[pre + "weight"], P[pre + "bias"], 2, 1)
        feat, cn = nn.channel_norm_forward(feat, P[pre + "norm.weight"], P[pre + "norm.bias"], LN_EPS)
        feat, cg = nn.gelu_forward(feat)
        tape[("deconv", j)] = (cd, cn, cg)
    out, tape["final"] = nn.conv1x1_forward(feat, P[f"head.final.{dataset}.weight"],
                                            P[f"head.final.{dataset}.bias"])
    return out, tape


def forward(m: Model, batch: np.ndarray, dataset: str) -> np.ndarray:
    """Heatmaps (B, N_d, H/stride, W/stride) for a (B, C, H, W) batch."""
    out, _ = _forward(m, batch, dataset)
    return out


def _backward(m: Model, tape, g: np.ndarray, dataset: str) -> dict[str, np.ndarray]:
    cfg = m.config
    P = m.params
    want = m.trainable
    grads = {}

    def put(name, value):
        if name in want and value is not None:
            grads[name] = value

    fw, fb = f"head.final.{dataset}.weight", f"head.final.{dataset}.bias"
    g, dK, db = nn.conv1x1_backward(tape["final"], g, fw in want or fb in want)
    put(fw, dK)
    put(fb, db)
    for j in reversed(range(cfg.head.deconv_stages)):
        pre = f"head.deconv.{j}."
        cd, cn, cg = tape[("deconv", j)]
        g = nn.gelu_backward(cg, g)
        g, dgam, dbet = nn.channel_norm_backward(cn, g, pre + "norm.weight" in want)
        put(pre + "norm.weight", dgam)
        put(pre + "norm.bias", dbet)
        g, dK, db = nn.conv_transpose2d_backward(cd, g, pre + "weight" in want)
        put(pre + "weight", dK)
        put(pre + "bias", db)
    B = g.shape[0]
    g = g.transpose(0, 2, 3, 1).reshape(B, cfg.tokens, cfg.embed_dim)
    g, dgam, dbet = nn.layer_norm_backward(tape["norm"], g, "norm.weight" in want)
    put("norm.weight", dgam)
    put("norm.bias", dbet)
    for i in reversed(range(cfg.depth)):
        pre = f"blocks.{i}."
        c1, ca, c2, cf1, cg, cf2 = tape[i]
        gf, dW, db = nn.linear_backward(cf2, g, pre + "mlp.fc2.weight" in want)
        put(pre + "mlp.fc2.weight", dW)
        put(pre + "mlp.fc2.bias", db)
        gf = nn.gelu_backward(cg, gf)
        gf, dW, db = nn.linear_backward(cf1, gf, pre + "mlp.fc1.weight" in want)
        put(pre + "mlp.fc1.weight", dW)
        put(pre + "mlp.fc1.bias", db)
        gf, dgam, dbet = nn.layer_norm_backward(c2, gf, pre + "norm2.weight" in want)
        put(pre + "norm2.weight", dgam)
        put(pre + "norm2.bias", dbet)
        g = g + gf
        site_names = [n for s in LORA_SITES for n in (_site_weight(i, s), *_lora_names(i, s))]
        need_attn = any(n in want for n in site_names) or (pre + "attn.qkv.bias") in want
        ga, dWqkv, dbqkv, dWproj, dbproj = nn.multi_head_attention_backward(ca, g, need_attn)
        put(pre + "attn.qkv.bias", dbqkv)
        put(pre + "attn.proj.bias", dbproj)
        for site, dW_eff in (("qkv", dWqkv), ("proj", dWproj)):
            if dW_eff is None:
                continue
            put(_site_weight(i, site), dW_eff)
            a_name, b_name = _lora_names(i, site)
            if a_name in P:
                s = m.lora.scaling
                put(a_name, s * (P[b_name].T @ dW_eff))
                put(b_name, s * (dW_eff @ P[a_name].T))
        ga, dgam, dbet = nn.layer_norm_backward(c1, ga, pre + "norm1.weight" in want)
        put(pre + "norm1.weight", dgam)
        put(pre + "norm1.bias", dbet)
        g = g + ga
    if "pos_embed" in want:
        grads["pos_embed"] = g.sum(axis=0)
    _, dW, db = nn.patch_embed_backward(tape["patch"], g, "patch_embed.weight" in want,
                                        input_grad=False)
    put("patch_embed.weight", dW)
    put("patch_embed.bias", db)
    return grads


def loss_and_grads(m: Model, batch: np.ndarray, gt: np.ndarray, weights: np.ndarray,
                   dataset: str):
    """Mean over the batch of the per-image keypoint MSE, and its gradients.

    Only parameters in ``m.trainable`` appear in the gradient dict.
    """
    out, tape = _forward(m, batch, dataset)
    gt = np.asarray(gt)
    weights = np.asarray(weights)
    if gt.shape != out.shape:
        raise ValueError(f"target shape {gt.shape} does not match output {out.shape}")
    B = out.shape[0]
    loss = sum(keypoint_mse(out[b], gt[b], weights[b]) for b in range(B)) / B
    g = np.stack([keypoint_mse_grad(out[b], gt[b], weights[b]) for b in range(B)]) / B
    return loss, _backward(m, tape, g.astype(out.dtype), dataset)


# -- LoRA and trainability ----------------------------------------------------

def lora_inject(m: Model, lc: LoraConfig, seed: int = 0) -> Model:
    if m.lora_pairs():
        raise ConfigError("model already carries LoRA adapters")
    rng = np.random.default_rng(seed)
    out = m.copy()
    out.lora = lc
    for i in range(m.config.depth):
        for site in lc.target_sites:
            W = m.params[_site_weight(i, site)]
            dout, din = W.shape
            a_name, b_name = _lora_names(i, site)
            out.params[a_name] = rng.normal(0.0, 0.02, size=(lc.rank, din)).astype(W.dtype)
            out.params[b_name] = np.zeros((dout, lc.rank), dtype=W.dtype)
    return set_trainable(out, "lora_only")


def lora_merge(m: Model) -> Model:
    pairs = m.lora_pairs()
    if not pairs:
        raise ConfigError("model has no LoRA adapters to merge")
    out = m.copy()
    for i in range(m.config.depth):
        for site in LORA_SITES:
            a_name, b_name = _lora_names(i, site)
            if a_name in out.params:
                out.params[_site_weight(i, site)] = m.effective_weight(i, site)
                del out.params[a_name], out.params[b_name]
    out.lora = None
    out.trainable = frozenset(n for n in out.trainable if n in out.params)
    return out


def set_trainable(m: Model, mode: str) -> Model:
    if mode not in TRAINABLE_MODES:
        raise ConfigError(f"unknown trainable mode {mode!r}")
    names = list(m.params)
    if mode == "full":
        mask = set(names)
    elif mode == "head_only":
        mask = {n for n in names if is_head(n)}
    else:
        if not m.lora_pairs():
            raise ConfigError("lora_only requires LoRA adapters; call lora_inject first")
        mask = {n for n in names if is_head(n) or is_lora(n)}
    out = Model(m.config, m.params, m.lora, frozenset(mask))
    return out


# -- checkpoints ------------------------------------------------------------

def _resize_pos_embed(pe: np.ndarray, old_grid, new_grid) -> np.ndarray:
    d = pe.shape[1]
    grid = pe.reshape(*old_grid, d).astype(np.float64)
    ys = np.linspace(0, old_grid[0] - 1, new_grid[0])
    xs = np.linspace(0, old_grid[1] - 1, new_grid[1])
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack([ndimage.map_coordinates(grid[..., c], [yy, xx], order=1, mode="nearest")
                    for c in range(d)], axis=-1)
    return out.reshape(-1, d).astype(pe.dtype)


def save_checkpoint(m: Model, path, optimizer_state=None) -> None:
    """Write ``m`` (and optionally AdamW moments) atomically to ``path``."""
    path = Path(path)
    tensors, chunks, offset = [], [], 0

    def add(table, name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    for name, arr in m.params.items():
        add(tensors, name, arr)
    header = {
        "config": m.config.to_dict(),
        "lora": m.lora.to_dict() if m.lora else None,
        "trainable": sorted(m.trainable),
        "tensors": tensors,
    }
    if optimizer_state is not None:
        opt_tensors = []
        for name in sorted(optimizer_state.m):
            add(opt_tensors, "m/" + name, optimizer_state.m[name])
            add(opt_tensors, "v/" + name, optimizer_state.v[name])
        header["optimizer_state"] = {"t": optimizer_state.t, "hyper": optimizer_state.hyper(),
                                     "tensors": opt_tensors}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for c in chunks:
                f.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_tensor(payload: bytes, entry: dict) -> np.ndarray:
    if entry.get("dtype") != "f32":
        raise CheckpointError(f"tensor {entry['name']}: unsupported dtype {entry.get('dtype')!r}")
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    start, stop = entry["offset"], entry["offset"] + 4 * count
    if stop > len(payload):
        raise CheckpointError(f"checkpoint truncated inside tensor {entry['name']}")
    return np.frombuffer(payload[start:stop], dtype="<f4").reshape(shape).astype(np.float32)


def read_checkpoint(path, config: Optional[ModelConfig] = None):
    """Return ``(model, optimizer_dict_or_None)``.

    With ``config`` given, tensor shapes are checked against it; only the
    position embedding may differ (it is bilinearly resized).
    """
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = data[16 + hlen:]
    saved_cfg = ModelConfig.from_dict(header["config"])
    cfg = config if config is not None else saved_cfg
    cfg.validate()
    expected = param_shapes(cfg)
    params = {}
    for entry in header["tensors"]:
        arr = _read_tensor(payload, entry)
        name = entry["name"]
        if is_lora(name):
            params[name] = arr
            continue
        if name not in expected:
            raise CheckpointError(f"parameter {name} not present in the model config")
        if arr.shape != expected[name]:
            if name == "pos_embed" and arr.shape[1] == expected[name][1]:
                arr = _resize_pos_embed(arr, saved_cfg.grid, cfg.grid)
            else:
                raise CheckpointError(
                    f"parameter {name}: checkpoint shape {arr.shape} != config shape {expected[name]}")
        params[name] = arr
    missing = [n for n in expected if n not in params]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameter {missing[0]}")
    lora = LoraConfig(**header["lora"]) if header.get("lora") else None
    for name in params:
        if is_lora(name):
            base = name.rsplit(".", 1)[0] + ".weight"
            a_or_b = params[name].shape
            if lora is None or base not in expected:
                raise CheckpointError(f"parameter {name} has no LoRA config or base weight")
            dout, din = expected[base]
            ok = a_or_b == ((lora.rank, din) if name.endswith("lora_A") else (dout, lora.rank))
            if not ok:
                raise CheckpointError(f"parameter {name}: shape {a_or_b} does not fit {base}")
    ordered = {n: params[n] for n in expected}
    ordered.update({n: params[n] for n in params if n not in ordered})
    trainable = frozenset(n for n in header.get("trainable", ordered) if n in ordered)
    model = Model(cfg, ordered, lora, trainable)
    opt = None
    if header.get("optimizer_state"):
        st = header["optimizer_state"]
        moments = {e["name"]: _read_tensor(payload, e) for e in st["tensors"]}
        opt = {"t": st["t"], "hyper": st["hyper"],
               "m": {k[2:]: v for k, v in moments.items() if k.startswith("m/")},
               "v": {k[2:]: v for k, v in moments.items() if k.startswith("v/")}}
    return model, opt


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> Model:
    return read_checkpoint(path, config)[0]
