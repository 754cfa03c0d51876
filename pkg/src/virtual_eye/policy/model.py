"""Tokenized attention policy with hand-written reverse-mode gradients.

Token sequence: 256 image patches, 77 language tokens, 36 learnable depth
tokens.  A stack of pre-norm transformer blocks mixes them; then

* every image token emits a ``patch x patch`` tile of heatmap logits,
* every depth token emits one depth-class logit (token k <-> bin k),
* rotation / gripper / collision / refine heads read the token mean.

All arrays carry a leading batch axis.  ``forward`` returns the logits plus a
cache that ``backward`` consumes; parameters are a flat ``dict`` of arrays.
"""

from __future__ import annotations

import math

import numpy as np

from ..codec import PolicyOutputs
from ..errors import UsageError
from ..renderer import VirtualImage
from .config import ModelConfig

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

HEADS = ("rot", "open", "collision", "refine")


def head_sizes(config: ModelConfig) -> dict[str, int]:
    return {"rot": 3 * config.rot_bins_per_axis, "open": 2, "collision": 2, "refine": 2}


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, h = config.embed_dim, config.hidden_dim
    shapes = {
        "patch.w": (config.patch_features, d),
        "patch.b": (d,),
        "pos_img": (config.n_image_tokens, d),
        "lang.w": (d, d),
        "lang.b": (d,),
        "depth_tokens": (config.n_depth_tokens, d),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "qkv.w": (d, 3 * d),
                p + "qkv.b": (3 * d,),
                p + "proj.w": (d, d),
                p + "proj.b": (d,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "fc1.w": (d, h),
                p + "fc1.b": (h,),
                p + "fc2.w": (h, d),
                p + "fc2.b": (d,),
            }
        )
    shapes.update(
        {
            "final_ln.g": (d,),
            "final_ln.b": (d,),
            "heat.w": (d, config.patch * config.patch),
            "heat.b": (config.patch * config.patch,),
            "depth_head.w": (d,),
            "depth_head.b": (1,),
        }
    )
    for name, n in head_sizes(config).items():
        shapes[f"{name}.w"] = (d, n)
        shapes[f"{name}.b"] = (n,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            value = np.ones(shape)
        elif name.endswith(".b"):
            value = np.zeros(shape)
        elif name == "patch.w":
            value = rng.standard_normal(shape) / np.sqrt(shape[0])
        elif name.endswith("proj.w") or name.endswith("fc2.w"):
            # damp residual branches so the stack starts near identity
            value = rng.standard_normal(shape) * 0.02 / np.sqrt(2 * config.layers)
        else:
            value = rng.standard_normal(shape) * 0.02
        params[name] = value.astype(dtype)
    return params


def check_params(params: dict, config: ModelConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise UsageError(f"parameter names do not match config (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise UsageError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


def count_params(params: dict) -> int:
    return sum(int(v.size) for v in params.values())


# ---------------------------------------------------------------------------
# Image tokens


def image_channels(img: VirtualImage) -> np.ndarray:
    """``(4, R, R)`` float32: rgb in [0, 1] and depth scaled to the spec's depth range.

    Empty pixels (infinite depth) read as the far end, 1.0.
    """
    lo, hi = img.spec.depth_range
    depth = np.where(np.isfinite(img.depth), (img.depth - lo) / (hi - lo), 1.0)
    rgb = img.rgb.astype(np.float32).transpose(2, 0, 1) / 255.0
    return np.concatenate([rgb, np.clip(depth, 0.0, 1.0)[None].astype(np.float32)])


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``(B, C, R, R)`` -> ``(B, (R/p)^2, C*p*p)`` in raster order."""
    b, c, r, _ = images.shape
    g = r // patch
    x = images.reshape(b, c, g, patch, g, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g * g, c * patch * patch)


def unpatchify(tiles: np.ndarray, patch: int) -> np.ndarray:
    """``(B, g*g, p*p)`` tiles -> ``(B, g*p, g*p)`` image."""
    b, n, _ = tiles.shape
    g = int(round(np.sqrt(n)))
    return tiles.reshape(b, g, g, patch, patch).transpose(0, 1, 3, 2, 4).reshape(b, g * patch, g * patch)


def tokenize_image(images: np.ndarray, params: dict, config: ModelConfig) -> np.ndarray:
    """Patch embedding plus learned positional embedding, ``(B, 256, D)``."""
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (config.channels, config.image_size, config.image_size):
        raise UsageError(
            f"expected images of shape (B, {config.channels}, {config.image_size}, {config.image_size}), "
            f"got {images.shape}"
        )
    return patchify(images, config.patch) @ params["patch.w"] + params["patch.b"] + params["pos_img"]


# ---------------------------------------------------------------------------
# Building blocks (forward returns a cache tuple for the matching backward)


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _ln_bwd(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(z):
    inner = _GELU_C * (z + 0.044715 * z * z * z)
    t = np.tanh(inner)
    return 0.5 * z * (1.0 + t), (z, t)


def _gelu_bwd(dy, cache):
    z, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
    return dy * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner)


def _linear_grads(x, dy):
    """Weight and bias gradients of ``y = x @ w + b`` summed over leading axes."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return x2.T @ dy2, dy2.sum(0)


def _attn_fwd(h, w_qkv, b_qkv, w_proj, b_proj, heads):
    b, t, d = h.shape
    dh = d // heads
    qkv = np.ascontiguousarray((h @ w_qkv + b_qkv).reshape(b, t, 3, heads, dh).transpose(2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    o = np.empty_like(q)
    probs = []
    # one sample at a time keeps the (heads, T, T) buffers cache-sized
    for i in range(b):
        s = q[i] @ k[i].transpose(0, 2, 1)
        s *= scale
        s -= s.max(-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(-1, keepdims=True)
        np.matmul(s, v[i], out=o[i])
        probs.append(s)
    o = o.transpose(0, 2, 1, 3).reshape(b, t, d)
    return o @ w_proj + b_proj, (h, q, k, v, probs, o, scale, heads)


def _attn_bwd(dy, cache, w_qkv, w_proj):
    h, q, k, v, probs, o, scale, heads = cache
    b, t, d = h.shape
    dh = d // heads
    dw_proj, db_proj = _linear_grads(o, dy)
    do = np.ascontiguousarray((dy @ w_proj.T).reshape(b, t, heads, dh).transpose(0, 2, 1, 3))
    dqkv = np.empty((b, t, 3, heads, dh), dtype=h.dtype)
    dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for i in range(b):
        a = probs[i]
        np.matmul(a.transpose(0, 2, 1), do[i], out=dv[i])
        da = do[i] @ v[i].transpose(0, 2, 1)
        da -= (da * a).sum(-1, keepdims=True)
        da *= a
        da *= scale
        np.matmul(da, k[i], out=dq[i])
        np.matmul(da.transpose(0, 2, 1), q[i], out=dk[i])
    dqkv[:, :, 0] = dq.transpose(0, 2, 1, 3)
    dqkv[:, :, 1] = dk.transpose(0, 2, 1, 3)
    dqkv[:, :, 2] = dv.transpose(0, 2, 1, 3)
    dqkv = dqkv.reshape(b, t, 3 * d)
    dw_qkv, db_qkv = _linear_grads(h, dqkv)
    dh_in = dqkv @ w_qkv.T
    return dh_in, dw_qkv, db_qkv, dw_proj, db_proj


# ---------------------------------------------------------------------------
# Forward / backward


def forward(images: np.ndarray, lang: np.ndarray, config: ModelConfig, params: dict, keep_cache: bool = False):
    """Run the policy on a batch.

    ``images`` is ``(B, 4, R, R)`` (see :func:`image_channels`), ``lang`` is
    ``(B, 77, D)`` (see :func:`~.language.encode_language`).  Returns
    ``PolicyOutputs`` and, with ``keep_cache``, the activations needed by
    :func:`backward`.
    """
    if images.ndim == 3:
        images = images[None]
    if lang.ndim == 2:
        lang = lang[None]
    if lang.shape[1:] != (config.n_lang_tokens, config.embed_dim) or lang.shape[0] != images.shape[0]:
        raise UsageError(f"language tokens have shape {lang.shape}, expected (B, {config.n_lang_tokens}, {config.embed_dim})")
    check_params(params, config)
    dtype = params["patch.w"].dtype
    images = images.astype(dtype, copy=False)
    lang = lang.astype(dtype, copy=False)
    bsz = images.shape[0]
    n_img, n_lang = config.n_image_tokens, config.n_lang_tokens

    patches = patchify(images, config.patch)
    x_img = patches @ params["patch.w"] + params["patch.b"] + params["pos_img"]
    x_lang = lang @ params["lang.w"] + params["lang.b"]
    x_dep = np.broadcast_to(params["depth_tokens"], (bsz,) + params["depth_tokens"].shape)
    x = np.concatenate([x_img, x_lang, x_dep], axis=1)

    layer_caches = []
    for i in range(config.layers):
        p = f"layer{i}."
        h1, ln1 = _ln_fwd(x, params[p + "ln1.g"], params[p + "ln1.b"])
        att, attc = _attn_fwd(h1, params[p + "qkv.w"], params[p + "qkv.b"], params[p + "proj.w"], params[p + "proj.b"], config.heads)
        x = x + att
        h2, ln2 = _ln_fwd(x, params[p + "ln2.g"], params[p + "ln2.b"])
        z = h2 @ params[p + "fc1.w"] + params[p + "fc1.b"]
        act, gc = _gelu_fwd(z)
        x = x + act @ params[p + "fc2.w"] + params[p + "fc2.b"]
        if keep_cache:
            layer_caches.append((ln1, attc, h2, ln2, act, gc))
        else:
            del attc

    y, lnf = _ln_fwd(x, params["final_ln.g"], params["final_ln.b"])
    y_img = y[:, :n_img]
    y_dep = y[:, n_img + n_lang :]
    pooled = y.mean(1)

    tiles = y_img @ params["heat.w"] + params["heat.b"]
    head = {name: pooled @ params[f"{name}.w"] + params[f"{name}.b"] for name in HEADS}
    outputs = PolicyOutputs(
        heatmap_logits=unpatchify(tiles, config.patch),
        depth_logits=y_dep @ params["depth_head.w"] + params["depth_head.b"],
        rot_logits=head["rot"].reshape(bsz, 3, config.rot_bins_per_axis),
        open_logits=head["open"],
        collision_logits=head["collision"],
        refine_logits=head["refine"],
    )
    if not keep_cache:
        return outputs
    cache = {"patches": patches, "lang": lang, "layers": layer_caches, "lnf": lnf, "y": y, "pooled": pooled}
    return outputs, cache


def backward(grad: PolicyOutputs, cache: dict, config: ModelConfig, params: dict) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(logits)."""
    g: dict[str, np.ndarray] = {}
    y, pooled = cache["y"], cache["pooled"]
    bsz, n_tok, d = y.shape
    n_img, n_lang = config.n_image_tokens, config.n_lang_tokens
    dy = np.zeros_like(y)

    # heatmap tiles
    dtiles = patchify(grad.heatmap_logits[:, None], config.patch)
    y_img = y[:, :n_img]
    g["heat.w"], g["heat.b"] = _linear_grads(y_img, dtiles)
    dy[:, :n_img] = dtiles @ params["heat.w"].T

    # depth readout
    y_dep = y[:, n_img + n_lang :]
    ddep = grad.depth_logits
    g["depth_head.w"] = np.einsum("bk,bkd->d", ddep, y_dep)
    g["depth_head.b"] = np.array([ddep.sum()], dtype=y.dtype)
    dy[:, n_img + n_lang :] += ddep[..., None] * params["depth_head.w"]

    # pooled heads
    dpooled = np.zeros_like(pooled)
    head_grads = {
        "rot": grad.rot_logits.reshape(bsz, -1),
        "open": grad.open_logits,
        "collision": grad.collision_logits,
        "refine": grad.refine_logits,
    }
    for name, dlog in head_grads.items():
        g[f"{name}.w"] = pooled.T @ dlog
        g[f"{name}.b"] = dlog.sum(0)
        dpooled += dlog @ params[f"{name}.w"].T
    dy += dpooled[:, None, :] / n_tok

    dx, g["final_ln.g"], g["final_ln.b"] = _ln_bwd(dy, cache["lnf"])

    for i in reversed(range(config.layers)):
        p = f"layer{i}."
        ln1, attc, h2, ln2, act, gc = cache["layers"][i]
        # feed-forward branch
        g[p + "fc2.w"], g[p + "fc2.b"] = _linear_grads(act, dx)
        dz = _gelu_bwd(dx @ params[p + "fc2.w"].T, gc)
        g[p + "fc1.w"], g[p + "fc1.b"] = _linear_grads(h2, dz)
        dh2 = dz @ params[p + "fc1.w"].T
        dln2, g[p + "ln2.g"], g[p + "ln2.b"] = _ln_bwd(dh2, ln2)
        dx = dx + dln2
        # attention branch
        dh1, g[p + "qkv.w"], g[p + "qkv.b"], g[p + "proj.w"], g[p + "proj.b"] = _attn_bwd(
            dx, attc, params[p + "qkv.w"], params[p + "proj.w"]
        )
        dln1, g[p + "ln1.g"], g[p + "ln1.b"] = _ln_bwd(dh1, ln1)
        dx = dx + dln1

    dx_img = dx[:, :n_img]
    dx_lang = dx[:, n_img : n_img + n_lang]
    g["depth_tokens"] = dx[:, n_img + n_lang :].sum(0)
    g["pos_img"] = dx_img.sum(0)
    g["patch.w"], g["patch.b"] = _linear_grads(cache["patches"], dx_img)
    g["lang.w"], g["lang.b"] = _linear_grads(cache["lang"], dx_lang)
    return g
