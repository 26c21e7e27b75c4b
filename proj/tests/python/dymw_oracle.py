"""Independent numpy implementation of the .dymw container and the model forward.

Used to produce converter-style manifests whose reference logits come from a
different language and precision (float64) than the engine.
"""

import json
import struct
import zlib

import numpy as np


def expected_shapes(cfg):
    q = cfg["n_heads"] * cfg["d_head"]
    kv = cfg["n_kv_heads"] * cfg["d_head"]
    dm = cfg["d_model"]
    shapes = {"tok_embeddings": (cfg["vocab_size"], dm), "norm": (dm,)}
    if not cfg["tied_embeddings"]:
        shapes["output"] = (cfg["vocab_size"], dm)
    for i in range(cfg["n_layers"]):
        p = f"layers.{i}."
        shapes[p + "attn_norm"] = (dm,)
        shapes[p + "wq"] = (q, dm)
        shapes[p + "wk"] = (kv, dm)
        shapes[p + "wv"] = (kv, dm)
        shapes[p + "wo"] = (dm, q)
        if cfg["d_ff"]:
            shapes[p + "ffn_norm"] = (dm,)
            shapes[p + "w_gate"] = (cfg["d_ff"], dm)
            shapes[p + "w_up"] = (cfg["d_ff"], dm)
            shapes[p + "w_down"] = (dm, cfg["d_ff"])
    return shapes


def random_weights(cfg, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in sorted(expected_shapes(cfg).items()):
        if len(shape) == 1:
            out[name] = rng.uniform(0.8, 1.2, shape).astype(np.float32)
        else:
            out[name] = (rng.standard_normal(shape) / np.sqrt(shape[1])).astype(np.float32)
    return out


def write_dymw(path, tensors, metadata):
    entries, payload, offset = {}, bytearray(), 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries[name] = {"shape": list(arr.shape), "dtype": "f32", "offset": offset}
        payload += arr.tobytes()
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "metadata": metadata}).encode()
    with open(path, "wb") as f:
        f.write(b"DYMW" + struct.pack("<IQ", 1, len(header)) + header + payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def read_dymw(path):
    data = open(path, "rb").read()
    assert data[:4] == b"DYMW"
    version, hlen = struct.unpack_from("<IQ", data, 4)
    assert version == 1
    header = json.loads(data[16 : 16 + hlen])
    payload = data[16 + hlen : -4]
    assert zlib.crc32(payload) == struct.unpack("<I", data[-4:])[0]
    tensors = {}
    for name, e in header["tensors"].items():
        n = int(np.prod(e["shape"]))
        tensors[name] = np.frombuffer(payload, "<f4", n, e["offset"]).reshape(e["shape"])
    return tensors, header.get("metadata", {})


def _rms(x, w, eps):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * w


def _rope(x, rot, theta):
    # interleaved pairs (2i, 2i+1) over the leading `rot` dims
    t, d = x.shape
    out = x.copy()
    pos = np.arange(t)[:, None]
    i = np.arange(0, rot, 2)
    ang = pos * theta ** (-i / rot)
    c, s = np.cos(ang), np.sin(ang)
    x0, x1 = x[:, 0:rot:2], x[:, 1:rot:2]
    out[:, 0:rot:2] = x0 * c - x1 * s
    out[:, 1:rot:2] = x0 * s + x1 * c
    return out


def forward_logits(cfg, w, tokens):
    """Final-position logits in float64."""
    w = {k: np.asarray(v, dtype=np.float64) for k, v in w.items()}
    dh, nh, nkv = cfg["d_head"], cfg["n_heads"], cfg["n_kv_heads"]
    rot = cfg["rope_dims"] or dh
    eps, theta = cfg["norm_eps"], cfg["theta_base"]
    x = w["tok_embeddings"][np.asarray(tokens)]
    t = len(tokens)
    mask = np.triu(np.full((t, t), -np.inf), 1)
    for i in range(cfg["n_layers"]):
        p = f"layers.{i}."
        h = _rms(x, w[p + "attn_norm"], eps)
        q, k, v = h @ w[p + "wq"].T, h @ w[p + "wk"].T, h @ w[p + "wv"].T
        heads = []
        for hh in range(nh):
            g = hh // (nh // nkv)
            qh = _rope(q[:, hh * dh : (hh + 1) * dh], rot, theta)
            kh = _rope(k[:, g * dh : (g + 1) * dh], rot, theta)
            s = qh @ kh.T / np.sqrt(dh) + mask
            s = np.exp(s - s.max(axis=1, keepdims=True))
            s /= s.sum(axis=1, keepdims=True)
            heads.append(s @ v[:, g * dh : (g + 1) * dh])
        x = x + np.concatenate(heads, axis=1) @ w[p + "wo"].T
        if cfg["d_ff"]:
            h2 = _rms(x, w[p + "ffn_norm"], eps)
            a = h2 @ w[p + "w_gate"].T
            x = x + (a / (1 + np.exp(-a)) * (h2 @ w[p + "w_up"].T)) @ w[p + "w_down"].T
    hf = _rms(x[-1], w["norm"], eps)
    head = w["tok_embeddings"] if cfg["tied_embeddings"] else w["output"]
    return head @ hf


def manifest(cfg, tensors, prompts, source="synthetic"):
    return {
        "source": source,
        "name_map": {n: "model." + n for n in sorted(tensors)},
        "tensors": [
            {"name": n, "shape": list(a.shape), "crc32": zlib.crc32(np.ascontiguousarray(a, "<f4").tobytes())}
            for n, a in sorted(tensors.items())
        ],
        "config": cfg,
        "reference": [{"prompt_tokens": list(map(int, p)), "logits": forward_logits(cfg, tensors, p).tolist()} for p in prompts],
    }
