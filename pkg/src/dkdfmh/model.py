"""Convolutional-attention emotion classifier.

Layer 1 is a parallel pair of time/frequency convolutions ((10,2) and (2,8)
kernels, 8 channels each) whose outputs concatenate to 16 channels; stages
2-5 are 3x3 convolutions widening 32 -> 48 -> 64 -> 80, each batch-normed and
ReLU'd, with 2x2 max pooling after stages 2 and 3. The 80-channel map feeds a
fused multi-head self-attention layer over all spatial positions, then mean
pooling and a fully connected 4-way classifier. Teacher and student use this
same architecture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ShapeError, Tensor

N_CLASSES = 4
ATTN_DIM = 80
STAGE_CHANNELS = (16, 32, 48, 64, 80)
DEFAULT_HEADS = 4

CKPT_MAGIC = b"DKDM"
CKPT_VERSION = 1


@dataclass
class NetworkParams:
    """All learnable weights plus batch-norm running stats for one network."""

    params: dict  # name -> Tensor (requires_grad=True)
    bn_states: dict  # name -> BatchNormState
    heads: int = DEFAULT_HEADS
    use_attention: bool = True
    seed: int = 0
    head_fusion: str = "sum"  # "sum" | "mean" | "max" over head maps

    def trainable(self):
        return self.params

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def checksum(self):
        return float(sum(np.abs(t.data).sum() for t in self.params.values()))


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init(seed, heads=DEFAULT_HEADS, use_attention=True, head_fusion="sum"):
    """Seed-determined parameter initialization (Kaiming-uniform weights,
    zero biases, unit gamma)."""
    if ATTN_DIM % heads != 0:
        raise ValueError(f"head count {heads} must divide attention dim {ATTN_DIM}")
    if head_fusion not in ("sum", "mean", "max"):
        raise ValueError(f"unknown head_fusion {head_fusion!r}")
    rng = np.random.default_rng(seed)
    params = {}
    bn_states = {}

    def conv(name, out_c, in_c, kh, kw):
        fan_in = in_c * kh * kw
        params[f"{name}.weight"] = Tensor(
            _kaiming_uniform(rng, (out_c, in_c, kh, kw), fan_in), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(out_c), requires_grad=True)

    def bn(name, channels):
        params[f"{name}.gamma"] = Tensor(np.ones(channels), requires_grad=True)
        params[f"{name}.beta"] = Tensor(np.zeros(channels), requires_grad=True)
        bn_states[name] = BatchNormState.create(channels)

    conv("conv1_time", 8, 1, 10, 2)
    bn("bn1_time", 8)
    conv("conv1_freq", 8, 1, 2, 8)
    bn("bn1_freq", 8)
    in_c = STAGE_CHANNELS[0]
    for i, out_c in enumerate(STAGE_CHANNELS[1:], start=2):
        conv(f"conv{i}", out_c, in_c, 3, 3)
        bn(f"bn{i}", out_c)
        in_c = out_c
    for name in ("attn.query", "attn.key", "attn.value"):
        params[name] = Tensor(
            _kaiming_uniform(rng, (ATTN_DIM, ATTN_DIM), ATTN_DIM), requires_grad=True)
    params["fc.weight"] = Tensor(
        _kaiming_uniform(rng, (N_CLASSES, ATTN_DIM), ATTN_DIM), requires_grad=True)
    params["fc.bias"] = Tensor(np.zeros(N_CLASSES), requires_grad=True)
    return NetworkParams(params=params, bn_states=bn_states, heads=heads,
                         use_attention=use_attention, seed=seed,
                         head_fusion=head_fusion)


def fused_attention(net, feature_map, return_map=False):
    """Multi-head self-attention over spatial positions with the per-head
    attention maps fused into one row-stochastic map.

    feature_map: [N,C,H,W] with C == ATTN_DIM. The fused map is applied once
    to the value projection and the result reshaped back to [N,C,H,W].
    """
    heads = net.heads
    if ATTN_DIM % heads != 0:
        raise ValueError(f"head count {heads} must divide attention dim {ATTN_DIM}")
    n, c, h, w = feature_map.shape
    p = h * w
    head_dim = c // heads
    seq = ad.transpose(ad.reshape(feature_map, (n, c, p)), (0, 2, 1))  # [N,P,C]
    q = ad.matmul(seq, ad.transpose(net.params["attn.query"], (1, 0)))
    k = ad.matmul(seq, ad.transpose(net.params["attn.key"], (1, 0)))
    v = ad.matmul(seq, ad.transpose(net.params["attn.value"], (1, 0)))
    # [N,P,C] -> [N,heads,P,head_dim]
    qh = ad.transpose(ad.reshape(q, (n, p, heads, head_dim)), (0, 2, 1, 3))
    kh = ad.transpose(ad.reshape(k, (n, p, heads, head_dim)), (0, 2, 1, 3))
    per_head = ad.attention_weights(qh, kh, 1.0 / np.sqrt(head_dim))  # [N,heads,P,P]
    if net.head_fusion == "max":
        # elementwise max over heads, then renormalize rows
        fused_raw = Tensor(per_head.data.max(axis=1))
        if per_head.requires_grad:
            fused_raw = _max_over_heads(per_head)
    else:
        fused_raw = ad.tsum(per_head, axis=1)  # mean differs by a row constant
    row_sums = ad.tsum(fused_raw, axis=-1, keepdims=True)
    fused = ad.div(fused_raw, row_sums)  # [N,P,P], rows sum to 1
    out_seq = ad.matmul(fused, v)  # [N,P,C]
    out = ad.reshape(ad.transpose(out_seq, (0, 2, 1)), (n, c, h, w))
    if return_map:
        return out, fused
    return out


def _max_over_heads(per_head):
    n, heads, p, _ = per_head.shape
    idx = per_head.data.argmax(axis=1)  # [N,P,P]
    flat = ad.reshape(ad.transpose(per_head, (0, 2, 3, 1)), (n * p * p, heads))
    picked = ad.pick(flat, idx.reshape(-1))
    return ad.reshape(picked, (n, p, p))


def _conv_block(net, x, conv_name, bn_name, mode, pads=None, padding=(0, 0)):
    if pads is not None:
        x = ad.pad2d(x, pads)
    x = ad.conv2d(x, net.params[f"{conv_name}.weight"],
                  net.params[f"{conv_name}.bias"], padding=padding)
    x = ad.batchnorm2d(x, net.params[f"{bn_name}.gamma"],
                       net.params[f"{bn_name}.beta"], net.bn_states[bn_name], mode)
    return ad.relu(x)


def forward(net, batch, mode="eval", return_map=False):
    """Run the network; returns raw [N,4] logits (no softmax)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"forward: mode must be 'train' or 'eval', got {mode!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or x.data.shape[1] != 1:
        raise ShapeError(
            f"forward: expected input [N,1,frames,bins], got {x.data.shape}")
    # parallel time/frequency textures; even kernels need asymmetric padding
    # to keep "same" spatial size
    t_branch = _conv_block(net, x, "conv1_time", "bn1_time", mode, pads=(4, 5, 0, 1))
    f_branch = _conv_block(net, x, "conv1_freq", "bn1_freq", mode, pads=(0, 1, 3, 4))
    x = ad.concat([t_branch, f_branch], axis=1)  # [N,16,H,W]
    x = _conv_block(net, x, "conv2", "bn2", mode, padding=(1, 1))
    x = ad.maxpool2d(x)
    x = _conv_block(net, x, "conv3", "bn3", mode, padding=(1, 1))
    x = ad.maxpool2d(x)
    x = _conv_block(net, x, "conv4", "bn4", mode, padding=(1, 1))
    x = _conv_block(net, x, "conv5", "bn5", mode, padding=(1, 1))
    attn_map = None
    if net.use_attention:
        if return_map:
            x, attn_map = fused_attention(net, x, return_map=True)
        else:
            x = fused_attention(net, x)
    n, c, h, w = x.shape
    pooled = ad.tmean(ad.reshape(x, (n, c, h * w)), axis=2)  # [N,80]
    logits = ad.linear(pooled, net.params["fc.weight"], net.params["fc.bias"])
    if return_map:
        return logits, attn_map
    return logits


def param_shapes(net):
    return {name: t.data.shape for name, t in net.params.items()}


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(path, net):
    """Binary checkpoint: magic, version, config block, named float64 tensors
    (batch-norm running stats included)."""
    entries = [(name, t.data) for name, t in net.params.items()]
    for name, st in net.bn_states.items():
        entries.append((f"{name}.running_mean", st.running_mean))
        entries.append((f"{name}.running_var", st.running_var))
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        f.write(struct.pack("<HBQ", net.heads, int(net.use_attention), net.seed))
        fusion = net.head_fusion.encode()
        f.write(struct.pack("<B", len(fusion)))
        f.write(fusion)
        f.write(struct.pack("<H", len(STAGE_CHANNELS)))
        for ch in STAGE_CHANNELS:
            f.write(struct.pack("<I", ch))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"load_checkpoint: bad magic in {path}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CKPT_VERSION:
            raise ValueError(f"load_checkpoint: unsupported version {version}")
        heads, use_attention, seed = struct.unpack("<HBQ", f.read(11))
        (fusion_len,) = struct.unpack("<B", f.read(1))
        head_fusion = f.read(fusion_len).decode()
        (n_ch,) = struct.unpack("<H", f.read(2))
        channels = struct.unpack(f"<{n_ch}I", f.read(4 * n_ch))
        if channels != STAGE_CHANNELS:
            raise ValueError(
                f"load_checkpoint: channel ladder {channels} does not match "
                f"{STAGE_CHANNELS}")
        (n_entries,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (rank,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).copy()
            tensors[name] = arr
    net = init(seed, heads=heads, use_attention=bool(use_attention),
               head_fusion=head_fusion)
    for name, t in net.params.items():
        if name not in tensors:
            raise ValueError(f"load_checkpoint: missing tensor {name}")
        if tensors[name].shape != t.data.shape:
            raise ValueError(
                f"load_checkpoint: shape mismatch for {name}: "
                f"{tensors[name].shape} != {t.data.shape}")
        t.data = tensors[name]
    for name, st in net.bn_states.items():
        st.running_mean = tensors[f"{name}.running_mean"]
        st.running_var = tensors[f"{name}.running_var"]
    return net
