"""Quantization-aware training of the NLDU network on LNDS datasets.

Usage:
    python tools/train_nldu.py --stage data_p1.lnds --stage data_p3.lnds \
        --held held.lnds --out crates/core/assets/nldu.lnw
"""

import argparse
import math
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

EPS = 1e-7
CHANNELS = [(2, 7, 3), (7, 7, 3), (7, 7, 3), (7, 6, 1)]


def read_lnds(path):
    buf = open(path, "rb").read()
    if buf[:4] != b"LNDS" or buf[4] != 1:
        raise ValueError(f"{path}: not an LNDS v1 file")
    nx, ny, window = struct.unpack_from("<HHH", buf, 5)
    count, nb = struct.unpack_from("<II", buf, 12)
    pos = 20
    boundary = np.frombuffer(buf, dtype=np.dtype([("x", "<u2"), ("y", "<u2"), ("c", "u1")]), count=nb, offset=pos)
    pos += 5 * nb
    anchors = np.frombuffer(buf, dtype=np.uint8, count=window * nx * ny, offset=pos).reshape(window, nx, ny)
    pos += window * nx * ny
    rec = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u2"), ("c", "u1")])
    defects, labels = [], []
    for _ in range(count):
        for out in (defects, labels):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            out.append(np.frombuffer(buf, dtype=rec, count=n, offset=pos))
            pos += 7 * n
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return dict(nx=nx, ny=ny, window=window, boundary=boundary, anchors=anchors, defects=defects, labels=labels)


def densify(ds):
    """Input (N, 2, T, X, Y), Pauli class (N, T, X, Y), M and H (N, T, X, Y)."""
    n, t, nx, ny = len(ds["defects"]), ds["window"], ds["nx"], ds["ny"]
    x = np.zeros((n, 2, t, nx, ny), dtype=np.uint8)
    b = ds["boundary"]
    x[:, b["c"], :, b["x"], b["y"]] = 2
    pauli = np.zeros((n, t, nx, ny), dtype=np.uint8)
    m = np.zeros((n, t, nx, ny), dtype=np.uint8)
    h = np.zeros((n, t, nx, ny), dtype=np.uint8)
    for i, (d, lab) in enumerate(zip(ds["defects"], ds["labels"])):
        x[i, d["c"], d["t"], d["x"], d["y"]] = 1
        p = lab[lab["c"] <= 3]
        pauli[i, p["t"], p["x"], p["y"]] = p["c"]
        mm = lab[lab["c"] == 4]
        m[i, mm["t"], mm["x"], mm["y"]] = 1
        hh = lab[lab["c"] == 5]
        h[i, hh["t"], hh["x"], hh["y"]] = 1
    a = ds["anchors"]
    masks = [torch.from_numpy(((a >> c) & 1).astype(bool)) for c in (1, 4, 5)]
    return torch.from_numpy(x), torch.from_numpy(pauli), torch.from_numpy(m), torch.from_numpy(h), masks


def weight_scale(w):
    return max(w.detach().abs().max().item(), 1e-8) / 127.0


def fake_quant_weight(w):
    s = weight_scale(w)
    q = torch.clamp(torch.round(w / s), -127, 127) * s
    return w + (q - w).detach()


def act_params(lo, hi):
    lo, hi = min(lo, 0.0), max(hi, 1e-6)
    scale = (hi - lo) / 255.0
    zp = int(round(-lo / scale))
    return scale, min(max(zp, 0), 255)


def fake_quant_act(x, lo, hi):
    scale, zp = act_params(lo, hi)
    q = torch.clamp(torch.round(x / scale) + zp, 0, 255)
    return x + ((q - zp) * scale - x).detach()


class Nldu(nn.Module):
    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleList([nn.Conv3d(i, o, k, padding=k // 2) for i, o, k in CHANNELS])
        self.register_buffer("lo", torch.zeros(len(CHANNELS)))
        self.register_buffer("hi", torch.ones(len(CHANNELS)))
        self.quant = False

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            w = fake_quant_weight(conv.weight) if self.quant else conv.weight
            x = F.conv3d(x, w, conv.bias, padding=conv.padding)
            if i + 1 < len(self.convs):
                x = F.relu(x)
            if self.training:
                with torch.no_grad():
                    self.lo[i] = 0.99 * self.lo[i] + 0.01 * x.min()
                    self.hi[i] = 0.99 * self.hi[i] + 0.01 * x.max()
            if self.quant:
                x = fake_quant_act(x, self.lo[i].item(), self.hi[i].item())
        return x


def batch(data, idx):
    x, pauli, m, h, masks = data
    return x[idx].float(), pauli[idx].long(), m[idx].float(), h[idx].float(), masks


def loss_fn(out, pauli, m, h, masks):
    """Masked 4-class cross-entropy plus binary cross-entropies for M and H."""
    pmask, mmask, hmask = masks
    logp = torch.log(torch.clamp(F.softmax(out[:, :4], dim=1), EPS, 1.0))
    ce = -logp.gather(1, pauli.unsqueeze(1)).squeeze(1)
    total = ce[:, pmask].sum()
    for logit, target, mask in ((out[:, 4], m, mmask), (out[:, 5], h, hmask)):
        prob = torch.clamp(torch.sigmoid(logit), EPS, 1.0 - EPS)
        bce = -(target * torch.log(prob) + (1 - target) * torch.log(1 - prob))
        total = total + bce[:, mask].sum()
    return total / out.shape[0]


def evaluate(net, data):
    x, pauli, m, h, (pmask, mmask, hmask) = data
    net.eval()
    with torch.no_grad():
        out = torch.cat([net(x[i : i + 256].float()) for i in range(0, len(x), 256)])
    pauli, m, h = pauli.long(), m.float(), h.float()
    pred = out[:, :4].argmax(1)[:, pmask]
    truth = pauli[:, pmask]
    stats = {}
    for c, name in enumerate("IXYZ"):
        sel = truth == c
        stats[f"acc_{name}"] = (pred[sel] == c).float().mean().item() if sel.any() else float("nan")
    stats["pauli_fp"] = (pred[truth == 0] != 0).float().mean().item()
    theta = math.log(4.0)
    for k, (logit, target, mask) in enumerate(((out[:, 4], m, mmask), (out[:, 5], h, hmask))):
        name = "MH"[k]
        p, t = (logit[:, mask] > theta), target[:, mask] > 0.5
        stats[f"fp_{name}"] = p[~t].float().mean().item()
        stats[f"tp_{name}"] = p[t].float().mean().item() if t.any() else float("nan")
    return stats


def export(net, path):
    s_in = 1.0
    blob = bytearray(b"LNW1") + bytes([len(CHANNELS)])
    for i, conv in enumerate(net.convs):
        w = conv.weight.detach()
        sw = weight_scale(w)
        wq = torch.clamp(torch.round(w / sw), -127, 127).to(torch.int8).numpy()
        s_out, zp = act_params(net.lo[i].item(), net.hi[i].item())
        bq = torch.round(conv.bias.detach() / (s_in * sw)).to(torch.int64).numpy()
        o, c, kt, kx, ky = wq.shape
        blob += bytes([c, o, kt, kx, ky])
        blob += struct.pack("<ffi", sw, s_out, zp)
        blob += struct.pack(f"<{o}i", *[int(v) for v in bq])
        blob += wq.astype(np.int8).tobytes()
        s_in = s_out
    open(path, "wb").write(bytes(blob))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--stage", action="append", required=True, help="LNDS file per curriculum stage")
    ap.add_argument("--held", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--qat-from", type=float, default=0.5, help="fraction of each stage after which fake quantization is on")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    torch.set_num_threads(1)
    net = Nldu()
    opt = torch.optim.Adam(net.parameters(), lr=args.lr)
    held = densify(read_lnds(args.held))
    for si, path in enumerate(args.stage):
        data = densify(read_lnds(path))
        gen = torch.Generator().manual_seed(args.seed + si)
        for step in range(args.steps):
            net.quant = si > 0 or step >= args.qat_from * args.steps
            net.train()
            idx = torch.randint(len(data[0]), (args.batch,), generator=gen)
            x, pauli, m, h, masks = batch(data, idx)
            loss = loss_fn(net(x), pauli, m, h, masks)
            if not torch.isfinite(loss):
                raise RuntimeError(f"loss diverged at stage {si} step {step}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % 500 == 0 or step + 1 == args.steps:
                print(f"stage {si} step {step} loss {loss.item():.4f}", flush=True)
        print(f"stage {si} held-out", evaluate(net, held), flush=True)
    net.quant = True
    export(net, args.out)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
