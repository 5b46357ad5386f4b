"""Checkpoint directories.

Layout::

    <ckpt>/manifest.tsv   name, shape, dtype, file
    <ckpt>/meta.tsv       key, value (iteration, config_hash, seed, ...)
    <ckpt>/resolved.cfg   the full training configuration
    <ckpt>/params/*.f32   one raw little-endian float32 array per entry

Entries are network parameters (``G_X/down.1.weight``) and, when saved from a
training state, Adam moments (``opt/Q/Q/mu.weight/exp_avg``).
"""
from pathlib import Path

import numpy as np
import torch

from .config import load_config, write_config
from .models import Networks

DTYPE = "float32-le"


def _file_name(name):
    return name.replace("/", "__") + ".f32"


def _write_arrays(arrays, root):
    pdir = root / "params"
    pdir.mkdir(parents=True, exist_ok=True)
    lines = ["name\tshape\tdtype\tfile"]
    for name, arr in arrays:
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        fname = _file_name(name)
        arr.tofile(pdir / fname)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{DTYPE}\tparams/{fname}")
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n")


def _read_manifest(root):
    path = root / "manifest.tsv"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    entries = {}
    for line in path.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        name, shape, dtype, fname = line.split("\t")
        if dtype != DTYPE:
            raise ValueError(f"{name}: unsupported dtype {dtype}")
        shape = tuple(int(s) for s in shape.split(",")) if shape else ()
        entries[name] = (shape, root / fname)
    return entries


def _read_array(shape, path):
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {arr.size}")
    return arr.reshape(shape)


def save_checkpoint(path, config, nets, iteration, optimizers=None):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = [(f"{net}/{name}", p.detach().cpu().numpy()) for net, name, p in nets.named_network_parameters()]
    if optimizers:
        for group, opt in optimizers.items():
            for key, p in opt.named_params:
                st = opt.state.get(p)
                if not st:
                    continue
                base = f"opt/{group}/{key}"
                arrays.append((f"{base}/exp_avg", st["exp_avg"].detach().cpu().numpy()))
                arrays.append((f"{base}/exp_avg_sq", st["exp_avg_sq"].detach().cpu().numpy()))
                arrays.append((f"{base}/step", np.array([float(st["step"])])))
    _write_arrays(arrays, root)
    write_config(config, root / "resolved.cfg")
    meta = {"iteration": iteration, "config_hash": config.hash(), "seed": config.seed}
    (root / "meta.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in meta.items()))
    return root


def read_meta(path):
    meta = {}
    for line in (Path(path) / "meta.tsv").read_text().splitlines():
        if line.strip():
            k, v = line.split("\t", 1)
            meta[k] = v
    return meta


class Checkpoint:
    """A loaded checkpoint: config, networks (eval mode), iteration, raw entries."""

    def __init__(self, config, nets, iteration, entries, path=None):
        self.config = config
        self.nets = nets
        self.iteration = iteration
        self._entries = entries
        self.path = path

    def optimizer_entries(self):
        return {k: v for k, v in self._entries.items() if k.startswith("opt/")}

    def load_array(self, name):
        shape, path = self._entries[name]
        return _read_array(shape, path)


def load_checkpoint(path, dtype=torch.float32):
    """Load and validate a checkpoint directory.

    Every network parameter of the architecture described by
    ``resolved.cfg`` must be present with the right shape, and no unknown
    network entries may appear.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {root}")
    config = load_config(root / "resolved.cfg")
    meta = read_meta(root)
    if meta.get("config_hash") != config.hash():
        raise ValueError(f"{root}: config hash mismatch ({meta.get('config_hash')} != {config.hash()})")
    entries = _read_manifest(root)
    nets = Networks(config.architecture, seed=config.seed).to(dtype)
    expected = set()
    with torch.no_grad():
        for net, name, p in nets.named_network_parameters():
            key = f"{net}/{name}"
            expected.add(key)
            if key not in entries:
                raise ValueError(f"{root}: missing parameter {key}")
            shape, fpath = entries[key]
            if tuple(shape) != tuple(p.shape):
                raise ValueError(f"{root}: {key} has shape {shape}, architecture expects {tuple(p.shape)}")
            p.copy_(torch.from_numpy(_read_array(shape, fpath)).to(dtype))
    unknown = [k for k in entries if not k.startswith("opt/") and k not in expected]
    if unknown:
        raise ValueError(f"{root}: unexpected entries {unknown[:3]}")
    nets.eval()
    return Checkpoint(config, nets, int(meta["iteration"]), entries, root)
