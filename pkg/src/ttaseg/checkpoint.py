"""Model checkpoints: a directory with a plain-text manifest and one
concatenated tensor file.

    model.txt     architecture as key=value lines
    manifest.txt  one line per tensor: <name> <d0>x<d1>x... <byte offset>
    tensors.bin   NTF1 blocks at the listed offsets (params, then buffers)

Save/load round-trips are bit-exact, so identical training runs produce
identical checkpoint bytes.
"""

import os

from .errors import FormatError
from .network import ModelConfig, SegModel
from .tensor import read_ntf, write_ntf


def _config_lines(cfg):
    return [
        f"in_channels={cfg.in_channels}",
        "widths=" + ",".join(str(w) for w in cfg.widths),
        f"bottleneck={cfg.bottleneck}",
        f"blocks_per_module={cfg.blocks_per_module}",
        f"kernel={cfg.kernel}",
        f"dropout_rate={cfg.dropout_rate!r}",
        f"bn_eps={cfg.bn_eps!r}",
        f"bn_momentum={cfg.bn_momentum!r}",
    ]


def _parse_config(text):
    fields = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or "=" not in ln:
            continue
        key, val = ln.split("=", 1)
        fields[key] = val
    try:
        return ModelConfig(
            in_channels=int(fields["in_channels"]),
            widths=tuple(int(w) for w in fields["widths"].split(",")),
            bottleneck=int(fields["bottleneck"]),
            blocks_per_module=int(fields["blocks_per_module"]),
            kernel=int(fields["kernel"]),
            dropout_rate=float(fields["dropout_rate"]),
            bn_eps=float(fields["bn_eps"]),
            bn_momentum=float(fields["bn_momentum"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad model config: {exc}") from exc


def _entries(model):
    for p in model.parameters():
        yield p.name, p.value
    for name, buf in model.buffers():
        yield name, buf


def save_model(model, path):
    """Write the model (parameters and running statistics) to ``path``."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "model.txt"), "w") as f:
        f.write("\n".join(_config_lines(model.cfg)) + "\n")
    manifest = []
    with open(os.path.join(path, "tensors.bin"), "wb") as f:
        for name, arr in _entries(model):
            offset = f.tell()
            dims = "x".join(str(d) for d in arr.shape) or "scalar"
            manifest.append(f"{name} {dims} {offset}")
            write_ntf(f, arr)
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("\n".join(manifest) + "\n")


def load_model(path):
    """Rebuild a SegModel from a checkpoint directory."""
    with open(os.path.join(path, "model.txt")) as f:
        cfg = _parse_config(f.read())
    model = SegModel(cfg)
    wanted = dict(_entries(model))
    seen = set()
    with open(os.path.join(path, "manifest.txt")) as f:
        manifest_lines = [ln.strip() for ln in f if ln.strip()]
    with open(os.path.join(path, "tensors.bin"), "rb") as f:
        for ln in manifest_lines:
            parts = ln.split()
            if len(parts) != 3:
                raise FormatError(f"bad manifest line: {ln!r}")
            name, dims, offset = parts[0], parts[1], int(parts[2])
            if name not in wanted:
                raise FormatError(f"unknown tensor {name!r} in checkpoint")
            arr, _ = read_ntf(f, offset)
            target = wanted[name]
            if arr.shape != target.shape:
                raise FormatError(
                    f"{name}: checkpoint shape {arr.shape} != model "
                    f"shape {target.shape}", offset=offset)
            target[...] = arr
            seen.add(name)
    missing = set(wanted) - seen
    if missing:
        raise FormatError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
