"""Checkpoint archive: text manifest + concatenated little-endian float32 payload.

Layout: a UTF-8 manifest block (one line per field, one ``tensor`` line per
array with name, dtype, shape, byte offset, byte length), a ``---`` separator
line, then the raw payload. Tensors are sorted by name, so save -> load ->
save is byte-identical. The manifest also carries the model configuration so
a model can be reconstructed from the file alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .model import ModelConfig, WordBertModel
from .optim import Adam
from .tensor import Tensor

_MAGIC = "#wordlm-checkpoint v1"
_SEPARATOR = b"---\n"


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(s: str):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def save_checkpoint(
    model: WordBertModel,
    optimizer: Adam | None,
    step: int,
    path,
    digest: str = "-",
):
    """Write model (and optimizer state) to the archive format."""
    tensors: dict[str, np.ndarray] = {name: t.data for name, t in model.parameters().items()}
    opt_steps = {}
    if optimizer is not None:
        for name, state in optimizer.states.items():
            tensors[f"optimizer.m.{name}"] = state.first_moment
            tensors[f"optimizer.v.{name}"] = state.second_moment
            opt_steps[name] = state.step_count

    lines = [_MAGIC, f"step {int(step)}", f"seed {int(model.seed)}", f"config_digest {digest}"]
    for key, value in model.config.to_dict().items():
        lines.append(f"model_config {key} {_format_value(value)}")
    for name in sorted(opt_steps):
        lines.append(f"opt_step {name} {opt_steps[name]}")

    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        shape = "x".join(str(d) for d in arr.shape)
        raw = arr.tobytes()
        lines.append(f"tensor {name} f32 {shape} {len(payload)} {len(raw)}")
        payload.extend(raw)
    lines.append(f"payload_bytes {len(payload)}")

    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("utf-8") + b"\n")
        fh.write(_SEPARATOR)
        fh.write(bytes(payload))


@dataclass
class Checkpoint:
    model: WordBertModel
    optimizer: Adam
    step: int
    seed: int
    digest: str
    manifest: str


def read_manifest(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(_SEPARATOR)
    if sep < 0:
        raise IntegrityError(f"{path}: missing manifest separator")
    try:
        manifest_text = blob[:sep].decode("utf-8")
    except UnicodeDecodeError as err:
        raise IntegrityError(f"{path}: manifest is not UTF-8: {err}") from err
    payload = blob[sep + len(_SEPARATOR):]

    info = {"model_config": {}, "opt_steps": {}, "tensors": {}, "manifest": manifest_text}
    lines = manifest_text.rstrip("\n").split("\n")
    if not lines or lines[0] != _MAGIC:
        raise IntegrityError(f"{path}: not a {_MAGIC} file")
    declared = None
    for line in lines[1:]:
        fields = line.split(" ")
        if fields[0] == "step":
            info["step"] = int(fields[1])
        elif fields[0] == "seed":
            info["seed"] = int(fields[1])
        elif fields[0] == "config_digest":
            info["digest"] = fields[1]
        elif fields[0] == "model_config":
            info["model_config"][fields[1]] = _parse_value(" ".join(fields[2:]))
        elif fields[0] == "opt_step":
            info["opt_steps"][fields[1]] = int(fields[2])
        elif fields[0] == "tensor":
            name, dtype, shape_s, offset, length = fields[1:6]
            if dtype != "f32":
                raise IntegrityError(f"{path}: unsupported dtype {dtype} for {name}")
            shape = tuple(int(d) for d in shape_s.split("x")) if shape_s else ()
            info["tensors"][name] = (shape, int(offset), int(length))
        elif fields[0] == "payload_bytes":
            declared = int(fields[1])
        else:
            raise IntegrityError(f"{path}: unknown manifest line {line!r}")

    if declared is None:
        raise IntegrityError(f"{path}: manifest missing payload_bytes")
    if declared != len(payload):
        raise IntegrityError(
            f"{path}: payload size mismatch: expected {declared} bytes, got {len(payload)}"
        )
    for name, (shape, offset, length) in info["tensors"].items():
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if expected != length or offset + length > len(payload):
            raise IntegrityError(
                f"{path}: tensor {name} expects {expected} bytes at offset {offset}, "
                f"payload has {len(payload)}"
            )
    return info, payload


def _tensor_from(payload: bytes, shape, offset, length) -> np.ndarray:
    flat = np.frombuffer(payload[offset : offset + length], dtype="<f4")
    return flat.reshape(shape).copy()


def load_checkpoint(path) -> Checkpoint:
    """Reconstruct model, optimizer state, and step from an archive."""
    info, payload = read_manifest(path)
    config = ModelConfig.from_dict(info["model_config"])
    seed = info["seed"]

    kwargs = {}
    if config.variant == "projected":
        shape, offset, length = info["tensors"]["embedding.word"]
        kwargs["word_vectors"] = _tensor_from(payload, shape, offset, length)
    model = WordBertModel(config, seed=seed, **kwargs)

    for name, (shape, offset, length) in info["tensors"].items():
        if name.startswith("optimizer."):
            continue
        arr = _tensor_from(payload, shape, offset, length)
        if name in model.params:
            if model.params[name].data.shape != arr.shape:
                raise IntegrityError(
                    f"{path}: tensor {name} shape {arr.shape} does not match model "
                    f"{model.params[name].data.shape}"
                )
            model.params[name].data[...] = arr
        else:  # task heads re-attach as trainable parameters
            model.params[name] = Tensor(arr, requires_grad=True)

    optimizer = Adam(model.trainable_parameters())
    for name, state in optimizer.states.items():
        m_key, v_key = f"optimizer.m.{name}", f"optimizer.v.{name}"
        if m_key in info["tensors"]:
            state.first_moment[...] = _tensor_from(payload, *info["tensors"][m_key])
            state.second_moment[...] = _tensor_from(payload, *info["tensors"][v_key])
            state.step_count = info["opt_steps"].get(name, 0)
    return Checkpoint(
        model=model,
        optimizer=optimizer,
        step=info["step"],
        seed=seed,
        digest=info.get("digest", "-"),
        manifest=info["manifest"],
    )
