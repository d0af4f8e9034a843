"""Text checkpoint: key/value manifest followed by base64 fp32 buffers.

Layout::

    cct-checkpoint
    format_version=1
    config={...json...}
    run={...json...}
    param=<name> <d0>x<d1>...
    ...
    buffers_sha256=<hex>
    manifest_sha256=<hex of every preceding manifest line>
    [buffers]
    <name> <base64 little-endian fp32>
    ...

The version line is checked before anything else so that a version
mismatch is reported as such rather than as a checksum failure.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, IntegrityError, VersionError
from ..numerics import Tensor, resolve_dtype
from .config import CctConfig
from .params import param_shapes

MAGIC = "cct-checkpoint"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def _shape_text(shape) -> str:
    return "x".join(str(int(s)) for s in shape) if len(shape) else "scalar"


def _parse_shape(text: str) -> tuple:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def dumps(params: dict, config: CctConfig, run: dict | None = None,
          format_version: int = FORMAT_VERSION) -> str:
    buffer_lines = []
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype=_LE_F32).tobytes()
        buffer_lines.append(f"{name} {base64.b64encode(raw).decode('ascii')}")
    buffers_text = "\n".join(buffer_lines) + "\n"

    manifest = [
        MAGIC,
        f"format_version={format_version}",
        "config=" + json.dumps(config.to_dict(), sort_keys=True),
        "run=" + json.dumps(run or {}, sort_keys=True),
    ]
    manifest += [f"param={name} {_shape_text(t.shape)}" for name, t in params.items()]
    manifest.append("buffers_sha256=" + hashlib.sha256(buffers_text.encode()).hexdigest())
    manifest_text = "\n".join(manifest) + "\n"
    digest = hashlib.sha256(manifest_text.encode()).hexdigest()
    return manifest_text + f"manifest_sha256={digest}\n[buffers]\n" + buffers_text


def save_checkpoint(params: dict, config: CctConfig, path, run: dict | None = None) -> None:
    Path(path).write_text(dumps(params, config, run))


def loads(text: str, dtype=None):
    """Parse checkpoint text into ``(params, config, run)``."""
    dtype = resolve_dtype(dtype)
    lines = text.split("\n")
    if len(lines) < 3 or lines[0] != MAGIC:
        raise CheckpointError("not a cct checkpoint (bad magic line)")
    if not lines[1].startswith("format_version="):
        raise CheckpointError("checkpoint is missing its format_version line")
    try:
        version = int(lines[1].split("=", 1)[1])
    except ValueError as exc:
        raise VersionError(f"unreadable format version {lines[1]!r}") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version} is not supported "
                           f"(this build reads version {FORMAT_VERSION})")
    try:
        split = lines.index("[buffers]")
    except ValueError as exc:
        raise IntegrityError("checkpoint is truncated: no [buffers] section") from exc

    head, digest_line = lines[:split - 1], lines[split - 1]
    manifest_text = "\n".join(head) + "\n"
    if not digest_line.startswith("manifest_sha256="):
        raise IntegrityError("checkpoint manifest checksum line is missing")
    if hashlib.sha256(manifest_text.encode()).hexdigest() != digest_line.split("=", 1)[1]:
        raise IntegrityError("manifest section checksum mismatch")

    fields, declared = {}, []
    for line in head[2:]:
        key, _, value = line.partition("=")
        if key == "param":
            name, shape = value.rsplit(" ", 1)
            declared.append((name, _parse_shape(shape)))
        else:
            fields[key] = value

    buffers_text = "\n".join(lines[split + 1:])
    if hashlib.sha256(buffers_text.encode()).hexdigest() != fields.get("buffers_sha256"):
        raise IntegrityError("buffer section checksum mismatch (file corrupted or truncated)")

    config = CctConfig.from_dict(json.loads(fields["config"]))
    run = json.loads(fields.get("run", "{}"))
    expected = param_shapes(config)
    if [n for n, _ in declared] != list(expected) or any(
            tuple(expected[n]) != s for n, s in declared):
        raise CheckpointError("checkpoint parameter shapes do not match its embedded config")

    rows = [ln for ln in lines[split + 1:] if ln]
    if len(rows) != len(declared):
        raise IntegrityError(f"expected {len(declared)} buffers, found {len(rows)}")
    params = {}
    for (name, shape), row in zip(declared, rows):
        rname, _, payload = row.partition(" ")
        if rname != name:
            raise IntegrityError(f"buffer {rname!r} is out of declaration order (expected {name!r})")
        values = np.frombuffer(base64.b64decode(payload), dtype=_LE_F32)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"buffer {name} holds {values.size} values, shape {shape}")
        params[name] = Tensor(values.reshape(shape).astype(dtype), requires_grad=True, dtype=dtype)
    return params, config, run


def load_checkpoint(path, dtype=None):
    """Returns ``(params, config)``."""
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    params, config, _ = loads(text, dtype)
    return params, config


def load_checkpoint_run(path) -> dict:
    return loads(Path(path).read_text())[2]
