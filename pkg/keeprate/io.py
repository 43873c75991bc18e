from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

from keeprate import __version__
from keeprate.core import AttentionTrace, KeepingSchedule, ModelDims
from keeprate.errors import KeeprateError

logger = logging.getLogger(__name__)

TOOL_NAME = "keeprate"
PRESETS_DIR = Path(__file__).resolve().parent / "presets"


def build_meta(config: dict[str, Any], seed: int) -> dict[str, Any]:
    return {"tool": TOOL_NAME, "version": __version__, "seed": seed, "config": config}


def atomic_write_text(path: str | os.PathLike[str], text: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise
    logger.info("Wrote %s", target)
    return target


def dumps_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def dumps_csv(
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    meta: dict[str, Any] | None = None,
) -> str:
    buffer = io.StringIO()
    if meta is not None:
        buffer.write(f"# tool={meta['tool']} version={meta['version']} seed={meta['seed']}\n")
        buffer.write(f"# config={json.dumps(meta['config'], sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(value) for value in row])
    return buffer.getvalue()


def read_csv_rows(path: str | os.PathLike[str]) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def load_json(path: str | os.PathLike[str]) -> dict[str, Any]:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise KeeprateError(f"{path}: expected a JSON object")
    return data


def load_schedule(path: str | os.PathLike[str], *, monotone: bool = True) -> KeepingSchedule:
    return KeepingSchedule.from_dict(load_json(resolve_input(path)), monotone=monotone)


def load_trace(path: str | os.PathLike[str]) -> AttentionTrace:
    return AttentionTrace.from_dict(load_json(path))


def load_dims(path_or_preset: str | os.PathLike[str]) -> ModelDims:
    """Load model dimensions from a JSON file or a shipped preset name such as ``llava7b``."""
    return ModelDims.from_dict(load_json(resolve_input(path_or_preset)))


def resolve_input(path: str | os.PathLike[str]) -> Path:
    """``path`` itself, or the shipped preset when ``path`` is a bare name like ``llava7b``.

    Anything with a directory part or a suffix stays a file path, so a missing
    file surfaces as an I/O error instead of loading a preset.
    """
    text = os.fspath(path)
    candidate = Path(text)
    if candidate.exists() or candidate.suffix or candidate.name != text:
        return candidate
    preset = PRESETS_DIR / f"{text}.json"
    return preset if preset.exists() else candidate


def load_preset_schedule(name: str) -> KeepingSchedule:
    return load_schedule(PRESETS_DIR / f"{name}.json")


def schedule_payload(schedule: KeepingSchedule, meta: dict[str, Any] | None = None, **extra: Any) -> dict[str, Any]:
    payload = schedule.to_dict()
    payload.update(extra)
    if meta is not None:
        payload["meta"] = meta
    return payload


def _csv_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
