import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError

from pgspot.core.errors import DataError
from pgspot.models.annotation import ImageRecord
from pgspot.models.reports import ImageResults

PathLike = Union[str, Path]
MAX_BAD_FRACTION = 0.5


def dumps(payload) -> str:
    """Compact JSON with sorted keys, so repeated runs write identical bytes."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _read_lines(path: PathLike) -> List[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError:
        raise DataError(f"{path}: file must be UTF-8 encoded")
    except OSError as e:
        raise DataError(f"{path}: cannot read file - {e}")


def _parse(path: PathLike, model, label: str):
    """
    Parse a JSON-lines file into ``model`` instances.

    Malformed lines are reported with their line number and skipped; the load
    fails when more than half of the non-blank lines are malformed.
    """
    lines = _read_lines(path)
    records, errors, total = [], [], 0
    for line_num, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        try:
            records.append(model.model_validate(json.loads(line)))
        except json.JSONDecodeError as e:
            errors.append(f"Line {line_num}: invalid JSON - {e.msg}")
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(part) for part in first["loc"])
            errors.append(f"Line {line_num}: {where}: {first['msg']}")
    for error in errors:
        logging.warning(f"{path}: {error}")
    if total == 0:
        logging.warning(f"{path}: empty {label} file")
    elif len(errors) > MAX_BAD_FRACTION * total:
        raise DataError(f"{path}: {len(errors)} of {total} lines are malformed; first: {errors[0]}")
    return records


def load_dataset(path: PathLike) -> List[ImageRecord]:
    return _parse(path, ImageRecord, "annotation")


def load_results(path: PathLike) -> List[ImageResults]:
    return _parse(path, ImageResults, "results")


def write_jsonl(path: PathLike, rows: Iterable) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(dumps(row) + "\n")
            count += 1
    return count


def save_dataset(path: PathLike, records: Sequence[ImageRecord]) -> int:
    return write_jsonl(path, records)


def save_results(path: PathLike, results: Sequence[ImageResults]) -> int:
    return write_jsonl(path, results)


def write_json(path: PathLike, payload):
    Path(path).write_text(dumps(payload) + "\n", encoding="utf-8")


def load_lexicon(path: PathLike) -> Tuple[List[str], Dict[str, List[str]]]:
    """
    Read a lexicon file.

    Plain text holds one word per line (generic list). JSON-lines hold
    ``{"image": id, "words": [...]}`` per line (per-image lists).
    """
    words, per_image = [], {}
    for line_num, line in enumerate(_read_lines(path), start=1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("{"):
            try:
                entry = json.loads(text)
                per_image[str(entry["image"])] = [str(w) for w in entry["words"]]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}: line {line_num}: bad lexicon entry - {e}")
        else:
            words.append(text)
    return words, per_image
