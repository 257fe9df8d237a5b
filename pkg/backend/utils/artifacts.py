import csv
import json
import os
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Sequence, Union

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    """
    Create a directory (and parents) if missing.
    Args:
        path: Directory to create.
    Returns:
        The directory as a Path.
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_json(data: Any, path: PathLike, *, indent: int = 2) -> Path:
    """
    Save JSON with sorted keys so reruns produce identical files.
    """
    target = Path(path)
    ensure_dir(target.parent)
    with open(target, 'w') as f:
        f.write(json.dumps(data, indent=indent, sort_keys=True))
        f.write("\n")
    return target


def read_json(path: PathLike) -> Any:
    with open(path, 'r') as f:
        return json.load(f)


def write_jsonl(records: Iterable[Mapping[str, Any]], path: PathLike) -> Path:
    target = Path(path)
    ensure_dir(target.parent)
    with open(target, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")
    return target


def read_jsonl(path: PathLike) -> List[dict]:
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv(rows: Iterable[Sequence[Any]], columns: Sequence[str], path: PathLike) -> Path:
    """
    Write a CSV with a header row and Unix line endings.
    """
    target = Path(path)
    ensure_dir(target.parent)
    with open(target, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return target


def read_csv(path: PathLike) -> List[dict]:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))


def write_text(text: str, path: PathLike) -> Path:
    target = Path(path)
    ensure_dir(target.parent)
    with open(target, 'w') as f:
        f.write(text)
    return target


def safe_name(label: str) -> str:
    """File-system friendly version of a label"""
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label) or "unnamed"


def list_files(directory: PathLike, suffix: str) -> List[Path]:
    if not os.path.isdir(directory):
        return []
    return sorted(p for p in Path(directory).rglob(f"*{suffix}") if p.is_file())
