"""
Common utilities for reading inputs and writing reproducible outputs
"""

import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

from errors import FileUnreadable, InvalidConfig, RecordMalformed, SchemaMismatch

try:
    import yaml
except Exception:
    yaml = None

TOOL_NAME = "sef-forensics"
__version__ = "0.3.0"

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    """Route all library logging through a rich handler on stderr."""
    level = logging.DEBUG if verbose else logging.INFO
    handler = RichHandler(console=Console(stderr=True), show_time=False, show_path=False)
    logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)


def parse_structured_file(file_path: str) -> Dict[str, Any]:
    """Parse a structured config file (.json, .yml/.yaml) into a dict.

    A top-level list or scalar is rejected; configs are always mappings.
    """
    try:
        with open(file_path, "r", encoding="utf-8-sig") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise FileUnreadable(f"Could not read {file_path}: {e}", {"path": str(file_path)}) from e

    if file_path.endswith(".yml") or file_path.endswith(".yaml"):
        if yaml is None:
            raise InvalidConfig("PyYAML is required for YAML config files", {"path": str(file_path)})
        try:
            obj = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise InvalidConfig(f"Could not parse YAML {file_path}: {e}", {"path": str(file_path)}) from e
    else:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"Could not parse JSON {file_path}: {e}", {"path": str(file_path)}) from e

    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise InvalidConfig(f"{file_path} must contain a mapping at top level", {"path": str(file_path)})
    return obj


def _count_comment_lines(file_path: str) -> int:
    count = 0
    with open(file_path, "r", encoding="utf-8-sig") as f:
        for line in f:
            if line.startswith("#"):
                count += 1
            else:
                break
    return count


def read_table(file_path: str, delimiter: str = ",") -> Tuple[pd.DataFrame, int]:
    """Read a delimited text file with a header row into a frame of strings.

    Leading ``#`` lines (provenance blocks) are skipped. Returns the frame and
    the 1-based line number of its first data row; blank lines are kept as
    empty rows so that ``first_line + index`` is always the file line.
    """
    if not os.path.isfile(file_path):
        raise FileUnreadable(f"No such file: {file_path}", {"path": str(file_path)})
    try:
        skip = _count_comment_lines(file_path)
        frame = pd.read_csv(
            file_path,
            sep=delimiter,
            dtype=str,
            keep_default_na=False,
            skiprows=skip,
            skip_blank_lines=False,
            encoding="utf-8-sig",
        )
    except (OSError, UnicodeDecodeError) as e:
        raise FileUnreadable(f"Could not read {file_path}: {e}", {"path": str(file_path)}) from e
    except pd.errors.EmptyDataError as e:
        raise SchemaMismatch(f"{file_path} has no header row", {"path": str(file_path)}) from e
    except pd.errors.ParserError as e:
        raise RecordMalformed(f"Could not parse {file_path}: {e}", [], {"path": str(file_path)}) from e

    frame.columns = [str(c).strip() for c in frame.columns]
    return frame, skip + 2


def file_digest(file_path: str) -> str:
    sha = hashlib.sha256()
    with open(file_path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            sha.update(block)
    return sha.hexdigest()


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance(config: Optional[Dict[str, Any]] = None, inputs: Iterable[str] = ()) -> Dict[str, Any]:
    """Provenance block: tool version, config hash and input digests (no timestamps)."""
    digests: Dict[str, str] = {}
    for path in inputs:
        key = os.path.basename(str(path))
        if key in digests:
            key = str(path)
        digests[key] = file_digest(str(path))
    return {
        "tool": TOOL_NAME,
        "version": __version__,
        "config_hash": config_hash(config or {}),
        "inputs": digests,
    }


def write_json(file_path: str, payload: Dict[str, Any], prov: Optional[Dict[str, Any]] = None) -> None:
    doc = dict(payload)
    if prov is not None:
        doc["provenance"] = prov
    with open(file_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(
    file_path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    prov: Optional[Dict[str, Any]] = None,
    delimiter: str = ",",
) -> None:
    """Write rows as CSV, preceded by the provenance block as ``# key: value`` lines."""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    with open(file_path, "w", encoding="utf-8", newline="\n") as f:
        if prov is not None:
            for line in provenance_lines(prov):
                f.write(f"# {line}\n")
        frame.to_csv(f, sep=delimiter, index=False, lineterminator="\n")


def provenance_lines(prov: Dict[str, Any]) -> List[str]:
    lines = [
        f"tool: {prov['tool']}",
        f"version: {prov['version']}",
        f"config_hash: {prov['config_hash']}",
    ]
    for name in sorted(prov.get("inputs", {})):
        lines.append(f"input: {name} sha256={prov['inputs'][name]}")
    return lines
