import hashlib
import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd

from tactile.config_schema import Pattern
from tactile.exceptions import ArtifactError
from tactile.power import PowerTrace
from tactile.skills import CSV_FLOAT_FORMAT, SkillProfile, csv_to_skill

MANIFEST_NAME = "manifest.json"


def save_dataframe_to_file(frame: pd.DataFrame, output_path: Path, float_format: str = CSV_FLOAT_FORMAT) -> None:
    """Saves a DataFrame as CSV with round-trip float formatting.

    Args:
        frame: The DataFrame to save.
        output_path: The path where the file should be saved.
        float_format: printf-style float format for every float column.

    Raises:
        ArtifactError: If the file could not be written.
    """
    logging.debug(f"Saving {len(frame)} rows to {output_path}")
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(output_path, index=False, float_format=float_format, lineterminator="\n")
    except OSError as e:
        error_msg = f"Failed to write {output_path}: {e}"
        logging.error(error_msg)
        raise ArtifactError(error_msg) from e


def save_json_report(payload: dict[str, Any], output_path: Path, config_hash: str | None = None) -> None:
    """Writes a JSON report with sorted keys and no timestamps, so identical runs give identical bytes."""
    document = dict(payload)
    if config_hash is not None:
        document["config_hash"] = config_hash
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n")
    except (OSError, ValueError) as e:
        error_msg = f"Failed to write report {output_path}: {e}"
        logging.error(error_msg)
        raise ArtifactError(error_msg) from e
    logging.info(f"Successfully created: {output_path}")


def read_json(path: Path) -> dict[str, Any]:
    try:
        with path.open() as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Failed to read {path}: {e}") from e
    if not isinstance(data, dict):
        raise ArtifactError(f"{path} must hold a JSON object")
    return data


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_power_trace(trace: PowerTrace, output_path: Path, epsilon: float | None = None) -> None:
    save_dataframe_to_file(trace.to_frame(epsilon), output_path)


def read_power_trace(path: Path, column: str = "power_W") -> PowerTrace:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise ArtifactError(f"Failed to read power trace {path}: {e}") from e
    if "t" not in frame.columns or column not in frame.columns:
        raise ArtifactError(f"{path} lacks the columns 't' and '{column}'")
    return PowerTrace.from_frame(frame, column)


def load_dataset(dataset_dir: Path) -> tuple[list[tuple[SkillProfile, PowerTrace]], list[str], dict[str, Any]]:
    """Reads every successfully collected (skill, power trace) pair listed in a dataset manifest.

    File hashes are checked against the manifest.
    """
    manifest = read_json(dataset_dir / MANIFEST_NAME)
    pairs: list[tuple[SkillProfile, PowerTrace]] = []
    names: list[str] = []
    for entry in manifest.get("entries", []):
        if entry.get("status") != "ok":
            continue
        skill_path = dataset_dir / entry["skill_file"]
        trace_path = dataset_dir / entry["trace_file"]
        for path, key in ((skill_path, "skill_sha256"), (trace_path, "trace_sha256")):
            if file_sha256(path) != entry[key]:
                raise ArtifactError(f"{path} does not match the hash recorded in the manifest")
        pattern = Pattern(entry["pattern"]) if entry.get("pattern") else None
        skill = csv_to_skill(skill_path, surface_id=manifest.get("surface", "unknown"), pattern=pattern)
        pairs.append((skill, read_power_trace(trace_path)))
        names.append(entry["name"])
    logging.info(f"Loaded {len(pairs)} trajectories from {dataset_dir}")
    return pairs, names, manifest
