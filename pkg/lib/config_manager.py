"""
Configuration Manager for the uptake toolkit.

Resolves the effective settings of a command-line run (built-in defaults,
presets, a JSON config file, then explicit flags), manages user presets, and
writes the run manifest that sits next to every primary output.
"""

import os
import sys
import hashlib
import logging
from typing import Any, Dict, List, Optional

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import FILE_PATHS, TOOL_VERSION
from common_utils import (DataError, canonical_json, file_sha256, get_current_timestamp,
                          read_json, write_json)

logger = logging.getLogger(__name__)

# Settings that never change primary outputs and so stay out of the config hash.
UNHASHED_SETTINGS = {"jobs", "log_level", "quiet", "config", "preset", "command", "seed"}


def normalize_key(key: str) -> str:
    return key.strip().lstrip('-').replace('-', '_')


class ConfigManager:
    """Manages presets, config files, config hashes and run manifests."""

    def __init__(self, presets_file: Optional[str] = None):
        self.presets_file = presets_file or FILE_PATHS['presets']

        # Built-in presets
        self.built_in_presets = {
            "standard": {
                "name": "standard",
                "description": "Published settings: 5-token filter, 3 negatives, 1000 bootstrap iterations",
                "config": {"min_s_tokens": 5, "k": 3, "iterations": 1000, "level": 0.95,
                           "threshold_sd": 1.5},
            },
            "quick": {
                "name": "quick",
                "description": "Faster runs for exploration",
                "config": {"iterations": 200, "epochs": 5, "n_pairs": 1000},
            },
            "test_mode": {
                "name": "test_mode",
                "description": "Minimal settings for smoke tests",
                "config": {"iterations": 50, "epochs": 3, "n_pairs": 200},
            },
        }

    # --- Presets ---

    def load_preset(self, name: str) -> Dict[str, Any]:
        """
        Settings of a built-in or user preset.

        Raises:
            ValueError: Unknown preset name
        """
        if name in self.built_in_presets:
            return dict(self.built_in_presets[name]["config"])
        presets = self._load_presets()
        if name in presets:
            return {normalize_key(k): v for k, v in presets[name].get("config", {}).items()}
        raise ValueError(f"unknown preset '{name}' (available: {', '.join(p['name'] for p in self.list_presets())})")

    def save_preset(self, name: str, config: Dict[str, Any], description: str = "User preset") -> None:
        """Save settings as a user preset."""
        if name in self.built_in_presets:
            raise ValueError(f"'{name}' is a built-in preset")
        nested = sorted(k for k, v in config.items() if isinstance(v, (dict, list)))
        if nested:
            raise ValueError(f"preset settings must be scalar values: {', '.join(nested)}")
        presets = self._load_presets()
        presets[name] = {
            "name": name,
            "description": description,
            "config": {normalize_key(k): v for k, v in config.items()},
            "created_at": get_current_timestamp(),
        }
        write_json(self.presets_file, presets)

    def delete_preset(self, name: str) -> bool:
        """Delete a user preset."""
        if name in self.built_in_presets:
            return False  # Cannot delete built-in presets
        presets = self._load_presets()
        if name in presets:
            del presets[name]
            write_json(self.presets_file, presets)
            return True
        return False

    def list_presets(self) -> List[Dict[str, Any]]:
        """List all available presets."""
        presets = [{"name": p["name"], "description": p["description"], "type": "built-in"}
                   for p in self.built_in_presets.values()]
        for preset in self._load_presets().values():
            presets.append({
                "name": preset.get("name", "?"),
                "description": preset.get("description", "User preset"),
                "type": "user",
                "created_at": preset.get("created_at", "Unknown"),
            })
        return presets

    def _load_presets(self) -> Dict[str, Any]:
        """Load user presets from file."""
        if not os.path.exists(self.presets_file):
            return {}
        try:
            presets = read_json(self.presets_file)
        except DataError as e:
            logger.warning("Ignoring unreadable presets file: %s", e)
            return {}
        return presets if isinstance(presets, dict) else {}

    # --- Config Files ---

    def load_config_file(self, filepath: str, command: str) -> Dict[str, Any]:
        """
        Settings from a JSON config file for one sub-command.

        Top-level scalar keys apply to every command; an object keyed by the
        sub-command name (e.g. "nuc-train") overrides them for that command.
        """
        data = read_json(filepath)
        if not isinstance(data, dict):
            raise DataError("config file must hold a JSON object", filepath)
        settings = {normalize_key(k): v for k, v in data.items() if not isinstance(v, dict)}
        section = data.get(command) or data.get(normalize_key(command))
        if section is not None:
            if not isinstance(section, dict):
                raise DataError(f"section '{command}' must be a JSON object", filepath)
            settings.update({normalize_key(k): v for k, v in section.items()})
        return settings

    def resolve_overrides(self, command: str, preset: Optional[str] = None,
                          config_file: Optional[str] = None) -> Dict[str, Any]:
        """Preset settings overlaid by config-file settings (flags are applied by the caller)."""
        overrides: Dict[str, Any] = {}
        if preset:
            overrides.update(self.load_preset(preset))
        if config_file:
            overrides.update(self.load_config_file(config_file, command))
        return overrides

    # --- Hashes and Manifests ---

    def config_hash(self, command: str, settings: Dict[str, Any], seed: int,
                    inputs: Dict[str, Optional[str]], outputs: Dict[str, Optional[str]]) -> str:
        """
        SHA-256 over the command, the output-affecting settings, the seed and
        the digests of every input file.
        """
        excluded = UNHASHED_SETTINGS | set(inputs) | set(outputs)
        payload = {
            "command": command,
            "settings": {k: v for k, v in sorted(settings.items()) if k not in excluded},
            "seed": seed,
            "inputs": {name: file_sha256(path) for name, path in sorted(inputs.items()) if path},
        }
        return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()

    def write_run_manifest(self, primary_output: str, command: str, config_hash: str, seed: int,
                           input_paths: List[str], output_paths: List[str]) -> str:
        """Write `<primary_output>.manifest.json` and return its path."""
        manifest_path = f"{primary_output}.manifest.json"
        write_json(manifest_path, {
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "input_paths": [p for p in input_paths if p],
            "output_paths": [p for p in output_paths if p],
            "tool_version": TOOL_VERSION,
            "timestamp": get_current_timestamp(),
        })
        logger.info("Manifest written to %s", manifest_path)
        return manifest_path
