import copy
import json
from typing import Any, Dict, Optional

import topt.coresys.logger as logger


class ConfigError(ValueError):
    """Configuration could not be parsed or a field is invalid."""

    def __init__(self, message: str, field: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.field = field
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        elif field is not None:
            where = f" ({field})"
        super().__init__(f"{message}{where}")


# --- Configuration Management ---
class ConfigManager:
    """Handles reading run configs (JSON sections of keys) and recording resolved defaults."""

    def __init__(self, filename_config: Optional[str] = None, data: Optional[Dict[str, Any]] = None):
        self.filename_config = filename_config
        self.config: Dict[str, Dict[str, Any]] = {}
        if data is not None:
            self.config = copy.deepcopy(data)
        elif filename_config is not None:
            logger.debug(f"Config: loading {filename_config}")
            self._load_config()

    def _load_config(self):
        """Loads config from JSON file. Parse errors are fatal for a batch run."""
        try:
            with open(self.filename_config, 'r') as f:
                loaded_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {self.filename_config}: {e.msg}",
                              line=e.lineno, column=e.colno) from e
        except OSError as e:
            raise ConfigError(f"Could not read config {self.filename_config}: {e}") from e

        if not isinstance(loaded_data, dict):
            raise ConfigError(f"Invalid config format in {self.filename_config} (not an object)")
        for section, values in loaded_data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"Config section '{section}' must be an object", field=section)
        self.config = loaded_data
        logger.info(f"Config: loaded {self.filename_config}")

    def save_config(self, path: str) -> bool:
        """Save the resolved configuration (loaded values plus every default used)."""
        try:
            with open(path, 'w') as f:
                json.dump(self.config, f, indent=2, sort_keys=True)
            logger.debug(f"Config: resolved config saved to {path}")
            return True
        except OSError as e:
            logger.error(f"Config: error saving config to {path}: {e}")
            return False

    def has(self, section: str, key: str) -> bool:
        section_dict = self.config.get(section)
        return isinstance(section_dict, dict) and key in section_dict

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Gets value, recording the default if missing. Preserves type from load/default."""
        section_dict = self.config.get(section)

        if isinstance(section_dict, dict) and key in section_dict:
            return section_dict[key]
        if default is not None:
            logger.trace(f"Config: '{section}.{key}' not set, using default {default!r}")
            self.set(section, key, default)
            return default
        raise ConfigError("Config key not found and no default provided", field=f"{section}.{key}")

    def set(self, section: str, key: str, value: Any):
        """Sets the value (preserving type)."""
        if section not in self.config or not isinstance(self.config[section], dict):
            self.config[section] = {}
        if self.config[section].get(key, None) != value or key not in self.config[section]:
            self.config[section][key] = value
            logger.trace(f"Config: set {section}.{key} = {value!r}")

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return copy.deepcopy(self.config)
