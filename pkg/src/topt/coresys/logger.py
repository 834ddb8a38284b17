"""
Logging module for batch optimization runs.
This module provides global logging functionality shared by every run in the process.
"""

import json
import os
import threading
import time

# Module-level configuration and state
_debug_level = 2
_log_dir = None
_last_error = None
_error_history = []
_max_error_history = 50
_lock = threading.Lock()

# Constants
ERROR_FILE = "lasterror.json"
LOG_FILE = "topt.log"


def initialize(debug_level=2):
    """Initialize the logger with a specific debug level."""
    global _debug_level
    _debug_level = debug_level
    debug(f"Logger initialized with debug level {_debug_level}")


def set_log_dir(log_dir):
    """Direct file logging to <log_dir>/topt.log. None disables file logging."""
    global _log_dir
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
    _log_dir = log_dir


def fatal(error_type, message):
    """Record a fatal run error. Only writes the error file if different from the last one.

    The caller decides the exit status; nothing here terminates the process.
    """
    global _last_error

    new_error = {
        "timestamp": time.time(),
        "type": error_type,
        "message": message,
    }

    print(f"FATAL: {error_type} - {message}")
    with _lock:
        if _log_dir is not None and (_last_error is None or
                                     (_last_error["type"], _last_error["message"]) != (error_type, message)):
            try:
                with open(os.path.join(_log_dir, ERROR_FILE), 'w') as f:
                    json.dump(new_error, f, indent=2)
                _last_error = new_error
            except OSError as e:
                print(f"Failed to write error log: {e}")
    _log_to_file("FATAL", f"{error_type} - {message}")
    _add_to_history("FATAL", message)


def error(message, log_to_file=True):
    """Log a non-fatal error."""
    print(f"ERROR: {message}")
    if log_to_file:
        _log_to_file("ERROR", message)
    _add_to_history("ERROR", message)


def warning(message, log_to_file=True):
    """Log a warning message to the history."""
    if _debug_level >= 1:
        print(f"WARNING: {message}")
    if log_to_file:
        _log_to_file("WARNING", message)
    _add_to_history("WARNING", message)


def info(message, log_to_file=True):
    """Log an informational message."""
    if _debug_level >= 2:
        print(f"INFO: {message}")
        if log_to_file:
            _log_to_file("INFO", message)


def debug(message, log_to_file=False):
    """Log a debug message."""
    if _debug_level >= 3:
        print(f"DEBUG: {message}")
        if log_to_file:
            _log_to_file("DEBUG", message)


def trace(message, log_to_file=False):
    """Log a trace message."""
    if _debug_level >= 4:
        print(f"TRACE: {message}")
        if log_to_file:
            _log_to_file("TRACE", message)


def get_error_warning_history():
    """Return the recent error and warning history."""
    with _lock:
        return list(_error_history)


def clear_error_history():
    """Forget recorded errors and warnings."""
    global _last_error
    with _lock:
        _error_history.clear()
        _last_error = None


# Private helper functions
def _log_to_file(level, message):
    """Append a message to the log file."""
    if _log_dir is None:
        return
    with _lock:
        try:
            with open(os.path.join(_log_dir, LOG_FILE), 'a') as f:
                f.write(f"{time.strftime('%Y-%m-%d %H:%M:%S')} - {level}: {message}\n")
        except OSError as e:
            print(f"Failed to write to log file: {e}")


def _add_to_history(level, message):
    """Add an error or warning to the history, keeping only the last entries."""
    with _lock:
        _error_history.append({"level": level, "message": message, "timestamp": time.time()})
        if len(_error_history) > _max_error_history:
            _error_history.pop(0)
