import json

import topt.coresys.logger as logger


def test_levels_gate_console_output(capsys):
    logger.initialize(1)
    logger.info("hidden")
    logger.warning("shown", log_to_file=False)
    out = capsys.readouterr().out
    assert "hidden" not in out
    assert "WARNING: shown" in out


def test_file_logging(tmp_path):
    logger.initialize(2)
    logger.set_log_dir(str(tmp_path / "logs"))
    logger.info("to file")
    logger.debug("not at this level")
    text = (tmp_path / "logs" / logger.LOG_FILE).read_text()
    assert "INFO: to file" in text
    assert "not at this level" not in text


def test_fatal_writes_error_file_once(tmp_path):
    logger.set_log_dir(str(tmp_path))
    logger.fatal("FlowError", "step 3 failed")
    first = json.loads((tmp_path / logger.ERROR_FILE).read_text())
    assert first["type"] == "FlowError"
    logger.fatal("FlowError", "step 3 failed")
    assert json.loads((tmp_path / logger.ERROR_FILE).read_text())["timestamp"] == first["timestamp"]


def test_history_is_bounded():
    for i in range(60):
        logger.warning(f"w{i}", log_to_file=False)
    history = logger.get_error_warning_history()
    assert len(history) == 50
    assert history[-1]["message"] == "w59"


def test_clear_error_history():
    logger.error("e0", log_to_file=False)
    assert logger.get_error_warning_history()[0]["level"] == "ERROR"
    logger.clear_error_history()
    assert logger.get_error_warning_history() == []
