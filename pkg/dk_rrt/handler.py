import logging

from .bench.commands import COMMANDS
from .errors import ConfigError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2


# ===================================================================================
# CORE PROCESSING LOGIC
# Every interface (CLI, job runner) calls process_job.
# ===================================================================================
def process_job(job_input):
    """
    Run one command described by a job dict

    Args:
        job_input: {"command": "train" | "plan" | "bench" | "simulate",
                    "config": path, "seed": int or None, "out": dir or None,
                    "deterministic": bool}

    Returns:
        The command's summary dict plus "exit_code"; failures return
        {"error": message, "exit_code": 1 or 2}
    """
    command = job_input.get("command")
    config = job_input.get("config")

    if command not in COMMANDS:
        return {"error": f"Unknown command: {command}", "exit_code": EXIT_CONFIG_ERROR}
    if not config:
        return {"error": f"{command}: a config file is required", "exit_code": EXIT_CONFIG_ERROR}

    try:
        result = COMMANDS[command](
            config,
            seed=job_input.get("seed"),
            out=job_input.get("out"),
            deterministic=bool(job_input.get("deterministic", False)),
        )
    except ConfigError as e:
        return {"error": str(e), "exit_code": EXIT_CONFIG_ERROR}
    except Exception as e:
        logger.debug("--> Job failed", exc_info=True)
        return {"error": f"{command} failed: {e}", "exit_code": EXIT_RUN_FAILURE}

    result["exit_code"] = EXIT_OK if result.get("success", True) else EXIT_RUN_FAILURE
    return result


def job_handler(job):
    """Entry point for queued jobs shaped like {"input": {...}}."""
    return process_job(job["input"])
