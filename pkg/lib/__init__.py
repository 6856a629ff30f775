# lib/__init__.py

import logging
import sys
from functools import partial

from regex import compile as rc

from dsm_config import DEBUG


def get_logger():
    """
    Sets up and returns a centrally configured logger.
    Debug mode is enabled by setting the DSM_DEBUG environment variable to '1'.
    """
    log_level = logging.DEBUG if DEBUG else logging.INFO

    root_logger = logging.getLogger()
    if root_logger.hasHandlers():
        root_logger.handlers.clear()

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    logger_instance = logging.getLogger('dsm')
    logger_instance.setLevel(log_level)
    return logger_instance


logger = get_logger()

rc = partial(rc, cache_pattern=False)
