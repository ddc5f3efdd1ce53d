"""Project-wide logger: INFO to the console, DEBUG with timestamps to a file."""

import logging
import os


def setup_logging(log_path: str = '/tmp/pinn.log', name: str = 'pinn') -> logging.Logger:
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    # repeated setup (e.g. in worker processes) must not stack handlers
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    c_handler = logging.StreamHandler()
    f_handler = logging.FileHandler(os.path.expanduser(log_path))
    c_handler.setLevel(logging.INFO)
    f_handler.setLevel(logging.DEBUG)
    c_format = logging.Formatter('%(levelname)s - %(message)s')
    f_format = logging.Formatter(
        '%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    c_handler.setFormatter(c_format)
    f_handler.setFormatter(f_format)
    logger.addHandler(c_handler)
    logger.addHandler(f_handler)
    logger.propagate = False
    return logger


# Instantiate module logger
logger = setup_logging()


def change_log_file_path(new_log_path: str) -> None:
    """Change file path of log file"""
    new_log_path = os.path.expanduser(new_log_path)
    for h in logger.handlers:
        if isinstance(h, logging.FileHandler):
            h.close()
            h.baseFilename = os.path.abspath(new_log_path)
