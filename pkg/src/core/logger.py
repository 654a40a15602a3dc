"""
Logger module for the NTN traffic forecasting toolkit
"""
import logging
import os
from datetime import datetime

ROOT_LOGGER_NAME = 'ntn_forecast'


def setup_logging(log_level=logging.INFO, log_dir='logs'):
    """
    Set up logging for the application

    Args:
        log_level: The logging level to use
        log_dir: Directory for the timestamped log file, or None/'' to log
            to the console only

    Returns:
        The package root logger
    """
    handlers = [logging.StreamHandler()]

    if log_dir:
        # Create logs directory if it doesn't exist
        os.makedirs(log_dir, exist_ok=True)
        log_filename = os.path.join(
            log_dir, f"ntn_forecast_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        )
        handlers.append(logging.FileHandler(log_filename))

    # force=True: later calls replace earlier handlers
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.info("Logging initialized")

    return logger
