"""
Package logger.

Handlers and format come from logging.conf next to this module. The level can
be raised or lowered with the FCM_LOG_LEVEL environment variable or, per run,
with the --log-level flag of the command-line front end.
"""
import os
import logging
from logging.config import fileConfig

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

fileConfig(os.path.join(os.path.dirname(__file__), 'logging.conf'),
           disable_existing_loggers=False)

my_logger = logging.getLogger()


def set_level(name):
    """Sets the level of the package logger and its handlers by name."""
    name = name.upper()
    if name not in LOG_LEVELS:
        raise ValueError('unknown log level %r' % name)
    my_logger.setLevel(name)
    for handler in my_logger.handlers:
        handler.setLevel(name)


if os.environ.get('FCM_LOG_LEVEL'):
    set_level(os.environ['FCM_LOG_LEVEL'])
