#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Logging and event module
Run logging with a JSON event trail for pipeline tasks
"""
import json
import logging
import os
import time
from datetime import datetime
from functools import wraps
from logging.handlers import RotatingFileHandler


# ========== Logging Configuration ==========


def setup_logging(out_dir, debug=False, name='app'):
    """Setup run logging under <out_dir>/logs

    Idempotent: handlers installed by an earlier call are cleared before new
    ones are registered, so repeated CLI invocations in one process (tests)
    do not stack handlers.
    """
    log_dir = os.path.join(out_dir, 'logs')
    os.makedirs(log_dir, exist_ok=True)

    log_level = logging.DEBUG if debug else logging.INFO

    detailed_formatter = logging.Formatter(
        '[%(asctime)s] %(levelname)s in %(module)s (%(funcName)s:%(lineno)d): %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    simple_formatter = logging.Formatter(
        '[%(asctime)s] %(levelname)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_hidemk', False):
            root.removeHandler(handler)
            handler.close()

    # ===== Run Log =====
    run_handler = RotatingFileHandler(
        os.path.join(log_dir, 'run.log'),
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        encoding='utf-8'
    )
    run_handler.setLevel(log_level)
    run_handler.setFormatter(detailed_formatter)

    # ===== Error Log =====
    error_handler = RotatingFileHandler(
        os.path.join(log_dir, 'error.log'),
        maxBytes=5 * 1024 * 1024,  # 5MB
        backupCount=5,
        encoding='utf-8'
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(detailed_formatter)

    # ===== Console =====
    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level if debug else logging.WARNING)
    console_handler.setFormatter(simple_formatter)

    for handler in (run_handler, error_handler, console_handler):
        handler._hidemk = True
        root.addHandler(handler)
    root.setLevel(log_level)

    # ===== Event Log =====
    event_handler = RotatingFileHandler(
        os.path.join(log_dir, 'events.log'),
        maxBytes=10 * 1024 * 1024,
        backupCount=5,
        encoding='utf-8'
    )
    event_handler.setLevel(logging.INFO)
    event_handler.setFormatter(logging.Formatter('%(message)s'))

    event_logger = logging.getLogger('events')
    for handler in list(event_logger.handlers):
        event_logger.removeHandler(handler)
        handler.close()
    event_logger.addHandler(event_handler)
    event_logger.setLevel(logging.INFO)
    event_logger.propagate = False

    app_logger = logging.getLogger(name)
    app_logger.info('=' * 80)
    app_logger.info(f'Run started - {name}')
    app_logger.info(f'Debug mode: {debug}')
    app_logger.info(f'Log directory: {log_dir}')
    app_logger.info('=' * 80)
    return log_dir


# ========== Event Trail ==========

class EventLogger:
    """One JSON object per line for task lifecycle events"""

    @staticmethod
    def log(action, resource, details=None, status='success'):
        record = {
            'timestamp': datetime.now().isoformat(),
            'action': action,
            'resource': resource,
            'status': status,
            'details': details or {}
        }
        logging.getLogger('events').info(json.dumps(record, default=str))

    @staticmethod
    def task_started(resource, details=None):
        EventLogger.log('task_started', resource, details, status='running')

    @staticmethod
    def task_completed(resource, details=None):
        EventLogger.log('task_completed', resource, details)

    @staticmethod
    def task_failed(resource, error):
        EventLogger.log('task_failed', resource, {'error': str(error)}, status='failed')

    @staticmethod
    def artifact(path, kind):
        EventLogger.log('write', path, {'kind': kind})


# ========== Performance Logging ==========

def log_timing(threshold_ms=1000):
    """Decorator to log slow pipeline stages"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()

            result = func(*args, **kwargs)

            duration_ms = (time.perf_counter() - start_time) * 1000

            if duration_ms > threshold_ms:
                logging.getLogger('app').info(
                    f"Slow stage: {func.__qualname__} took {duration_ms:.0f}ms "
                    f"(threshold: {threshold_ms}ms)"
                )

            return result

        return wrapper
    return decorator
