#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Work queue for independent (replicate, method) tasks

Every task runs a plain function target_func(*args, task_tracker=task, **kwargs)
on a thread pool. The manager owns status transitions, timing and failure
capture; business code only returns a result or raises.
"""
import logging
import time
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from enum import Enum
from typing import Any, Callable, List, Optional

from utils.logger import EventLogger

logger = logging.getLogger(__name__)


class TaskStatus(Enum):
    PENDING = 'pending'
    RUNNING = 'running'
    COMPLETED = 'completed'
    FAILED = 'failed'


class ReplicateTask:
    """One queued unit of work plus its progress record"""

    def __init__(self, task_type: str, description: str = '',
                 replicate: Optional[int] = None, method: Optional[str] = None,
                 target: Optional[Callable] = None, args: tuple = (),
                 kwargs: Optional[dict] = None):
        self.id = str(uuid.uuid4())
        self.type = task_type
        self.description = description
        self.replicate = replicate
        self.method = method
        self.status = TaskStatus.PENDING.value
        self.message = "queued"
        self.result: Any = None
        self.error: Optional[str] = None
        self.error_type: Optional[str] = None
        self.runtime: float = 0.0
        self.created_at = datetime.now()
        self.completed_at: Optional[datetime] = None
        self._target = target
        self._args = args
        self._kwargs = kwargs or {}

    @property
    def failed(self) -> bool:
        return self.status == TaskStatus.FAILED.value

    def to_dict(self) -> dict:
        return {
            'id': self.id,
            'type': self.type,
            'description': self.description,
            'replicate': self.replicate,
            'method': self.method,
            'status': self.status,
            'message': self.message,
            'error': self.error,
            'error_type': self.error_type,
            'runtime': round(self.runtime, 3),
            'created_at': self.created_at.isoformat(),
            'completed_at': self.completed_at.isoformat() if self.completed_at else None,
        }


class TaskManager:
    """Thread-pool executor for ReplicateTask batches"""

    @classmethod
    def create(cls, task_type: str, description: str, target_func: Callable, *args,
               replicate: Optional[int] = None, method: Optional[str] = None,
               **kwargs) -> ReplicateTask:
        return ReplicateTask(task_type, description, replicate=replicate, method=method,
                             target=target_func, args=args, kwargs=kwargs)

    @classmethod
    def _execute(cls, task: ReplicateTask) -> ReplicateTask:
        task.status = TaskStatus.RUNNING.value
        task.message = "running"
        EventLogger.task_started(task.description)
        started = time.perf_counter()
        try:
            task.result = task._target(*task._args, task_tracker=task, **task._kwargs)
            task.status = TaskStatus.COMPLETED.value
            task.message = "done"
        except Exception as e:
            logger.error("Task %s (%s) failed: %s", task.type, task.description, e,
                         exc_info=logger.isEnabledFor(logging.DEBUG))
            task.status = TaskStatus.FAILED.value
            task.error = str(e)
            task.error_type = type(e).__name__
            task.message = f"error: {e}"
        finally:
            task.runtime = time.perf_counter() - started
            task.completed_at = datetime.now()
        if task.failed:
            EventLogger.task_failed(task.description, task.error)
        else:
            EventLogger.task_completed(task.description, {'runtime': round(task.runtime, 3)})
        return task

    @classmethod
    def run_all(cls, tasks: List[ReplicateTask], threads: int = 1,
                on_done: Optional[Callable[[ReplicateTask], None]] = None) -> List[ReplicateTask]:
        """Run every task; failures are recorded on the task, never raised

        Results come back in submission order. ``on_done`` is called from the
        calling thread as each task finishes.
        """
        if threads <= 1 or len(tasks) <= 1:
            for task in tasks:
                cls._execute(task)
                if on_done:
                    on_done(task)
            return tasks

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(cls._execute, task) for task in tasks]
            for future in as_completed(futures):
                task = future.result()
                if on_done:
                    on_done(task)
        logger.info("Work queue finished: %d tasks, %d failed",
                    len(tasks), sum(t.failed for t in tasks))
        return tasks
