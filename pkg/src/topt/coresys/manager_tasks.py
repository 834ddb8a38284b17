import asyncio
import time

import topt.coresys.logger as logger


class JobEvent:
    """Event data for job lifecycle notifications."""

    # Event types
    JOB_STARTED = 0
    JOB_FAILED = 2
    JOB_COMPLETED = 3

    def __init__(self, job_id, event_type, result=None, error=None):
        self.job_id = job_id          # Unique identifier for the job
        self.event_type = event_type  # Type of event (started, failed, completed)
        self.result = result          # Return value of a completed job
        self.error = error            # Error if a job failed
        self.timestamp = time.time()  # When the event occurred


class JobManager:
    """Runs blocking jobs concurrently on worker threads with lifecycle events.

    Every job is an asyncio task that offloads its callable to a thread; a
    semaphore bounds how many run at once. A failing job is reported through
    a JOB_FAILED event and never cancels its siblings.
    """

    def __init__(self, max_jobs=1):
        if max_jobs < 1:
            raise ValueError("max_jobs must be >= 1")
        self._max_jobs = max_jobs
        self._jobs = {}                 # job_id -> (callable, description)
        self._job_info = {}             # job_id -> job metadata
        self._listeners = []            # Event listeners
        self._next_job_id = 1           # For generating unique job IDs
        self.add_listener(self._on_job_event)

    @property
    def max_jobs(self):
        return self._max_jobs

    def add_job(self, func, job_id=None, description=""):
        """Queue a blocking callable.

        Args:
            func: Zero-argument callable doing the work
            job_id: Optional explicit job ID, or auto-generated if None
            description: Optional description of the job

        Returns:
            job_id: The ID of the queued job
        """
        if job_id is None:
            job_id = f"job_{self._next_job_id}"
            self._next_job_id += 1
        if job_id in self._jobs:
            raise ValueError(f"Duplicate job id: {job_id}")
        self._jobs[job_id] = func
        self._job_info[job_id] = {
            'description': description,
            'state': 'queued',
            'start_time': None,
            'end_time': None,
        }
        return job_id

    def run_all(self):
        """Run every queued job and block until all have finished.

        Returns:
            dict: job_id -> result (or the raised exception for failed jobs)
        """
        return asyncio.run(self._run_all())

    async def _run_all(self):
        semaphore = asyncio.Semaphore(self._max_jobs)
        job_ids = list(self._jobs.keys())
        tasks = [asyncio.create_task(self._job_wrapper(job_id, semaphore)) for job_id in job_ids]
        results = await asyncio.gather(*tasks, return_exceptions=True)
        return dict(zip(job_ids, results))

    async def _job_wrapper(self, job_id, semaphore):
        func = self._jobs[job_id]
        info = self._job_info[job_id]
        async with semaphore:
            info['state'] = 'running'
            info['start_time'] = time.time()
            self._notify_event(JobEvent(job_id, JobEvent.JOB_STARTED))
            try:
                result = await asyncio.to_thread(func)
            except Exception as e:
                info['state'] = 'failed'
                info['end_time'] = time.time()
                self._notify_event(JobEvent(job_id, JobEvent.JOB_FAILED, error=e))
                raise
            info['state'] = 'completed'
            info['end_time'] = time.time()
            self._notify_event(JobEvent(job_id, JobEvent.JOB_COMPLETED, result=result))
            return result

    def get_job_info(self, job_id):
        """Get information about a job.

        Returns:
            dict: Job metadata or None if the job was not found
        """
        return self._job_info.get(job_id)

    def add_listener(self, listener_func):
        """Add a listener for job events.

        Args:
            listener_func: Function that takes a JobEvent parameter
        """
        if listener_func not in self._listeners:
            self._listeners.append(listener_func)

    def remove_listener(self, listener_func):
        """Remove a job event listener.

        Returns:
            bool: True if found and removed, False otherwise
        """
        if listener_func in self._listeners:
            self._listeners.remove(listener_func)
            return True
        return False

    def _notify_event(self, event):
        for listener in self._listeners:
            try:
                listener(event)
            except Exception as e:
                # Listener errors must not affect job management
                logger.error(f"JobManager: Error notifying listener {listener}: {e}")

    @staticmethod
    def _on_job_event(event):
        """Handle job lifecycle events."""
        if event.event_type == JobEvent.JOB_FAILED:
            logger.error(f"JobManager: Job {event.job_id} failed with error: {event.error}")
        elif event.event_type == JobEvent.JOB_COMPLETED:
            logger.debug(f"JobManager: Job {event.job_id} completed")
        elif event.event_type == JobEvent.JOB_STARTED:
            logger.debug(f"JobManager: Job {event.job_id} started")
