import threading

import pytest

from topt.coresys.manager_tasks import JobEvent, JobManager


def test_results_are_keyed_by_job_id():
    manager = JobManager(max_jobs=2)
    ids = [manager.add_job(lambda k=k: k * k) for k in range(4)]
    assert ids == ["job_1", "job_2", "job_3", "job_4"]
    assert manager.run_all() == {"job_1": 0, "job_2": 1, "job_3": 4, "job_4": 9}
    assert all(manager.get_job_info(i)["state"] == "completed" for i in ids)


def test_failure_does_not_cancel_siblings():
    manager = JobManager(max_jobs=2)
    events = []
    manager.add_listener(lambda e: events.append((e.job_id, e.event_type)))

    def boom():
        raise RuntimeError("bad pair")

    manager.add_job(boom, job_id="bad")
    manager.add_job(lambda: "fine", job_id="good")
    results = manager.run_all()
    assert isinstance(results["bad"], RuntimeError)
    assert results["good"] == "fine"
    assert ("bad", JobEvent.JOB_FAILED) in events
    assert ("good", JobEvent.JOB_COMPLETED) in events
    assert manager.get_job_info("bad")["state"] == "failed"


def test_concurrency_is_bounded():
    manager = JobManager(max_jobs=2)
    lock = threading.Lock()
    running = {"now": 0, "peak": 0}
    release = threading.Event()

    def job():
        with lock:
            running["now"] += 1
            running["peak"] = max(running["peak"], running["now"])
        release.wait(0.05)
        with lock:
            running["now"] -= 1

    for _ in range(5):
        manager.add_job(job)
    manager.run_all()
    assert 1 <= running["peak"] <= 2


def test_listener_errors_are_contained():
    manager = JobManager()

    def broken(event):
        raise ValueError("listener")

    manager.add_listener(broken)
    manager.add_job(lambda: 1, job_id="only")
    assert manager.run_all() == {"only": 1}
    assert manager.remove_listener(broken)
    assert not manager.remove_listener(broken)


def test_invalid_setup():
    with pytest.raises(ValueError):
        JobManager(max_jobs=0)
    manager = JobManager()
    manager.add_job(lambda: 1, job_id="a")
    with pytest.raises(ValueError):
        manager.add_job(lambda: 2, job_id="a")
