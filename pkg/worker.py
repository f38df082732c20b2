"""
worker.py
Sweep processor for hmcontrol.
Reads a sweep file (a YAML list of jobs) and runs each job as an independent
experiment in a process pool. Pool size comes from HMCONTROL_WORKERS.

    python worker.py configs/sweep.yaml

Each job: {experiment, config, seed (optional), out (optional)}.
"""

import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Dict, List

import typer
import yaml
from dotenv import load_dotenv

from hmcontrol.config import worker_count
from hmcontrol.logs import log_event, now_iso
from main import EXIT_ERROR, run

load_dotenv()

app = typer.Typer(help="Run a sweep of hmcontrol experiments across worker processes", add_completion=False)


def load_jobs(path: str) -> List[Dict]:
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    jobs = data.get("jobs", []) if isinstance(data, dict) else data
    if not isinstance(jobs, list) or not all(isinstance(j, dict) for j in jobs):
        raise ValueError(f"sweep file {path} must hold a list of job mappings")
    return jobs


def process_job(job: Dict) -> Dict:
    try:
        status = run(job["experiment"], job["config"], job.get("seed"), job.get("out"))
    except Exception as job_err:
        log_event("ERROR", "Worker job failure", job=job, error=str(job_err), trace=traceback.format_exc())
        status = EXIT_ERROR
    return {**job, "status": status, "finished_at": now_iso()}


def run_sweep(path: str, workers: int) -> List[Dict]:
    jobs = load_jobs(path)
    log_event("INFO", "Sweep started", jobs=len(jobs), workers=workers)
    results: List[Dict] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for job in jobs:
            log_event("INFO", "Job queued", experiment=job.get("experiment"), seed=job.get("seed"))
        futures = {pool.submit(process_job, job): job for job in jobs}
        for fut in as_completed(futures):
            res = fut.result()
            results.append(res)
            level = "INFO" if res["status"] == 0 else "ERROR"
            outcome = "succeeded" if res["status"] == 0 else "failed"
            log_event(level, f"Job {outcome}", experiment=res.get("experiment"), seed=res.get("seed"),
                      status=res["status"])
    return results


@app.command()
def main(sweep: str = typer.Argument(..., help="Path to sweep YAML"),
         workers: int = typer.Option(0, "--workers", help="Pool size (0 = HMCONTROL_WORKERS or 1)")):
    try:
        results = run_sweep(sweep, workers or worker_count())
    except (OSError, ValueError, yaml.YAMLError) as exc:
        log_event("ERROR", "Sweep aborted", error=str(exc))
        raise typer.Exit(code=EXIT_ERROR)
    raise typer.Exit(code=max((r["status"] for r in results), default=0))


if __name__ == "__main__":
    app()
