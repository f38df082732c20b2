"""
main.py
Command-line entry point: run one preset experiment from a YAML config.

    python main.py <experiment> --config configs/<experiment>.yaml [--seed N] [--out DIR]

Exit codes: 0 all checks passed, 1 a monitor or check failed, 2 config or solver error.
"""

from typing import Optional

import typer

from hmcontrol.config import EXPERIMENTS, load_config
from hmcontrol.errors import HMControlError
from hmcontrol.logs import log_event
from hmcontrol.pipeline import run_experiment

EXIT_OK, EXIT_MONITOR, EXIT_ERROR = 0, 1, 2

app = typer.Typer(help="Magnetically steered harmonic map heat flow: experiment runner",
                  add_completion=False)


def run(experiment: str, config: str, seed: Optional[int] = None, out: Optional[str] = None) -> int:
    if experiment not in EXPERIMENTS:
        log_event("ERROR", "Unknown experiment", experiment=experiment, expected=list(EXPERIMENTS))
        return EXIT_ERROR
    try:
        cfg = load_config(config, {"experiment": experiment, "seed": seed, "output_dir": out})
        result = run_experiment(cfg)
    except HMControlError as exc:
        log_event("ERROR", "Experiment aborted", experiment=experiment, seed=seed,
                  error=type(exc).__name__, detail=str(exc))
        return EXIT_ERROR
    return EXIT_OK if result.status == 0 else EXIT_MONITOR


@app.command()
def main(experiment: str = typer.Argument(..., help=f"One of: {', '.join(EXPERIMENTS)}"),
         config: str = typer.Option(..., "--config", "-c", help="Path to YAML run config"),
         seed: Optional[int] = typer.Option(None, "--seed", help="Override the config seed"),
         out: Optional[str] = typer.Option(None, "--out", help="Override the output directory")):
    raise typer.Exit(code=run(experiment, config, seed, out))


if __name__ == "__main__":
    app()
