from bayesopt.thompson import (
    LENGTH_SCALE_GRID,
    Acquisition,
    MaximiserConfig,
    ThompsonConfig,
    ThompsonRow,
    ThompsonState,
    acquire_batch,
    maximise,
    random_acquisition,
    run,
    synth_target,
    write_trace,
)

__all__ = [
    "Acquisition",
    "LENGTH_SCALE_GRID",
    "MaximiserConfig",
    "ThompsonConfig",
    "ThompsonRow",
    "ThompsonState",
    "acquire_batch",
    "maximise",
    "random_acquisition",
    "run",
    "synth_target",
    "write_trace",
]
