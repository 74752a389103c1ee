from posterior.pathwise import (
    DEFAULT_NLL_SAMPLES,
    PosteriorSample,
    draw_pathwise,
    draw_pathwise_many,
    evaluate_many,
    exact_posterior,
    gaussian_nll,
    mean_predict,
    predictive_nll,
    solve_many,
)

__all__ = [
    "DEFAULT_NLL_SAMPLES",
    "PosteriorSample",
    "draw_pathwise",
    "draw_pathwise_many",
    "evaluate_many",
    "exact_posterior",
    "gaussian_nll",
    "mean_predict",
    "predictive_nll",
    "solve_many",
]
