"""Neural processes with stochastic (Weibull) attention, on a small numpy autodiff engine."""
