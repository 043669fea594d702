"""Gauge-equivariant graph network with self-interference cancellation.

Submodules
----------
cplx      paired real/imaginary complex primitives and the rank-1 projector
graphs    graph containers, dataset IO, synthetic generation, splits
autodiff  reverse-mode tape over real float64 arrays (complex = trailing-2)
layer     one message-passing layer: transport, cancellation, gates, attention
model     full model, losses, optimizer, training loop, checkpoints
verify    executable property checks: equivariance, bounds, sweeps, probes
cli       ``gesc`` command line entry point

Imports are lazy so the command line entry point can pin thread counts
before NumPy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("cplx", "graphs", "autodiff", "layer", "model", "verify", "cli")


def __getattr__(name: str):
    if name in _SUBMODULES:
        return import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
