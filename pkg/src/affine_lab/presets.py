"""Built-in example parameter sets used across tests, demos, and the CLI.

Three regimes cover the qualitative range of the model:

* ``ou_params`` — pure second-coordinate Ornstein-Uhlenbeck: no feedback
  from ``x`` (which stays at 0 when started there), additive noise ``a``,
  mean reversion ``beta22``.  ``phi`` has an elementary closed form.
* ``cir_params`` — square-root diffusion in the first coordinate with no
  jumps; ``psi1`` has the classical separated-variables closed form.
* ``jump_affine_params`` — every term active: ``a > 0``, full-rank
  ``alpha`` with off-diagonal loading, both-signed ``xi2`` jump marks in
  the immigration measure ``m`` and the state-proportional measure ``mu``,
  cross drift ``beta21``, and strictly negative mean reversion ``beta22``
  (so the reactant scaling-limit hypotheses hold).

Numeric choices keep paths order-one so the default candidate-stream bound
comfortably covers the thinning intensities.
"""

from __future__ import annotations

from .params import AdmissibleParams, FiniteAtomicMeasure, validate_admissible

__all__ = ["ou_params", "cir_params", "jump_affine_params", "builtin_params",
           "symmetric_split_params"]


def _empty():
    return FiniteAtomicMeasure([])


def ou_params() -> AdmissibleParams:
    """Ornstein-Uhlenbeck regime: ``a = 1``, ``beta22 = -1``, all else off."""
    return validate_admissible(
        a=1.0,
        alpha=[[0.0, 0.0], [0.0, 0.0]],
        b=[0.0, 0.0],
        beta=[[0.0, 0.0], [0.0, -1.0]],
        m=_empty(), mu=_empty(),
    )


def cir_params() -> AdmissibleParams:
    """Square-root regime: ``alpha11 = 0.5``, ``beta11 = -1``, no jumps."""
    return validate_admissible(
        a=0.0,
        alpha=[[0.5, 0.0], [0.0, 0.0]],
        b=[1.0, 0.0],
        beta=[[-1.0, 0.0], [0.2, -0.5]],
        m=_empty(), mu=_empty(),
    )


def jump_affine_params() -> AdmissibleParams:
    """Fully loaded regime with finite-atomic jump measures."""
    m = FiniteAtomicMeasure([
        (0.5, 0.3, 0.6),
        (1.2, -0.4, 0.3),
        (0.0, 0.8, 0.4),
    ])
    mu = FiniteAtomicMeasure([
        (0.4, 0.2, 0.5),
        (0.9, -0.3, 0.25),
        (0.3, 0.6, 0.25),
    ])
    return validate_admissible(
        a=0.2,
        alpha=[[0.4, 0.1], [0.1, 0.3]],
        b=[0.8, 0.1],
        beta=[[-0.6, 0.0], [0.4, -0.8]],
        m=m, mu=mu,
    )


def symmetric_split_params() -> AdmissibleParams:
    """Regime whose net second-coordinate loadings vanish.

    ``a = 0``, ``b2 = 0`` and ``beta21 = 0`` while both-signed jump marks
    remain; a symmetric decomposition (equal positive and negative parts)
    then drives the paired reactant construction with nontrivial dynamics
    on each side but cancelling means.
    """
    m = FiniteAtomicMeasure([
        (0.3, 0.4, 0.4),
        (0.2, -0.5, 0.4),
        (0.8, 0.0, 0.2),
    ])
    mu = FiniteAtomicMeasure([
        (0.5, 0.3, 0.5),
        (0.4, -0.4, 0.5),
    ])
    return validate_admissible(
        a=0.0,
        alpha=[[0.4, 0.0], [0.0, 0.0]],
        b=[0.6, 0.0],
        beta=[[-0.5, 0.0], [0.0, -1.0]],
        m=m, mu=mu,
    )


def builtin_params(name: str) -> AdmissibleParams:
    """Look up a built-in parameter set by name."""
    table = {
        "ou": ou_params,
        "cir": cir_params,
        "jump_affine": jump_affine_params,
        "symmetric_split": symmetric_split_params,
    }
    try:
        return table[name]()
    except KeyError:
        raise ValueError(
            f"unknown parameter set {name!r}; choose from {sorted(table)}") from None
