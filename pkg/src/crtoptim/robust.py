"""Robust design criteria over a class of candidate models.

When the covariance structure or its parameters are uncertain, a design
can be chosen against a prior-weighted set of candidate models instead of
a single one. Two aggregations of the per-model treatment variances are
supported: their prior-weighted average and the prior-weighted average of
their logarithms. Both preserve the monotone supermodularity that the
combinatorial optimisers rely on, so a :class:`RobustCriterion` plugs in
wherever a plain criterion does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceSpec, ModelSpec
from .designspace import Design, DesignSpace
from .errors import ValidationError
from .glscore import DesignCriterion

CRITERION_FORMS = ("linear-average", "log-average")


@dataclass(frozen=True)
class ModelEntry:
    """One candidate model: covariance, outcome model, contrast, prior."""

    covariance: CovarianceSpec
    prior: float
    model: ModelSpec = field(default_factory=ModelSpec)
    contrast: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ModelClass:
    entries: tuple[ModelEntry, ...]
    form: str = "linear-average"

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("model class needs at least one entry")
        if self.form not in CRITERION_FORMS:
            raise ValidationError(f"unknown criterion form {self.form!r}")
        priors = np.array([e.prior for e in self.entries], dtype=float)
        if np.any(priors < 0):
            raise ValidationError("priors must be non-negative")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise ValidationError("priors must sum to one")
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def equal_priors(cls, specs, form="linear-average"):
        """Equal-prior class from (covariance, model) pairs or covariances."""
        specs = list(specs)
        p = 1.0 / len(specs)
        entries = []
        for s in specs:
            if isinstance(s, CovarianceSpec):
                entries.append(ModelEntry(covariance=s, prior=p))
            else:
                cov, model = s
                entries.append(ModelEntry(covariance=cov, prior=p, model=model))
        return cls(tuple(entries), form=form)


class RobustCriterion:
    """Prior-weighted criterion over a model class, same evaluation
    interface as :class:`DesignCriterion`."""

    def __init__(self, space: DesignSpace, model_class: ModelClass):
        self.space = space
        self.model_class = model_class
        self._parts = [
            (entry.prior,
             DesignCriterion(space, entry.covariance, model=entry.model,
                             contrast=(np.asarray(entry.contrast, dtype=float)
                                       if entry.contrast is not None else None)))
            for entry in model_class.entries
        ]

    def value(self, counts) -> float:
        log_form = self.model_class.form == "log-average"
        total = 0.0
        for prior, crit in self._parts:
            if prior == 0.0:
                continue
            v = crit.value(counts)
            if not math.isfinite(v):
                return math.inf
            total += prior * (math.log(v) if log_form else v)
        return total

    def value_of(self, design: Design) -> float:
        design.validate(self.space)
        return self.value(np.asarray(design.counts))


def robust_criterion(space: DesignSpace, design: Design,
                     model_class: ModelClass) -> float:
    """Robust criterion value of one design under a model class."""
    return RobustCriterion(space, model_class).value_of(design)
