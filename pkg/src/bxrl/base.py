"""Estimator protocol and input validation helpers.

Implements the scikit-learn estimator contract (``get_params`` /
``set_params``, underscore-suffixed fitted attributes) without depending on
scikit-learn itself, so the estimators here compose with sklearn pipelines
while the package stays numpy-only.
"""

from __future__ import annotations

import inspect

import numpy as np

from .errors import NotFittedError, ShapeError


class BaseEstimator:
    """Parameter introspection shared by all estimators in this package.

    Subclasses must accept all hyperparameters as explicit keyword arguments
    in ``__init__`` and store them under the same attribute names.
    """

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict:
        params = {name: getattr(self, name) for name in self._param_names()}
        if deep:
            for name, value in list(params.items()):
                if hasattr(value, "get_params") and not isinstance(value, type):
                    for sub, sub_value in value.get_params(deep=True).items():
                        params[f"{name}__{sub}"] = sub_value
        return params

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            key = name.split("__", 1)[0]
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}"
                )
            if "__" in name:
                sub = name.split("__", 1)[1]
                getattr(self, key).set_params(**{sub: value})
            else:
                setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params(deep=False).items())
        return f"{type(self).__name__}({args})"


def check_is_fitted(estimator, *attributes: str) -> None:
    """Raise NotFittedError unless all fitted attributes are present."""
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first "
            f"(missing {', '.join(missing)})"
        )


def as_float_array(x, ndim: int | None = None, name: str = "array") -> np.ndarray:
    """Coerce to a float64 array, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_same_length(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise ShapeError(
            f"{name_a} and {name_b} must have equal length: {len(a)} vs {len(b)}"
        )
