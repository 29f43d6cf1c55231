"""Strategy inference for repeated prisoner's dilemma games.

Thin wrappers over the native ``_core`` module. Structured results come back
as plain dicts.
"""

import json

from . import _core
from ._core import DomainError, Error, SchemaError, bootstrap_ci, chi_square_sf, f_sf, resolve_priority, rule_match

__all__ = [
    "DomainError",
    "Error",
    "Model",
    "SchemaError",
    "bootstrap_ci",
    "chi_square_sf",
    "chi_square_test",
    "f_sf",
    "generate_corpus",
    "normalized_penalty_ratio",
    "one_way_anova",
    "play_game",
    "resolve_priority",
    "rule_match",
    "run",
]

__version__ = "1.0.0"


def play_game(a, b, lam=1.0, seed=0, epsilon=0.0, horizon=10):
    """Play canonical strategy ``a`` (seat A) against ``b``; returns the game log."""
    return json.loads(_core.play_game(a, b, lam, seed, epsilon, horizon))


def normalized_penalty_ratio(log, seat="A"):
    return _core.normalized_penalty_ratio(json.dumps(log), seat)


def generate_corpus(path, **spec):
    """Write a corpus to ``path``; keyword arguments override the default spec.

    Returns (n_train, n_test).
    """
    return _core.generate_corpus(json.dumps(spec), str(path))


def chi_square_test(table):
    return json.loads(_core.chi_square_test(table))


def one_way_anova(groups):
    return json.loads(_core.one_way_anova(groups))


def run(*args):
    """Run a CLI subcommand in-process. Returns (exit_code, stdout, stderr)."""
    return _core.run_command([str(a) for a in args])


class Model:
    """A trained classifier. Trajectories are strings of 'C'/'D'."""

    def __init__(self, native):
        self._native = native

    @classmethod
    def train(cls, kind, corpus, seed=0, hyperparams=None):
        return cls(_core.Model.train(kind, str(corpus), seed, json.dumps(hyperparams or {})))

    @classmethod
    def load(cls, path):
        return cls(_core.Model.load(str(path)))

    def save(self, path):
        self._native.save(str(path))

    @property
    def kind(self):
        return self._native.kind

    @property
    def labels(self):
        return self._native.labels

    def predict_proba(self, own, opp):
        return dict(zip(self.labels, self._native.predict_proba(own, opp)))

    def classify(self, own, opp, tau=0.9, mode="model-first", use_rules=True):
        return json.loads(self._native.classify(own, opp, tau, mode, use_rules))

    def evaluate(self, corpus):
        return json.loads(self._native.evaluate(str(corpus)))
