"""Python bindings for the hilctc engine.

Configs and reports cross the boundary as JSON; the helpers here accept and
return plain dicts.
"""

import json as _json

from ._core import (
    HilctcError,
    PcaModel,
    SvmModel,
    allocate_budget,
    confusion,
    f1_score,
    hdbscan,
    pca_fit,
    positive_predictive_value,
    project_2d,
    sampling_frequencies,
    svm_fit,
)
from . import _core

__all__ = [
    "HilctcError",
    "PcaModel",
    "SvmModel",
    "allocate_budget",
    "confusion",
    "f1_score",
    "hdbscan",
    "parse_config",
    "pca_fit",
    "positive_predictive_value",
    "project_2d",
    "report_csv",
    "run_experiment",
    "sampling_frequencies",
    "svm_fit",
    "synthetic_manifest",
]


def run_experiment(config, seed=None):
    """Run one experiment config (dict) and return the report as a dict."""
    return _json.loads(_core.run_experiment(_json.dumps(config), seed))


def parse_config(config):
    """Validate a config dict; returns it with every default filled in."""
    return _json.loads(_core.parse_config(_json.dumps(config)))


def synthetic_manifest(config):
    """Manifest text (JSON lines) for the config's synthetic section."""
    return _core.synthetic_manifest(_json.dumps(config))


def report_csv(report):
    return _core.report_csv(_json.dumps(report))
