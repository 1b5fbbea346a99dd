"""Serializable transactions on top of an engine running at a low isolation level."""

from .analyzer import (
    TemplateRegistry,
    analyze,
    build_static_graph,
    export_dot,
    find_dangerous_structures,
    find_vulnerable_dependencies,
    register_template,
)
from .core import (
    HistoryRecord,
    IsolationLevel,
    Key,
    TransactionAborted,
    TransactionTemplate,
    parse_history_record,
    serialize_history_record,
)
from .engine import Engine
from .executor import Coordinator, CoordinatorConfig, Validation
from .governor import CivMode, TransitionGovernor
from .harness import WorkloadConfig, run, simulate
from .oracle import build_dsg, check_history, check_serializable, find_vulnerable_violations

__all__ = [
    "CivMode",
    "Coordinator",
    "CoordinatorConfig",
    "Engine",
    "HistoryRecord",
    "IsolationLevel",
    "Key",
    "TemplateRegistry",
    "TransactionAborted",
    "TransactionTemplate",
    "TransitionGovernor",
    "Validation",
    "WorkloadConfig",
    "analyze",
    "build_dsg",
    "build_static_graph",
    "check_history",
    "check_serializable",
    "export_dot",
    "find_dangerous_structures",
    "find_vulnerable_dependencies",
    "find_vulnerable_violations",
    "parse_history_record",
    "register_template",
    "run",
    "serialize_history_record",
    "simulate",
]
