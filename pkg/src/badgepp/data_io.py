"""File formats, CSV ingestion and train/test splitting.

Native event logs are line-delimited JSON: a header object followed by one
record per event::

    {"format": "badgepp-events", "version": 1, "horizon": 30.0, "num_users": 2, "num_tags": 3}
    {"time": 0.5, "user": 0, "kind": "q", "mark": 2}
    {"time": 1.25, "user": 1, "kind": "a", "mark": 0}

An answer's ``mark`` is the record index (0-based, header excluded) of the
question it answers.  Parameters, badge lists and reports are plain JSON
documents with a ``format`` and ``version`` field.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidArgumentError, UnsupportedVersionError
from .model import (
    ANSWER,
    KINDS,
    QUESTION,
    BadgeSpec,
    Dataset,
    Event,
    ModelConfig,
    ModelParams,
)

log = logging.getLogger(__name__)

EVENTS_FORMAT = "badgepp-events"
PARAMS_FORMAT = "badgepp-params"
BADGES_FORMAT = "badgepp-badges"
REPORT_FORMAT = "badgepp-report"
VERSION = 1
TABLE1 = "table1_badges.json"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _check_header(doc, expected_format, where="header"):
    if not isinstance(doc, dict):
        raise DataFormatError(f"{where} must be a JSON object", line=1 if where == "header" else None)
    fmt = doc.get("format")
    if fmt != expected_format:
        raise DataFormatError(f"expected format {expected_format!r}, got {fmt!r}", field="format")
    version = doc.get("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported {expected_format} version {version!r}", field="version")


def _require(doc, key, path, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise DataFormatError("missing required field", field=f"{path}.{key}" if path else key)
    v = doc[key]
    if kind is not None and (not isinstance(v, kind) or isinstance(v, bool)):
        raise DataFormatError(f"wrong type {type(v).__name__}", field=f"{path}.{key}" if path else key)
    return v


def _number(doc, key, path):
    v = _require(doc, key, path, (int, float))
    return float(v)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


# ---------------------------------------------------------------------------
# Event logs
# ---------------------------------------------------------------------------

def event_record(e: Event) -> dict:
    rec = {"time": e.time, "user": e.user, "kind": e.kind, "mark": e.mark}
    if not e.counts_toward_badge:
        rec["counts_toward_badge"] = False
    return rec


def save_events(dataset: Dataset, path):
    header = {"format": EVENTS_FORMAT, "version": VERSION, "horizon": dataset.horizon,
              "num_users": dataset.num_users, "num_tags": dataset.num_tags}
    full = np.full((dataset.num_users, 2), dataset.horizon)
    if not np.array_equal(dataset.windows, full):
        header["windows"] = dataset.windows.tolist()
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for e in dataset.events:
            fh.write(json.dumps(event_record(e)) + "\n")


def load_events(path, schema="jsonl", config=None, sort=False) -> Dataset:
    """Read an event log.

    ``schema`` is ``"jsonl"`` (native) or ``"csv"`` (ingestion; ``config``
    is a :class:`CsvSchema` or a dict of its fields).  Out-of-order records
    are rejected unless ``sort`` is set, in which case they are stably
    sorted by time and the repair is logged.
    """
    if schema == "jsonl":
        return _load_jsonl(path, sort)
    if schema == "csv":
        if config is None:
            raise InvalidArgumentError("CSV ingestion needs a column-mapping config")
        cfg = config if isinstance(config, CsvSchema) else CsvSchema.from_dict(config)
        return _load_csv(path, cfg, sort)
    raise InvalidArgumentError(f"unknown event schema {schema!r}")


def _load_jsonl(path, sort):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty file: missing header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", line=1) from exc
    _check_header(header, EVENTS_FORMAT)
    horizon = _number(header, "horizon", "header")
    U = int(_require(header, "num_users", "header", int))
    K = int(_require(header, "num_tags", "header", int))
    windows = header.get("windows")

    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(rec, dict):
            raise DataFormatError("record must be a JSON object", line=lineno)
        for key in ("time", "user", "kind", "mark"):
            if key not in rec:
                raise DataFormatError("missing required field", line=lineno, field=key)
        kind = rec["kind"]
        if kind not in KINDS:
            raise DataFormatError(f"unknown kind {kind!r}", line=lineno, field="kind")
        user, mark = rec["user"], rec["mark"]
        if not isinstance(user, int) or isinstance(user, bool) or not 0 <= user < U:
            raise DataFormatError(f"unknown user {user!r}", line=lineno, field="user")
        if not isinstance(mark, int) or isinstance(mark, bool):
            raise DataFormatError(f"mark must be an integer, got {mark!r}", line=lineno, field="mark")
        if kind == QUESTION and not 0 <= mark < K:
            raise DataFormatError(f"unknown tag {mark}", line=lineno, field="mark")
        t = rec["time"]
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
            raise DataFormatError(f"invalid time {t!r}", line=lineno, field="time")
        rows.append((float(t), user, kind, mark, bool(rec.get("counts_toward_badge", True)), lineno))
    return _assemble(rows, horizon, U, K, windows, sort)


def _assemble(rows, horizon, U, K, windows, sort, parent_is_row=True):
    """Build a Dataset from ``(time, user, kind, mark, counts, line)`` rows.

    Answer marks refer to row positions in file order.
    """
    times = [r[0] for r in rows]
    order = list(range(len(rows)))
    if any(b < a for a, b in zip(times, times[1:])):
        if not sort:
            bad = next(i for i in range(1, len(times)) if times[i] < times[i - 1])
            raise DataFormatError("records are not sorted by time", line=rows[bad][5])
        order = sorted(order, key=lambda i: times[i])
        log.warning("sorted %d out-of-order records by time", len(rows))
    new_pos = {old: new for new, old in enumerate(order)}
    events = []
    for i in order:
        t, user, kind, mark, counts, lineno = rows[i]
        if t < 0 or t > horizon:
            raise DataFormatError(f"time {t} outside [0, {horizon}]", line=lineno, field="time")
        if kind == ANSWER:
            if not 0 <= mark < len(rows) or rows[mark][2] != QUESTION:
                raise DataFormatError(f"parent {mark} is not a question row", line=lineno, field="mark")
            if not rows[mark][0] < t:
                raise DataFormatError(f"parent row {mark} is not strictly earlier", line=lineno, field="mark")
            mark = new_pos[mark]
        events.append(Event(t, user, kind, mark, counts))
    try:
        return Dataset(events, horizon, U, K, windows)
    except InvalidArgumentError as exc:
        raise DataFormatError(str(exc)) from exc


@dataclass
class CsvSchema:
    """Column mapping for tabular exports such as a Stack Exchange Posts dump.

    Every row is either a question or an answer, told apart by the ``kind``
    column (values listed in ``question_values``/``answer_values``).  Answer
    rows name their question through ``parent`` which refers to the ``id``
    column of the question row.  Times are epoch seconds (or ISO 8601) and
    are converted to model time as ``(time - time_origin) / time_divisor``;
    ``time_origin`` defaults to the earliest time.  Users and tags are
    mapped through ``users``/``tags`` vocabularies when given, otherwise
    they must already be integer ids below ``num_users``/``num_tags``.
    A ``tag`` cell may hold several tags (``<a><b>`` or ``a|b``); the first
    one is used.
    """

    time: str = "time"
    user: str = "user"
    kind: str = "kind"
    id: str = "id"
    tag: str = "tag"
    parent: str = "parent"
    counts_toward_badge: str | None = None
    question_values: tuple = ("q", "1")
    answer_values: tuple = ("a", "2")
    time_divisor: float = 86400.0
    time_origin: float | None = None
    horizon: float | None = None
    num_users: int | None = None
    num_tags: int | None = None
    users: list | None = None
    tags: list | None = None
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataFormatError(f"unknown CSV config keys {sorted(unknown)}")
        d = dict(d)
        for key in ("question_values", "answer_values"):
            if key in d:
                d[key] = tuple(str(v) for v in d[key])
        return cls(**d)


def _parse_time(text):
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _first_tag(text):
    text = text.strip()
    if text.startswith("<"):
        return text[1:].split(">", 1)[0]
    return text.split("|", 1)[0]


def _load_csv(path, cfg: CsvSchema, sort):
    if not cfg.time_divisor > 0:
        raise InvalidArgumentError("time_divisor must be positive")
    user_ids = {str(u): i for i, u in enumerate(cfg.users)} if cfg.users is not None else None
    tag_ids = {str(k): i for i, k in enumerate(cfg.tags)} if cfg.tags is not None else None
    U = cfg.num_users if cfg.num_users is not None else (len(cfg.users) if cfg.users is not None else None)
    K = cfg.num_tags if cfg.num_tags is not None else (len(cfg.tags) if cfg.tags is not None else None)
    if U is None or K is None:
        raise InvalidArgumentError("CSV config must declare num_users/num_tags or give vocabularies")

    def lookup(raw, vocab, n, what, lineno):
        if vocab is not None:
            if raw not in vocab:
                raise DataFormatError(f"unknown {what} {raw!r}", line=lineno, field=what)
            return vocab[raw]
        try:
            v = int(raw)
        except ValueError:
            raise DataFormatError(f"{what} {raw!r} is not an integer id", line=lineno, field=what) from None
        if not 0 <= v < n:
            raise DataFormatError(f"unknown {what} {v}", line=lineno, field=what)
        return v

    raw_rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=cfg.delimiter)
        needed = [cfg.time, cfg.user, cfg.kind, cfg.id, cfg.tag, cfg.parent]
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise DataFormatError(f"missing columns {missing}", line=1)
        for lineno, row in enumerate(reader, start=2):
            kind_raw = row[cfg.kind].strip()
            if kind_raw in cfg.question_values:
                kind = QUESTION
            elif kind_raw in cfg.answer_values:
                kind = ANSWER
            else:
                raise DataFormatError(f"unknown kind {kind_raw!r}", line=lineno, field=cfg.kind)
            try:
                t = _parse_time(row[cfg.time])
            except ValueError:
                raise DataFormatError(f"unparseable time {row[cfg.time]!r}", line=lineno, field=cfg.time) from None
            user = lookup(row[cfg.user].strip(), user_ids, U, "user", lineno)
            counts = True
            if cfg.counts_toward_badge:
                counts = row[cfg.counts_toward_badge].strip().lower() in ("1", "true", "yes", "t")
            if kind == QUESTION:
                mark = lookup(_first_tag(row[cfg.tag]), tag_ids, K, "tag", lineno)
            else:
                mark = row[cfg.parent].strip()
            raw_rows.append([t, user, kind, mark, counts, lineno, row[cfg.id].strip()])

    origin = cfg.time_origin if cfg.time_origin is not None else min((r[0] for r in raw_rows), default=0.0)
    by_id = {}
    for i, r in enumerate(raw_rows):
        r[0] = (r[0] - origin) / cfg.time_divisor
        if r[2] == QUESTION:
            by_id[r[6]] = i
    for r in raw_rows:
        if r[2] == ANSWER:
            if r[3] not in by_id:
                raise DataFormatError(f"dangling parent {r[3]!r}", line=r[5], field=cfg.parent)
            r[3] = by_id[r[3]]
    horizon = cfg.horizon if cfg.horizon is not None else max((r[0] for r in raw_rows), default=1.0)
    if not horizon > 0:
        horizon = 1.0
    rows = [tuple(r[:6]) for r in raw_rows]
    return _assemble(rows, horizon, U, K, None, sort)


# ---------------------------------------------------------------------------
# Badges and model configuration
# ---------------------------------------------------------------------------

def badge_to_dict(b: BadgeSpec) -> dict:
    d = {"action": b.action, "threshold": b.threshold, "feature": b.feature, "kernel": b.kernel,
         "bandwidth": b.bandwidth, "day_length": b.day_length}
    if b.name:
        d["name"] = b.name
    return d


def badge_from_dict(d: dict, path="badges[0]") -> BadgeSpec:
    kw = {"action": _require(d, "action", path, str), "threshold": _number(d, "threshold", path)}
    for key in ("feature", "kernel", "name"):
        if key in d:
            kw[key] = d[key]
    for key in ("bandwidth", "day_length"):
        if key in d:
            kw[key] = _number(d, key, path)
    try:
        return BadgeSpec(**kw)
    except InvalidArgumentError as exc:
        raise DataFormatError(str(exc), field=path) from exc


def config_to_dict(cfg: ModelConfig) -> dict:
    return {"decay_w": cfg.decay_w, "cross_cutoff": cfg.cross_cutoff, "time_unit": cfg.time_unit,
            "badges": [badge_to_dict(b) for b in cfg.badges_q + cfg.badges_a]}


def config_from_dict(d: dict, path="config") -> ModelConfig:
    badges = _require(d, "badges", path, list)
    specs = [badge_from_dict(b, f"{path}.badges[{i}]") for i, b in enumerate(badges)]
    kw = {}
    for key in ("decay_w", "cross_cutoff"):
        if key in d:
            kw[key] = _number(d, key, path)
    if "time_unit" in d:
        kw["time_unit"] = str(d["time_unit"])
    return ModelConfig(tuple(b for b in specs if b.kind == QUESTION), tuple(b for b in specs if b.kind == ANSWER), **kw)


def save_model_config(cfg: ModelConfig, path, notes=None):
    doc = {"format": BADGES_FORMAT, "version": VERSION}
    if notes:
        doc["notes"] = list(notes)
    doc.update(config_to_dict(cfg))
    _write_json(doc, path)


def load_model_config(path) -> ModelConfig:
    """Read a badge file (the format of the bundled badge table)."""
    doc = _read_json(path)
    _check_header(doc, BADGES_FORMAT, "document")
    return config_from_dict(doc, path="")


def table1_path() -> Path:
    return Path(str(resources.files("badgepp") / "data" / TABLE1))


def load_table1() -> ModelConfig:
    """The Stack Overflow asking/answering badges shipped with the package."""
    return load_model_config(table1_path())


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def params_to_dict(params: ModelParams, cfg: ModelConfig, extra=None) -> dict:
    users = []
    for u in range(params.num_users):
        users.append({
            "mu_q": float(params.mu_q[u]), "mu_a": float(params.mu_a[u]),
            "rho_q": float(params.rho_q[u]), "rho_a": float(params.rho_a[u]),
            "alpha": params.alpha[u].tolist(), "eta": params.eta[u].tolist(),
        })
    doc = {"format": PARAMS_FORMAT, "version": VERSION, "model": "badge",
           "num_users": params.num_users, "num_tags": params.num_tags,
           "config": config_to_dict(cfg), "users": users}
    if extra:
        doc["extra"] = extra
    return doc


def params_from_dict(doc: dict):
    _check_header(doc, PARAMS_FORMAT, "document")
    K = int(_require(doc, "num_tags", "", int))
    cfg = config_from_dict(_require(doc, "config", "", dict))
    users = _require(doc, "users", "", list)
    cols = {k: [] for k in ("mu_q", "mu_a", "rho_q", "rho_a", "alpha", "eta")}
    for i, u in enumerate(users):
        path = f"users[{i}]"
        for key in ("mu_q", "mu_a", "rho_q", "rho_a"):
            cols[key].append(_number(u, key, path))
        for key in ("alpha", "eta"):
            v = _require(u, key, path, list)
            if len(v) != K:
                raise DataFormatError(f"expected {K} entries, got {len(v)}", field=f"{path}.{key}")
            cols[key].append([float(x) for x in v])
    try:
        params = ModelParams(**{k: np.array(v, dtype=float) for k, v in cols.items()})
    except InvalidArgumentError as exc:
        raise DataFormatError(str(exc), field="users") from exc
    return params, cfg


def save_params(params: ModelParams, cfg: ModelConfig, path, extra=None):
    _write_json(params_to_dict(params, cfg, extra), path)


def load_params(path):
    """Read ``(ModelParams, ModelConfig)``; the ``extra`` block is ignored."""
    return params_from_dict(_read_json(path))


def save_baselines(poisson: dict, hawkes: dict, num_users: int, path):
    """Fitted baselines in the parameter container, one entry per user."""
    users = []
    for u in range(num_users):
        entry = {}
        for kind in KINDS:
            p, h = poisson[u, kind], hawkes[u, kind]
            entry[kind] = {"poisson_rate": p.rate, "hawkes_mu": h.mu, "hawkes_beta": h.beta}
        users.append(entry)
    _write_json({"format": PARAMS_FORMAT, "version": VERSION, "model": "baselines",
                 "num_users": num_users, "users": users}, path)


# ---------------------------------------------------------------------------
# Train/test split
# ---------------------------------------------------------------------------

@dataclass
class Split:
    """``train`` is the full log with shortened observation windows;
    ``test`` lists the global indices of held-out events."""

    train: Dataset
    test: list
    flagged: list = field(default_factory=list)


def split_train_test(dataset: Dataset, fraction=0.8) -> Split:
    """Per user and kind, the earliest ``ceil(fraction * n)`` events are train.

    The train window of a user/kind ends at its last train event, so the
    held-out period starts right after it.  Users with fewer than two
    events of a kind keep all of them in train and are flagged.
    """
    if not 0 < fraction < 1:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    windows = np.full((dataset.num_users, 2), dataset.horizon)
    flagged = []
    for u in range(dataset.num_users):
        for c, kind in enumerate(KINDS):
            idx = dataset.user_event_indices(u, kind)
            n = idx.size
            if n < 2:
                if n:
                    flagged.append((u, kind))
                continue
            n_train = min(n, math.ceil(fraction * n - 1e-9))
            if n_train < n:
                windows[u, c] = dataset.times[idx[n_train - 1]]
    train = dataset.with_windows(windows)
    test = np.flatnonzero(~train.in_window()).tolist()
    return Split(train, test, flagged)


# ---------------------------------------------------------------------------
# Reports and traces
# ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def save_report_json(payload: dict, path, kind="evaluation"):
    _write_json({"format": REPORT_FORMAT, "version": VERSION, "kind": kind, **_jsonable(payload)}, path)


def load_report_json(path) -> dict:
    doc = _read_json(path)
    _check_header(doc, REPORT_FORMAT, "document")
    return doc


def save_eval_csv(reports: dict, path):
    """Rows ``method, metric, k, value`` for every report in ``reports``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "k", "value"])
        for method, rep in reports.items():
            for metric, k, value in rep.rows():
                w.writerow([method, metric, k, repr(float(value))])


def save_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lower_bound"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])


def save_qq_csv(points, path, extra_columns=None):
    """``theoretical, empirical`` quantile pairs, optionally with constant label columns."""
    extra_columns = extra_columns or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(extra_columns) + ["theoretical", "empirical"])
        for a, b in points:
            w.writerow(list(extra_columns.values()) + [repr(float(a)), repr(float(b))])
