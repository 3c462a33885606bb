"""Interval-censored competing-risks records, censoring intervals, jump grids
and the CSV dataset format.

A subject is examined at increasing times ``U_1 < ... < U_J``. The event, if
seen, is known to lie in one interval ``(U_{j-1}, U_j]`` with ``U_0 = 0``;
otherwise the subject is right-censored after ``U_J``. The failure cause is
either known (``1..K``) or missing.

Covariates are step functions anchored at the examination times: row ``j-1``
of :attr:`SubjectRecord.covariates` is the value on ``(U_{j-1}, U_j]`` and the
last row is carried forward past ``U_J``. A single row means time-invariant.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyGridError, ValidationError


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    id: str
    exam_times: np.ndarray
    covariates: np.ndarray
    event_interval: int | None = None  # 1-based interval index j with Delta_ij = 1
    cause: int | None = None
    cause_missing: bool = False

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.exam_times, dtype=float))
        if times.ndim != 1 or times.size == 0:
            raise ValidationError(f"subject {self.id}: need at least one examination time")
        if not np.all(np.isfinite(times)) or times[0] <= 0:
            raise ValidationError(f"subject {self.id}: examination times must be finite and > 0")
        if np.any(np.diff(times) <= 0):
            raise ValidationError(f"subject {self.id}: examination times must be strictly increasing")
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z[None, :]
        if z.ndim != 2 or z.shape[0] not in (1, times.size):
            raise ValidationError(
                f"subject {self.id}: covariates must have 1 or {times.size} rows, got shape {z.shape}"
            )
        if not np.all(np.isfinite(z)):
            raise ValidationError(f"subject {self.id}: non-finite covariate")
        j = self.event_interval
        if j is not None:
            j = int(j)
            if not 1 <= j <= times.size:
                raise ValidationError(f"subject {self.id}: event interval {j} outside 1..{times.size}")
            if self.cause_missing:
                if self.cause is not None:
                    raise ValidationError(f"subject {self.id}: cause given but flagged missing")
            elif self.cause is None or int(self.cause) < 1:
                raise ValidationError(f"subject {self.id}: observed event needs a cause >= 1 or a missing flag")
        elif self.cause is not None or self.cause_missing:
            raise ValidationError(f"subject {self.id}: right-censored subject cannot carry a cause")
        times.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "exam_times", times)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "event_interval", j)
        object.__setattr__(self, "cause", None if self.cause is None else int(self.cause))
        object.__setattr__(self, "id", str(self.id))

    @property
    def n_exams(self):
        return self.exam_times.size

    @property
    def dim(self):
        return self.covariates.shape[1]

    @property
    def event_observed(self):
        return self.event_interval is not None

    @property
    def time_varying(self):
        return self.covariates.shape[0] > 1

    def __repr__(self):
        return (
            f"SubjectRecord(id={self.id!r}, exams={tuple(self.exam_times)}, "
            f"event_interval={self.event_interval}, cause={self.cause}, missing={self.cause_missing})"
        )


class CensoringInterval(NamedTuple):
    left: float
    right: float  # math.inf when right-censored

    @property
    def right_censored(self):
        return math.isinf(self.right)


def build_interval(subject):
    """Censoring interval ``(L, R]`` containing the subject's failure time."""
    u = subject.exam_times
    if not subject.event_observed:
        return CensoringInterval(float(u[-1]), math.inf)
    j = subject.event_interval
    left = 0.0 if j == 1 else float(u[j - 2])
    return CensoringInterval(left, float(u[j - 1]))


def covariate_at(subject, t):
    """Covariate vector in force at time ``t > 0`` (left-continuous steps)."""
    z = subject.covariates
    if z.shape[0] == 1:
        return z[0].copy()
    idx = int(np.searchsorted(subject.exam_times, t, side="left"))
    return z[min(idx, z.shape[0] - 1)].copy()


@dataclass(frozen=True, eq=False)
class JumpGrid:
    """Per-risk jump locations and, per subject, how many lie below the
    interval endpoints.

    For risk ``k`` and subject ``i`` the grid indices ``j`` with
    ``t_kj <= L_i`` are ``range(left_count[k][i])`` and those inside
    ``(L_i, R_i]`` are ``range(left_count[k][i], right_count[k][i])``.
    For right-censored subjects the second range is empty.
    """

    times: tuple
    left_count: tuple
    right_count: tuple
    intervals: tuple = field(repr=False)

    @property
    def n_risks(self):
        return len(self.times)

    def sizes(self):
        return [t.size for t in self.times]

    def below_left(self, k, i):
        return range(int(self.left_count[k][i]))

    def in_interval(self, k, i):
        return range(int(self.left_count[k][i]), int(self.right_count[k][i]))


def _check_causes(dataset, n_risks):
    for s in dataset:
        if s.cause is not None and not 1 <= s.cause <= n_risks:
            raise ValidationError(f"subject {s.id}: cause {s.cause} outside 1..{n_risks}")


def build_jump_grid(dataset, n_risks):
    """Jump grid: for each risk the distinct finite, positive endpoints of
    intervals of subjects failing from that risk or with a missing cause."""
    dataset = list(dataset)
    _check_causes(dataset, n_risks)
    intervals = tuple(build_interval(s) for s in dataset)
    if not any(s.event_observed for s in dataset):
        raise EmptyGridError("no subject has an observed event")
    lefts = np.array([iv.left for iv in intervals])
    rights = np.array([iv.right for iv in intervals])
    times, left_count, right_count = [], [], []
    for k in range(1, n_risks + 1):
        pts = set()
        for s, iv in zip(dataset, intervals):
            if s.event_observed and (s.cause_missing or s.cause == k):
                pts.add(iv.left)
                pts.add(iv.right)
        grid = np.array(sorted(p for p in pts if 0 < p < math.inf), dtype=float)
        lc = np.searchsorted(grid, lefts, side="right")
        rc = np.where(np.isinf(rights), lc, np.searchsorted(grid, rights, side="right"))
        for arr in (grid, lc, rc):
            arr.flags.writeable = False
        times.append(grid)
        left_count.append(lc)
        right_count.append(rc)
    return JumpGrid(tuple(times), tuple(left_count), tuple(right_count), intervals)


# CSV format -----------------------------------------------------------------

_MISSING_TOKENS = {"", "na", "nan", "none"}


def _num(value, row, col):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"column {col!r}: non-numeric value {value!r}", row=row) from None


def _int(value, row, col):
    x = _num(value, row, col)
    if not x.is_integer():
        raise ValidationError(f"column {col!r}: expected an integer, got {value!r}", row=row)
    return int(x)


def _as_text(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.TextIOBase):
        return source
    # binary file-like
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _dict_reader(handle):
    """CSV or TSV reader; the delimiter is taken from the header line."""
    text = handle.read()
    first = text.split("\n", 1)[0]
    return csv.DictReader(io.StringIO(text), delimiter="\t" if "\t" in first else ",")


def load_dataset(source, schema=None, companion=None):
    """Read subjects from CSV.

    Two layouts are accepted. The examination layout has columns
    ``id,n_exams,U1..Umax,event,event_j,cause,z1..zd``. The interval layout
    replaces ``n_exams,U*,event_j`` by ``L,R`` with ``R = inf`` for
    right-censored rows. ``cause = 0`` on an event row means the cause is
    missing.

    ``schema`` maps canonical column names (``id``, ``event``, ``cause``, ...)
    to the names used in the file. ``companion`` is an optional long-format
    CSV ``id,exam_index,z1..zd`` whose rows override the covariate value on
    interval ``exam_index`` (1-based) of that subject.
    """
    schema = dict(schema or {})
    handle = _as_text(source)
    try:
        reader = _dict_reader(handle)
        header = reader.fieldnames or []
        col = {name: schema.get(name, name) for name in ("id", "n_exams", "event", "event_j", "cause", "L", "R")}
        zcols = schema.get("covariates") or [h for h in header if h.startswith("z") and h[1:].isdigit()]
        zcols = sorted(zcols, key=lambda h: int(h[1:]) if h[1:].isdigit() else h)
        ucols = sorted(
            (h for h in header if h.startswith("U") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        interval_layout = col["L"] in header and col["R"] in header
        required = [col["id"], col["event"], col["cause"]]
        if not interval_layout:
            required += [col["n_exams"], col["event_j"]]
            if not ucols:
                raise ValidationError("schema mismatch: no U1..Umax columns and no L,R columns")
        missing = [c for c in required if c not in header]
        if missing or not zcols:
            raise ValidationError(f"schema mismatch: missing columns {missing or ['z1..zd']}")
        rows = []
        for rowno, rec in enumerate(reader, start=1):
            sid = rec[col["id"]]
            z = np.array([_num(rec[c], rowno, c) for c in zcols])
            event = _int(rec[col["event"]], rowno, col["event"])
            if event not in (0, 1):
                raise ValidationError(f"event must be 0 or 1, got {event}", row=rowno)
            cause_txt = (rec[col["cause"]] or "").strip().lower()
            cause = 0 if cause_txt in _MISSING_TOKENS else _int(cause_txt, rowno, col["cause"])
            if interval_layout:
                left = _num(rec[col["L"]], rowno, "L")
                right_txt = (rec[col["R"]] or "").strip().lower()
                right = math.inf if right_txt in ("inf", "+inf", "infinity", "") else _num(right_txt, rowno, "R")
                if math.isinf(right):
                    if left <= 0:
                        raise ValidationError("right-censored row needs L > 0", row=rowno)
                    exams, ev_j = [left], None
                else:
                    if not 0 <= left < right:
                        raise ValidationError(f"need 0 <= L < R, got ({left}, {right}]", row=rowno)
                    exams, ev_j = ([right], 1) if left == 0 else ([left, right], 2)
                if (event == 1) != (ev_j is not None):
                    raise ValidationError("event flag inconsistent with R", row=rowno)
            else:
                n_ex = _int(rec[col["n_exams"]], rowno, col["n_exams"])
                if not 1 <= n_ex <= len(ucols):
                    raise ValidationError(f"n_exams={n_ex} outside 1..{len(ucols)}", row=rowno)
                exams = [_num(rec[c], rowno, c) for c in ucols[:n_ex]]
                if any(u <= 0 for u in exams) or any(b <= a for a, b in zip(exams, exams[1:])):
                    raise ValidationError("examination times must be positive and strictly increasing", row=rowno)
                ej_txt = (rec[col["event_j"]] or "").strip()
                ev_j = _int(ej_txt, rowno, col["event_j"]) if event == 1 else None
                if event == 0 and ej_txt not in ("", "0"):
                    raise ValidationError("event_j given on a censored row", row=rowno)
            if event == 0 and cause != 0:
                raise ValidationError("right-censored row cannot carry a cause", row=rowno)
            try:
                rows.append(
                    SubjectRecord(
                        id=sid,
                        exam_times=np.array(exams),
                        covariates=z,
                        event_interval=ev_j,
                        cause=(cause or None) if event else None,
                        cause_missing=bool(event and cause == 0),
                    )
                )
            except ValidationError as exc:
                raise ValidationError(str(exc), row=rowno) from None
    finally:
        if isinstance(source, str):
            handle.close()
    if companion is not None:
        rows = _apply_companion(rows, companion, len(zcols))
    return rows


def _apply_companion(rows, companion, dim):
    handle = _as_text(companion)
    try:
        reader = _dict_reader(handle)
        zcols = sorted(
            (h for h in reader.fieldnames or [] if h.startswith("z") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        if len(zcols) != dim or "id" not in (reader.fieldnames or []) or "exam_index" not in reader.fieldnames:
            raise ValidationError("companion schema mismatch: need id,exam_index and the same z columns")
        overrides = {}
        for rowno, rec in enumerate(reader, start=1):
            j = _int(rec["exam_index"], rowno, "exam_index")
            overrides.setdefault(rec["id"], {})[j] = np.array([_num(rec[c], rowno, c) for c in zcols])
    finally:
        if isinstance(companion, str):
            handle.close()
    out = []
    for s in rows:
        over = overrides.get(s.id)
        if not over:
            out.append(s)
            continue
        z = np.repeat(s.covariates[:1], s.n_exams, axis=0)
        for j, v in over.items():
            if not 1 <= j <= s.n_exams:
                raise ValidationError(f"companion: subject {s.id} has no examination {j}")
            z[j - 1] = v
        out.append(
            SubjectRecord(s.id, s.exam_times, z, s.event_interval, s.cause, s.cause_missing)
        )
    return out


def write_dataset(dataset, dest, delimiter=","):
    """Write subjects in the examination layout; returns the text written.

    Only the first covariate row is written; time-varying subjects need the
    companion file from :func:`write_companion`.
    """
    dataset = list(dataset)
    umax = max(s.n_exams for s in dataset)
    dim = dataset[0].dim
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["id", "n_exams", *[f"U{j}" for j in range(1, umax + 1)], "event", "event_j", "cause",
                *[f"z{a}" for a in range(1, dim + 1)]])
    for s in dataset:
        us = [repr(float(u)) for u in s.exam_times] + [""] * (umax - s.n_exams)
        cause = "" if not s.event_observed else (0 if s.cause_missing else s.cause)
        w.writerow([s.id, s.n_exams, *us, int(s.event_observed), s.event_interval or "", cause,
                    *[repr(float(v)) for v in s.covariates[0]]])
    text = buf.getvalue()
    if dest is not None:
        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            dest.write(text)
    return text


def write_companion(dataset, dest, delimiter=","):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    dataset = list(dataset)
    dim = dataset[0].dim
    w.writerow(["id", "exam_index", *[f"z{a}" for a in range(1, dim + 1)]])
    for s in dataset:
        if s.time_varying:
            for j, row in enumerate(s.covariates, start=1):
                w.writerow([s.id, j, *[repr(float(v)) for v in row]])
    text = buf.getvalue()
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif dest is not None:
        dest.write(text)
    return text
