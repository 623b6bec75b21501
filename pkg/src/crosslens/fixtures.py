"""Deterministic multi-source workspaces with planted insights and join keys.

A fixture is a daily fact table (groups x days) whose target metric carries
planted patterns, a dimension table reachable through one planted join key,
an optional JSON document of company events, an optional text file of metric
definitions, and seeded distractor columns. :func:`generate_workspace`
writes it; :func:`verify_workspace` re-reads the files and checks every
planted pattern statistically.

Target model, per group ``g`` and day ``t``::

    y = base_g + slope * t + sum_k sign_k * effect_kg * (x_k - center_k) + noise

A planted comparison lifts one group's expected mean above every other
group's by ``gap``; a planted extreme sets one row ``margin`` above the
maximum of all others.
"""

import csv
import json
import logging
import math
import random
import shutil
import sqlite3
import statistics
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

import numpy as np

from .core import SourceDescriptor, SourceFormat, UnifiedType, format_alias
from .errors import FixtureSpecError
from .ingestion import canonicalize, column_type, discover_sources, parse_typed, read_tables, reservoir_sample

logger = logging.getLogger(__name__)

CATEGORIES = ("TREND", "COMPARISON", "EXTREME", "ATTRIBUTION")
EXTENSION = {"CSV": ".csv", "SQL_DB": ".db", "JSON_DOC": ".json", "TEXT": ".txt"}

JOIN_NAME_PAIRS = (
    ("campaign_id", "campaign_code"),
    ("customer_id", "cust_id"),
    ("store_id", "store_key"),
    ("account_id", "acct_id"),
    ("product_id", "prod_id"),
    ("user_id", "userId"),
    ("member_id", "member_no"),
    ("device_id", "device_key"),
)

DISTRACTOR_NAMES = (
    "weather_index", "foot_traffic", "store_temp", "promo_code", "survey_score", "page_load_ms",
    "inventory_level", "staff_count", "queue_length", "loyalty_tier", "shelf_space", "competitor_price",
    "fuel_price", "rainfall_mm", "device_mix", "app_version", "support_tickets", "sensor_reading",
    "batch_label", "warehouse_zone", "delivery_lag", "cart_size", "session_depth", "bounce_index",
    "email_opens", "banner_clicks", "review_count", "price_index", "audit_flag", "tax_band",
)

PERIOD_NAMES = (
    "Holiday Sale", "Investment Period", "Budget Cut Period", "Brand Refresh", "Spring Promotion",
    "System Migration", "Partner Launch", "Pricing Review", "Summer Campaign", "Hiring Freeze",
)


# -- spec -------------------------------------------------------------------------


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    seed: int
    formats: tuple = ("CSV", "SQL_DB", "JSON_DOC", "TEXT")
    start_date: str = "2022-01-01"
    days: int = 120
    fact: dict = field(default_factory=dict)
    drivers: tuple = ()
    planted_insights: tuple = ()
    planted_joins: tuple = ()
    dimension: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    text: dict = field(default_factory=dict)
    distractor_count: int = 10

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise FixtureSpecError(f"unknown fixture fields: {sorted(unknown)}")
        for key in ("formats", "drivers", "planted_insights", "planted_joins"):
            if key in data:
                data[key] = tuple(data[key])
        spec = cls(**data)
        spec.validate()
        return spec

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    def with_seed(self, seed):
        return FixtureSpec.from_dict({**self.to_dict(), "seed": seed})

    # resolved views with defaults
    @property
    def fact_conf(self):
        base = {
            "name": "daily_metrics", "format": "CSV", "date_column": "log_date", "group_column": "region",
            "groups": 5, "group_prefix": "Region-", "target": "daily_cvr", "base_range": [0.4, 0.6], "noise": 0.01,
        }
        return {**base, **self.fact}

    @property
    def dim_conf(self):
        base = {
            "name": "campaigns", "format": "SQL_DB", "category_column": "channel",
            "categories": ["search", "social", "display", "email"],
        }
        return {**base, **self.dimension}

    def validate(self):
        fact, dim = self.fact_conf, self.dim_conf
        formats = set(self.formats)
        if not formats <= set(EXTENSION):
            raise FixtureSpecError(f"unknown formats {sorted(formats - set(EXTENSION))}")
        for role, conf in (("fact", fact), ("dimension", dim)):
            if conf["format"] not in formats or conf["format"] == "TEXT":
                raise FixtureSpecError(f"{role} format {conf['format']} must be a tabular format listed in formats")
        if fact["name"] == dim["name"]:
            raise FixtureSpecError("fact and dimension need different names")
        if self.days < 3 or fact["groups"] < 2:
            raise FixtureSpecError("a fixture needs at least 3 days and 2 groups")
        if self.distractor_count < 0:
            raise FixtureSpecError("distractor_count must be >= 0")
        drivers = {d["name"] for d in self.drivers}
        for ins in self.planted_insights:
            cat = ins.get("category")
            if cat not in CATEGORIES:
                raise FixtureSpecError(f"unknown insight category {cat!r}")
            if cat == "ATTRIBUTION":
                if not drivers:
                    raise FixtureSpecError("an ATTRIBUTION insight needs at least one driver")
                if ins.get("driver") not in drivers:
                    raise FixtureSpecError(f"ATTRIBUTION driver {ins.get('driver')!r} is not a declared driver")
            if cat == "TREND" and not ins.get("slope"):
                raise FixtureSpecError("a TREND insight needs a non-zero slope")
            if cat in ("COMPARISON", "EXTREME") and not 0 <= ins.get("group", 0) < fact["groups"]:
                raise FixtureSpecError(f"{cat} group index out of range")
            if cat == "COMPARISON" and ins.get("gap", 0) <= 0:
                raise FixtureSpecError("a COMPARISON insight needs a positive gap")
            if cat == "EXTREME" and (not 0 <= ins.get("day", 0) < self.days or ins.get("margin", 0) <= 0):
                raise FixtureSpecError("an EXTREME insight needs a day within range and a positive margin")
        if len(self.planted_joins) > 1:
            raise FixtureSpecError("at most one planted join is supported")
        for j in self.planted_joins:
            f = j.get("overlap_fraction", 0)
            if not 0 < f <= 1:
                raise FixtureSpecError(f"overlap_fraction must lie in (0, 1], got {f}")
            if j.get("n", 0) < 1:
                raise FixtureSpecError("a planted join needs n >= 1 key values")
            if j.get("n", 0) > self.days * fact["groups"]:
                raise FixtureSpecError("join n exceeds the fact row count")
        if self.text and "TEXT" not in formats:
            raise FixtureSpecError("text requested but TEXT is not in formats")
        if self.events and "JSON_DOC" not in formats:
            raise FixtureSpecError("events requested but JSON_DOC is not in formats")
        return self


def load_spec(path_or_name):
    """Read a FixtureSpec from a JSON file, or by name from the shipped specs."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("crosslens").joinpath("data").joinpath("specs").joinpath(f"{path_or_name}.json")
        if not res.is_file():
            raise FileNotFoundError(f"no fixture spec file or shipped spec named {path_or_name!r}")
        text = res.read_text(encoding="utf-8")
    return FixtureSpec.from_dict(json.loads(text))


def demo_paths():
    """Locations of the shipped demo workspace, its ground truth, goal and cassette."""
    root = Path(str(resources.files("crosslens").joinpath("data").joinpath("demo")))
    return {
        "workspace": root / "workspace",
        "ground_truth": root / "ground_truth.json",
        "cassette": root / "cassette.json",
        "goal": (root / "goal.txt").read_text(encoding="utf-8").strip(),
    }


def shipped_specs():
    folder = resources.files("crosslens").joinpath("data").joinpath("specs")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


# -- ground truth -----------------------------------------------------------------


@dataclass
class GroundTruth:
    spec_name: str
    seed: int
    insights: list
    joins: list
    parameters: dict
    distractors: list = field(default_factory=list)

    def statements(self):
        return [i["statement"] for i in self.insights]

    def join_pairs(self):
        return [tuple(j["aliases"]) for j in self.joins]

    def to_dict(self):
        return {
            "distractors": self.distractors,
            "insights": self.insights,
            "joins": self.joins,
            "parameters": self.parameters,
            "seed": self.seed,
            "spec_name": self.spec_name,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data):
        return cls(data["spec_name"], data["seed"], data["insights"], data["joins"], data["parameters"],
                   data.get("distractors", []))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


# -- writers ----------------------------------------------------------------------

SQL_DECL = {UnifiedType.INT: "INTEGER", UnifiedType.FLOAT: "REAL", UnifiedType.TEXT: "TEXT", UnifiedType.DATE: "DATE"}


@dataclass
class _Table:
    name: str
    fmt: str
    columns: list  # (name, UnifiedType)
    rows: list

    @property
    def file(self):
        return self.name + EXTENSION[self.fmt]

    @property
    def sql_table(self):
        return self.name


def _cell(value):
    if isinstance(value, float):
        return repr(round(value, 6))
    return "" if value is None else str(value)


def _write_table(table, out_dir):
    path = out_dir / table.file
    names = [c for c, _ in table.columns]
    if table.fmt == "CSV":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            w.writerows([_cell(v) for v in row] for row in table.rows)
    elif table.fmt == "SQL_DB":
        if path.exists():
            path.unlink()
        con = sqlite3.connect(path)
        try:
            ddl = ", ".join(f'"{n}" {SQL_DECL[t]}' for n, t in table.columns)
            con.execute(f'CREATE TABLE "{table.sql_table}" ({ddl})')
            marks = ", ".join("?" for _ in names)
            con.executemany(
                f'INSERT INTO "{table.sql_table}" VALUES ({marks})',
                [tuple(round(v, 6) if isinstance(v, float) else v for v in row) for row in table.rows],
            )
            con.commit()
        finally:
            con.close()
    elif table.fmt == "JSON_DOC":
        records = [
            {n: (round(v, 6) if isinstance(v, float) else v) for n, v in zip(names, row)} for row in table.rows
        ]
        path.write_text(json.dumps({table.name: records}, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _alias(table, column):
    fmt = SourceFormat(table.fmt)
    source = SourceDescriptor(table.name, fmt, Path(table.file), (table.name,), stem=table.name)
    return format_alias(source, table.name, column)


def _location(table, column):
    return {"column": column, "file": table.file, "table": table.name}


# -- generation -------------------------------------------------------------------


def _daily_series(rng, days):
    """Smooth series with zero least-squares slope against the day index."""
    t = np.arange(days, dtype=float)
    s = np.zeros(days)
    for _ in range(3):
        period = rng.uniform(days / 4, days)
        s += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    X = np.column_stack([np.ones(days), t])
    coef, *_ = np.linalg.lstsq(X, s, rcond=None)
    r = s - X @ coef
    span = r.max() - r.min()
    return (r - r.min()) / span if span > 0 else np.full(days, 0.5)


def _distractor_values(rng, kind, n, name):
    if kind == "float":
        scale = rng.uniform(1, 1000)
        return [float(v) for v in rng.normal(scale, scale / 5, n)]
    if kind == "int":
        return [int(v) for v in rng.integers(0, 1_000_000, n)]
    abbr = "".join(p[0] for p in name.split("_")).upper()
    k = int(rng.integers(6, 25))
    return [f"{abbr}-{int(v):03d}" for v in rng.integers(0, k, n)]


def _distractors(rng, names, n):
    kinds = ("float", "int", "text", "float")
    cols = []
    for i, name in enumerate(names):
        kind = kinds[i % len(kinds)]
        utype = {"float": UnifiedType.FLOAT, "int": UnifiedType.INT, "text": UnifiedType.TEXT}[kind]
        cols.append((name, utype, _distractor_values(rng, kind, n, name)))
    return cols


def generate_workspace(spec, out_dir):
    """Write the fixture's files into ``out_dir`` and return its GroundTruth.

    The output is a pure function of ``spec``: the same spec always yields
    byte-identical files.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    pick = random.Random(spec.seed)
    fact_c, dim_c = spec.fact_conf, spec.dim_conf
    G, D = fact_c["groups"], spec.days
    start = date.fromisoformat(spec.start_date)
    days = [start + timedelta(days=i) for i in range(D)]
    groups = [f"{fact_c['group_prefix']}{chr(65 + i) if G <= 26 else i}" for i in range(G)]
    insights = {i["category"]: i for i in spec.planted_insights}
    params = {"groups": groups}

    # drivers
    lo, hi = fact_c["base_range"]
    base = rng.uniform(lo, hi, G)
    gidx = np.repeat(np.arange(G), D)
    tidx = np.tile(np.arange(D), G)
    n_rows = G * D
    driver_cols, effects = [], []
    for d in spec.drivers:
        low, high = d["low"], d["high"]
        if d.get("scope", "day") == "group":
            level = rng.uniform(low, high, G)
            x = level[gidx] * (1 + 0.1 * rng.standard_normal(n_rows))
        else:
            series = low + (high - low) * _daily_series(rng, D)
            x = series[tidx] + 0.02 * (high - low) * rng.standard_normal(n_rows)
        eff = rng.uniform(*d["effect_range"], G)
        center = (low + high) / 2
        contrib = d.get("sign", 1) * eff[gidx] * (x - center)
        driver_cols.append((d["name"], x))
        effects.append(contrib)
        params[d["name"]] = {"effect": [round(float(e), 8) for e in eff]}
    slope = insights.get("TREND", {}).get("slope", 0.0)
    signal = np.sum(effects, axis=0) if effects else np.zeros(n_rows)

    # comparison: a separate offset lifts the chosen group's expected mean above every other group by `gap`
    lift = np.zeros(G)
    if "COMPARISON" in insights:
        c, gap = insights["COMPARISON"]["group"], insights["COMPARISON"]["gap"]
        means = np.array([base[g] + slope * (D - 1) / 2 + signal[gidx == g].mean() for g in range(G)])
        lift[c] = max(0.0, max(means[g] for g in range(G) if g != c) + gap - means[c])
    params["base"] = [round(float(b), 6) for b in base]
    params["comparison_lift"] = [round(float(v), 6) for v in lift]
    y = (base + lift)[gidx] + slope * tidx + signal + rng.normal(0, fact_c["noise"], n_rows)
    y = np.round(y, 6)
    if "EXTREME" in insights:
        e = insights["EXTREME"]["group"] * D + insights["EXTREME"]["day"]
        y[e] = round(float(np.max(np.delete(y, e))) + insights["EXTREME"]["margin"], 6)

    # planted join
    names_pool = list(DISTRACTOR_NAMES)
    pick.shuffle(names_pool)
    join = spec.planted_joins[0] if spec.planted_joins else None
    left_ids = right_ids = []
    if join:
        left_name, right_name = join.get("left_column"), join.get("right_column")
        if not left_name or not right_name:
            left_name, right_name = JOIN_NAME_PAIRS[pick.randrange(len(JOIN_NAME_PAIRS))]
        n = join["n"]
        prefix = left_name.split("_")[0][:4].upper()
        pool = [f"{prefix}{i:05d}" for i in pick.sample(range(10_000, 99_999), n)]
        shared = round(join["overlap_fraction"] * n)
        left_only = (n - shared) // 2
        left_ids = pool[:shared + left_only]
        right_ids = pool[:shared] + pool[shared + left_only:]
        params["join"] = {"left_column": left_name, "right_column": right_name, "n": n, "shared": shared}

    # fact table
    columns = [(fact_c["date_column"], UnifiedType.DATE), (fact_c["group_column"], UnifiedType.TEXT)]
    data = [[days[t].isoformat() for t in tidx], [groups[g] for g in gidx]]
    if join:
        order = pick.sample(range(n_rows), n_rows)
        keys = [None] * n_rows
        for k, row in enumerate(order):
            keys[row] = left_ids[k % len(left_ids)]
        columns.append((left_name, UnifiedType.TEXT))
        data.append(keys)
    columns.append((fact_c["target"], UnifiedType.FLOAT))
    data.append([float(v) for v in y])
    for name, x in driver_cols:
        columns.append((name, UnifiedType.FLOAT))
        data.append([round(float(v), 4) for v in x])
    fact_distractors = names_pool[: spec.distractor_count]
    del names_pool[: spec.distractor_count]
    for name, utype, values in _distractors(rng, fact_distractors, n_rows):
        columns.append((name, utype))
        data.append(values)
    fact = _Table(fact_c["name"], fact_c["format"], columns, [list(r) for r in zip(*data)])
    tables = [fact]

    # dimension table
    if join:
        m = len(right_ids)
        dim_cols = [(right_name, UnifiedType.TEXT), (dim_c["category_column"], UnifiedType.TEXT),
                    ("launch_date", UnifiedType.DATE), ("budget", UnifiedType.FLOAT)]
        launch0 = start - timedelta(days=730)
        dim_data = [
            list(right_ids),
            [dim_c["categories"][i % len(dim_c["categories"])] for i in range(m)],
            [(launch0 + timedelta(days=int(v))).isoformat() for v in rng.integers(0, 365, m)],
            [round(float(v), 2) for v in rng.uniform(1000, 50000, m)],
        ]
        dim_names = names_pool[: min(3, spec.distractor_count)]
        del names_pool[: len(dim_names)]
        for name, utype, values in _distractors(rng, dim_names, m):
            dim_cols.append((name, utype))
            dim_data.append(values)
        tables.append(_Table(dim_c["name"], dim_c["format"], dim_cols, [list(r) for r in zip(*dim_data)]))

    for t in tables:
        _write_table(t, out_dir)
    if spec.events:
        _write_events(spec, out_dir, rng, pick, days, names_pool)
    if spec.text:
        _write_text(spec, out_dir, fact, join and (left_name, right_name))

    truth = _ground_truth(spec, fact, tables, days, groups, params, join, fact_distractors, slope)
    return truth


def _write_events(spec, out_dir, rng, pick, days, names_pool):
    ev = {"name": "company_events", "collection": "company_periods", "count": 8, **spec.events}
    names = pick.sample(PERIOD_NAMES, min(ev["count"], len(PERIOD_NAMES)))
    extra = names_pool[:2]
    del names_pool[:2]
    records = []
    for k, pname in enumerate(names):
        s = int(rng.integers(0, len(days) - 1))
        e = min(len(days) - 1, s + int(rng.integers(5, 45)))
        rec = {
            "period_id": f"p{k + 1:02d}-{pname.split()[0].lower()}",
            "period_name": pname,
            "type": ("Marketing", "Financial", "Operations")[k % 3],
            "start_date": days[s].isoformat(),
            "end_date": days[e].isoformat(),
            "description": f"{pname} between {days[s].isoformat()} and {days[e].isoformat()}.",
        }
        for name in extra:
            rec[name] = round(float(rng.uniform(0, 100)), 3)
        records.append(rec)
    path = out_dir / f"{ev['name']}.json"
    path.write_text(json.dumps({ev["collection"]: records}, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_text(spec, out_dir, fact, join_names):
    fc = spec.fact_conf
    lines = [
        f"Metric definitions for the {spec.name} workspace.",
        "",
        f"{fc['target']}: the {fc['target'].replace('_', ' ')} metric, recorded once per {fc['group_column']} "
        f"and {fc['date_column']}. Analysts track {fc['target']} as the headline outcome.",
    ]
    for d in spec.drivers:
        lines += [
            "",
            f"{d['name']}: {d.get('description', d['name'].replace('_', ' '))}. "
            f"{d['name']} is recorded alongside {fc['target']} for each {fc['group_column']}.",
        ]
    if join_names:
        left, right = join_names
        lines += [
            "",
            f"{left}: identifies the record in the {spec.dim_conf['name']} reference table, where it is stored as {right}.",
        ]
    lines += ["", "Other columns are operational telemetry kept for completeness."]
    name = spec.text.get("name", "metric_definitions")
    (out_dir / f"{name}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _ground_truth(spec, fact, tables, days, groups, params, join, distractors, slope):
    fc = spec.fact_conf
    loc = _location(fact, fc["target"])
    target, gcol, tcol = fc["target"], fc["group_column"], fc["date_column"]
    out = []
    for ins in spec.planted_insights:
        cat = ins["category"]
        if cat == "TREND":
            word = "a decreasing" if slope < 0 else "an increasing"
            out.append({"category": cat, "statement": f"{target} shows {word} trend over {tcol}.",
                        "check": {**loc, "time": tcol, "slope": slope}})
        elif cat == "COMPARISON":
            g = groups[ins["group"]]
            out.append({"category": cat,
                        "statement": f"Compared across {gcol}, {g} has the highest average {target}, "
                                     f"ahead of the next {gcol} by about {ins['gap']}.",
                        "check": {**loc, "group_column": gcol, "group": g, "gap": ins["gap"]}})
        elif cat == "EXTREME":
            g, d = groups[ins["group"]], days[ins["day"]].isoformat()
            out.append({"category": cat, "statement": f"The highest {target} occurs in {gcol} {g} on {d}.",
                        "check": {**loc, "group_column": gcol, "group": g, "time": tcol, "day": d}})
        elif cat == "ATTRIBUTION":
            drv = next(x for x in spec.drivers if x["name"] == ins["driver"])
            sign = 1 if drv.get("sign", 1) > 0 else -1
            word = "positively" if sign > 0 else "negatively"
            out.append({"category": cat, "statement": f"{target} is {word} correlated with {drv['name']}.",
                        "check": {**loc, "driver": drv["name"], "sign": sign}})
    joins = []
    if join:
        dim = tables[1]
        left, right = params["join"]["left_column"], params["join"]["right_column"]
        joins.append({
            "aliases": sorted([_alias(fact, left), _alias(dim, right)]),
            "left": _location(fact, left),
            "overlap_fraction": join["overlap_fraction"],
            "right": _location(dim, right),
        })
    numeric = {n for n, t in fact.columns if t.is_numeric}
    dist = [_location(fact, n) for n in distractors if n in numeric]
    return GroundTruth(spec.name, spec.seed, out, joins, params, dist)


# -- verification -----------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    value: float = float("nan")

    def to_dict(self):
        return {"detail": self.detail, "name": self.name, "passed": self.passed,
                "value": None if math.isnan(self.value) else self.value}


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    def by_name(self, name):
        return next(c for c in self.checks if c.name == name)

    def to_dict(self):
        return {"checks": [c.to_dict() for c in self.checks], "passed": self.passed}

    def render(self):
        return "\n".join(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks)


class _Reader:
    """Typed column access over a workspace, cached per file and table."""

    def __init__(self, workspace):
        self.workspace = Path(workspace)
        self._sources = None
        self._cache = {}

    def _source(self, file):
        if self._sources is None:
            self._sources = {s.path.name: s for s in discover_sources(self.workspace)}
        if file not in self._sources:
            raise FileNotFoundError(f"{file} not found in {self.workspace}")
        return self._sources[file]

    def table(self, file, table):
        key = (file, table)
        if key not in self._cache:
            tables = read_tables(self._source(file))
            match = [t for t in tables if t.name == table] or (tables if len(tables) == 1 else [])
            if not match:
                raise FileNotFoundError(f"table {table} not found in {file}")
            self._cache[key] = match[0]
        return self._cache[key]

    def column(self, loc, name=None):
        t = self.table(loc["file"], loc["table"])
        name = name or loc["column"]
        if name not in t.columns:
            raise KeyError(f"column {name} not found in {loc['file']}")
        i = t.columns.index(name)
        utype = column_type(t, i)
        return [None if r[i] is None else parse_typed(str(r[i]), utype) for r in t.rows], utype


def _ols(xs, ys):
    n = len(xs)
    mx, my = statistics.fmean(xs), statistics.fmean(ys)
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    slope = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
    resid = [y - my - slope * (x - mx) for x, y in zip(xs, ys)]
    se = math.sqrt(math.fsum(r * r for r in resid) / (n - 2) / sxx)
    return slope, se


def _pairs(a, b):
    return [(x, y) for x, y in zip(a, b) if x is not None and y is not None]


def _check_trend(r, ins):
    c = ins["check"]
    ys, _ = r.column(c)
    ts, _ = r.column(c, c["time"])
    by_day = {}
    for t, y in _pairs(ts, ys):
        by_day.setdefault(t.toordinal() if hasattr(t, "toordinal") else t, []).append(float(y))
    xs = sorted(by_day)
    slope, se = _ols([x - xs[0] for x in xs], [statistics.fmean(by_day[x]) for x in xs])
    ok = math.copysign(1, slope) == math.copysign(1, c["slope"]) and abs(slope - c["slope"]) <= 3 * se and abs(slope) >= 2 * se
    return CheckResult("trend", ok, f"slope {slope:.6g} (planted {c['slope']}, se {se:.3g})", slope)


def _check_comparison(r, ins):
    c = ins["check"]
    ys, _ = r.column(c)
    gs, _ = r.column(c, c["group_column"])
    inside = [float(y) for g, y in _pairs(gs, ys) if g == c["group"]]
    outside = [float(y) for g, y in _pairs(gs, ys) if g != c["group"]]
    if not inside or not outside:
        return CheckResult("comparison", False, f"group {c['group']} missing or alone")
    gap = statistics.fmean(inside) - statistics.fmean(outside)
    return CheckResult("comparison", gap >= c["gap"] / 2, f"gap {gap:.4g} (needs >= {c['gap'] / 2:.4g})", gap)


def _check_extreme(r, ins):
    c = ins["check"]
    ys, _ = r.column(c)
    gs, _ = r.column(c, c["group_column"])
    ts, _ = r.column(c, c["time"])
    rows = [(float(y), g, t.isoformat() if hasattr(t, "isoformat") else str(t))
            for y, g, t in zip(ys, gs, ts) if y is not None]
    top = max(rows)[0]
    winners = [(g, t) for y, g, t in rows if y == top]
    ok = winners == [(c["group"], c["day"])]
    return CheckResult("extreme", ok, f"argmax at {winners} (planted {c['group']} on {c['day']})", top)


def _check_attribution(r, ins):
    c = ins["check"]
    ys, _ = r.column(c)
    xs, _ = r.column(c, c["driver"])
    pairs = _pairs(xs, ys)
    corr = statistics.correlation([float(p[0]) for p in pairs], [float(p[1]) for p in pairs])
    ok = math.copysign(1, corr) == c["sign"] and abs(corr) >= 0.3
    return CheckResult("attribution", ok, f"r({c['driver']}, {c['column']}) = {corr:.3f}", corr)


def _check_join(r, j):
    f = j["overlap_fraction"]
    sets = []
    for side in ("left", "right"):
        vals, utype = r.column(j[side])
        canon = (canonicalize(v, utype) for v in vals)
        sets.append(reservoir_sample(canon, 1000, 42))
    jac = len(sets[0] & sets[1]) / len(sets[0] | sets[1]) if sets[0] | sets[1] else 0.0
    return CheckResult("join", jac >= f - 0.1, f"sampled Jaccard {jac:.3f} (planted {f})", jac)


def _check_distractors(r, truth):
    target = truth.insights[0]["check"] if truth.insights else None
    if target is None or not truth.distractors:
        return CheckResult("distractors", True, "no numeric distractors")
    ys, _ = r.column(target)
    worst, name = 0.0, ""
    for loc in truth.distractors:
        xs, _ = r.column(loc)
        pairs = _pairs(xs, ys)
        corr = statistics.correlation([float(p[0]) for p in pairs], [float(p[1]) for p in pairs])
        if abs(corr) > abs(worst):
            worst, name = corr, loc["column"]
    return CheckResult("distractors", abs(worst) < 0.3, f"max |r| = {abs(worst):.3f} ({name})", abs(worst))


_CHECKS = {
    "TREND": _check_trend,
    "COMPARISON": _check_comparison,
    "EXTREME": _check_extreme,
    "ATTRIBUTION": _check_attribution,
}


def verify_workspace(out_dir, truth):
    """Re-read the workspace and test every planted insight and join; never raises on a failed check."""
    reader = _Reader(out_dir)
    checks = []

    def run(name, fn, *args):
        try:
            checks.append(fn(*args))
        except (FileNotFoundError, KeyError, ValueError, statistics.StatisticsError, ZeroDivisionError) as exc:
            checks.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    for ins in truth.insights:
        run(ins["category"].lower(), _CHECKS[ins["category"]], reader, ins)
    for j in truth.joins:
        run("join", _check_join, reader, j)
    run("distractors", _check_distractors, reader, truth)
    return VerificationReport(checks)


# -- mutation ---------------------------------------------------------------------


def shuffle_column(workspace, file, table, column, seed=0):
    """Permute one column's values in place; used to show a check can fail."""
    path = Path(workspace) / file
    rnd = random.Random(seed)
    if path.suffix == ".csv":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        i = rows[0].index(column)
        vals = [r[i] for r in rows[1:]]
        rnd.shuffle(vals)
        for r, v in zip(rows[1:], vals):
            r[i] = v
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    elif path.suffix in (".db", ".sqlite", ".sqlite3"):
        con = sqlite3.connect(path)
        try:
            rowids = [r[0] for r in con.execute(f'SELECT rowid FROM "{table}" ORDER BY rowid')]
            vals = [r[0] for r in con.execute(f'SELECT "{column}" FROM "{table}" ORDER BY rowid')]
            rnd.shuffle(vals)
            con.executemany(f'UPDATE "{table}" SET "{column}" = ? WHERE rowid = ?', list(zip(vals, rowids)))
            con.commit()
        finally:
            con.close()
    elif path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        records = doc[table] if isinstance(doc, dict) else doc
        vals = [r.get(column) for r in records]
        rnd.shuffle(vals)
        for r, v in zip(records, vals):
            r[column] = v
        path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"cannot shuffle columns of {file}")


def copy_workspace(src, dst):
    shutil.copytree(src, dst, dirs_exist_ok=True)
    return Path(dst)


__all__ = [
    "CheckResult",
    "FixtureSpec",
    "GroundTruth",
    "VerificationReport",
    "copy_workspace",
    "demo_paths",
    "generate_workspace",
    "load_spec",
    "shipped_specs",
    "shuffle_column",
    "verify_workspace",
]
