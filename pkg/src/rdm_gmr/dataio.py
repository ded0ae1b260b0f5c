"""Reading, validating, and writing mark-recapture composition datasets.

Two tables and one config describe a dataset:

* composition table (long form), columns ``week:int, stock:str, p_hat:float,
  se:float`` with one row per week-stock cell;
* week table, columns ``week:int, weight:float, n:int`` with one row per week;
* a JSON or TOML config carrying the marked count ``marked`` (alias ``M``)
  and the list ``lake_stocks``.

Validation is strict: structural problems raise :class:`SchemaError`, value
problems raise :class:`InvariantError` or :class:`MaskError`.  Proportion and
weight vectors whose sums are off by at most 1e-6 are re-closed silently;
larger deviations are input errors.  ``load -> save -> load`` is the identity
on valid inputs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import (
    CLOSE_TOLERANCE,
    MAX_STOCKS,
    MAX_WEEKS,
    Composition,
    CompositionEstimate,
    GmrDataset,
    close_composition,
)
from .errors import InvariantError, MaskError, SchemaError

_DATA_COLUMNS = ("week", "stock", "p_hat", "se")
_WEEK_COLUMNS = ("week", "weight", "n")


def _parse_int(text, where: str) -> int:
    try:
        return int(str(text).strip())
    except (TypeError, ValueError):
        raise SchemaError(f"expected an integer {where}, got {text!r}") from None


def _parse_float(text, where: str) -> float:
    try:
        value = float(str(text).strip())
    except (TypeError, ValueError):
        raise SchemaError(f"expected a number {where}, got {text!r}") from None
    if not np.isfinite(value):
        raise InvariantError(f"non-finite value {where}")
    return value


def _read_table(path, columns) -> list:
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path.name}: missing column(s) {', '.join(missing)}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if any(row.get(c) in (None, "") for c in columns):
                raise SchemaError(f"{path.name}: empty cell on line {i}")
            rows.append({c: row[c] for c in columns})
    if not rows:
        raise SchemaError(f"{path.name}: no data rows")
    return rows


def read_config(path) -> dict:
    """Read a JSON or TOML config file into a plain dict."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path.name}: invalid TOML ({exc})") from None
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: invalid JSON ({exc})") from None
    if not isinstance(parsed, dict):
        raise SchemaError(f"{path.name}: config must be an object")
    return parsed


def validate_dataset(data_rows, week_rows, marked, lake_stocks) -> GmrDataset:
    """Assemble and validate a dataset from parsed table rows.

    Parameters
    ----------
    data_rows : sequence of (week, stock, p_hat, se) tuples
    week_rows : sequence of (week, weight, n) tuples
    marked : float
        Marked count M.
    lake_stocks : sequence of str
        Names of the lake-type stocks.

    Returns
    -------
    GmrDataset
    """
    cells = {}
    stocks: list = []
    for week, stock, p_hat, se in data_rows:
        week = int(week)
        stock = str(stock)
        if stock not in stocks:
            stocks.append(stock)
        key = (week, stock)
        if key in cells:
            raise SchemaError(f"duplicate cell for week {week}, stock {stock!r}")
        p_hat = float(p_hat)
        se = float(se)
        if not (np.isfinite(p_hat) and np.isfinite(se)):
            raise InvariantError(f"non-finite value for week {week}, stock {stock!r}")
        if p_hat < 0:
            raise InvariantError(f"negative proportion for week {week}, stock {stock!r}")
        if se < 0:
            raise InvariantError(f"negative standard error for week {week}, stock {stock!r}")
        cells[key] = (p_hat, se)

    if len(stocks) < 2:
        raise SchemaError("need at least two stocks")
    if len(stocks) > MAX_STOCKS:
        raise InvariantError(f"{len(stocks)} stocks, limit is {MAX_STOCKS}")

    sides = {}
    for week, weight, n in week_rows:
        week = int(week)
        if week in sides:
            raise SchemaError(f"duplicate week {week} in week table")
        weight = float(weight)
        n = int(n)
        if not np.isfinite(weight):
            raise InvariantError(f"non-finite weight for week {week}")
        if weight < 0:
            raise InvariantError(f"negative weight for week {week}")
        if n < 1:
            raise InvariantError(f"sample size must be positive for week {week}, got {n}")
        sides[week] = (weight, n)

    data_weeks = sorted({w for w, _ in cells})
    if len(data_weeks) > MAX_WEEKS:
        raise InvariantError(f"{len(data_weeks)} weeks, limit is {MAX_WEEKS}")
    if set(sides) != set(data_weeks):
        odd = sorted(set(sides) ^ set(data_weeks))
        raise SchemaError(f"week table and composition table disagree on weeks {odd}")

    weeks = []
    for week in data_weeks:
        p = np.empty(len(stocks))
        se = np.empty(len(stocks))
        for j, stock in enumerate(stocks):
            try:
                p[j], se[j] = cells[(week, stock)]
            except KeyError:
                raise SchemaError(f"week {week} is missing stock {stock!r}") from None
        total = p.sum()
        if abs(total - 1.0) > CLOSE_TOLERANCE:
            raise InvariantError(
                f"week {week} proportions sum to {total:.8g}, beyond tolerance {CLOSE_TOLERANCE}"
            )
        weeks.append(
            CompositionEstimate(p_hat=close_composition(p), se=se, n=sides[week][1])
        )

    weights = np.array([sides[w][0] for w in data_weeks])
    total = weights.sum()
    if abs(total - 1.0) > CLOSE_TOLERANCE:
        raise InvariantError(
            f"weights sum to {total:.8g}, beyond tolerance {CLOSE_TOLERANCE}"
        )
    if total <= 0:
        raise InvariantError("weights sum to zero")
    if abs(total - 1.0) > 1e-12:
        weights = weights / total

    lake = [str(s) for s in lake_stocks]
    unknown = [s for s in lake if s not in stocks]
    if unknown:
        raise MaskError(f"lake stocks {unknown} not present in the data")
    if len(set(lake)) != len(lake):
        raise MaskError("duplicate names in lake stock list")
    mask = np.array([s in lake for s in stocks])

    return GmrDataset(
        weeks=tuple(weeks),
        weights=weights,
        lake_mask=mask,
        marked=float(marked),
        stocks=tuple(stocks),
        week_labels=tuple(data_weeks),
    )


def load_dataset(data_path, weeks_path, config=None, marked=None, lake_stocks=None) -> GmrDataset:
    """Load a dataset from its two CSV tables plus config values.

    ``config`` may be a path to a JSON/TOML file or a dict; explicit
    ``marked`` / ``lake_stocks`` arguments override config entries.
    """
    if config is not None and not isinstance(config, dict):
        config = read_config(config)
    config = config or {}
    if marked is None:
        marked = config.get("marked", config.get("M"))
    if lake_stocks is None:
        lake_stocks = config.get("lake_stocks")
    if marked is None:
        raise SchemaError("marked count M missing: pass marked= or a config with 'marked'")
    if lake_stocks is None:
        raise SchemaError("lake stocks missing: pass lake_stocks= or a config with 'lake_stocks'")

    data_rows = []
    for row in _read_table(data_path, _DATA_COLUMNS):
        week = _parse_int(row["week"], "in column 'week'")
        p_hat = _parse_float(row["p_hat"], f"in column 'p_hat', week {week}")
        se = _parse_float(row["se"], f"in column 'se', week {week}")
        data_rows.append((week, row["stock"], p_hat, se))

    week_rows = []
    for row in _read_table(weeks_path, _WEEK_COLUMNS):
        week = _parse_int(row["week"], "in column 'week'")
        weight = _parse_float(row["weight"], f"in column 'weight', week {week}")
        n = _parse_int(row["n"], f"in column 'n', week {week}")
        week_rows.append((week, weight, n))

    return validate_dataset(data_rows, week_rows, float(marked), lake_stocks)


def save_dataset(dataset: GmrDataset, data_path, weeks_path, config_path) -> None:
    """Write a dataset back to its two CSV tables and a JSON config.

    Floats are written with full round-trip precision so that loading the
    written files reproduces the dataset exactly.
    """
    with Path(data_path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_DATA_COLUMNS)
        for label, week in zip(dataset.week_labels, dataset.weeks):
            for j, stock in enumerate(dataset.stocks):
                writer.writerow(
                    [label, stock, repr(float(week.p_hat.p[j])), repr(float(week.se[j]))]
                )

    with Path(weeks_path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_WEEK_COLUMNS)
        for label, weight, week in zip(dataset.week_labels, dataset.weights, dataset.weeks):
            writer.writerow([label, repr(float(weight)), week.n])

    config = {
        "marked": dataset.marked,
        "lake_stocks": [s for s, m in zip(dataset.stocks, dataset.lake_mask) if m],
    }
    Path(config_path).write_text(json.dumps(config, indent=2) + "\n")
