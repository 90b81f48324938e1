"""Dataset containers and their CSV schemas.

Point-treatment files carry columns ``Y`` and ``A``, any number of confounder
columns, and an optional stratum column ``V``. Longitudinal files carry ``Y``
plus ``A_0..A_T`` and ``L_0..L_T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ShapeError

__all__ = ["ObservedDataset", "LongitudinalDataset"]

_RESERVED = ("Y", "A", "V")


def _read_table(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    if not header:
        raise SchemaError(f"{path}: empty file")
    names = header.split(",")
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    if raw.shape[1] != len(names):
        raise SchemaError(
            f"{path}: header has {len(names)} columns but rows have {raw.shape[1]}"
        )
    return names, raw


def _write_table(path, names, columns) -> None:
    mat = np.column_stack(columns)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in mat:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


@dataclass
class ObservedDataset:
    """One-time-point observational data.

    ``confounders`` is (n, p) without an intercept column; model builders add
    their own intercepts. ``strata`` holds the optional integer ``V`` column.
    """

    y: np.ndarray
    a: np.ndarray
    confounders: np.ndarray
    confounder_names: list
    strata: np.ndarray = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.confounders = np.atleast_2d(np.asarray(self.confounders, dtype=float))
        if self.confounders.shape[0] != self.y.shape[0]:
            self.confounders = self.confounders.T
        n = self.y.shape[0]
        if self.a.shape[0] != n or self.confounders.shape[0] != n:
            raise ShapeError("Y, A, and confounder row counts differ")
        if len(self.confounder_names) != self.confounders.shape[1]:
            raise ShapeError("confounder name count does not match columns")
        if self.strata is not None:
            self.strata = np.asarray(self.strata)
            if self.strata.shape[0] != n:
                raise ShapeError("V row count differs from Y")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_csv(cls, path, confounders=None) -> "ObservedDataset":
        """Load a dataset; ``confounders`` optionally names which columns to use.

        Without the argument every column other than Y, A, V is treated as a
        confounder, in file order.
        """
        names, raw = _read_table(path)
        cols = {nm: raw[:, j] for j, nm in enumerate(names)}
        for required in ("Y", "A"):
            if required not in cols:
                raise SchemaError(f"{path}: missing required column {required!r}")
        if confounders is None:
            conf_names = [nm for nm in names if nm not in _RESERVED]
        else:
            conf_names = list(confounders)
            for nm in conf_names:
                if nm not in cols:
                    raise SchemaError(f"{path}: missing confounder column {nm!r}")
        conf = (
            np.column_stack([cols[nm] for nm in conf_names])
            if conf_names
            else np.empty((raw.shape[0], 0))
        )
        return cls(
            y=cols["Y"],
            a=cols["A"],
            confounders=conf,
            confounder_names=conf_names,
            strata=cols.get("V"),
        )

    def to_csv(self, path) -> None:
        names = ["Y", "A"] + list(self.confounder_names)
        columns = [self.y, self.a] + [self.confounders[:, j] for j in range(self.confounders.shape[1])]
        if self.strata is not None:
            names.append("V")
            columns.append(np.asarray(self.strata, dtype=float))
        _write_table(path, names, columns)


@dataclass
class LongitudinalDataset:
    """Repeated-measures data: one confounder and one treatment per period.

    ``treatments`` and ``confounders`` are (n, T+1); column t holds A_t / L_t.
    """

    y: np.ndarray
    treatments: np.ndarray
    confounders: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.treatments = np.atleast_2d(np.asarray(self.treatments, dtype=float))
        self.confounders = np.atleast_2d(np.asarray(self.confounders, dtype=float))
        n = self.y.shape[0]
        if self.treatments.shape[0] != n or self.confounders.shape[0] != n:
            raise ShapeError("Y, A_t, L_t row counts differ")
        if self.treatments.shape[1] != self.confounders.shape[1]:
            raise ShapeError("treatment and confounder period counts differ")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def t_plus_1(self) -> int:
        return self.treatments.shape[1]

    @classmethod
    def from_csv(cls, path) -> "LongitudinalDataset":
        names, raw = _read_table(path)
        cols = {nm: raw[:, j] for j, nm in enumerate(names)}
        if "Y" not in cols:
            raise SchemaError(f"{path}: missing required column 'Y'")
        t = 0
        while f"A_{t}" in cols:
            t += 1
        if t == 0:
            raise SchemaError(f"{path}: missing required column 'A_0'")
        a_names = [f"A_{s}" for s in range(t)]
        l_names = [f"L_{s}" for s in range(t)]
        for nm in l_names:
            if nm not in cols:
                raise SchemaError(f"{path}: missing required column {nm!r}")
        return cls(
            y=cols["Y"],
            treatments=np.column_stack([cols[nm] for nm in a_names]),
            confounders=np.column_stack([cols[nm] for nm in l_names]),
        )

    def to_csv(self, path) -> None:
        t1 = self.t_plus_1
        names = ["Y"] + [f"A_{t}" for t in range(t1)] + [f"L_{t}" for t in range(t1)]
        columns = (
            [self.y]
            + [self.treatments[:, t] for t in range(t1)]
            + [self.confounders[:, t] for t in range(t1)]
        )
        _write_table(path, names, columns)
