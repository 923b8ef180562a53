"""Material records and the min-max scaled database feeding the encoder.

A database is an ordered list of materials with four properties each
(Young's modulus, cost per unit mass, density, yield strength), all in SI
units, plus a fitted per-attribute min-max scaler that maps every stored
property into [0, 1]. Databases are immutable after construction and safe
for concurrent reads.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib.resources import files

import numpy as np

ATTRIBUTES = ("E", "cost", "rho", "yield_strength")
HEADER = "name,class,E_Pa,cost_per_kg,density_kg_m3,yield_Pa"


class DatabaseError(ValueError):
    """A material database file or construction argument is invalid."""


@dataclass(frozen=True)
class Material:
    """One material: a name, a class label, and four positive properties.

    Units are SI throughout: E and yield_strength in Pa, cost in $/kg,
    rho in kg/m^3.
    """

    name: str
    class_: str
    E: float
    cost: float
    rho: float
    yield_strength: float

    def properties(self) -> np.ndarray:
        """The 4-vector (E, cost, rho, yield_strength)."""
        return np.array([self.E, self.cost, self.rho, self.yield_strength])


class MaterialDatabase:
    """Ordered, validated material list with a fitted min-max scaler."""

    def __init__(self, materials):
        materials = tuple(materials)
        if len(materials) < 2:
            raise DatabaseError(
                f"a database needs at least 2 materials, got {len(materials)}"
            )
        seen = {}
        for row, m in enumerate(materials):
            if not m.name:
                raise DatabaseError(f"row {row + 1}: empty material name")
            if m.name in seen:
                raise DatabaseError(
                    f"row {row + 1}: duplicate material name {m.name!r} "
                    f"(first seen at row {seen[m.name] + 1})"
                )
            seen[m.name] = row
            for attr in ATTRIBUTES:
                value = getattr(m, attr)
                if not np.isfinite(value) or value <= 0.0:
                    raise DatabaseError(
                        f"row {row + 1} ({m.name}): {attr} must be strictly "
                        f"positive and finite, got {value}"
                    )
        self.materials = materials
        self.properties = np.array([m.properties() for m in materials])
        self.scaler_min = self.properties.min(axis=0)
        self.scaler_max = self.properties.max(axis=0)
        degenerate = self.scaler_min >= self.scaler_max
        if np.any(degenerate):
            attr = ATTRIBUTES[int(np.argmax(degenerate))]
            raise DatabaseError(
                f"attribute {attr!r} is constant across the database; "
                "min-max scaling is degenerate"
            )

    def __len__(self):
        return len(self.materials)

    def __getitem__(self, index) -> Material:
        return self.materials[index]

    def __iter__(self):
        return iter(self.materials)

    def __eq__(self, other):
        if not isinstance(other, MaterialDatabase):
            return NotImplemented
        return self.materials == other.materials

    @property
    def names(self) -> tuple:
        return tuple(m.name for m in self.materials)

    @property
    def classes(self) -> tuple:
        return tuple(m.class_ for m in self.materials)

    def material(self, name: str) -> Material:
        for m in self.materials:
            if m.name == name:
                return m
        raise KeyError(f"no material named {name!r}")

    def scale(self, zeta) -> np.ndarray:
        """Map property 4-vector(s) through (x - min) / (max - min).

        Database rows land in [0, 1]; values outside the fitted range are
        allowed and map outside the unit interval.
        """
        zeta = np.asarray(zeta, dtype=np.float64)
        return (zeta - self.scaler_min) / (self.scaler_max - self.scaler_min)

    def unscale(self, s) -> np.ndarray:
        """Exact inverse of :meth:`scale`."""
        s = np.asarray(s, dtype=np.float64)
        return self.scaler_min + s * (self.scaler_max - self.scaler_min)

    def scaled_properties(self) -> np.ndarray:
        """All materials scaled to the unit box, shape (n, 4)."""
        return self.scale(self.properties)

    def filter_by_class(self, classes) -> "MaterialDatabase":
        """New database keeping the named classes, with a refit scaler."""
        wanted = {classes} if isinstance(classes, str) else set(classes)
        kept = [m for m in self.materials if m.class_ in wanted]
        if len(kept) < 2:
            raise DatabaseError(
                f"class filter {sorted(wanted)} keeps {len(kept)} material(s); "
                "at least 2 are required"
            )
        return MaterialDatabase(kept)


def _parse_row(line: str, row: int) -> Material:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 6:
        raise DatabaseError(
            f"row {row}: expected 6 comma-separated columns, got {len(parts)}"
        )
    name, class_ = parts[0], parts[1]
    values = []
    for column, text in zip(HEADER.split(",")[2:], parts[2:]):
        try:
            values.append(float(text))
        except ValueError:
            raise DatabaseError(
                f"row {row}: column {column!r} is not numeric: {text!r}"
            ) from None
    return Material(name, class_, *values)


def load_database(path) -> MaterialDatabase:
    """Load a material database from delimited text.

    The header line must be exactly ``name,class,E_Pa,cost_per_kg,
    density_kg_m3,yield_Pa`` (units are declared, never converted).
    Errors name the offending row.
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = [ln.strip() for ln in handle if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DatabaseError(f"{path}: empty database file")
    if lines[0] != HEADER:
        raise DatabaseError(
            f"{path}: header mismatch; expected {HEADER!r}, got {lines[0]!r}"
        )
    materials = [_parse_row(line, row) for row, line in enumerate(lines[1:], start=1)]
    try:
        return MaterialDatabase(materials)
    except DatabaseError as err:
        raise DatabaseError(f"{path}: {err}") from None


def save_database(db: MaterialDatabase, path) -> None:
    """Write a database back out in the load format (lossless round trip)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(HEADER + "\n")
        for m in db.materials:
            handle.write(
                f"{m.name},{m.class_},{m.E:.17g},{m.cost:.17g},"
                f"{m.rho:.17g},{m.yield_strength:.17g}\n"
            )


def table1_path():
    """Path of the bundled nine-material curated database file."""
    return files("trussmat.data").joinpath("materials_table1.csv")


def table1() -> MaterialDatabase:
    """The bundled nine-material curated database (3 steels, 3 aluminum
    alloys, 3 plastics)."""
    return load_database(table1_path())
