"""Control functions, process parameters, lattice geometry and named presets.

A control function ``c`` gives the acceptance probability of an intra-patch
birth onto a site that already holds ``i`` particles.  Every family obeys
``c(0) = 1``, monotone non-increase and values in ``[0, 1]``; these are
checked at construction.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

FAMILIES = ("indicator", "logistic", "constant", "table", "all_one", "quadratic_ratio")
BOUNDARIES = ("periodic", "absorbing")
PRESETS = ("CP", "BCP", "LogisticIRP", "SelfRegIRP", "IRP")


def rational(x) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float.

    Floats go through their shortest repr so that ``0.3`` becomes ``3/10``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(repr(x))
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot convert {type(x).__name__} to a rational")


@dataclass(frozen=True)
class ControlSpec:
    """Self-regulation function ``c: N -> [0, 1]``.

    Families
    --------
    indicator(kappa)
        ``c(i) = 1`` for ``i < kappa`` and 0 afterwards.
    logistic(kappa)
        ``c(i) = max(0, 1 - i/kappa)``.
    constant(p)
        ``c(0) = 1`` and ``c(i) = p`` for ``i >= 1``.
    table(values, tail)
        ``c(i) = values[i]`` for stored indices, ``tail`` beyond.
    all_one
        ``c == 1`` (no regulation).
    quadratic_ratio(base)
        ``c(0) = 1`` and ``c(i) = (i+3)^2 / (base (i+2)^2)`` for ``i >= 1``;
        ``c`` tends to ``1/base`` slowly enough that ``phi = base`` sits on
        the transient side of the boundary ``phi * c(inf) = 1``.
    """

    family: str
    kappa: int | None = None
    p: Fraction | None = None
    values: tuple[Fraction, ...] = ()
    tail: Fraction | None = None
    base: Fraction | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown control family {self.family!r}; expected one of {FAMILIES}")
        if self.family in ("indicator", "logistic"):
            if self.kappa is None or isinstance(self.kappa, bool) or int(self.kappa) != self.kappa or self.kappa < 1:
                raise ValueError(f"{self.family} control needs a positive integer kappa, got {self.kappa!r}")
            object.__setattr__(self, "kappa", int(self.kappa))
        if self.family == "constant":
            if self.p is None:
                raise ValueError("constant control needs p")
            p = rational(self.p)
            if not 0 <= p <= 1:
                raise ValueError(f"constant control needs p in [0, 1], got {p}")
            object.__setattr__(self, "p", p)
        if self.family == "table":
            vals = tuple(rational(v) for v in self.values)
            if not vals:
                raise ValueError("table control needs at least one value")
            tail = vals[-1] if self.tail is None else rational(self.tail)
            if vals[0] != 1:
                raise ValueError(f"table control must start with c(0) = 1, got {vals[0]}")
            for j, (a, b) in enumerate(itertools.pairwise(vals + (tail,))):
                if b > a:
                    raise ValueError(f"table control must be nonincreasing: c({j}) = {a} < c({j + 1}) = {b}")
            if not 0 <= tail <= 1:
                raise ValueError(f"table tail must lie in [0, 1], got {tail}")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "tail", tail)
        if self.family == "quadratic_ratio":
            base = Fraction(2) if self.base is None else rational(self.base)
            # c(1) = 16 / (9 base) must not exceed 1
            if base < Fraction(16, 9):
                raise ValueError(f"quadratic_ratio needs base >= 16/9, got {base}")
            object.__setattr__(self, "base", base)

    # constructors -----------------------------------------------------
    @classmethod
    def indicator(cls, kappa: int) -> "ControlSpec":
        return cls("indicator", kappa=kappa)

    @classmethod
    def logistic(cls, kappa: int) -> "ControlSpec":
        return cls("logistic", kappa=kappa)

    @classmethod
    def constant(cls, p) -> "ControlSpec":
        return cls("constant", p=p)

    @classmethod
    def table(cls, values, tail=None) -> "ControlSpec":
        return cls("table", values=tuple(values), tail=tail)

    @classmethod
    def all_one(cls) -> "ControlSpec":
        return cls("all_one")

    @classmethod
    def quadratic_ratio(cls, base=2) -> "ControlSpec":
        return cls("quadratic_ratio", base=base)

    @classmethod
    def delta0(cls) -> "ControlSpec":
        return cls.indicator(1)

    # evaluation -------------------------------------------------------
    def exact(self, i: int) -> Fraction:
        """``c(i)`` as an exact rational."""
        if i < 0:
            raise ValueError("occupancy must be nonnegative")
        if i == 0:
            return Fraction(1)
        fam = self.family
        if fam == "indicator":
            return Fraction(1 if i < self.kappa else 0)
        if fam == "logistic":
            return Fraction(max(0, self.kappa - i), self.kappa)
        if fam == "constant":
            return self.p
        if fam == "table":
            return self.values[i] if i < len(self.values) else self.tail
        if fam == "all_one":
            return Fraction(1)
        return Fraction((i + 3) ** 2, (i + 2) ** 2) / self.base

    def __call__(self, i: int) -> float:
        return float(self.exact(i))

    def limit(self) -> Fraction:
        """``c(inf)``, the limit of the nonincreasing sequence."""
        fam = self.family
        if fam in ("indicator", "logistic"):
            return Fraction(0)
        if fam == "constant":
            return self.p
        if fam == "table":
            return self.tail
        if fam == "all_one":
            return Fraction(1)
        return 1 / self.base

    def support_end(self) -> int | None:
        """Smallest ``i`` with ``c(i) = 0`` or None when ``c`` stays positive."""
        fam = self.family
        if fam in ("indicator", "logistic"):
            return self.kappa
        if fam == "constant":
            return 1 if self.p == 0 else None
        if fam == "table":
            for i, v in enumerate(self.values):
                if v == 0:
                    return i
            return len(self.values) if self.tail == 0 else None
        return None

    def eventually_constant_from(self) -> int | None:
        """Index from which ``c`` is constant, or None (quadratic_ratio)."""
        fam = self.family
        if fam in ("indicator", "logistic"):
            return self.kappa
        if fam in ("constant", "all_one"):
            return 1
        if fam == "table":
            return len(self.values)
        return None

    def table_values(self, length: int) -> np.ndarray:
        """``[c(0), ..., c(length-1)]`` as floats."""
        return np.array([float(self.exact(i)) for i in range(length)], dtype=np.float64)

    def __le__(self, other: "ControlSpec") -> bool:
        """Pointwise order ``c <= other`` checked on all structurally distinct indices."""
        ends = [s.eventually_constant_from() for s in (self, other)]
        if None in ends:
            horizon = 4096
        else:
            horizon = max(ends) + 1
        if any(self.exact(i) > other.exact(i) for i in range(horizon)):
            return False
        return self.limit() <= other.limit()

    # serialization ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"family": self.family}
        if self.family in ("indicator", "logistic"):
            d["kappa"] = self.kappa
        elif self.family == "constant":
            d["p"] = _jsonable(self.p)
        elif self.family == "table":
            d["values"] = [_jsonable(v) for v in self.values]
            d["tail"] = _jsonable(self.tail)
        elif self.family == "quadratic_ratio":
            d["base"] = _jsonable(self.base)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ControlSpec":
        d = dict(d)
        fam = d.pop("family", None)
        if fam is None:
            raise ValueError("control object needs a 'family' key")
        allowed = {"indicator": {"kappa"}, "logistic": {"kappa"}, "constant": {"p"},
                   "table": {"values", "tail"}, "all_one": set(), "quadratic_ratio": {"base"}}
        if fam not in allowed:
            raise ValueError(f"unknown control family {fam!r}; expected one of {FAMILIES}")
        extra = set(d) - allowed[fam]
        if extra:
            raise ValueError(f"unexpected keys for {fam} control: {sorted(extra)}")
        if "values" in d:
            d["values"] = tuple(_parse_num(v) for v in d["values"])
        for k in ("p", "tail", "base"):
            if k in d and d[k] is not None:
                d[k] = _parse_num(d[k])
        return cls(fam, **d)

    def label(self) -> str:
        if self.family in ("indicator", "logistic"):
            return f"{self.family}({self.kappa})"
        if self.family == "constant":
            return f"constant({self.p})"
        if self.family == "quadratic_ratio":
            return f"quadratic_ratio({self.base})"
        if self.family == "table":
            return f"table({len(self.values)},{self.tail})"
        return self.family


def _jsonable(q: Fraction):
    """Integers and floats stay plain JSON numbers; other rationals become 'a/b' strings."""
    if q.denominator == 1:
        return int(q)
    if float(q) and rational(float(q)) == q:
        return float(q)
    return f"{q.numerator}/{q.denominator}"


def _parse_num(v):
    if isinstance(v, str):
        return Fraction(v)
    return rational(v)


_PREFIX: dict[ControlSpec, list[float]] = {}


def eval_control(c: ControlSpec, i: int) -> float:
    """Acceptance probability ``c(i)``."""
    return c(i)


def control_product(c: ControlSpec, n: int) -> float:
    """Running product ``c!(n) = c(0) c(1) ... c(n)`` from a cached prefix table."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    prefix = _PREFIX.setdefault(c, [1.0])
    while len(prefix) <= n:
        k = len(prefix)
        prefix.append(prefix[-1] * c(k))
    return prefix[n]


def control_product_exact(c: ControlSpec, n: int) -> Fraction:
    """``c!(n)`` as an exact rational (closed form for quadratic_ratio)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if c.family == "quadratic_ratio":
        return Fraction((n + 3) ** 2, 9) / c.base ** n
    out = Fraction(1)
    for i in range(1, n + 1):
        out *= c.exact(i)
        if out == 0:
            break
    return out


@dataclass(frozen=True)
class Params:
    """One PRP: inter-patch rate ``lam``, intra-patch rate ``phi``, lattice
    dimension ``d``, patch size ``N`` and control ``c``.  Death rate is 1.

    ``lambda_own_patch`` adds the own patch to the inter-patch neighbourhood;
    off by default (strict lattice neighbours only).
    """

    lam: float
    phi: float
    d: int = 1
    N: int = 1
    control: ControlSpec = field(default_factory=ControlSpec.all_one)
    lambda_own_patch: bool = False

    def __post_init__(self):
        for name in ("lam", "phi"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, Fraction)) or isinstance(v, bool):
                raise TypeError(f"{name} must be a number")
            if not (math.isfinite(float(v)) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
            object.__setattr__(self, name, float(v))
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "N", int(self.N))
        if not isinstance(self.control, ControlSpec):
            raise TypeError("control must be a ControlSpec")

    def replace(self, **kw) -> "Params":
        d = dict(lam=self.lam, phi=self.phi, d=self.d, N=self.N, control=self.control,
                 lambda_own_patch=self.lambda_own_patch)
        d.update(kw)
        return Params(**d)

    def to_dict(self) -> dict[str, Any]:
        return {"lambda": self.lam, "phi": self.phi, "d": self.d, "N": self.N,
                "control": self.control.to_dict(), "lambda_own_patch": self.lambda_own_patch}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Params":
        unknown = set(d) - {"lambda", "phi", "d", "N", "control", "lambda_own_patch"}
        if unknown:
            raise ValueError(f"unknown Params keys: {sorted(unknown)}")
        control = d.get("control", {"family": "all_one"})
        return cls(lam=d["lambda"], phi=d["phi"], d=d.get("d", 1), N=d.get("N", 1),
                   control=ControlSpec.from_dict(control),
                   lambda_own_patch=bool(d.get("lambda_own_patch", False)))


@dataclass(frozen=True)
class Geometry:
    """Finite box ``{-side, ..., side}^d`` of patches with ``N`` sites each."""

    d: int = 1
    side: int = 10
    N: int = 1
    boundary: str = "periodic"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.d < 1 or self.N < 1 or self.side < 0:
            raise ValueError("need d >= 1, N >= 1, side >= 0")
        if self.boundary == "periodic" and self.side < 1:
            raise ValueError("periodic boundary needs side >= 1")

    @property
    def width(self) -> int:
        return 2 * self.side + 1

    @property
    def n_patches(self) -> int:
        return self.width ** self.d

    @property
    def n_sites(self) -> int:
        return self.n_patches * self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.width,) * self.d

    @property
    def origin(self) -> int:
        return self.index((0,) * self.d)

    def index(self, coord) -> int:
        coord = tuple(int(c) for c in coord)
        if len(coord) != self.d or any(abs(c) > self.side for c in coord):
            raise ValueError(f"coordinate {coord} outside the box")
        return int(np.ravel_multi_index(tuple(c + self.side for c in coord), self.shape))

    def coord(self, idx: int) -> tuple[int, ...]:
        return tuple(int(c) - self.side for c in np.unravel_index(idx, self.shape))

    def coords(self) -> np.ndarray:
        """(n_patches, d) array of lattice coordinates."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids - self.side

    def neighbors(self) -> np.ndarray:
        """(n_patches, 2d) neighbour indices; -1 marks a missing (absorbing) neighbour."""
        return _neighbors(self.d, self.side, self.boundary)

    def to_dict(self) -> dict[str, Any]:
        return {"d": self.d, "side": self.side, "N": self.N, "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Geometry":
        unknown = set(d) - {"d", "side", "N", "boundary"}
        if unknown:
            raise ValueError(f"unknown Geometry keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def for_params(cls, params: Params, side: int = 10, boundary: str = "periodic") -> "Geometry":
        return cls(d=params.d, side=side, N=params.N, boundary=boundary)


_NEIGHBOR_CACHE: dict[tuple, np.ndarray] = {}


def _neighbors(d: int, side: int, boundary: str) -> np.ndarray:
    key = (d, side, boundary)
    if key in _NEIGHBOR_CACHE:
        return _NEIGHBOR_CACHE[key]
    w = 2 * side + 1
    shape = (w,) * d
    idx = np.indices(shape).reshape(d, -1)
    n = idx.shape[1]
    out = np.empty((n, 2 * d), dtype=np.int64)
    for axis in range(d):
        for k, step in enumerate((1, -1)):
            moved = idx.copy()
            moved[axis] += step
            if boundary == "periodic":
                moved[axis] %= w
                out[:, 2 * axis + k] = np.ravel_multi_index(tuple(moved), shape)
            else:
                ok = (moved[axis] >= 0) & (moved[axis] < w)
                col = np.full(n, -1, dtype=np.int64)
                col[ok] = np.ravel_multi_index(tuple(moved[:, ok]), shape)
                out[:, 2 * axis + k] = col
    out.setflags(write=False)
    _NEIGHBOR_CACHE[key] = out
    return out


def preset(name: str, lam: float = 0.0, phi: float = 0.0, d: int = 1, N: int = 1,
           kappa: int | None = None, control: ControlSpec | None = None) -> Params:
    """Named special cases of the PRP.

    ``CP`` ignores ``phi`` and ``control``; ``BCP`` uses ``c = delta_0``;
    ``IRP`` and ``LogisticIRP`` force ``N = 1`` and need ``kappa``;
    ``SelfRegIRP`` forces ``N = 1`` with an arbitrary ``control``.
    """
    if name == "CP":
        return Params(lam, 0.0, d, N, ControlSpec.all_one())
    if name == "BCP":
        return Params(lam, phi, d, N, ControlSpec.delta0())
    if name in ("IRP", "LogisticIRP"):
        if kappa is None:
            raise ValueError(f"preset {name} needs kappa")
        c = ControlSpec.indicator(kappa) if name == "IRP" else ControlSpec.logistic(kappa)
        return Params(lam, phi, d, 1, c)
    if name == "SelfRegIRP":
        return Params(lam, phi, d, 1, control or ControlSpec.all_one())
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
