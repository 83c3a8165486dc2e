"""Second-order modulus regressor structures.

A second-order modulus function is ``f(z, theta) = Phi(z).T @ theta`` where every
entry of the ``n_theta x n_f`` matrix ``Phi`` is zero or one of ``z_i``, ``|z_i|``,
``z_i z_j`` and ``z_i |z_j|`` over the stacked vector ``z = [x; u]``.

This module evaluates such matrices, removes the modulus under a known sign
pattern, and derives the nuisance-augmented structure obtained by substituting
``x -> x + R v`` and collecting terms by their degree in ``v``. Indices are
1-based throughout, matching the usual mathematical notation.
"""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, SignPatternError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

KINDS = ("zero", "lin", "abs", "cross", "crossabs")
_KIND_CODE = {k: c for c, k in enumerate(KINDS)}


# ---------------------------------------------------------------------------
# Term kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One entry of a regressor matrix.

    ``crossabs`` is ordered: ``Term("crossabs", i, j)`` is ``z_i * |z_j|``.
    ``cross`` is symmetric and stored with ``i <= j``.
    """

    kind: str = "zero"
    i: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == "zero":
            object.__setattr__(self, "i", 0)
            object.__setattr__(self, "j", 0)
        elif self.kind in ("lin", "abs"):
            if self.i < 1 or self.j != 0:
                raise ValueError(f"{self.kind} term needs a single positive index")
        else:
            if self.i < 1 or self.j < 1:
                raise ValueError(f"{self.kind} term needs two positive indices")
            if self.kind == "cross" and self.i > self.j:
                i, j = self.i, self.j
                object.__setattr__(self, "i", j)
                object.__setattr__(self, "j", i)

    @property
    def indices(self):
        if self.kind == "zero":
            return ()
        if self.kind in ("lin", "abs"):
            return (self.i,)
        return (self.i, self.j)

    @property
    def modulus_index(self):
        """Stacked index that appears inside ``|.|``, or None."""
        if self.kind == "abs":
            return self.i
        if self.kind == "crossabs":
            return self.j
        return None

    def __str__(self):
        if self.kind == "zero":
            return "zero"
        return f"{self.kind}:" + ",".join(str(k) for k in self.indices)

    @classmethod
    def parse(cls, text):
        text = str(text).strip().lower()
        if text in ("zero", "0", ""):
            return cls()
        kind, _, idx = text.partition(":")
        try:
            nums = [int(s) for s in idx.split(",")] if idx else []
        except ValueError:
            raise ValueError(f"malformed term tag {text!r}") from None
        if kind in ("lin", "abs") and len(nums) == 1:
            return cls(kind, nums[0])
        if kind in ("cross", "crossabs") and len(nums) == 2:
            return cls(kind, nums[0], nums[1])
        raise ValueError(f"malformed term tag {text!r}")


def Zero():
    return Term()


def Linear(i):
    return Term("lin", i)


def Abs(i):
    return Term("abs", i)


def Cross(i, j):
    return Term("cross", i, j)


def CrossAbs(i, j):
    return Term("crossabs", i, j)


# ---------------------------------------------------------------------------
# Regressor specs
# ---------------------------------------------------------------------------

def _as_term(t):
    return t if isinstance(t, Term) else Term.parse(t)


@dataclass(frozen=True)
class RegressorSpec:
    """Dense ``n_theta x n_f`` grid of :class:`Term` entries over ``[x; u]``."""

    entries: tuple
    n_x: int
    n_u: int = 0
    names: tuple = ()

    def __post_init__(self):
        rows = tuple(tuple(_as_term(t) for t in row) for row in self.entries)
        if not rows or not rows[0]:
            raise ValueError("regressor spec needs at least one row and one column")
        n_f = len(rows[0])
        for p, row in enumerate(rows):
            if len(row) != n_f:
                raise DimensionError(f"row {p + 1}", n_f, len(row))
        n_z = self.n_x + self.n_u
        for p, row in enumerate(rows):
            for t in row:
                if any(k > n_z for k in t.indices):
                    raise ValueError(f"term {t} in row {p + 1} exceeds n_x + n_u = {n_z}")
        names = tuple(self.names) if self.names else tuple(f"p{p + 1}" for p in range(len(rows)))
        if len(names) != len(rows):
            raise DimensionError("names", len(rows), len(names))
        object.__setattr__(self, "entries", rows)
        object.__setattr__(self, "names", names)

    @property
    def n_theta(self):
        return len(self.entries)

    @property
    def n_f(self):
        return len(self.entries[0])

    @property
    def shape(self):
        return (self.n_theta, self.n_f)

    def modulus_indices(self):
        return sorted({t.modulus_index for row in self.entries for t in row
                       if t.modulus_index is not None})

    def select_rows(self, rows):
        rows = list(rows)
        return RegressorSpec(tuple(self.entries[p] for p in rows), self.n_x, self.n_u,
                             tuple(self.names[p] for p in rows))

    @cached_property
    def _table(self):
        kind = np.array([[_KIND_CODE[t.kind] for t in row] for row in self.entries])
        first = np.array([[t.i - 1 if t.i else 0 for t in row] for row in self.entries])
        second = np.array([[t.j - 1 if t.j else 0 for t in row] for row in self.entries])
        return kind, first, second

    # -- serialization ------------------------------------------------------

    def to_toml(self):
        lines = ["[dims]", f"n_x = {self.n_x}", f"n_u = {self.n_u}", "", "[rows]"]
        for name, row in zip(self.names, self.entries):
            tags = ", ".join(f'"{t}"' for t in row)
            lines.append(f'"{name}" = [{tags}]')
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text):
        doc = tomllib.loads(text)
        try:
            dims = doc["dims"]
            rows = doc["rows"]
            n_x = int(dims["n_x"])
        except KeyError as exc:
            raise ValueError(f"regressor spec is missing {exc}") from None
        return cls(tuple(tuple(r) for r in rows.values()), n_x, int(dims.get("n_u", 0)),
                   tuple(rows.keys()))


def merge_duplicate_rows(spec):
    """Merge rows with identical entries; their coefficients only act as a sum.

    Returns ``(merged_spec, groups)`` where ``groups[q]`` lists the original row
    indices (0-based) collapsed into merged row ``q``.
    """
    groups = {}
    for p, row in enumerate(spec.entries):
        groups.setdefault(row, []).append(p)
    order = sorted(groups.values(), key=lambda g: g[0])
    merged = RegressorSpec(tuple(spec.entries[g[0]] for g in order), spec.n_x, spec.n_u,
                           tuple("+".join(spec.names[p] for p in g) for g in order))
    return merged, tuple(tuple(g) for g in order)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _stack_z(spec, x, u):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != spec.n_x:
        raise DimensionError("x", spec.n_x, x.shape[-1] if x.ndim else 0)
    if u is None:
        if spec.n_u:
            raise DimensionError("u", spec.n_u, 0)
        u = np.zeros(x.shape[:-1] + (0,))
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] != spec.n_u:
        raise DimensionError("u", spec.n_u, u.shape[-1] if u.ndim else 0)
    lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    x = np.broadcast_to(x, lead + x.shape[-1:])
    u = np.broadcast_to(u, lead + u.shape[-1:])
    return np.concatenate([x, u], axis=-1)


def eval_regressor(spec, x, u=None):
    """Evaluate ``Phi([x; u])``; leading axes of ``x``/``u`` broadcast.

    Returns an array of shape ``(..., n_theta, n_f)``.
    """
    z = _stack_z(spec, x, u)
    kind, first, second = spec._table
    a = z[..., first]
    b = z[..., second]
    out = np.zeros_like(a)
    out = np.where(kind == 1, a, out)
    out = np.where(kind == 2, np.abs(a), out)
    out = np.where(kind == 3, a * b, out)
    out = np.where(kind == 4, a * np.abs(b), out)
    return out


def eval_som(spec, theta, x, u=None):
    """Evaluate ``Phi([x; u]).T @ theta``, shape ``(..., n_f)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_theta,):
        raise DimensionError("theta", spec.n_theta, theta.shape[0] if theta.ndim else 0)
    return np.einsum("...pf,p->...f", eval_regressor(spec, x, u), theta)


# ---------------------------------------------------------------------------
# Polynomial terms
# ---------------------------------------------------------------------------

class Atom(NamedTuple):
    """A signal or nuisance factor inside a :class:`PolyTerm`."""

    kind: str
    idx: tuple


_ATOM_ORDER = {"x": 0, "u": 1, "R": 2, "rho": 3, "lam": 4}
_NUISANCE = ("rho", "lam")


def _atom_key(a):
    return (_ATOM_ORDER[a.kind], a.idx)


def State(i):
    return Atom("x", (i,))


def Input(i):
    return Atom("u", (i,))


def REntry(i, j):
    return Atom("R", (i, j))


def NuisanceRho(j, p):
    return Atom("rho", (j, p))


def NuisanceLambda(j, m, p):
    return Atom("lam", (min(j, m), max(j, m), p))


@dataclass(frozen=True)
class PolyTerm:
    """``coef * prod(atoms)`` with atoms kept in canonical order."""

    coef: int
    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple(sorted(self.atoms, key=_atom_key))
        if sum(a.kind in _NUISANCE for a in atoms) > 1:
            raise ValueError("a polynomial term carries at most one nuisance factor")
        if sum(a.kind not in _NUISANCE for a in atoms) > 2:
            raise ValueError("signal degree of a term is at most two")
        object.__setattr__(self, "atoms", atoms)

    @property
    def sort_key(self):
        return tuple(_atom_key(a) for a in self.atoms)

    def __str__(self):
        factors = []
        for a in self.atoms:
            name = {"x": "x", "u": "u", "R": "R", "rho": "rho", "lam": "lam"}[a.kind]
            factors.append(name + "".join(f"[{k}]" for k in a.idx))
        body = "*".join(factors) if factors else "1"
        return f"{self.coef:+d}*{body}"


def canonical(terms):
    """Merge like terms, drop zeros and sort; returns a tuple of PolyTerm."""
    acc = defaultdict(int)
    for t in terms:
        acc[t.atoms] += t.coef
    out = [PolyTerm(c, atoms) for atoms, c in acc.items() if c != 0]
    return tuple(sorted(out, key=lambda t: t.sort_key))


# ---------------------------------------------------------------------------
# Sign handling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignPattern:
    """Fixed signs of the states (and optionally inputs) inside modulus terms."""

    states: tuple
    inputs: tuple = ()

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        inputs = tuple(int(s) for s in self.inputs)
        for s in states + inputs:
            if s not in (1, -1):
                raise SignPatternError(f"sign entries must be +1 or -1, got {s}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    def sign(self, index, n_x):
        """Sign of stacked index ``index`` (1-based into ``[x; u]``)."""
        if index <= n_x:
            if index > len(self.states):
                raise SignPatternError(f"no sign given for state {index}")
            return self.states[index - 1]
        k = index - n_x
        if k > len(self.inputs):
            raise SignPatternError(f"no sign given for input {k} (stacked index {index})")
        return self.inputs[k - 1]

    def __neg__(self):
        return SignPattern(tuple(-s for s in self.states), tuple(-s for s in self.inputs))


def _signal_atom(index, n_x):
    return State(index) if index <= n_x else Input(index - n_x)


def _expand_term(term, signs, n_x):
    if term.kind == "zero":
        return ()
    if term.kind == "lin":
        return (PolyTerm(1, (_signal_atom(term.i, n_x),)),)
    if term.kind == "abs":
        return (PolyTerm(signs.sign(term.i, n_x), (_signal_atom(term.i, n_x),)),)
    if term.kind == "cross":
        return (PolyTerm(1, (_signal_atom(term.i, n_x), _signal_atom(term.j, n_x))),)
    s = signs.sign(term.j, n_x)
    return (PolyTerm(s, (_signal_atom(term.i, n_x), _signal_atom(term.j, n_x))),)


def expand_under_signs(spec, signs):
    """Replace every ``|z_j|`` by ``s_j z_j``.

    Returns a ``n_theta x n_f`` nested tuple of canonical polynomials. The result
    agrees with :func:`eval_regressor` wherever ``sign(z_j) == s_j``.
    """
    for idx in spec.modulus_indices():
        signs.sign(idx, spec.n_x)
    return tuple(tuple(canonical(_expand_term(t, signs, spec.n_x)) for t in row)
                 for row in spec.entries)


# ---------------------------------------------------------------------------
# Augmented structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentedStructure:
    """Nuisance-augmented regressor layout, one coefficient set per experiment.

    ``rho_terms[e][q][f]`` is the polynomial multiplying nuisance ``rho_keys[q]``
    (a pair ``(j, p)`` standing for ``v_j * theta_p``) in output ``f`` for
    experiment ``e``; ``lambda_terms`` likewise for ``lambda_keys`` entries
    ``(j, m, p)`` standing for ``v_j * v_m * theta_p`` with ``j <= m``.
    """

    base_spec: RegressorSpec
    signs: tuple
    n_v: int
    r_mask: tuple
    rho_keys: tuple
    lambda_keys: tuple
    rho_terms: tuple
    lambda_terms: tuple

    @property
    def n_rho(self):
        return len(self.rho_keys)

    @property
    def n_lambda(self):
        return len(self.lambda_keys)

    @property
    def n_experiments(self):
        return len(self.signs)

    @property
    def n_params(self):
        return self.base_spec.n_theta + self.n_rho + self.n_lambda

    @property
    def nuisance_map(self):
        return self.rho_keys + self.lambda_keys

    def nuisance_labels(self):
        names = self.base_spec.names
        rho = [f"v{j}*{names[p - 1]}" for j, p in self.rho_keys]
        lam = [f"v{j}v{m}*{names[p - 1]}" for j, m, p in self.lambda_keys]
        return rho + lam

    def nuisance_values(self, theta, v):
        """Values of ``[v_j theta_p ...; v_j v_m theta_p ...]`` for given theta, v.

        ``v`` may carry leading (e.g. time) axes; output has shape
        ``(..., n_rho + n_lambda)``.
        """
        theta = np.asarray(theta, dtype=float)
        v = np.asarray(v, dtype=float)
        rho = [v[..., j - 1] * theta[p - 1] for j, p in self.rho_keys]
        lam = [v[..., j - 1] * v[..., m - 1] * theta[p - 1] for j, m, p in self.lambda_keys]
        cols = rho + lam
        if not cols:
            return np.zeros(v.shape[:-1] + (0,))
        return np.stack(cols, axis=-1)

    def contracted_terms(self, e):
        """Per-output polynomials including the nuisance factors (experiment ``e``)."""
        out = []
        for f in range(self.base_spec.n_f):
            terms = []
            for (j, p), row in zip(self.rho_keys, self.rho_terms[e]):
                terms += [PolyTerm(t.coef, t.atoms + (NuisanceRho(j, p),)) for t in row[f]]
            for (j, m, p), row in zip(self.lambda_keys, self.lambda_terms[e]):
                terms += [PolyTerm(t.coef, t.atoms + (NuisanceLambda(j, m, p),)) for t in row[f]]
            out.append(canonical(terms))
        return tuple(out)

    @cached_property
    def _tables(self):
        return tuple(_compile_rows(self.rho_terms[e] + self.lambda_terms[e], self.base_spec,
                                   self.n_v) for e in range(self.n_experiments))

    def eval_nuisance_rows(self, e, x, u, R):
        """Evaluate ``[Phi_rho,e; Phi_lambda,e]`` on ``x``, ``u`` and ``R``.

        ``R`` has shape ``(..., n_x, n_v)``; returns ``(..., n_rho + n_lambda, n_f)``.
        """
        return _eval_compiled(self._tables[e], self.base_spec, self.n_v, x, u, R)

    def eval_rows(self, e, x, u, R, base="modulus"):
        """Full augmented regressor ``[Phi; Phi_rho,e; Phi_lambda,e]``.

        ``base="modulus"`` evaluates the first block with literal absolute values;
        ``base="expanded"`` uses the sign-expanded polynomial of experiment ``e``.
        """
        if base == "modulus":
            top = eval_regressor(self.base_spec, x, u)
        elif base == "expanded":
            grid = expand_under_signs(self.base_spec, self.signs[e])
            top = _eval_compiled(_compile_rows(grid, self.base_spec, self.n_v),
                                 self.base_spec, self.n_v, x, u, R)
        else:
            raise ValueError(f"unknown base mode {base!r}")
        rest = self.eval_nuisance_rows(e, x, u, R)
        return np.concatenate([top, rest], axis=-2)


def _r_mask(r_mask, n_x, n_v):
    if r_mask is None:
        return tuple(tuple(True for _ in range(n_v)) for _ in range(n_x))
    mask = tuple(tuple(bool(b) for b in row) for row in r_mask)
    if len(mask) != n_x or any(len(row) != n_v for row in mask):
        raise DimensionError("r_mask", (n_x, n_v), (len(mask), len(mask[0]) if mask else 0))
    return mask


def derive_augmented(spec, signs, n_v, r_mask=None):
    """Derive the nuisance-augmented structure of ``spec``.

    Each sign-expanded entry is rewritten with ``x_i -> x_i + sum_j R_ij v_j``.
    Terms of degree one in ``v`` are grouped by ``(j, p)`` (coefficient of
    ``v_j theta_p``), degree-two terms by ``(j, m, p)`` with ``j <= m``. Entries
    of ``R`` that are ``False`` in ``r_mask`` are structurally zero. Rows that are
    zero in every experiment are pruned.

    Parameters
    ----------
    spec : RegressorSpec
    signs : SignPattern or sequence of SignPattern
        One pattern per experiment.
    n_v : int
        Disturbance dimension.
    r_mask : array-like of bool, shape (n_x, n_v), optional
    """
    if n_v <= 0:
        raise ValueError("disturbance dimension n_v must be positive")
    if isinstance(signs, SignPattern):
        signs = (signs,)
    signs = tuple(signs)
    if not signs:
        raise SignPatternError("at least one sign pattern is required")
    mask = _r_mask(r_mask, spec.n_x, n_v)
    n_x, n_f = spec.n_x, spec.n_f

    def offsets(atom):
        if atom.kind != "x":
            return []
        i = atom.idx[0]
        return [(REntry(i, j), j) for j in range(1, n_v + 1) if mask[i - 1][j - 1]]

    per_exp_rho, per_exp_lam = [], []
    for s in signs:
        grid = expand_under_signs(spec, s)
        rho = defaultdict(lambda: [[] for _ in range(n_f)])
        lam = defaultdict(lambda: [[] for _ in range(n_f)])
        for p, row in enumerate(grid, start=1):
            for f, poly in enumerate(row):
                for term in poly:
                    choices = [[(a, None)] + offsets(a) for a in term.atoms]
                    for pick in itertools.product(*choices):
                        js = [j for _, j in pick if j is not None]
                        atoms = tuple(a for a, _ in pick)
                        if len(js) == 1:
                            rho[(js[0], p)][f].append(PolyTerm(term.coef, atoms))
                        elif len(js) == 2:
                            lam[(min(js), max(js), p)][f].append(PolyTerm(term.coef, atoms))
        per_exp_rho.append({k: tuple(canonical(c) for c in cells) for k, cells in rho.items()})
        per_exp_lam.append({k: tuple(canonical(c) for c in cells) for k, cells in lam.items()})

    def keep(keys, tables):
        return [k for k in keys
                if any(any(cell for cell in t.get(k, ())) for t in tables)]

    rho_keys = sorted({k for t in per_exp_rho for k in t}, key=lambda k: (k[1], k[0]))
    lam_keys = sorted({k for t in per_exp_lam for k in t}, key=lambda k: (k[2], k[0], k[1]))
    rho_keys = tuple(keep(rho_keys, per_exp_rho))
    lam_keys = tuple(keep(lam_keys, per_exp_lam))
    empty = tuple(() for _ in range(n_f))
    rho_terms = tuple(tuple(t.get(k, empty) for k in rho_keys) for t in per_exp_rho)
    lam_terms = tuple(tuple(t.get(k, empty) for k in lam_keys) for t in per_exp_lam)
    return AugmentedStructure(spec, signs, n_v, mask, rho_keys, lam_keys, rho_terms, lam_terms)


# ---------------------------------------------------------------------------
# Compiled polynomial evaluation
# ---------------------------------------------------------------------------

def _signal_column(atom, spec, n_v):
    if atom.kind == "x":
        return atom.idx[0] - 1
    if atom.kind == "u":
        return spec.n_x + atom.idx[0] - 1
    if atom.kind == "R":
        i, j = atom.idx
        return spec.n_x + spec.n_u + (i - 1) * n_v + (j - 1)
    raise ValueError(f"atom {atom} is not a signal")


def _compile_rows(rows, spec, n_v):
    """Flatten a grid of polynomials into index arrays for vectorized evaluation."""
    one = spec.n_x + spec.n_u + spec.n_x * n_v
    n_f = spec.n_f
    coef, col_a, col_b, target = [], [], [], []
    for q, row in enumerate(rows):
        for f, poly in enumerate(row):
            for t in poly:
                cols = [_signal_column(a, spec, n_v) for a in t.atoms] + [one, one]
                coef.append(t.coef)
                col_a.append(cols[0])
                col_b.append(cols[1])
                target.append(q * n_f + f)
    scatter = np.zeros((len(coef), len(rows) * n_f))
    scatter[np.arange(len(coef)), target] = 1.0
    return (np.array(coef, dtype=float), np.array(col_a, dtype=int),
            np.array(col_b, dtype=int), scatter, len(rows))


def _eval_compiled(table, spec, n_v, x, u, R):
    coef, col_a, col_b, scatter, n_rows = table
    z = _stack_z(spec, x, u)
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (spec.n_x, n_v):
        raise DimensionError("R", (spec.n_x, n_v), R.shape[-2:])
    lead = np.broadcast_shapes(z.shape[:-1], R.shape[:-2])
    z = np.broadcast_to(z, lead + z.shape[-1:])
    r = np.broadcast_to(R, lead + R.shape[-2:]).reshape(lead + (spec.n_x * n_v,))
    sig = np.concatenate([z, r, np.ones(lead + (1,))], axis=-1)
    vals = coef * sig[..., col_a] * sig[..., col_b]
    return (vals @ scatter).reshape(lead + (n_rows, spec.n_f))


def eval_polys(grid, spec, x, u=None, R=None, n_v=1):
    """Evaluate a nested ``rows x n_f`` grid of polynomials over signal atoms."""
    if R is None:
        R = np.zeros((spec.n_x, n_v))
    return _eval_compiled(_compile_rows(grid, spec, n_v), spec, n_v, x, u, R)
