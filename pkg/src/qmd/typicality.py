"""Typical sequences, typical and conditionally typical projectors.

Projectors are kept in eigen-coordinates: a per-position eigenbasis plus a
boolean mask over eigen-index strings ``t^l``. Dense matrices are produced
on request. Degenerate eigenvalues of a state are merged into one symbol, so
the projectors do not depend on the basis chosen inside degenerate
eigenspaces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError
from .infomeasures import von_neumann_entropy
from .numerics import check_dense, default_cutoff, eig_herm, tensor
from .quantum import Ensemble

ENUM_LIMIT = 10**7
_SLACK = 1e-12
_MERGE_TOL = 1e-10


def _window(p: np.ndarray, n, delta: float):
    return delta * np.sqrt(n) * np.sqrt(np.clip(p * (1.0 - p), 0.0, None))


def is_typical_counts(counts, p, delta: float) -> np.ndarray:
    """Membership criterion on count vectors (last axis = letters)."""
    counts = np.asarray(counts, dtype=float)
    p = np.asarray(p, dtype=float)
    n = counts.sum(axis=-1, keepdims=True)
    dev = np.abs(counts - n * p)
    return np.all(dev <= _window(p, n, delta) + _SLACK * np.maximum(n, 1.0), axis=-1)


def string_digits(count: int, l: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Base-``count`` digits of indices ``start..stop`` (lexicographic strings)."""
    stop = count**l if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    powers = count ** np.arange(l - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % count).astype(np.int16)


def string_index(strings, count: int) -> np.ndarray:
    strings = np.atleast_2d(np.asarray(strings, dtype=np.int64))
    l = strings.shape[1]
    powers = count ** np.arange(l - 1, -1, -1, dtype=np.int64)
    return strings @ powers


def letter_counts(strings: np.ndarray, m: int) -> np.ndarray:
    strings = np.asarray(strings)
    return np.stack([(strings == x).sum(axis=-1) for x in range(m)], axis=-1)


@dataclass
class TypicalSet:
    """Sequences whose letter counts lie within ``delta * sqrt(l P(1-P))``
    of ``l P`` for every letter."""

    probs: np.ndarray
    length: int
    delta: float
    members: np.ndarray | None = field(default=None, repr=False)

    def __contains__(self, string) -> bool:
        s = np.asarray(string).reshape(-1)
        if s.size != self.length:
            return False
        return bool(is_typical_counts(letter_counts(s, self.probs.size), self.probs, self.delta))

    def typical_types(self) -> list[tuple[int, ...]]:
        m, l = self.probs.size, self.length
        out = []
        for cut in itertools.combinations(range(l + m - 1), m - 1):
            bounds = (-1,) + cut + (l + m - 1,)
            counts = tuple(bounds[i + 1] - bounds[i] - 1 for i in range(m))
            if is_typical_counts(np.array(counts), self.probs, self.delta):
                out.append(counts)
        return sorted(out)

    def cardinality(self) -> int:
        total = 0
        for c in self.typical_types():
            total += math.factorial(self.length) // math.prod(math.factorial(x) for x in c)
        return total

    def measure(self) -> float:
        """Probability of the set under the i.i.d. distribution."""
        logp = np.log(np.where(self.probs > 0, self.probs, 1.0))
        total = 0.0
        for c in self.typical_types():
            c = np.array(c)
            if np.any((self.probs == 0) & (c > 0)):
                continue
            total += math.exp(gammaln(self.length + 1) - gammaln(c + 1).sum() + float(c @ logp))
        return total

    def __len__(self) -> int:
        return self.cardinality()


def typical_set(p, l: int, delta: float, enumerate_limit: int = ENUM_LIMIT) -> TypicalSet:
    """Typical set of ``p`` at length ``l``; members enumerated (sorted
    lexicographically) when ``m**l <= enumerate_limit``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if l < 1:
        raise ValidationError("length must be >= 1")
    if delta < 0:
        raise ValidationError("delta must be nonnegative")
    m = p.size
    ts = TypicalSet(p, l, float(delta))
    if m**l <= enumerate_limit:
        chunks = []
        step = 1 << 20
        for start in range(0, m**l, step):
            s = string_digits(m, l, start, min(start + step, m**l))
            chunks.append(s[is_typical_counts(letter_counts(s, m), p, delta)])
        ts.members = np.concatenate(chunks) if chunks else np.zeros((0, l), dtype=np.int16)
    return ts


# --- eigen-symbols -------------------------------------------------------------


@dataclass(frozen=True)
class EigenSymbols:
    """Spectral data of a state with degenerate eigenvalues merged.

    ``groups[i]`` is the symbol of eigenvector ``i``; ``symbol_probs[g]`` the
    total weight of symbol ``g``; ``symbol_values[g]`` its eigenvalue.
    """

    values: np.ndarray
    vectors: np.ndarray
    groups: np.ndarray
    symbol_probs: np.ndarray
    symbol_values: np.ndarray

    @property
    def khat(self) -> float:
        kept = self.symbol_values[self.symbol_values > 0]
        return float(np.max(np.abs(np.log2(kept)))) if kept.size else 0.0

    @property
    def spread(self) -> float:
        """``sum_g sqrt(R_g (1 - R_g))`` over merged symbols."""
        r = self.symbol_probs
        return float(np.sqrt(r * (1 - r)).sum())


def eigen_symbols(rho) -> EigenSymbols:
    es = eig_herm(rho)
    vals = es.values.copy()
    vals[vals < default_cutoff(vals)] = 0.0
    groups = np.zeros(vals.size, dtype=np.int64)
    sym_vals = [vals[0]]
    for i in range(1, vals.size):
        if sym_vals[-1] - vals[i] > _MERGE_TOL * max(1.0, abs(sym_vals[-1])):
            sym_vals.append(vals[i])
        groups[i] = len(sym_vals) - 1
    sym_vals = np.array(sym_vals)
    sym_probs = np.array([vals[groups == g].sum() for g in range(sym_vals.size)])
    sym_probs = sym_probs / sym_probs.sum()
    return EigenSymbols(vals, es.vectors, groups, sym_probs, sym_vals)


# --- projectors ----------------------------------------------------------------


def cond_mask_table(strings, gmap: np.ndarray, probs: np.ndarray, delta: float) -> np.ndarray:
    """Conditional-typicality masks over local index strings.

    ``strings`` (B, l) holds letters; ``gmap[j, u]`` is the symbol of local
    index ``u`` under letter ``j`` and ``probs[j, g]`` the symbol weights.
    Returns (B, r**l) booleans marking index strings typical within every
    letter class, with ``r = gmap.shape[1]``.
    """
    strings = np.atleast_2d(np.asarray(strings, dtype=np.int64))
    b, l = strings.shape
    m, r = gmap.shape
    gmax = probs.shape[1]
    tdig = string_digits(r, l).astype(np.int64)
    nt = tdig.shape[0]
    counts = np.zeros((b, nt, m, gmax), dtype=np.int32)
    bi = np.arange(b)[:, None]
    ti = np.arange(nt)[None, :]
    for k in range(l):
        jk = strings[:, k][:, None]
        counts[bi, ti, jk, gmap[jk, tdig[None, :, k]]] += 1
    n = letter_counts(strings, m)[:, None, :, None].astype(float)  # (B,1,m,1)
    p = probs[None, None, :, :]
    ok = np.abs(counts - n * p) <= _window(p, n, delta) + _SLACK * np.maximum(n, 1.0)
    return np.all(ok, axis=(2, 3))


def _mask_for_strings(
    strings: np.ndarray, symbols: Sequence[EigenSymbols], delta: float
) -> np.ndarray:
    m = len(symbols)
    d = symbols[0].vectors.shape[0]
    gmax = max(s.symbol_probs.size for s in symbols)
    gmap = np.zeros((m, d), dtype=np.int64)
    probs = np.zeros((m, gmax))
    for j, s in enumerate(symbols):
        gmap[j] = s.groups
        probs[j, : s.symbol_probs.size] = s.symbol_probs
    return cond_mask_table(strings, gmap, probs, delta)


@dataclass
class TypicalProjector:
    """Projector spanned by product eigenvectors ``e_{t_1} x ... x e_{t_l}``
    over the eigen-strings selected by ``mask``.

    ``bases[k]`` is the eigenbasis used at position ``k`` and ``weights`` the
    product eigenvalues of the state the basis diagonalizes.
    """

    bases: list
    mask: np.ndarray
    weights: np.ndarray

    @property
    def length(self) -> int:
        return len(self.bases)

    @property
    def dim(self) -> int:
        return self.mask.size

    @property
    def rank(self) -> int:
        return int(self.mask.sum())

    def basis_matrix(self) -> np.ndarray:
        check_dense(self.dim)
        return tensor(*self.bases)

    def columns(self) -> np.ndarray:
        return self.basis_matrix()[:, self.mask]

    def matrix(self) -> np.ndarray:
        cols = self.columns()
        return cols @ cols.conj().T

    def trace_with_state(self) -> float:
        """Tr(state Pi) for the product state whose eigenbasis this is."""
        return float(self.weights[self.mask].sum())

    def trace_with_product(self, states: Sequence[np.ndarray]) -> float:
        """Tr((s_1 x ... x s_l) Pi) via diagonals in the projector's basis."""
        diag = np.ones(1)
        for u, s in zip(self.bases, states):
            diag = np.kron(diag, np.einsum("ai,ab,bi->i", u.conj(), s, u).real)
        return float(diag[self.mask].sum())


def _product_weights(vectors: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for v in vectors:
        out = np.kron(out, v)
    return out


def typical_projector(rho, l: int, delta: float) -> TypicalProjector:
    sym = eigen_symbols(rho)
    d = sym.vectors.shape[0]
    check_dense(d**l)
    mask = _mask_for_strings(np.zeros((1, l), dtype=np.int64), [sym], delta)[0]
    return TypicalProjector([sym.vectors] * l, mask, _product_weights([sym.values] * l))


def cond_typical_projector(states: Sequence[np.ndarray] | Sequence[EigenSymbols], string, delta: float) -> TypicalProjector:
    """Tensor product over letters j of the typical projectors of ``states[j]``
    on the positions where ``string`` has letter j."""
    syms = [s if isinstance(s, EigenSymbols) else eigen_symbols(s) for s in states]
    string = np.asarray(string, dtype=np.int64).reshape(-1)
    d = syms[0].vectors.shape[0]
    check_dense(d ** string.size)
    mask = _mask_for_strings(string[None, :], syms, delta)[0]
    bases = [syms[j].vectors for j in string]
    return TypicalProjector(bases, mask, _product_weights(syms[j].values for j in string))


# --- bound checks -----------------------------------------------------------------


@dataclass(frozen=True)
class BoundEntry:
    name: str
    lhs: float
    rhs: float
    relation: str  # ">=" or "<="
    detail: str = ""

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs if self.relation == ">=" else self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= -1e-9 * max(1.0, abs(self.rhs))


@dataclass
class TypicalityReport:
    entries: list
    khat: float
    strings: np.ndarray

    def by_name(self, name: str) -> list:
        return [e for e in self.entries if e.name == name]

    def all_hold(self, names: Iterable[str]) -> bool:
        return all(e.holds for n in names for e in self.by_name(n))


PROBABILITY_BOUNDS = ("typical:prob", "cond:typical:prob", "typical:prob:general")


def check_typicality_bounds(
    rho,
    ens: Ensemble,
    l: int,
    delta: float,
    strings=None,
    *,
    rng: np.random.Generator | None = None,
    samples: int = 8,
) -> TypicalityReport:
    """Evaluate the typical-subspace bounds at finite ``l``.

    ``ens`` supplies the letter distribution and letter states (normally the
    induced ensemble of ``rho`` and a POVM). Conditional bounds are evaluated
    on ``strings`` (default: ``samples`` strings drawn from the i.i.d. letter
    distribution). The unspecified absolute constant in the trace and
    eigenvalue bounds is replaced by ``khat``, the largest ``|log2|`` of a
    retained eigenvalue of ``rho`` or of any letter state.
    """
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    m = len(ens)
    sym = eigen_symbols(rho)
    letter_syms = [eigen_symbols(s) if not deg else sym for s, deg in zip(ens.states, ens.degenerate)]
    khat = max([sym.khat] + [s.khat for s in letter_syms])
    h = von_neumann_entropy(rho)
    root_l = math.sqrt(l)
    entries = []

    if strings is None:
        rng = np.random.default_rng(0) if rng is None else rng
        strings = rng.choice(m, size=(samples, l), p=ens.probs)
    strings = np.atleast_2d(np.asarray(strings, dtype=np.int64))

    pi = typical_projector(rho, l, delta)
    tr_state = pi.trace_with_state()
    entries.append(BoundEntry("typical:prob", tr_state, 1 - d / delta**2 if delta > 0 else -math.inf, ">="))
    measure = typical_set(sym.symbol_probs, l, delta, enumerate_limit=0).measure()
    entries.append(BoundEntry("typical:prob:identity", -abs(tr_state - measure), -1e-10, ">=",
                              "Tr(omega Pi) equals the typical-set measure"))

    rank = pi.rank
    expo = khat * d * delta * root_l
    entries.append(BoundEntry("typical:upper", rank, 2 ** (l * h + expo), "<="))
    entries.append(BoundEntry("typical:lower", rank, max(1 - d / delta**2, 0.0) * 2 ** (l * h - expo), ">="))

    # eigenvalue sandwich on the typical subspace
    logw = np.log2(pi.weights[pi.mask]) if rank else np.array([0.0])
    exact = sym.khat * delta * root_l * sym.spread
    entries.append(BoundEntry("typical:rho:sandwich", float(logw.min()), -l * h - exact - 1e-9, ">=", "min log2 eigenvalue"))
    entries.append(BoundEntry("typical:rho:sandwich", float(logw.max()), -l * h + exact + 1e-9, "<=", "max log2 eigenvalue"))
    entries.append(BoundEntry("typical:rho:lower", float(logw.min()), -l * h - expo - 1e-9, ">=", "log2 alpha"))
    entries.append(BoundEntry("typical:rho:lower", float(logw.max()), -l * h + expo + 1e-9, "<=", "log2 alpha'"))

    lam_typ = typical_set(ens.probs, l, delta, enumerate_limit=0)
    for s in strings:
        label = "".join(map(str, s))
        letters = [ens.states[j] for j in s]
        cpi = cond_typical_projector(letter_syms, s, delta)
        entries.append(BoundEntry("cond:typical:prob", cpi.trace_with_state(),
                                  1 - m * d / delta**2 if delta > 0 else -math.inf, ">=", label))
        if s in lam_typ:
            entries.append(BoundEntry("typical:prob:general", pi.trace_with_product(letters),
                                      1 - m * m * d / delta**2 if delta > 0 else -math.inf, ">=", label))
        hcond = sum(von_neumann_entropy(ens.states[j]) for j in s)  # l H(rho_hat | P_{j^l})
        cexp = khat * m * d * delta * root_l
        crank = cpi.rank
        entries.append(BoundEntry("cond:typical:upper", crank, 2 ** (hcond + cexp), "<=", label))
        pref = max(1 - m * d / delta**2, 0.0)
        entries.append(BoundEntry("cond:typical:lower(-)", crank, pref * 2 ** (hcond - cexp), ">=", label))
        entries.append(BoundEntry("cond:typical:lower(+)", crank, pref * 2 ** (hcond + cexp), ">=", label))
        if crank:
            lw = np.log2(cpi.weights[cpi.mask])
            entries.append(BoundEntry("cond:typical:rho:upper", float(lw.max()), -hcond + cexp + 1e-9, "<=", label))
            entries.append(BoundEntry("cond:typical:rho:upper", float(lw.min()), -hcond - cexp - 1e-9, ">=", label))
    return TypicalityReport(entries, khat, strings)
