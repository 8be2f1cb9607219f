"""Brute-force ground truth by full coalition enumeration.

Everything here is exponential-time and meant for tests and validation only.
Games are callables over frozensets of effective player indices 0..q-1; when
a joint location unit exists it occupies one of those indices and is toggled
atomically.  Combinatorial weights are accumulated as exact rationals and
converted to float only at the end, so small integer-valued games come out
exact.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import chain, combinations
from math import factorial
from typing import Callable

from .errors import CapacityError, DataError

ValueFn = Callable[[frozenset], float]

MAX_EXACT_PLAYERS = 20
MAX_INTERACTION_PLAYERS = 18


def _check_capacity(q: int, cap: int) -> None:
    if q < 1:
        raise DataError(f"need at least one player, got q={q}")
    if q > cap:
        raise CapacityError(
            f"q={q} exceeds the brute-force cap of {cap} players (2^q evaluations)"
        )


def _subsets(players):
    players = list(players)
    return chain.from_iterable(combinations(players, r) for r in range(len(players) + 1))


def _single_player_sum(value: ValueFn, q: int, j: int) -> Fraction:
    others = [i for i in range(q) if i != j]
    total = Fraction(0)
    fq = factorial(q)
    for S in _subsets(others):
        s = len(S)
        weight = Fraction(factorial(s) * factorial(q - s - 1), fq)
        with_j = Fraction(value(frozenset(S) | {j}))
        without = Fraction(value(frozenset(S)))
        total += weight * (with_j - without)
    return total


def exact_shapley(value: ValueFn, q: int, j: int, exact: bool = False):
    """Classic Shapley value of player j: the weighted average marginal contribution.

    With ``exact=True`` the untruncated Fraction is returned.
    """
    _check_capacity(q, MAX_EXACT_PLAYERS)
    if not 0 <= j < q:
        raise DataError(f"player index {j} out of range for q={q}")
    total = _single_player_sum(value, q, j)
    return total if exact else float(total)


def exact_joint_geo(value: ValueFn, q: int, geo: int, exact: bool = False):
    """Attribution of the joint location unit.

    The location unit enters coalitions atomically, so over the q effective
    players this is the classic value of the unit's index; with a single
    location feature it reduces to the individual-player case.
    """
    return exact_shapley(value, q, geo, exact=exact)


def exact_geo_feature(value: ValueFn, q: int, j: int, geo: int | None = None,
                      exact: bool = False):
    """Location-invariant attribution of non-location player j.

    Coalition sizes count the location unit as one member, giving the same
    normalization as exact_joint_geo; efficiency over the reduced game holds
    jointly with it.
    """
    if geo is not None and j == geo:
        raise DataError("j must be a non-location player; use exact_joint_geo for the unit")
    return exact_shapley(value, q, j, exact=exact)


def exact_geo_interaction(value: ValueFn, q: int, j: int, geo: int,
                          exact: bool = False):
    """Location x feature interaction by enumeration over the remaining players.

    The printed weight s!(q-s-2)!/q! is used verbatim; it carries no extra
    factor relative to the pairwise interaction normalization, and the two
    differ by a constant that downstream comparisons measure rather than fix.
    """
    _check_capacity(q, MAX_INTERACTION_PLAYERS)
    if j == geo:
        raise DataError("interaction requires a feature distinct from the location unit")
    for idx in (j, geo):
        if not 0 <= idx < q:
            raise DataError(f"player index {idx} out of range for q={q}")
    rest = [i for i in range(q) if i not in (j, geo)]
    total = Fraction(0)
    fq = factorial(q)
    for S in _subsets(rest):
        s = len(S)
        weight = Fraction(factorial(s) * factorial(q - s - 2), fq)
        base = frozenset(S)
        delta = (
            Fraction(value(base | {geo, j}))
            - Fraction(value(base | {geo}))
            - Fraction(value(base | {j}))
            + Fraction(value(base))
        )
        total += weight * delta
    return total if exact else float(total)


def exact_pairwise_interaction(value: ValueFn, q: int, i: int, j: int,
                               exact: bool = False):
    """Pairwise Shapley interaction between two individual players."""
    _check_capacity(q, MAX_INTERACTION_PLAYERS)
    if i == j:
        raise DataError("interaction requires two distinct players")
    for idx in (i, j):
        if not 0 <= idx < q:
            raise DataError(f"player index {idx} out of range for q={q}")
    rest = [k for k in range(q) if k not in (i, j)]
    total = Fraction(0)
    denom = 2 * factorial(q - 1)
    for S in _subsets(rest):
        s = len(S)
        weight = Fraction(factorial(s) * factorial(q - s - 2), denom)
        base = frozenset(S)
        delta = (
            Fraction(value(base | {i, j}))
            - Fraction(value(base | {i}))
            - Fraction(value(base | {j}))
            + Fraction(value(base))
        )
        total += weight * delta
    return total if exact else float(total)


def tabulate_game(values: dict) -> ValueFn:
    """Wrap a {frozenset: value} table as a game callable, validating coverage."""

    def value(S: frozenset):
        key = frozenset(S)
        if key not in values:
            raise DataError(f"game table has no value for coalition {sorted(key)}")
        return values[key]

    return value
