"""Fixed-point token amounts.

Token quantities (QNAR, QLET) are plain Python ``int`` values counted in
subunits, with ``SCALE`` subunits per whole token. Ledger state never holds a
float.
"""
from __future__ import annotations

from decimal import Decimal, InvalidOperation
from fractions import Fraction
from numbers import Rational

SCALE = 10**9
DECIMALS = 9
# stakes are encoded on 16 bytes in commitments
MAX_SUBUNITS = 2**127 - 1


def tokens(value) -> int:
    """Convert a human token quantity to subunits.

    Accepts ``int`` (whole tokens), ``str``/``Decimal`` (decimal text, at most
    nine fractional digits), ``Fraction`` and ``float``. Floats go through their
    shortest repr, so ``tokens(0.1) == 100_000_000``.
    """
    if isinstance(value, bool):
        raise TypeError("bool is not a token amount")
    if isinstance(value, int):
        return value * SCALE
    if isinstance(value, float):
        value = Decimal(repr(value))
    if isinstance(value, str):
        try:
            value = Decimal(value.strip())
        except InvalidOperation:
            raise ValueError(f"not a decimal amount: {value!r}") from None
    if isinstance(value, Decimal):
        if not value.is_finite():
            raise ValueError(f"non-finite amount: {value}")
        scaled = value * SCALE
        if scaled != scaled.to_integral_value():
            raise ValueError(f"{value} has more than {DECIMALS} fractional digits")
        return int(scaled)
    if isinstance(value, Rational):
        scaled = Fraction(value) * SCALE
        if scaled.denominator != 1:
            raise ValueError(f"{value} is not representable in subunits")
        return int(scaled)
    raise TypeError(f"unsupported amount type {type(value).__name__}")


def to_fraction(subunits: int) -> Fraction:
    return Fraction(subunits, SCALE)


def to_float(subunits: int) -> float:
    return subunits / SCALE


def format_tokens(subunits: int, sign: bool = False) -> str:
    """Exact decimal rendering, e.g. ``1666666666 -> '1.666666666'``."""
    neg = subunits < 0
    whole, frac = divmod(abs(subunits), SCALE)
    text = f"{whole}.{frac:0{DECIMALS}d}"
    if neg:
        return "-" + text
    return ("+" + text) if sign else text


def format_fraction(value: Fraction, sign: bool = False) -> str:
    if value.denominator == 1:
        text = str(value.numerator)
    else:
        text = f"{value.numerator}/{value.denominator}"
    if sign and value > 0:
        text = "+" + text
    return text


def check_amount(subunits: int, name: str = "amount") -> int:
    if not isinstance(subunits, int) or isinstance(subunits, bool):
        raise TypeError(f"{name} must be an int number of subunits")
    if subunits < 0:
        raise ValueError(f"{name} must be non-negative, got {subunits}")
    if subunits > MAX_SUBUNITS:
        raise OverflowError(f"{name} exceeds the fixed-point range")
    return subunits
