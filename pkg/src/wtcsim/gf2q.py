"""Bit-exact arithmetic in GF(2^q).

Elements are polynomials over F_2 packed into Python ints (bit i is the
coefficient of x^i).  Addition is XOR; multiplication is carry-less
polynomial multiplication reduced modulo an irreducible polynomial of
degree q.  Everything here is pure and immutable, so concurrent use is
unrestricted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

# Fixed moduli so runs are reproducible (bit representation includes x^q).
DEFAULT_MODULI = {
    3: 0b1011,      # x^3 + x + 1
    4: 0b10011,     # x^4 + x + 1
    5: 0b100101,    # x^5 + x^2 + 1
    6: 0b1000011,   # x^6 + x + 1
    7: 0b10000011,  # x^7 + x + 1
    8: 0b100011011, # x^8 + x^4 + x^3 + x + 1
}


class FieldError(ValueError):
    """Raised on invalid field usage (mismatched degrees, zero inverse)."""


def _clmul(a: int, b: int) -> int:
    """Carry-less product of two bit-polynomials."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def _polymod(a: int, m: int) -> int:
    """Remainder of bit-polynomial a modulo m (m != 0)."""
    dm = m.bit_length() - 1
    while a.bit_length() - 1 >= dm and a:
        a ^= m << (a.bit_length() - 1 - dm)
    return a


def _is_irreducible(m: int, q: int) -> bool:
    # Exhaustive trial division by every polynomial of degree 1..q//2.
    if m.bit_length() - 1 != q:
        return False
    for d in range(1, q // 2 + 1):
        for cand in range(1 << d, 1 << (d + 1)):
            if _polymod(m, cand) == 0:
                return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    """Field degree plus the irreducible modulus defining GF(2^q)."""

    q: int
    modulus: int

    def __post_init__(self):
        if not 3 <= self.q <= 16:
            raise FieldError(f"field degree q={self.q} outside supported range [3, 16]")
        if not _is_irreducible(self.modulus, self.q):
            raise FieldError(
                f"modulus {bin(self.modulus)} is not irreducible of degree {self.q}"
            )


@lru_cache(maxsize=None)
def default_spec(q: int) -> FieldSpec:
    """FieldSpec with the module's fixed modulus for degree q."""
    if q not in DEFAULT_MODULI:
        raise FieldError(f"no default modulus for q={q}; supply a FieldSpec")
    return FieldSpec(q, DEFAULT_MODULI[q])


@dataclass(frozen=True)
class FieldElement:
    """Element of GF(2^q): value < 2^q, interoperable only with equal q."""

    value: int
    q: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << self.q):
            raise FieldError(f"value {self.value} out of range for q={self.q}")

    def __xor__(self, other: "FieldElement") -> "FieldElement":
        _check_degrees(self, other)
        return FieldElement(self.value ^ other.value, self.q)


def _check_degrees(*elems: FieldElement, spec: FieldSpec | None = None):
    qs = {e.q for e in elems}
    if spec is not None:
        qs.add(spec.q)
    if len(qs) != 1:
        raise FieldError(f"mixed field degrees {sorted(qs)}")


def gf_mul(a: FieldElement, b: FieldElement, spec: FieldSpec | None = None) -> FieldElement:
    """Product a*b in GF(2^q) under spec.modulus (default modulus if omitted)."""
    spec = spec or default_spec(a.q)
    _check_degrees(a, b, spec=spec)
    return FieldElement(_polymod(_clmul(a.value, b.value), spec.modulus), a.q)


def gf_inv(a: FieldElement, spec: FieldSpec | None = None) -> FieldElement:
    """Multiplicative inverse of a nonzero element, by extended Euclid."""
    spec = spec or default_spec(a.q)
    _check_degrees(a, spec=spec)
    if a.value == 0:
        raise FieldError("zero has no multiplicative inverse")
    # Extended Euclidean algorithm on bit-polynomials.
    r0, r1 = spec.modulus, a.value
    s0, s1 = 0, 1
    while r1 != 0:
        shift = r0.bit_length() - r1.bit_length()
        if shift < 0:
            r0, r1, s0, s1 = r1, r0, s1, s0
            continue
        r0 ^= r1 << shift
        s0 ^= s1 << shift
    # r0 == gcd == 1 since the modulus is irreducible.
    return FieldElement(_polymod(s0, spec.modulus), a.q)


def gf_pow(a: FieldElement, e: int, spec: FieldSpec | None = None) -> FieldElement:
    """a**e for e >= 0 by square-and-multiply."""
    spec = spec or default_spec(a.q)
    r = FieldElement(1, a.q)
    base = a
    while e:
        if e & 1:
            r = gf_mul(r, base, spec)
        base = gf_mul(base, base, spec)
        e >>= 1
    return r


def bits_to_element(bits, q: int | None = None) -> FieldElement:
    """Pack a bit vector into a field element.

    Bit 0 of the vector is the MOST significant bit of the element, so
    the "k most significant bits" are the first k entries.
    """
    bits = list(bits)
    q = q if q is not None else len(bits)
    if len(bits) != q:
        raise FieldError(f"expected {q} bits, got {len(bits)}")
    v = 0
    for bit in bits:
        if bit not in (0, 1):
            raise FieldError(f"non-binary entry {bit!r} in bit vector")
        v = (v << 1) | bit
    return FieldElement(v, q)


def element_to_bits(e: FieldElement) -> list[int]:
    """Unpack a field element to its MSB-first bit vector (length q)."""
    return [(e.value >> (e.q - 1 - i)) & 1 for i in range(e.q)]
