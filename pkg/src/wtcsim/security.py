"""Seeded 2-universal-hash security layer.

The encoder spreads a k-bit message M and (q-k) uniform randomizer bits B
over a q-bit block V = S^{-1} * (M || B) in GF(2^q); the decoder recovers
M as the k most significant bits of S * V.  M occupies the most
significant positions of the concatenation, so decode(encode(m, b, s), s)
is the identity by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .gf2q import (
    FieldElement,
    FieldSpec,
    bits_to_element,
    default_spec,
    element_to_bits,
    gf_inv,
    gf_mul,
)


class SecurityError(ValueError):
    """Raised on dimension mismatches in the security layer."""


def _check_bits(bits, name: str):
    for b in bits:
        if b not in (0, 1):
            raise SecurityError(f"{name} contains non-binary entry {b!r}")


@dataclass(frozen=True)
class Message:
    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(self.bits))
        if len(self.bits) < 1:
            raise SecurityError("message must have k >= 1 bits")
        _check_bits(self.bits, "message")

    @property
    def k(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class Randomizer:
    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(self.bits))
        _check_bits(self.bits, "randomizer")


@dataclass(frozen=True)
class Seed:
    """Shared seed S: a nonzero element of GF(2^q)."""

    element: FieldElement

    def __post_init__(self):
        if self.element.value == 0:
            raise SecurityError("seed must be a nonzero field element")

    @classmethod
    def from_bits(cls, bits) -> "Seed":
        return cls(bits_to_element(bits))

    @property
    def q(self) -> int:
        return self.element.q


@dataclass(frozen=True)
class SecuredBlock:
    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(self.bits))
        _check_bits(self.bits, "secured block")

    @property
    def q(self) -> int:
        return len(self.bits)


def encode_security(m: Message, b: Randomizer, s: Seed,
                    spec: FieldSpec | None = None) -> SecuredBlock:
    """V = S^{-1} * (M || B) in GF(2^q)."""
    q = s.q
    if m.k + len(b.bits) != q:
        raise SecurityError(
            f"k + (q-k) = {m.k}+{len(b.bits)} does not match seed degree q={q}"
        )
    spec = spec or default_spec(q)
    x = bits_to_element(m.bits + b.bits, q)
    v = gf_mul(gf_inv(s.element, spec), x, spec)
    return SecuredBlock(tuple(element_to_bits(v)))


def decode_security(v_hat: SecuredBlock, s: Seed, k: int,
                    spec: FieldSpec | None = None) -> Message:
    """M_hat = the k most significant bits of S * V_hat."""
    q = s.q
    if v_hat.q != q:
        raise SecurityError(f"block length {v_hat.q} does not match seed degree {q}")
    if not 1 <= k <= q:
        raise SecurityError(f"message length k={k} outside [1, q={q}]")
    spec = spec or default_spec(q)
    prod = gf_mul(s.element, bits_to_element(v_hat.bits, q), spec)
    return Message(tuple(element_to_bits(prod)[:k]))


def sample_randomizer(length: int, rng: np.random.Generator) -> Randomizer:
    """length = q - k i.i.d. uniform bits from the given generator."""
    if length < 0:
        raise SecurityError("randomizer length must be >= 0")
    return Randomizer(tuple(int(x) for x in rng.integers(0, 2, size=length)))


def collision_probability(x1: SecuredBlock, x2: SecuredBlock, k: int,
                          spec: FieldSpec | None = None) -> Fraction:
    """Exact collision probability of the k-bit hash over uniform nonzero seeds.

    The hash indexed by seed S maps x to the k most significant bits of
    S * x; this is the 2-universality test oracle.
    """
    if x1.bits == x2.bits:
        raise SecurityError("collision probability requires distinct inputs")
    q = x1.q
    if x2.q != q:
        raise SecurityError("inputs must share the block length q")
    spec = spec or default_spec(q)
    diff = bits_to_element(x1.bits, q) ^ bits_to_element(x2.bits, q)
    hits = 0
    for s_val in range(1, 1 << q):
        prod = gf_mul(FieldElement(s_val, q), diff, spec)
        if prod.value >> (q - k) == 0:
            hits += 1
    return Fraction(hits, (1 << q) - 1)


def encoding_table(s: Seed, k: int, spec: FieldSpec | None = None) -> np.ndarray:
    """Vectorization helper: table[int(M||B)] = int(V), both MSB-first.

    Lets batch simulations map message/randomizer integers to secured-block
    integers with a single fancy-index.
    """
    q = s.q
    spec = spec or default_spec(q)
    s_inv = gf_inv(s.element, spec)
    table = np.empty(1 << q, dtype=np.int64)
    for x in range(1 << q):
        table[x] = gf_mul(s_inv, FieldElement(x, q), spec).value
    return table


def decoding_table(s: Seed, k: int, spec: FieldSpec | None = None) -> np.ndarray:
    """table[int(V)] = int(M): top k bits of S * V."""
    q = s.q
    spec = spec or default_spec(q)
    table = np.empty(1 << q, dtype=np.int64)
    for v in range(1 << q):
        prod = gf_mul(s.element, FieldElement(v, q), spec).value
        table[v] = prod >> (q - k)
    return table
