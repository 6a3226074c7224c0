#!/usr/bin/env python
"""Self-certified public keys.

A trusted authority (TA) publishes an RSA-type modulus n and a generator
g. A principal with identity I and private exponent s receives a witness
w such that

    w^h(I) + I = g^s  (mod n)

Anybody can rebuild the principal's public value g^s from (I, w) and no
certificate is needed: a wrong witness simply yields a different shared
key and the next MAC check fails.
"""

import collections
import logging
import struct

from Crypto.Util.number import GCD, bytes_to_long, getPrime, inverse, isPrime, long_to_bytes
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac

log = logging.getLogger(__name__)

SUPPORTED_BITS = (64, 512, 1024)

MAX_PRIME_ATTEMPTS = 20000
MAX_SALT = 1024

# Domain separation prefixes of the three hash functions.
PREFIX_h = b'\x01'
PREFIX_H = b'\x02'
PREFIX_H1 = b'\x03'

KEY_SIZE = 32


class ParameterError(RuntimeError):
    reason = 'parameter'


class PrimeGenerationError(RuntimeError):
    reason = 'prime-generation'


class NonInvertibleHashError(RuntimeError):
    reason = 'non-invertible-hash'


def _sha256(*chunks):
    digest = hashes.Hash(hashes.SHA256())
    for chunk in chunks:
        digest.update(chunk)
    return digest.finalize()


def _length_prefixed(parts):
    out = []
    for part in parts:
        if isinstance(part, str):
            part = part.encode('utf-8')
        elif isinstance(part, int):
            part = long_to_bytes(part)
        out.append(struct.pack('>I', len(part)))
        out.append(part)
    return b''.join(out)


class RandomStream(object):
    """Deterministic byte stream: SHA-256 in counter mode over (seed, label).

    Every principal draws from its own stream so that replaying the
    messages one principal receives reproduces exactly its choices.
    """

    def __init__(self, seed, label=''):
        if isinstance(seed, int):
            seed = str(seed)
        if isinstance(seed, str):
            seed = seed.encode('utf-8')
        self._key = _sha256(b'stream', _length_prefixed([seed, label]))
        self._counter = 0
        self._buffer = b''

    def read(self, size):
        while len(self._buffer) < size:
            self._buffer += _sha256(self._key, struct.pack('>Q', self._counter))
            self._counter += 1
        chunk, self._buffer = self._buffer[:size], self._buffer[size:]
        return chunk

    def randbelow(self, upper):
        if upper <= 0:
            raise ValueError("Upper bound must be positive: %r" % upper)
        nbits = upper.bit_length()
        nbytes = (nbits + 7) // 8
        while True:
            value = bytes_to_long(self.read(nbytes)) >> (nbytes * 8 - nbits)
            if value < upper:
                return value

    def randint(self, low, high):
        return low + self.randbelow(high - low + 1)

    def nonce(self, size=16):
        return self.read(size)


def h(data):
    """Identity/nonce hash into the exponent domain (integer)."""
    return bytes_to_long(_sha256(PREFIX_h, data))


def H(*parts):
    """Hash used for temporary identities: H(ID_MN || N_HA)."""
    return _sha256(PREFIX_H, _length_prefixed(parts))


def H1(value):
    """Key derivation hash: group element -> symmetric key."""
    return _sha256(PREFIX_H1, long_to_bytes(value))


def identity_exponent(identity, salt=0):
    return h(long_to_bytes(identity) + struct.pack('>I', salt))


def encode_identity(name, n):
    """Numeric encoding of a principal's name below the modulus."""
    value = bytes_to_long(name.encode('utf-8')) % n
    if value == 0:
        raise ParameterError("Identity '%s' encodes to zero mod n" % name)
    return value


class CryptoParams(object):
    """Public parameters of the TA. phi_n is only set on the TA's own copy."""

    def __init__(self, n, g, phi_n=None):
        self.n = n
        self.g = g
        self.phi_n = phi_n

    def public(self):
        return CryptoParams(self.n, self.g)

    def __eq__(self, other):
        return (self.n, self.g, self.phi_n) == (other.n, other.g, other.phi_n)

    def __repr__(self):
        return 'CryptoParams(n=%d bits, g=%d)' % (self.n.bit_length(), self.g)


Witness = collections.namedtuple('Witness', ['value', 'salt'])


class PrincipalKeys(object):

    def __init__(self, name, identity, private, witness):
        self.name = name
        self.identity = identity
        self.private = private
        self.witness = witness

    def __repr__(self):
        return 'PrincipalKeys(%s)' % self.name


def _safe_prime(bits, randfunc):
    for _ in range(MAX_PRIME_ATTEMPTS):
        sophie = getPrime(bits - 1, randfunc=randfunc)
        candidate = 2 * sophie + 1
        if isPrime(candidate, randfunc=randfunc):
            return candidate, sophie
    raise PrimeGenerationError("No %d-bit safe prime after %d attempts" %
                               (bits, MAX_PRIME_ATTEMPTS))


def ta_setup(security_bits, seed):
    """Generate the TA parameters, deterministically from `seed`.

    Keyword arguments:
    security_bits - size of the modulus n (int, one of SUPPORTED_BITS).
    seed - seed of the parameter generation (bytes/str/int).

    Return CryptoParams holding phi_n.
    """
    if security_bits not in SUPPORTED_BITS:
        raise ParameterError("Unsupported modulus size %r, use one of %s" %
                             (security_bits, SUPPORTED_BITS))

    stream = RandomStream(seed, 'ta-setup/%d' % security_bits)
    half = security_bits // 2

    p, p_sophie = _safe_prime(half, stream.read)
    q, q_sophie = _safe_prime(half, stream.read)
    while q == p:
        q, q_sophie = _safe_prime(half, stream.read)

    n = p * q
    phi_n = (p - 1) * (q - 1)

    # g is a square whose order is p'q', the largest subgroup of squares.
    for _ in range(MAX_PRIME_ATTEMPTS):
        x = stream.randint(2, n - 2)
        if GCD(x, n) != 1:
            continue
        g = pow(x, 2, n)
        if g != 1 and pow(g, p_sophie, n) != 1 and pow(g, q_sophie, n) != 1:
            break
    else:
        raise PrimeGenerationError("No generator found for n")

    log.debug("TA setup: %d-bit modulus", n.bit_length())
    return CryptoParams(n, g, phi_n)


def issue_witness_with_salt(params, identity, private, salt):
    if params.phi_n is None:
        raise ParameterError("Only the TA can issue witnesses")

    exponent = identity_exponent(identity, salt)
    if GCD(exponent, params.phi_n) != 1:
        raise NonInvertibleHashError("h(I) with salt %d is not invertible mod phi(n)" % salt)

    d = inverse(exponent, params.phi_n)
    base = (pow(params.g, private, params.n) - identity) % params.n
    return Witness(pow(base, d, params.n), salt)


def issue_witness(params, identity, private):
    """Issue w with w^h(I) + I = g^s (mod n), re-hashing with a salt until
    h(I) is invertible modulo phi(n)."""
    for salt in range(MAX_SALT):
        try:
            return issue_witness_with_salt(params, identity, private, salt)
        except NonInvertibleHashError:
            continue
    raise NonInvertibleHashError("No invertible identity hash for %d" % identity)


def issue_keys(params, name, stream):
    """Create a principal: private exponent from its stream, witness from the TA."""
    identity = encode_identity(name, params.n)
    private = stream.randint(2, params.n - 1)
    witness = issue_witness(params, identity, private)
    return PrincipalKeys(name, identity, private, witness)


def public_value(params, identity, witness):
    """Rebuild g^s of a principal from its identity and witness."""
    exponent = identity_exponent(identity, witness.salt)
    return (pow(witness.value, exponent, params.n) + identity) % params.n


def verify_self_certification(params, identity, private, witness):
    return public_value(params, identity, witness) == pow(params.g, private, params.n)


def derive_shared_key(params, my_private, peer_identity, peer_witness):
    """K = H1[(w_B^h(I_B) + I_B)^s_A mod n], the same for both parties."""
    shared = pow(public_value(params, peer_identity, peer_witness), my_private, params.n)
    return H1(shared)


def mac(key, message):
    tag = hmac.HMAC(key, hashes.SHA256())
    tag.update(message)
    return tag.finalize()


def verify_mac(key, message, tag):
    checker = hmac.HMAC(key, hashes.SHA256())
    checker.update(message)
    try:
        checker.verify(tag)
    except (InvalidSignature, TypeError):
        return False
    return True


def keystream_xor(key, nonce, data):
    """Encrypt/decrypt `data` with an HMAC-SHA256 keystream bound to `nonce`."""
    stream = b''
    counter = 0
    while len(stream) < len(data):
        stream += mac(key, b'key-transport' + nonce + struct.pack('>I', counter))
        counter += 1
    return bytes(a ^ b for a, b in zip(data, stream))
