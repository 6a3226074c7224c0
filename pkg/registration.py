#!/usr/bin/env python
"""Secure registration of a roaming MN through a foreign agent, and the
MN <-> CN authentication relayed by the MN's home agent.

Every principal is a plain state object. Handlers take the receiving
principal's state and a message, check it, update the state and return
the message to send next. A failed check raises RegistrationRejected.
"""

import collections
import copy
import enum
import logging
import struct

from Crypto.Util.number import bytes_to_long, long_to_bytes

import selfcert
from selfcert import H, RandomStream, Witness, derive_shared_key, encode_identity, h

log = logging.getLogger(__name__)

NONCE_SIZE = 16
# N_MN values a CN remembers before the oldest are forgotten.
REPLAY_WINDOW = 1024


class RegistrationRejected(RuntimeError):

    def __init__(self, reason, message=None):
        self.reason = reason
        super(RegistrationRejected, self).__init__(
            "%s: %s" % (reason, message) if message else reason)


class MessageKind(enum.Enum):
    ADVERTISEMENT = 'Advertisement'
    REQUEST = 'Request'
    FORWARDED_REQUEST = 'ForwardedRequest'
    REPLY = 'Reply'
    INNER_REPLY = 'InnerReply'
    AUTH_REQUEST = 'AuthRequest'
    FORWARDED_AUTH = 'ForwardedAuth'
    AUTH_RESPONSE = 'AuthResponse'

    def __str__(self):
        return self.value


# Wire leg of every kind, as the message list of the exchange names it.
WIRE_LABELS = collections.OrderedDict([
    (MessageKind.ADVERTISEMENT, 'AA1'),
    (MessageKind.REQUEST, 'R1'),
    (MessageKind.FORWARDED_REQUEST, 'R3'),
    (MessageKind.REPLY, 'R5'),
    (MessageKind.INNER_REPLY, 'R7'),
    (MessageKind.AUTH_REQUEST, 'A1'),
    (MessageKind.FORWARDED_AUTH, 'A2'),
    (MessageKind.AUTH_RESPONSE, 'A3'),
])

# Field order of every kind.
FIELDS = {
    MessageKind.ADVERTISEMENT: ('fa_id', 'mn_coa', 'n_fa', 'w_f'),
    MessageKind.REQUEST: ('key_request', 'fa_id', 'ha_id', 'mn_coa', 'n_ha',
                          'n_mn', 'n_fa', 'temp_id', 'w_h'),
    MessageKind.FORWARDED_REQUEST: ('m2', 'fa_id', 'w_f'),
    MessageKind.REPLY: ('m5', 'n_fa', 'key_blob'),
    MessageKind.INNER_REPLY: ('result', 'key_reply', 'mn_hm', 'ha_id', 'n_ha', 'n_mn'),
    MessageKind.AUTH_REQUEST: ('mn_coa', 'cn_coa', 'n_mn', 'w_mn'),
    MessageKind.FORWARDED_AUTH: ('a1', 'mn_hm', 'ha_id', 'w_h'),
    MessageKind.AUTH_RESPONSE: ('mn_coa', 'cn_coa', 'h_n_mn', 'cn_id', 'w_cn'),
}

# Type tag every field must carry.
FIELD_TAGS = {
    'fa_id': b's', 'mn_coa': b's', 'n_fa': b'b', 'w_f': b'w',
    'key_request': b'i', 'ha_id': b's', 'n_ha': b'b', 'n_mn': b'b',
    'temp_id': b'b', 'w_h': b'w', 'm2': b'm', 'm5': b'm',
    'key_blob': b'b', 'result': b's', 'key_reply': b'b', 'mn_hm': b's',
    'cn_coa': b's', 'w_mn': b'w', 'a1': b'm', 'h_n_mn': b'i',
    'cn_id': b's', 'w_cn': b'w',
}


def _pack(data):
    return struct.pack('>I', len(data)) + data


def _encode_value(value):
    if isinstance(value, RegistrationMessage):
        return b'm', value.to_bytes()
    if isinstance(value, Witness):
        return b'w', struct.pack('>I', value.salt) + long_to_bytes(value.value)
    if isinstance(value, bytes):
        return b'b', value
    if isinstance(value, str):
        return b's', value.encode('utf-8')
    if isinstance(value, int):
        if value < 0:
            raise ValueError("Negative integer field: %d" % value)
        return b'i', long_to_bytes(value)
    raise ValueError("Can't serialize field of type %s" % type(value).__name__)


def _decode_value(tag, data):
    if tag == b'm':
        return RegistrationMessage.from_bytes(data)
    if tag == b'w':
        if len(data) < 5:
            raise RegistrationRejected('malformed', "short witness")
        return Witness(bytes_to_long(data[4:]), struct.unpack('>I', data[:4])[0])
    if tag == b'b':
        return data
    if tag == b's':
        try:
            return data.decode('utf-8')
        except UnicodeDecodeError:
            raise RegistrationRejected('malformed', "bad string field")
    if tag == b'i':
        return bytes_to_long(data)
    raise RegistrationRejected('malformed', "unknown field tag %r" % tag)


class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.data):
            raise RegistrationRejected('malformed', "truncated message")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def take_packed(self):
        return self.take(struct.unpack('>I', self.take(4))[0])

    def done(self):
        return self.pos == len(self.data)


class RegistrationMessage(object):
    """A message of the registration or authentication exchange.

    The serialization is self-describing: the kind, then every field as
    (name, type tag, length-prefixed value) in the fixed field order. The
    MAC, if any, is computed over that serialization and appended.
    """

    def __init__(self, kind, fields, mac=None):
        self.kind = kind
        self.fields = collections.OrderedDict(fields)
        self.mac = mac

    def __getitem__(self, name):
        try:
            return self.fields[name]
        except KeyError:
            raise RegistrationRejected('malformed', "%s lacks field '%s'" % (self.kind, name))

    def label(self):
        return WIRE_LABELS[self.kind]

    def body(self):
        out = [_pack(self.kind.value.encode('ascii')), struct.pack('>H', len(self.fields))]
        for name, value in self.fields.items():
            tag, data = _encode_value(value)
            out.append(_pack(name.encode('ascii')))
            out.append(tag)
            out.append(_pack(data))
        return b''.join(out)

    def to_bytes(self):
        if self.mac is None:
            return self.body() + b'-'
        return self.body() + b'M' + _pack(self.mac)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(bytes(data))
        try:
            kind = MessageKind(reader.take_packed().decode('ascii'))
        except (ValueError, UnicodeDecodeError):
            raise RegistrationRejected('malformed', "unknown message kind")

        fields = collections.OrderedDict()
        for _ in range(struct.unpack('>H', reader.take(2))[0]):
            try:
                name = reader.take_packed().decode('ascii')
            except UnicodeDecodeError:
                raise RegistrationRejected('malformed', "bad field name")
            tag = reader.take(1)
            if FIELD_TAGS.get(name) != tag:
                raise RegistrationRejected('malformed', "field '%s' has tag %r" % (name, tag))
            fields[name] = _decode_value(tag, reader.take_packed())

        if tuple(fields) != FIELDS[kind]:
            raise RegistrationRejected('malformed', "%s has fields %s" % (kind, list(fields)))

        trailer = reader.take(1)
        if trailer == b'M':
            mac = reader.take_packed()
        elif trailer == b'-':
            mac = None
        else:
            raise RegistrationRejected('malformed', "bad MAC trailer")
        if not reader.done():
            raise RegistrationRejected('malformed', "trailing bytes")
        return cls(kind, fields, mac)

    def seal(self, key):
        self.mac = selfcert.mac(key, self.body())
        return self

    def verify(self, key):
        return self.mac is not None and selfcert.verify_mac(key, self.body(), self.mac)

    def __eq__(self, other):
        return isinstance(other, RegistrationMessage) and self.to_bytes() == other.to_bytes()

    def __repr__(self):
        return 'RegistrationMessage(%s, %d bytes)' % (self.kind, len(self.to_bytes()))


def _message(kind, **values):
    return RegistrationMessage(kind, [(name, values[name]) for name in FIELDS[kind]])


def _expect_kind(message, kind):
    if message.kind != kind:
        raise RegistrationRejected('malformed', "expected %s, got %s" % (kind, message.kind))


def _identity(name, params):
    try:
        return encode_identity(name, params.n)
    except selfcert.ParameterError as e:
        raise RegistrationRejected('malformed', str(e))


class MnHomeRecord(object):
    """Registration parameters of one MN: nonce, temporary ID and the key
    shared with the home agent."""

    def __init__(self, id_mn, nonce_ha, k_mn_ha, dynamic=False):
        self.id_mn = id_mn
        self.nonce_ha = nonce_ha
        self.temp_id = H(id_mn, nonce_ha)
        self.k_mn_ha = k_mn_ha
        self.dynamic = dynamic

    def __repr__(self):
        return 'MnHomeRecord(%s, %s)' % (self.temp_id.hex()[:12],
                                         'dynamic' if self.dynamic else 'initial')


class RegistryEntry(object):
    """What the home agent knows about one MN.

    `initial` is the record handed over at initial registration. It is
    retired once a dynamic record is confirmed. `confirmed` is the last
    dynamic record the MN proved to hold, `pending` the newest one issued.
    """

    def __init__(self, home, id_mn, initial):
        self.home = home
        self.id_mn = id_mn
        self.initial = initial
        self.confirmed = None
        self.pending = None
        # N_MN of requests under the live records. Cleared when they rotate.
        self.seen_nonces = set()
        # N_MN of authentication requests from the current CoA.
        self.auth_nonces = set()
        self.coa = None
        self.fa_id = None
        self.k_mn_fa = None
        self.sequence = 0

    @property
    def k_mn_ha(self):
        return self.initial.k_mn_ha if self.initial else self.confirmed.k_mn_ha

    def records(self):
        for record in (self.pending, self.confirmed, self.initial):
            if record is not None:
                yield record


RegistrationGrant = collections.namedtuple(
    'RegistrationGrant', ['mn_home', 'coa', 'fa_id', 'sequence', 'lookup'])


class HaRegistry(object):
    """Registration database of the home agent (initial and dynamic bases).

    Keyword arguments:
    name - identity of the Global HA address every MN registers with (string).
    keys - the group's self-certified keys (selfcert.PrincipalKeys).
    params - public TA parameters (selfcert.CryptoParams).
    stream - randomness of this replica (selfcert.RandomStream).
    directory - public (identity, witness) of known principals (dict).
    """

    def __init__(self, name, keys, params, stream, directory=None):
        self.name = name
        self.keys = keys
        self.params = params
        self.stream = stream
        self.directory = directory if directory is not None else {}
        self.entries = collections.OrderedDict()

    def lookup_temp_id(self, temp_id):
        for entry in self.entries.values():
            for record in entry.records():
                if record.temp_id == temp_id:
                    return entry, record
        raise RegistrationRejected('unknown-temp-id', "no record for %s" % temp_id.hex()[:12])

    def by_coa(self, coa):
        for entry in self.entries.values():
            if entry.coa == coa:
                return entry
        raise RegistrationRejected('unknown-coa', "no MN registered at '%s'" % coa)

    def export_entry(self, home):
        return copy.deepcopy(self.entries[home])

    def import_entry(self, entry):
        current = self.entries.get(entry.home)
        if current is not None and current.sequence > entry.sequence:
            log.debug("%s: ignoring older registry entry for %s", self.name, entry.home)
            return False
        self.entries[entry.home] = copy.deepcopy(entry)
        return True

    def export_all(self):
        return [self.export_entry(home) for home in self.entries]

    def replace_all(self, entries):
        self.entries = collections.OrderedDict((e.home, copy.deepcopy(e)) for e in entries)


class FaState(object):

    def __init__(self, name, keys, params, stream):
        self.name = name
        self.keys = keys
        self.params = params
        self.stream = stream
        # N_FA stays advertised until a reply for it authenticates.
        self.advertised = collections.OrderedDict()
        # N_FA -> every FaSession relayed for it, keyed by the request bytes.
        self.sessions = collections.OrderedDict()
        self.visitors = collections.OrderedDict()


FaSession = collections.namedtuple('FaSession', ['k_fa_ha', 'mn_coa'])


class MnState(object):

    def __init__(self, home, id_mn, keys, params, stream, record, ha_id, ha_witness):
        self.home = home
        self.id_mn = id_mn
        self.keys = keys
        self.params = params
        self.stream = stream
        self.record = record
        self.ha_id = ha_id
        self.ha_witness = ha_witness
        self.coa = None
        self.fa_id = None
        self.pending_nonce = None
        self.k_mn_fa = None
        self.registered = False
        self.auth_pending = collections.OrderedDict()
        self.cn_keys = collections.OrderedDict()


class CnState(object):

    def __init__(self, name, keys, params, stream):
        self.name = name
        self.keys = keys
        self.params = params
        self.stream = stream
        self.seen_nonces = collections.OrderedDict()
        self.sessions = collections.OrderedDict()


def initial_registration(ha, id_mn, home):
    """Register an MN with its home network over the trusted channel.

    Return the MnHomeRecord to hand over to the MN.
    """
    if home in ha.entries or any(e.id_mn == id_mn for e in ha.entries.values()):
        raise RegistrationRejected('duplicate-identity', "MN '%s' is already registered" % home)

    record = MnHomeRecord(id_mn, ha.stream.nonce(NONCE_SIZE), ha.stream.read(selfcert.KEY_SIZE))
    ha.entries[home] = RegistryEntry(home, id_mn, record)
    log.debug("%s: initial registration of %s", ha.name, home)
    return copy.copy(record)


def fa_advertise(fa, mn_coa):
    n_fa = fa.stream.nonce(NONCE_SIZE)
    fa.advertised[n_fa] = mn_coa
    return _message(MessageKind.ADVERTISEMENT, fa_id=fa.name, mn_coa=mn_coa,
                    n_fa=n_fa, w_f=fa.keys.witness)


def mn_build_request(mn, adv):
    """Answer an agent advertisement with a registration request (R1)."""
    _expect_kind(adv, MessageKind.ADVERTISEMENT)

    mn.coa = adv['mn_coa']
    mn.fa_id = adv['fa_id']
    mn.pending_nonce = mn.stream.nonce(NONCE_SIZE)

    m2 = _message(MessageKind.REQUEST, key_request=1, fa_id=mn.fa_id, ha_id=mn.ha_id,
                  mn_coa=mn.coa, n_ha=mn.record.nonce_ha, n_mn=mn.pending_nonce,
                  n_fa=adv['n_fa'], temp_id=mn.record.temp_id, w_h=mn.ha_witness)
    return m2.seal(mn.record.k_mn_ha)


def fa_forward_request(fa, m2):
    """Check the FA nonce of a request and relay it to the home agent (R3)."""
    _expect_kind(m2, MessageKind.REQUEST)

    n_fa = m2['n_fa']
    if n_fa not in fa.advertised:
        raise RegistrationRejected('stale-nonce', "N_FA was not advertised by '%s'" % fa.name)
    if m2['fa_id'] != fa.name:
        raise RegistrationRejected('fa-id-mismatch', "request names FA '%s'" % m2['fa_id'])
    if m2['mn_coa'] != fa.advertised[n_fa]:
        raise RegistrationRejected('stale-nonce', "N_FA was advertised for CoA '%s'" %
                                   fa.advertised[n_fa])
    data = m2.to_bytes()
    relayed = fa.sessions.setdefault(n_fa, collections.OrderedDict())
    if data in relayed:
        raise RegistrationRejected('replayed-nonce', "request was already relayed by '%s'" %
                                   fa.name)

    ha_identity = _identity(m2['ha_id'], fa.params)
    k_fa_ha = derive_shared_key(fa.params, fa.keys.private, ha_identity, m2['w_h'])
    relayed[data] = FaSession(k_fa_ha, m2['mn_coa'])

    m3 = _message(MessageKind.FORWARDED_REQUEST, m2=m2, fa_id=fa.name, w_f=fa.keys.witness)
    return m3.seal(k_fa_ha)


def ha_authenticate_request(ha, m3):
    """Check a forwarded request without changing the registry.

    Return (entry, record, k_fa_ha). Raise RegistrationRejected.
    """
    _expect_kind(m3, MessageKind.FORWARDED_REQUEST)
    m2 = m3['m2']
    _expect_kind(m2, MessageKind.REQUEST)

    fa_id = m3['fa_id']
    if m2['fa_id'] != fa_id:
        raise RegistrationRejected('fa-id-mismatch', "R1 names '%s', R3 comes from '%s'" %
                                   (m2['fa_id'], fa_id))

    fa_identity = _identity(fa_id, ha.params)
    k_fa_ha = derive_shared_key(ha.params, ha.keys.private, fa_identity, m3['w_f'])
    if not m3.verify(k_fa_ha):
        raise RegistrationRejected('bad-fa-mac', "FA '%s' failed authentication" % fa_id)

    entry, record = ha.lookup_temp_id(m2['temp_id'])
    if not m2.verify(record.k_mn_ha):
        raise RegistrationRejected('bad-mn-mac', "MN '%s' failed authentication" % entry.home)
    if m2['n_ha'] != record.nonce_ha:
        raise RegistrationRejected('stale-nonce', "N_HA does not match the record")

    if m2['n_mn'] in entry.seen_nonces:
        raise RegistrationRejected('replayed-nonce', "N_MN of '%s' was used before" % entry.home)
    return entry, record, k_fa_ha


def ha_process_request(ha, m3):
    """Authenticate the FA and the MN and issue fresh parameters (R4/R5).

    Keyword arguments:
    ha - the home agent registry (HaRegistry).
    m3 - forwarded request (RegistrationMessage).

    Return (reply M4, RegistrationGrant).
    """
    entry, record, k_fa_ha = ha_authenticate_request(ha, m3)
    m2 = m3['m2']
    fa_id = m3['fa_id']
    n_mn = m2['n_mn']

    lookup = 'dynamic' if record.dynamic else 'initial'
    if record is entry.pending:
        # Older records are retired, their nonces can no longer be replayed.
        entry.confirmed = entry.pending
        entry.initial = None
        entry.seen_nonces.clear()
    entry.seen_nonces.add(n_mn)
    if entry.coa != m2['mn_coa']:
        entry.auth_nonces.clear()

    k_mn_ha = record.k_mn_ha
    entry.pending = MnHomeRecord(entry.id_mn, ha.stream.nonce(NONCE_SIZE), k_mn_ha, dynamic=True)
    k_mn_fa = ha.stream.read(selfcert.KEY_SIZE)
    entry.coa = m2['mn_coa']
    entry.fa_id = fa_id
    entry.k_mn_fa = k_mn_fa
    entry.sequence += 1

    m5 = _message(MessageKind.INNER_REPLY, result='accept',
                  key_reply=selfcert.keystream_xor(k_mn_ha, n_mn, k_mn_fa),
                  mn_hm=entry.home, ha_id=ha.name, n_ha=entry.pending.nonce_ha, n_mn=n_mn)
    m5.seal(k_mn_ha)

    n_fa = m2['n_fa']
    m4 = _message(MessageKind.REPLY, m5=m5, n_fa=n_fa,
                  key_blob=selfcert.keystream_xor(k_fa_ha, n_fa, k_mn_fa))
    m4.seal(k_fa_ha)

    log.debug("%s: accepted %s at %s (%s lookup)", ha.name, entry.home, entry.coa, lookup)
    return m4, RegistrationGrant(entry.home, entry.coa, fa_id, entry.sequence, lookup)


def fa_process_reply(fa, m4):
    """Authenticate the home agent, take the session key, relay M5 (R6/R7)."""
    _expect_kind(m4, MessageKind.REPLY)

    n_fa = m4['n_fa']
    relayed = fa.sessions.get(n_fa)
    if not relayed:
        raise RegistrationRejected('stale-nonce', "no request pending for this N_FA")
    session = next((s for s in relayed.values() if m4.verify(s.k_fa_ha)), None)
    if session is None:
        raise RegistrationRejected('bad-ha-mac', "reply to '%s' failed authentication" % fa.name)
    del fa.sessions[n_fa]
    fa.advertised.pop(n_fa, None)

    fa.visitors[session.mn_coa] = selfcert.keystream_xor(session.k_fa_ha, n_fa, m4['key_blob'])
    return m4['m5']


def mn_process_reply(mn, m5):
    """Authenticate the home agent and rotate to the fresh parameters (R8)."""
    _expect_kind(m5, MessageKind.INNER_REPLY)

    if mn.pending_nonce is None or m5['n_mn'] != mn.pending_nonce:
        raise RegistrationRejected('stale-nonce', "N_MN does not match the pending request")
    k_mn_ha = mn.record.k_mn_ha
    if not m5.verify(k_mn_ha):
        raise RegistrationRejected('bad-ha-mac', "reply to '%s' failed authentication" % mn.home)

    mn.pending_nonce = None
    mn.k_mn_fa = selfcert.keystream_xor(k_mn_ha, m5['n_mn'], m5['key_reply'])
    mn.record = MnHomeRecord(mn.id_mn, m5['n_ha'], k_mn_ha, dynamic=True)
    mn.registered = True
    return m5['result']


def mn_auth_request(mn, cn_coa):
    """Start the authentication with a CN through the MN's home agent (A1)."""
    if not mn.registered:
        raise ValueError("MN '%s' must register before authenticating" % mn.home)

    n_mn = mn.stream.nonce(NONCE_SIZE)
    mn.auth_pending[h(n_mn)] = n_mn
    a1 = _message(MessageKind.AUTH_REQUEST, mn_coa=mn.coa, cn_coa=cn_coa, n_mn=n_mn,
                  w_mn=mn.keys.witness)
    return a1.seal(mn.record.k_mn_ha)


def ha_forward_auth(ha, a1):
    """Authenticate the MN's request and relay it to the CN (A2)."""
    _expect_kind(a1, MessageKind.AUTH_REQUEST)

    entry = ha.by_coa(a1['mn_coa'])
    if not a1.verify(entry.k_mn_ha):
        raise RegistrationRejected('bad-mn-mac', "auth request of '%s'" % entry.home)
    if a1['n_mn'] in entry.auth_nonces:
        raise RegistrationRejected('replayed-nonce', "N_MN of '%s' was used before" % entry.home)
    entry.auth_nonces.add(a1['n_mn'])

    cn_coa = a1['cn_coa']
    if cn_coa not in ha.directory:
        raise RegistrationRejected('unknown-coa', "no CN known at '%s'" % cn_coa)
    cn_identity, cn_witness = ha.directory[cn_coa]
    k_ha_cn = derive_shared_key(ha.params, ha.keys.private, cn_identity, cn_witness)

    a2 = _message(MessageKind.FORWARDED_AUTH, a1=a1, mn_hm=entry.home, ha_id=ha.name,
                  w_h=ha.keys.witness)
    return a2.seal(k_ha_cn)


def cn_process_auth(cn, a2):
    """Authenticate the relaying HA, derive K_CN-MN and answer the MN (A3)."""
    _expect_kind(a2, MessageKind.FORWARDED_AUTH)

    ha_identity = _identity(a2['ha_id'], cn.params)
    k_ha_cn = derive_shared_key(cn.params, cn.keys.private, ha_identity, a2['w_h'])
    if not a2.verify(k_ha_cn):
        raise RegistrationRejected('bad-ha-mac', "relay to '%s' failed authentication" % cn.name)

    a1 = a2['a1']
    _expect_kind(a1, MessageKind.AUTH_REQUEST)
    if a1['cn_coa'] != cn.name:
        raise RegistrationRejected('unknown-coa', "request for '%s' reached '%s'" %
                                   (a1['cn_coa'], cn.name))
    n_mn = a1['n_mn']
    if n_mn in cn.seen_nonces:
        raise RegistrationRejected('replayed-nonce', "N_MN was used before at '%s'" % cn.name)
    cn.seen_nonces[n_mn] = a1['mn_coa']
    while len(cn.seen_nonces) > REPLAY_WINDOW:
        cn.seen_nonces.popitem(last=False)

    mn_identity = _identity(a2['mn_hm'], cn.params)
    k_cn_mn = derive_shared_key(cn.params, cn.keys.private, mn_identity, a1['w_mn'])
    cn.sessions[a1['mn_coa']] = k_cn_mn

    a3 = _message(MessageKind.AUTH_RESPONSE, mn_coa=a1['mn_coa'], cn_coa=cn.name,
                  h_n_mn=h(n_mn), cn_id=cn.name, w_cn=cn.keys.witness)
    return a3.seal(k_cn_mn)


def mn_process_auth_response(mn, a3):
    """Authenticate the CN and keep K_CN-MN (A4). Return the key."""
    _expect_kind(a3, MessageKind.AUTH_RESPONSE)

    if a3['h_n_mn'] not in mn.auth_pending:
        raise RegistrationRejected('stale-nonce', "no authentication pending for this nonce")

    cn_identity = _identity(a3['cn_id'], mn.params)
    k_cn_mn = derive_shared_key(mn.params, mn.keys.private, cn_identity, a3['w_cn'])
    if not a3.verify(k_cn_mn):
        raise RegistrationRejected('bad-cn-mac', "response of '%s' failed authentication" %
                                   a3['cn_id'])

    del mn.auth_pending[a3['h_n_mn']]
    mn.cn_keys[a3['cn_id']] = k_cn_mn
    return k_cn_mn


def mn_cn_authenticate(mn, ha, cn):
    """Run A1-A4 between an MN and a CN through the MN's home agent.

    Keyword arguments:
    mn - a registered mobile node (MnState).
    ha - the MN's Active home agent (HaRegistry).
    cn - the correspondent node (CnState).

    Return K_CN-MN as computed by the MN.
    """
    a1 = mn_auth_request(mn, cn.name)
    a3 = cn_process_auth(cn, ha_forward_auth(ha, a1))
    return mn_process_auth_response(mn, a3)


class World(object):
    """Every principal of one security domain, set up by a single TA."""

    def __init__(self, seed, security_bits, ta_params, ha, fas, mns, cns):
        self.seed = seed
        self.security_bits = security_bits
        self.ta_params = ta_params
        self.params = ta_params.public()
        self.ha = ha
        self.fas = fas
        self.mns = mns
        self.cns = cns


def build_world(seed, security_bits, ha_name, fas=(), mns=(), cns=(), ta_params=None):
    """Run TA setup, key issuance and the initial registration of every MN.

    Keyword arguments:
    seed - seed of every randomness stream (int).
    security_bits - modulus size (int).
    ha_name - identity of the Global HA address (string).
    fas - FA names (iterable of strings).
    mns - (ID_MN, home address) pairs (iterable).
    cns - CN names, equal to their addresses (iterable of strings).
    ta_params - reuse already generated TA parameters (CryptoParams, optional).

    Return World.
    """
    if ta_params is None:
        ta_params = selfcert.ta_setup(security_bits, seed)
    params = ta_params.public()

    def stream(name):
        return RandomStream(seed, 'principal/%s' % name)

    def keys(name):
        return selfcert.issue_keys(ta_params, name, stream('keys/%s' % name))

    ha_keys = keys(ha_name)
    fa_states = collections.OrderedDict(
        (name, FaState(name, keys(name), params, stream(name))) for name in fas)
    cn_states = collections.OrderedDict(
        (name, CnState(name, keys(name), params, stream(name))) for name in cns)

    directory = {name: (cn.keys.identity, cn.keys.witness) for name, cn in cn_states.items()}
    ha = HaRegistry(ha_name, ha_keys, params, stream(ha_name), directory)

    mn_states = collections.OrderedDict()
    for id_mn, home in mns:
        record = initial_registration(ha, id_mn, home)
        mn_states[home] = MnState(home, id_mn, keys(home), params, stream(home), record,
                                  ha_name, ha_keys.witness)

    return World(seed, security_bits, ta_params, ha, fa_states, mn_states, cn_states)
