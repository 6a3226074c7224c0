#!/usr/bin/env python
"""Wire transcripts of the registration and authentication exchanges.

A transcript starts with a header naming the world it was recorded in:

    # world seed=7 bits=64 ha=vhaha mn=alice home=hm1 fa=fa1 cn=cn1 coa=coa1

followed by one line per wire message:

    dir=FA->MN kind=Advertisement hex=... expect=accept

Verification rebuilds the world from the header and delivers every line,
in order, to the honest receiver. Lines may be replays, tampered copies
or forgeries; `expect=` states what the receiver should do with them.
"""

import binascii
import collections
import logging
import re

import registration
from registration import MessageKind, RegistrationMessage, RegistrationRejected

log = logging.getLogger(__name__)

HEADER_KEYS = ('seed', 'bits', 'ha', 'mn', 'home', 'fa', 'cn', 'coa')

# Sender and receiver role of every kind.
DIRECTIONS = {
    MessageKind.ADVERTISEMENT: ('FA', 'MN'),
    MessageKind.REQUEST: ('MN', 'FA'),
    MessageKind.FORWARDED_REQUEST: ('FA', 'HA'),
    MessageKind.REPLY: ('HA', 'FA'),
    MessageKind.INNER_REPLY: ('FA', 'MN'),
    MessageKind.AUTH_REQUEST: ('MN', 'HA'),
    MessageKind.FORWARDED_AUTH: ('HA', 'CN'),
    MessageKind.AUTH_RESPONSE: ('CN', 'MN'),
}

LINE_RE = re.compile(r'^dir=(?P<src>[^\s]+?)(->|→)(?P<dst>[^\s]+)\s+'
                     r'kind=(?P<kind>\w+)\s+hex=(?P<hex>[0-9a-fA-F]*)'
                     r'(\s+expect=(?P<expect>accept|reject(:[\w-]+)?))?\s*$')


class TranscriptError(RuntimeError):
    reason = 'transcript'


class TranscriptLine(object):

    def __init__(self, src, dst, kind, data, expect=None):
        self.src = src
        self.dst = dst
        self.kind = kind
        self.data = bytes(data)
        self.expect = expect

    def dump_string(self):
        line = 'dir=%s->%s kind=%s hex=%s' % (self.src, self.dst, self.kind.value,
                                             binascii.hexlify(self.data).decode('ascii'))
        if self.expect:
            line += ' expect=%s' % self.expect
        return line

    def flipped(self, bit, expect='reject'):
        """Copy of this line with one bit of the message inverted."""
        data = bytearray(self.data)
        data[bit // 8] ^= 0x80 >> (bit % 8)
        return TranscriptLine(self.src, self.dst, self.kind, data, expect)

    def replayed(self, expect='reject'):
        return TranscriptLine(self.src, self.dst, self.kind, self.data, expect)

    def message(self):
        return RegistrationMessage.from_bytes(self.data)


class Transcript(object):

    def __init__(self, world_spec, lines=()):
        self.world_spec = collections.OrderedDict(world_spec)
        self.lines = list(lines)

    def dump_string(self):
        header = '# world ' + ' '.join('%s=%s' % (k, self.world_spec[k]) for k in HEADER_KEYS)
        return '\n'.join([header] + [line.dump_string() for line in self.lines]) + '\n'

    def id_mn(self):
        return self.world_spec['mn']


def parse_transcript(text):
    world_spec = None
    lines = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        raw = raw.strip()
        if not raw:
            continue
        if raw.startswith('#'):
            words = raw.lstrip('#').split()
            if words and words[0] == 'world':
                world_spec = _parse_header(words[1:], lineno)
            continue

        match = LINE_RE.match(raw)
        if match is None:
            raise TranscriptError("line %d: malformed transcript line" % lineno)
        try:
            kind = MessageKind(match.group('kind'))
        except ValueError:
            raise TranscriptError("line %d: unknown kind '%s'" % (lineno, match.group('kind')))
        data = match.group('hex')
        if len(data) % 2:
            raise TranscriptError("line %d: odd-length hex" % lineno)
        lines.append(TranscriptLine(match.group('src'), match.group('dst'), kind,
                                    binascii.unhexlify(data), match.group('expect')))

    if world_spec is None:
        raise TranscriptError("transcript has no '# world' header")
    return Transcript(world_spec, lines)


def _parse_header(words, lineno):
    spec = collections.OrderedDict()
    for word in words:
        key, sep, value = word.partition('=')
        if not sep:
            raise TranscriptError("line %d: bad header item '%s'" % (lineno, word))
        spec[key] = value

    missing = [k for k in HEADER_KEYS if k not in spec]
    if missing:
        raise TranscriptError("line %d: header lacks %s" % (lineno, ', '.join(missing)))
    try:
        spec['seed'] = int(spec['seed'])
        spec['bits'] = int(spec['bits'])
    except ValueError:
        raise TranscriptError("line %d: seed and bits must be integers" % lineno)
    return spec


def _world(spec, ta_params=None):
    return registration.build_world(spec['seed'], spec['bits'], spec['ha'],
                                    fas=[spec['fa']], mns=[(spec['mn'], spec['home'])],
                                    cns=[spec['cn']], ta_params=ta_params)


def _line(kind, message):
    src, dst = DIRECTIONS[kind]
    return TranscriptLine(src, dst, kind, message.to_bytes(), 'accept')


def record_transcript(seed, security_bits, ha, id_mn, home, fa, cn, coa,
                      sessions=2, authenticate=True, ta_params=None):
    """Run honest exchanges and record every wire message.

    Keyword arguments:
    seed, security_bits - world parameters (int).
    ha, id_mn, home, fa, cn, coa - principal names (string).
    sessions - number of foreign registrations (int, default: 2).
    authenticate - append an MN <-> CN authentication (bool, default: True).
    ta_params - reuse TA parameters generated from the same seed (optional).

    Return Transcript.
    """
    spec = collections.OrderedDict([('seed', seed), ('bits', security_bits), ('ha', ha),
                                    ('mn', id_mn), ('home', home), ('fa', fa), ('cn', cn),
                                    ('coa', coa)])
    world = _world(spec, ta_params)
    fa_state, mn_state = world.fas[fa], world.mns[home]
    cn_state = world.cns[cn]
    lines = []

    for _ in range(sessions):
        adv = registration.fa_advertise(fa_state, coa)
        lines.append(_line(MessageKind.ADVERTISEMENT, adv))
        m2 = registration.mn_build_request(mn_state, adv)
        lines.append(_line(MessageKind.REQUEST, m2))
        m3 = registration.fa_forward_request(fa_state, m2)
        lines.append(_line(MessageKind.FORWARDED_REQUEST, m3))
        m4, _grant = registration.ha_process_request(world.ha, m3)
        lines.append(_line(MessageKind.REPLY, m4))
        m5 = registration.fa_process_reply(fa_state, m4)
        lines.append(_line(MessageKind.INNER_REPLY, m5))
        registration.mn_process_reply(mn_state, m5)

    if authenticate:
        a1 = registration.mn_auth_request(mn_state, cn)
        lines.append(_line(MessageKind.AUTH_REQUEST, a1))
        a2 = registration.ha_forward_auth(world.ha, a1)
        lines.append(_line(MessageKind.FORWARDED_AUTH, a2))
        a3 = registration.cn_process_auth(cn_state, a2)
        lines.append(_line(MessageKind.AUTH_RESPONSE, a3))
        registration.mn_process_auth_response(mn_state, a3)

    return Transcript(spec, lines)


Verdict = collections.namedtuple('Verdict', ['index', 'kind', 'outcome', 'reason', 'expect', 'ok'])


def _matches(expect, outcome, reason):
    if expect is None:
        return True
    if expect == 'accept':
        return outcome == 'accept'
    if expect == 'reject':
        return outcome == 'reject'
    return outcome == 'reject' and expect == 'reject:%s' % reason


def _deliver(world, spec, kind, message):
    fa = world.fas[spec['fa']]
    mn = world.mns[spec['home']]
    cn = world.cns[spec['cn']]

    if kind == MessageKind.ADVERTISEMENT:
        return registration.mn_build_request(mn, message)
    if kind == MessageKind.REQUEST:
        # The FA cannot check the MN. Its relay is judged by the home agent.
        m3 = registration.fa_forward_request(fa, message)
        registration.ha_authenticate_request(world.ha, m3)
        return m3
    if kind == MessageKind.FORWARDED_REQUEST:
        return registration.ha_process_request(world.ha, message)
    if kind == MessageKind.REPLY:
        return registration.fa_process_reply(fa, message)
    if kind == MessageKind.INNER_REPLY:
        return registration.mn_process_reply(mn, message)
    if kind == MessageKind.AUTH_REQUEST:
        return registration.ha_forward_auth(world.ha, message)
    if kind == MessageKind.FORWARDED_AUTH:
        return registration.cn_process_auth(cn, message)
    return registration.mn_process_auth_response(mn, message)


def _regenerate(world, spec, kind):
    """Let the originator of a first-of-exchange message create its state."""
    if kind == MessageKind.ADVERTISEMENT:
        registration.fa_advertise(world.fas[spec['fa']], spec['coa'])
    elif kind == MessageKind.AUTH_REQUEST:
        mn = world.mns[spec['home']]
        if mn.registered:
            registration.mn_auth_request(mn, spec['cn'])


def verify_transcript(transcript, ta_params=None):
    """Replay a transcript against honest principals.

    Return a list of Verdict, one per message line.
    """
    spec = transcript.world_spec
    world = _world(spec, ta_params)
    verdicts = []

    for index, line in enumerate(transcript.lines):
        _regenerate(world, spec, line.kind)
        try:
            message = line.message()
            if message.kind != line.kind:
                raise RegistrationRejected('malformed', "line says %s, bytes say %s" %
                                           (line.kind, message.kind))
            _deliver(world, spec, line.kind, message)
            outcome, reason = 'accept', None
        except RegistrationRejected as e:
            outcome, reason = 'reject', e.reason
            log.warning("line %d (%s) rejected: %s", index + 1, line.kind, e)
        verdicts.append(Verdict(index, line.kind, outcome, reason, line.expect,
                                _matches(line.expect, outcome, reason)))

    return verdicts


def find_identity_leaks(transcript):
    """Indexes of the lines whose bytes contain ID_MN in plain text."""
    needle = transcript.id_mn().encode('utf-8')
    return [i for i, line in enumerate(transcript.lines) if needle in line.data]


def message_sizes(transcript):
    """Serialized size of every wire leg, first occurrence only."""
    sizes = collections.OrderedDict()
    for line in transcript.lines:
        label = registration.WIRE_LABELS[line.kind]
        sizes.setdefault(label, len(line.data))
    return sizes
