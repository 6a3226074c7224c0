#!/usr/bin/env python
"""Scenario files: the configuration of one simulated run.

    # intra-link failure of the Active HA
    [scenario]
    mode = vhaha
    heartbeat_period = 0.1
    duration = 12
    backups = 1

    [ha ha1]
    link = 1
    role = active

    [edges]
    link1 -- link2 = 0.005

    [events]
    10 = fail ha1

Times and delays are written in seconds and kept in microseconds.
"""

import collections
import copy
import logging
import re

import selfcert
import simnet
from hacore import HaId, HaRole

log = logging.getLogger(__name__)

MODES = ('vhaha', 'single_link_redundancy', 'no_redundancy')

SECTION_RE = re.compile(r'^\[(?P<kind>[a-z]+)(\s+(?P<name>[^\s\]]+))?\]$')
EDGE_RE = re.compile(r'^(?P<a>\S+)\s+--\s+(?P<b>\S+)\s*=\s*(?P<delay>\S+)$')
KEY_RE = re.compile(r'^(?P<key>[a-z_]+)\s*=\s*(?P<value>.*)$')

EVENT_ARITY = {
    'register': (2, 3),
    'authenticate': (2, 2),
    'fail': (1, 2),
    'fail-link': (1, 1),
    'recover': (1, 1),
}


class ScenarioError(RuntimeError):
    """Every problem found in a scenario, as (line, message) pairs."""
    reason = 'scenario'

    def __init__(self, problems):
        self.problems = sorted(problems, key=lambda p: (p[0] or 0, p[1]))
        super(ScenarioError, self).__init__('\n'.join(
            'line %s: %s' % (line or '-', message) for line, message in self.problems))


def _seconds(value):
    us = simnet.seconds_to_us(value)
    if us < 0:
        raise ValueError("negative time '%s'" % value)
    return us


def _positive_int(value):
    number = int(value)
    if number <= 0:
        raise ValueError("'%s' is not positive" % value)
    return number


def _yes_no(value):
    if value not in ('yes', 'no'):
        raise ValueError("expected yes or no, got '%s'" % value)
    return value == 'yes'


def _role(value):
    role = HaRole(value)
    if role == HaRole.FAILED:
        raise ValueError("an HA can't start failed")
    return role


def _fmt_time(us):
    return simnet.format_time(us)


def _fmt_yes_no(value):
    return 'yes' if value else 'no'


class Section(object):
    """Keyed values of one `[kind NAME]` block with their line numbers."""

    KEYS = collections.OrderedDict()

    def __init__(self, name=None, line=None):
        self.name = name
        self.line = line
        self.lines = {}
        for key, (_parse, _dump, default) in self.KEYS.items():
            setattr(self, key, default)

    def set(self, key, raw, line, problems):
        if key not in self.KEYS:
            problems.append((line, "unknown key '%s'" % key))
            return
        parse = self.KEYS[key][0]
        try:
            setattr(self, key, parse(raw))
        except ValueError as e:
            problems.append((line, "bad value for '%s': %s" % (key, e)))
            return
        self.lines[key] = line

    def line_of(self, key):
        return self.lines.get(key, self.line)

    def dump_lines(self):
        result = []
        for key, (_parse, dump, _default) in self.KEYS.items():
            value = getattr(self, key)
            if value is not None:
                result.append('%s = %s' % (key, dump(value)))
        return result

    def __eq__(self, other):
        return type(self) == type(other) and self.name == other.name and \
            self.dump_lines() == other.dump_lines()

    def __ne__(self, other):
        return not (self == other)


class Settings(Section):
    KEYS = collections.OrderedDict([
        ('mode', (str, str, 'vhaha')),
        ('seed', (int, str, 0)),
        ('duration', (_seconds, _fmt_time, 10 * simnet.US_PER_SEC)),
        ('heartbeat_period', (_seconds, _fmt_time, 100000)),
        ('backups', (int, str, None)),
        ('security_bits', (int, str, 64)),
        ('mn_timeout', (_seconds, _fmt_time, None)),
        ('promotion_delay', (_seconds, _fmt_time, None)),
        ('processing_delay', (_seconds, _fmt_time, 1)),
        ('lan_delay', (_seconds, _fmt_time, 0)),
        ('jitter', (_seconds, _fmt_time, 0)),
        ('heartbeat_loss', (float, repr, 0.0)),
        ('binding_lifetime', (_seconds, _fmt_time, 600 * simnet.US_PER_SEC)),
        ('global_address', (str, str, 'global-ha')),
    ])


class HaSpec(Section):
    KEYS = collections.OrderedDict([
        ('link', (_positive_int, str, None)),
        ('address', (str, str, None)),
        ('role', (_role, str, HaRole.INACTIVE)),
        ('bindings_max', (_positive_int, str, 100)),
        ('throughput_max', (float, repr, 1000.0)),
        ('member', (_yes_no, _fmt_yes_no, True)),
    ])

    def ha_id(self):
        return HaId(self.link, self.address)


class NodeSpec(Section):
    KEYS = collections.OrderedDict()


class MnSpec(Section):
    KEYS = collections.OrderedDict([
        ('id', (str, str, None)),
        ('home', (str, str, None)),
        ('fa', (str, str, None)),
        ('coa', (str, str, None)),
        ('ota_delay', (_seconds, _fmt_time, 2000)),
    ])


class CnSpec(Section):
    KEYS = collections.OrderedDict([
        ('mn', (str, str, None)),
        ('rate', (float, repr, None)),
        ('start', (_seconds, _fmt_time, simnet.US_PER_SEC)),
        ('stop', (_seconds, _fmt_time, None)),
        ('payload', (_positive_int, str, 64)),
    ])


EdgeSpec = collections.namedtuple('EdgeSpec', ['a', 'b', 'delay', 'line'])


class EventSpec(collections.namedtuple('EventSpec', ['at', 'action', 'args', 'line'])):

    def dump_string(self):
        return '%s = %s' % (_fmt_time(self.at), ' '.join((self.action,) + self.args))


SECTION_KINDS = collections.OrderedDict([
    ('ha', HaSpec),
    ('fa', NodeSpec),
    ('router', NodeSpec),
    ('mn', MnSpec),
    ('cn', CnSpec),
])


class ScenarioConfig(object):
    """A parsed and validated scenario."""

    def __init__(self):
        self.settings = Settings()
        self.has = collections.OrderedDict()
        self.fas = collections.OrderedDict()
        self.routers = collections.OrderedDict()
        self.mns = collections.OrderedDict()
        self.cns = collections.OrderedDict()
        self.edges = []
        self.events = []

    def __getattr__(self, name):
        # Scenario settings read as plain attributes: config.heartbeat_period.
        if name != 'settings' and name in Settings.KEYS:
            return getattr(self.settings, name)
        raise AttributeError(name)

    def sections(self, kind):
        return {'ha': self.has, 'fa': self.fas, 'router': self.routers,
                'mn': self.mns, 'cn': self.cns}[kind]

    def with_mode(self, mode):
        if mode not in MODES:
            raise ValueError("Unknown mode '%s'" % mode)
        other = copy.deepcopy(self)
        other.settings.mode = mode
        return other

    def with_seed(self, seed):
        other = copy.deepcopy(self)
        other.settings.seed = seed
        return other

    def active(self):
        for spec in self.has.values():
            if spec.role == HaRole.ACTIVE:
                return spec
        return None

    def members(self, mode=None):
        """HAs sharing the Global HA address in `mode`."""
        mode = mode or self.mode
        candidates = [s for s in self.has.values() if s.member]
        active = self.active()
        if mode == 'no_redundancy':
            return [active]
        if mode == 'single_link_redundancy':
            return [s for s in candidates if s.link == active.link]
        return candidates

    def node_names(self):
        names = list(self.has) + list(self.fas) + list(self.routers) + list(self.cns)
        names.extend(simnet.link_router(link) for link in self.links())
        return names

    def links(self):
        return sorted({spec.link for spec in self.has.values() if spec.link is not None})


def build_topology(config):
    """Static topology of a scenario. MNs attach when they register."""
    topology = simnet.Topology()
    for name, spec in config.has.items():
        topology.add_ha(name, spec.ha_id())
        topology.add_edge(name, simnet.link_router(spec.link), config.lan_delay)
    for name in config.fas:
        topology.add_node(name, 'fa')
    for name in config.routers:
        topology.add_node(name, 'router')
    for name in config.cns:
        topology.add_node(name, 'cn')
    for name in config.mns:
        topology.add_node(name, 'mn')
    for edge in config.edges:
        topology.add_edge(edge.a, edge.b, edge.delay)
    return topology


def parse_scenario(text):
    """Parse and validate a scenario file.

    Keyword arguments:
    text - scenario file content (string).

    Return ScenarioConfig. Raise ScenarioError listing every problem.
    """
    config = ScenarioConfig()
    problems = []
    section = None

    for lineno, raw in enumerate(text.split('\n'), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue

        match = SECTION_RE.match(line)
        if match:
            section = _open_section(config, match.group('kind'), match.group('name'),
                                    lineno, problems)
            continue

        if section is None:
            problems.append((lineno, "'%s' outside of any section" % line))
        elif section == 'edges':
            _parse_edge(config, line, lineno, problems)
        elif section == 'events':
            _parse_event(config, line, lineno, problems)
        elif section == 'invalid':
            continue
        else:
            match = KEY_RE.match(line)
            if match is None:
                problems.append((lineno, "expected 'key = value', got '%s'" % line))
                continue
            section.set(match.group('key'), match.group('value').strip(), lineno, problems)

    if not problems:
        _fill_defaults(config)
        problems.extend(validate(config))
    if problems:
        raise ScenarioError(problems)
    return config


def _open_section(config, kind, name, lineno, problems):
    if kind == 'scenario' and name is None:
        return config.settings
    if kind in ('edges', 'events') and name is None:
        return kind
    if kind not in SECTION_KINDS:
        problems.append((lineno, "unknown section '%s'" % kind))
        return 'invalid'
    if name is None:
        problems.append((lineno, "section '%s' needs a name" % kind))
        return 'invalid'
    if name in config.node_names() or name in config.mns:
        problems.append((lineno, "node '%s' is declared twice" % name))
        return 'invalid'

    spec = SECTION_KINDS[kind](name, lineno)
    config.sections(kind)[name] = spec
    return spec


def _parse_edge(config, line, lineno, problems):
    match = EDGE_RE.match(line)
    if match is None:
        problems.append((lineno, "expected 'A -- B = delay', got '%s'" % line))
        return
    try:
        delay = _seconds(match.group('delay'))
    except ValueError as e:
        problems.append((lineno, "bad edge delay: %s" % e))
        return
    config.edges.append(EdgeSpec(match.group('a'), match.group('b'), delay, lineno))


def _parse_event(config, line, lineno, problems):
    at, sep, action = line.partition('=')
    words = action.split()
    if not sep or not words:
        problems.append((lineno, "expected '<time> = <action> ...', got '%s'" % line))
        return
    try:
        at = _seconds(at.strip())
    except ValueError as e:
        problems.append((lineno, "bad event time: %s" % e))
        return

    action, args = words[0], tuple(words[1:])
    if action not in EVENT_ARITY:
        problems.append((lineno, "unknown action '%s'" % action))
        return
    low, high = EVENT_ARITY[action]
    if not low <= len(args) <= high:
        problems.append((lineno, "'%s' takes %s arguments" %
                         (action, low if low == high else '%d to %d' % (low, high))))
        return
    if action == 'fail' and len(args) == 2 and args[1] != 'permanent':
        problems.append((lineno, "expected 'fail HA [permanent]'"))
        return
    config.events.append(EventSpec(at, action, args, lineno))


def _fill_defaults(config):
    settings = config.settings
    if settings.mn_timeout is None:
        settings.mn_timeout = 10 * settings.heartbeat_period
    if settings.promotion_delay is None:
        settings.promotion_delay = settings.heartbeat_period
    for name, spec in config.has.items():
        if spec.address is None:
            spec.address = name
    for name, spec in config.mns.items():
        if spec.id is None:
            spec.id = name
        if spec.coa is None and spec.fa is not None:
            spec.coa = '%s.%s' % (name, spec.fa)
    for spec in config.cns.values():
        if spec.stop is None:
            spec.stop = settings.duration
    config.events.sort(key=lambda e: e.at)


def validate(config):
    """Return the semantic problems of a filled-in config."""
    problems = []
    settings = config.settings

    def fail(line, message):
        problems.append((line, message))

    if settings.mode not in MODES:
        fail(settings.line_of('mode'), "unknown mode '%s'" % settings.mode)
    if settings.security_bits not in selfcert.SUPPORTED_BITS:
        fail(settings.line_of('security_bits'), "security_bits must be one of %s" %
             ', '.join(str(b) for b in selfcert.SUPPORTED_BITS))
    for key in ('duration', 'heartbeat_period', 'mn_timeout', 'binding_lifetime'):
        if getattr(settings, key) <= 0:
            fail(settings.line_of(key), "%s must be positive" % key)
    if not 0 <= settings.heartbeat_loss < 1:
        fail(settings.line_of('heartbeat_loss'), "heartbeat_loss must be in [0, 1)")

    for name, spec in config.has.items():
        if spec.link is None:
            fail(spec.line, "HA '%s' has no link" % name)
        if spec.throughput_max <= 0:
            fail(spec.line_of('throughput_max'), "throughput_max must be positive")
    if problems:
        return problems

    addresses = collections.Counter(spec.address for spec in config.has.values())
    for address, count in addresses.items():
        if count > 1:
            fail(None, "HA address '%s' is used %d times" % (address, count))

    actives = [s for s in config.has.values() if s.role == HaRole.ACTIVE]
    if len(actives) != 1:
        fail(None, "exactly one Active HA is needed, found %d" % len(actives))
    elif not actives[0].member:
        fail(actives[0].line_of('member'), "the Active HA must be a member")
    backups = [s for s in config.has.values() if s.role == HaRole.BACKUP]
    if settings.backups is None:
        fail(settings.line, "'backups' is required")
    elif settings.backups != len(backups):
        fail(settings.line_of('backups'), "backups = %d but %d Backup HAs are configured" %
             (settings.backups, len(backups)))
    for spec in backups:
        if not spec.member:
            fail(spec.line_of('member'), "Backup HA '%s' must be a member" % spec.name)

    if settings.mode == 'vhaha':
        links = {s.link for s in config.has.values() if s.member}
        if len(links) < 2:
            fail(settings.line_of('mode'), "vhaha mode needs HAs on at least 2 home links")

    nodes = set(config.node_names())
    for edge in config.edges:
        for end in (edge.a, edge.b):
            if end not in nodes:
                fail(edge.line, "edge endpoint '%s' is not declared" % end)

    for name, spec in config.mns.items():
        for key in ('home', 'fa'):
            if getattr(spec, key) is None:
                fail(spec.line, "MN '%s' has no %s" % (name, key))
        if spec.fa is not None and spec.fa not in config.fas:
            fail(spec.line_of('fa'), "MN '%s' registers through unknown FA '%s'" % (name, spec.fa))
    homes = collections.Counter(spec.home for spec in config.mns.values())
    for home, count in homes.items():
        if home is not None and count > 1:
            fail(None, "home address '%s' is used by %d MNs" % (home, count))

    for name, spec in config.cns.items():
        if spec.mn not in config.mns:
            fail(spec.line_of('mn'), "CN '%s' talks to unknown MN '%s'" % (name, spec.mn))
        if spec.rate is None or spec.rate <= 0:
            fail(spec.line_of('rate'), "CN '%s' needs a positive rate" % name)
        if spec.stop < spec.start:
            fail(spec.line_of('stop'), "CN '%s' stops before it starts" % name)

    if not problems:
        topology = build_topology(config)
        static = [n for n, kind in topology.nodes.items() if kind != 'mn']
        topology.nodes = collections.OrderedDict((n, topology.nodes[n]) for n in static)
        if not topology.connected():
            fail(None, "the topology is not connected")

    _validate_events(config, fail)
    return problems


def _validate_events(config, fail):
    links = config.links()
    down = set()
    failed_links = set()

    for event in config.events:
        if event.at > config.duration:
            fail(event.line, "event after the end of the run")
        action, args = event.action, event.args
        if action in ('fail', 'recover') and args[0] not in config.has:
            fail(event.line, "unknown HA '%s'" % args[0])
            continue
        if action == 'register':
            if args[0] not in config.mns:
                fail(event.line, "unknown MN '%s'" % args[0])
            if args[1] not in config.fas:
                fail(event.line, "unknown FA '%s'" % args[1])
        elif action == 'authenticate':
            if args[0] not in config.mns:
                fail(event.line, "unknown MN '%s'" % args[0])
            if args[1] not in config.cns:
                fail(event.line, "unknown CN '%s'" % args[1])
        elif action == 'fail':
            down.add(args[0])
        elif action == 'recover':
            if config.has[args[0]].link in failed_links:
                fail(event.line, "HA '%s' sits on failed link %d" %
                     (args[0], config.has[args[0]].link))
            down.discard(args[0])
        elif action == 'fail-link':
            try:
                link = int(args[0])
            except ValueError:
                fail(event.line, "bad link '%s'" % args[0])
                continue
            if link not in links:
                fail(event.line, "no HA on link %d" % link)
                continue
            failed_links.add(link)
            down.update(n for n, s in config.has.items() if s.link == link)

        if config.has and down >= set(config.has):
            fail(event.line, "unsupported partition: no live HA is left")


def emit_scenario(config):
    """Render a config in the canonical form parse_scenario reads back."""
    out = ['[scenario]'] + config.settings.dump_lines()
    for kind in SECTION_KINDS:
        for name, spec in config.sections(kind).items():
            out.append('')
            out.append('[%s %s]' % (kind, name))
            out.extend(spec.dump_lines())
    if config.edges:
        out.extend(['', '[edges]'])
        out.extend('%s -- %s = %s' % (e.a, e.b, _fmt_time(e.delay)) for e in config.edges)
    if config.events:
        out.extend(['', '[events]'])
        out.extend(e.dump_string() for e in config.events)
    return '\n'.join(out) + '\n'


def normalize(text):
    return emit_scenario(parse_scenario(text))


def load_scenario(storage, path):
    return parse_scenario(storage.read_file(path).decode('utf-8'))
