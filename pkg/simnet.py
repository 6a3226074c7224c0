#!/usr/bin/env python
"""Deterministic discrete-event network simulator.

Time is an integer number of microseconds. Events run in (at, seq)
order, seq being the order in which they were scheduled, so a run is a
pure function of the topology, the schedule and the seed.
"""

import collections
import enum
import hashlib
import heapq
import logging
import os
import random

log = logging.getLogger(__name__)

US_PER_SEC = 1000000

DEFAULT_MAX_EVENTS = 5000000

NODE_KINDS = ('ha', 'fa', 'mn', 'cn', 'router')


def max_events_from_env():
    value = os.getenv('VHAHA_MAX_EVENTS')
    if value is None:
        return DEFAULT_MAX_EVENTS
    try:
        return int(value)
    except ValueError:
        raise RuntimeError("VHAHA_MAX_EVENTS must be an integer: '%s'" % value)


def seconds_to_us(seconds):
    return int(round(float(seconds) * US_PER_SEC))


def format_time(us):
    sign = '-' if us < 0 else ''
    us = abs(us)
    return '%s%d.%06d' % (sign, us // US_PER_SEC, us % US_PER_SEC)


class TimeTravelError(RuntimeError):
    reason = 'time-travel'


class UnknownTargetError(RuntimeError):
    reason = 'unknown-target'


class LivelockError(RuntimeError):
    reason = 'livelock'


class UnreachableError(RuntimeError):
    reason = 'unreachable'


def link_router(home_link):
    return 'link%s' % home_link


class Topology(object):
    """Nodes, weighted edges and the home links of the HAs.

    Edge delays are in microseconds. Each home link N is a router named
    `link<N>` the HAs of that link hang off.
    """

    def __init__(self):
        self.nodes = collections.OrderedDict()
        self.edges = collections.OrderedDict()
        self.ha_nodes = collections.OrderedDict()
        self.attachments = {}
        self._down = set()
        self._cache = {}

    def add_node(self, name, kind):
        if kind not in NODE_KINDS:
            raise ValueError("Unknown node kind '%s'" % kind)
        if name in self.nodes and self.nodes[name] != kind:
            raise ValueError("Node '%s' is already a %s" % (name, self.nodes[name]))
        self.nodes[name] = kind
        self.edges.setdefault(name, collections.OrderedDict())
        self._cache.clear()

    def add_ha(self, name, ha_id):
        self.add_node(name, 'ha')
        self.add_node(link_router(ha_id.home_link), 'router')
        self.ha_nodes[ha_id] = name

    def add_edge(self, a, b, delay):
        for node in (a, b):
            if node not in self.nodes:
                raise UnknownTargetError("Edge endpoint '%s' is not a node" % node)
        if delay < 0:
            raise ValueError("Negative edge delay %r on %s -- %s" % (delay, a, b))
        self.edges[a][b] = delay
        self.edges[b][a] = delay
        self._cache.clear()

    def remove_edge(self, a, b):
        self.edges[a].pop(b, None)
        self.edges[b].pop(a, None)
        self._cache.clear()

    def attach(self, mn, node, delay):
        """Move an MN's wireless link to `node`."""
        old = self.attachments.get(mn)
        if old is not None:
            self.remove_edge(mn, old)
        self.add_edge(mn, node, delay)
        self.attachments[mn] = node

    def attachment_of(self, mn):
        try:
            return self.attachments[mn]
        except KeyError:
            raise UnknownTargetError("MN '%s' is not attached" % mn)

    def link_node(self, home_link):
        return link_router(home_link)

    def node_of(self, ha_id):
        try:
            return self.ha_nodes[ha_id]
        except KeyError:
            raise UnknownTargetError("No node for HA '%s'" % (ha_id.local_address,))

    def ha_id_of(self, node):
        for ha_id, name in self.ha_nodes.items():
            if name == node:
                return ha_id
        raise UnknownTargetError("Node '%s' is not an HA" % node)

    def home_link_members(self, home_link):
        return [ha_id for ha_id in self.ha_nodes if ha_id.home_link == home_link]

    def set_down(self, nodes):
        nodes = set(nodes)
        if nodes != self._down:
            self._down = nodes
            self._cache.clear()

    def _shortest(self, source, hops=False):
        key = (source, hops)
        if key in self._cache:
            return self._cache[key]

        dist = {source: 0}
        queue = [(0, source)]
        while queue:
            d, node = heapq.heappop(queue)
            if d > dist[node]:
                continue
            # Down nodes are reachable but never transit.
            if node != source and node in self._down:
                continue
            for nbr, delay in self.edges[node].items():
                nd = d + (1 if hops else delay)
                if nd < dist.get(nbr, nd + 1):
                    dist[nbr] = nd
                    heapq.heappush(queue, (nd, nbr))

        self._cache[key] = dist
        return dist

    def path_delay(self, src, dst):
        """Sum of edge delays on the shortest path, microseconds."""
        for node in (src, dst):
            if node not in self.nodes:
                raise UnknownTargetError("Unknown node '%s'" % node)
        dist = self._shortest(src)
        if dst not in dist:
            raise UnreachableError("No path from '%s' to '%s'" % (src, dst))
        return dist[dst]

    def hop_distance(self, src, dst):
        dist = self._shortest(src, hops=True)
        if dst not in dist:
            raise UnreachableError("No path from '%s' to '%s'" % (src, dst))
        return dist[dst]

    def connected(self):
        if not self.nodes:
            return True
        first = next(iter(self.nodes))
        saved, self._down = self._down, set()
        self._cache.clear()
        try:
            return len(self._shortest(first)) == len(self.nodes)
        finally:
            self._down = saved
            self._cache.clear()

    def vpn_diameter(self, members=None):
        """Largest path delay between two VPN members (D)."""
        nodes = [self.node_of(m) for m in (members or self.ha_nodes)]
        diameter = 0
        for a in nodes:
            for b in nodes:
                if a != b:
                    diameter = max(diameter, self.path_delay(a, b))
        return diameter

    def link_count(self, members=None):
        """Number of home links the VPN spans (|L|)."""
        return len({m.home_link for m in (members or self.ha_nodes)})


class EventKind(enum.Enum):
    DELIVER = 'deliver'
    TIMER = 'timer'
    FAIL = 'fail'
    FAIL_LINK = 'fail-link'
    RECOVER = 'recover'


class SimEvent(object):

    def __init__(self, at, kind, seq=None, **data):
        self.at = at
        self.kind = kind
        self.seq = seq
        self.data = data

    def __lt__(self, other):
        return (self.at, self.seq) < (other.at, other.seq)

    def __repr__(self):
        return 'SimEvent(%s, %s, seq=%s)' % (format_time(self.at), self.kind.value, self.seq)


class Message(object):
    """Anything sent over the simulated network.

    Keyword arguments:
    kind - message type, shown in the trace (string).
    payload - the carried object.
    category - accounting bucket: registration, binding-update,
               heartbeat, recovery, authentication or data (string).
    size - serialized size in bytes (int, default: 0).
    meta - bookkeeping that is not part of the wire format (dict).
    """

    def __init__(self, kind, payload=None, category='data', size=0, meta=None):
        self.kind = kind
        self.payload = payload
        self.category = category
        self.size = size
        self.meta = meta or {}
        self.src = None
        self.dst = None
        self.sent_at = None
        self.ota = False

    def __repr__(self):
        return 'Message(%s %s -> %s)' % (self.kind, self.src, self.dst)


class TraceEvent(object):

    def __init__(self, at, ev, fields=()):
        self.at = at
        self.ev = ev
        self.fields = collections.OrderedDict(fields)

    def dump_string(self):
        parts = ['t=%s' % format_time(self.at), 'ev=%s' % self.ev]
        parts.extend('%s=%s' % (k, v) for k, v in self.fields.items())
        return ' '.join(parts)

    @classmethod
    def parse_string(cls, line):
        words = line.split()
        if len(words) < 2 or not words[0].startswith('t=') or not words[1].startswith('ev='):
            raise ValueError("Malformed trace line: '%s'" % line)
        at = seconds_to_us(words[0][2:])
        fields = []
        for word in words[2:]:
            key, sep, value = word.partition('=')
            if not sep:
                raise ValueError("Malformed trace field '%s'" % word)
            fields.append((key, value))
        return cls(at, words[1][3:], fields)

    def __getitem__(self, key):
        return self.fields[key]

    def get(self, key, default=None):
        return self.fields.get(key, default)


def trace_hash(trace):
    digest = hashlib.sha256()
    for event in trace:
        digest.update(event.dump_string().encode('utf-8'))
        digest.update(b'\n')
    return digest.hexdigest()


class Simulator(object):
    """Event loop, message delivery and failure injection.

    Keyword arguments:
    topology - the network (Topology).
    seed - seed of jitter and loss draws (int).
    max_events - livelock bound (int, default: VHAHA_MAX_EVENTS or 5000000).
    jitter - maximal extra delay per message, microseconds (int, default: 0).
    heartbeat_loss - probability to lose a heartbeat (float, default: 0).
    """

    def __init__(self, topology, seed=0, max_events=None, jitter=0, heartbeat_loss=0.0):
        self.topology = topology
        self.seed = seed
        self.max_events = max_events if max_events is not None else max_events_from_env()
        self.jitter = jitter
        self.heartbeat_loss = heartbeat_loss
        self.random = random.Random(seed)
        self.now = 0
        self.trace = []
        self.agents = {}
        self.down = set()
        self.processed = 0
        self.sent = collections.Counter()
        self.delivered = collections.Counter()
        self.dropped = collections.Counter()
        self.ota = collections.Counter()
        self.bytes_sent = collections.Counter()
        self._queue = []
        self._seq = 0

    def attach(self, node, agent):
        if node not in self.topology.nodes:
            raise UnknownTargetError("Unknown node '%s'" % node)
        self.agents[node] = agent

    def record(self, ev, **fields):
        self.trace.append(TraceEvent(self.now, ev, fields.items()))

    def schedule(self, event):
        if event.at < self.now:
            raise TimeTravelError("Event %s is before now (%s)" %
                                  (event, format_time(self.now)))
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def timer(self, owner, at, tag, **data):
        return self.schedule(SimEvent(at, EventKind.TIMER, owner=owner, tag=tag, data=data))

    def is_live(self, node):
        return node not in self.down

    def _extra_delay(self):
        if self.jitter <= 0:
            return 0
        return self.random.randint(0, self.jitter)

    def unicast(self, src, dst, message):
        """Send `message` from `src` to `dst` along the shortest path."""
        if not self.is_live(src):
            raise RuntimeError("Failed node '%s' can't send" % src)

        message.src = src
        message.dst = dst
        message.sent_at = self.now
        message.ota = 'mn' in (self.topology.nodes.get(src), self.topology.nodes.get(dst))

        self.sent[message.category] += 1
        self.bytes_sent[message.category] += message.size
        if message.ota:
            self.ota[message.category] += 1

        try:
            delay = self.topology.path_delay(src, dst)
        except UnreachableError:
            self._drop(message, 'unreachable')
            return None

        self.record('send', src=src, dst=dst, kind=message.kind, cat=message.category)
        return self.schedule(SimEvent(self.now + delay + self._extra_delay(),
                                      EventKind.DELIVER, message=message))

    def multicast_vpn(self, src, message_factory, members=None):
        """Send a copy of a message to every other VPN member.

        `message_factory` builds one Message per destination. `members`
        are the member nodes, all HA nodes by default.
        """
        if members is None:
            members = list(self.topology.ha_nodes.values())
        return [self.unicast(src, node, message_factory()) for node in members if node != src]

    def _drop(self, message, reason):
        self.dropped[(message.category, reason)] += 1
        self.record('drop', src=message.src, dst=message.dst, kind=message.kind,
                    cat=message.category, reason=reason)

    def inject_failure(self, target, at, permanent=False):
        """Fail an HA node (by node name) at `at`."""
        if target not in self.topology.nodes:
            raise UnknownTargetError("Unknown failure target '%s'" % target)
        return self.schedule(SimEvent(at, EventKind.FAIL, target=target, permanent=permanent))

    def inject_link_failure(self, home_link, at):
        if not self.topology.home_link_members(home_link):
            raise UnknownTargetError("No HA on home link %s" % home_link)
        return self.schedule(SimEvent(at, EventKind.FAIL_LINK, home_link=home_link))

    def recover(self, target, at):
        if target not in self.topology.nodes:
            raise UnknownTargetError("Unknown recovery target '%s'" % target)
        return self.schedule(SimEvent(at, EventKind.RECOVER, target=target))

    def _fail_node(self, node, permanent):
        if node in self.down:
            return
        self.down.add(node)
        self.topology.set_down(self.down)
        self.record('fail', node=node, permanent='yes' if permanent else 'no')
        agent = self.agents.get(node)
        if agent is not None:
            agent.on_fail(permanent)

    def _process(self, event):
        if event.kind == EventKind.DELIVER:
            message = event.data['message']
            if not self.is_live(message.dst):
                self._drop(message, 'dst-failed')
                return
            if message.category == 'heartbeat' and self.heartbeat_loss > 0 \
                    and self.random.random() < self.heartbeat_loss:
                self._drop(message, 'heartbeat-loss')
                return
            self.delivered[message.category] += 1
            self.record('deliver', src=message.src, dst=message.dst, kind=message.kind,
                        cat=message.category)
            agent = self.agents.get(message.dst)
            if agent is not None:
                agent.on_message(message)

        elif event.kind == EventKind.TIMER:
            owner = event.data['owner']
            if not self.is_live(owner):
                return
            self.agents[owner].on_timer(event.data['tag'], **event.data['data'])

        elif event.kind == EventKind.FAIL:
            self._fail_node(event.data['target'], event.data['permanent'])

        elif event.kind == EventKind.FAIL_LINK:
            home_link = event.data['home_link']
            self.record('fail-link', link=home_link)
            router = self.topology.link_node(home_link)
            self.down.add(router)
            for ha_id in self.topology.home_link_members(home_link):
                self._fail_node(self.topology.node_of(ha_id), True)
            self.topology.set_down(self.down)

        elif event.kind == EventKind.RECOVER:
            node = event.data['target']
            if node not in self.down:
                return
            self.down.discard(node)
            self.topology.set_down(self.down)
            self.record('recover', node=node)
            agent = self.agents.get(node)
            if agent is not None:
                agent.on_recover()

    def run_until(self, t_end):
        """Process every event at or before `t_end`. Return the trace."""
        while self._queue and self._queue[0].at <= t_end:
            event = heapq.heappop(self._queue)
            self.processed += 1
            if self.processed > self.max_events:
                raise LivelockError("More than %d events by %s" %
                                    (self.max_events, format_time(event.at)))
            self.now = event.at
            self._process(event)

        self.now = max(self.now, t_end)
        return self.trace

    def in_flight(self):
        """Messages sent but not yet delivered nor dropped, by category."""
        pending = collections.Counter()
        for event in self._queue:
            if event.kind == EventKind.DELIVER:
                pending[event.data['message'].category] += 1
        return pending

    def dropped_total(self, category):
        return sum(n for (cat, _), n in self.dropped.items() if cat == category)

    def trace_hash(self):
        return trace_hash(self.trace)
