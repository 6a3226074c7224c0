#!/usr/bin/env python
"""Simulated nodes: home agents, foreign agents, mobile nodes and
correspondent nodes, and the Network that holds them together and keeps
the books the report is made from."""

import collections
import logging
import struct

import detector
import forwarding
import registration
from detector import ActionKind, NoCandidateError
from hacore import (CapacityError, HaRole, MobilityBinding, RoleError, StaleBindingError,
                    apply_role_transition, expire_bindings, sync_from_active, upsert_binding)
from registration import RegistrationMessage, RegistrationRejected
from selfcert import RandomStream
from simnet import US_PER_SEC, Message, UnreachableError

log = logging.getLogger(__name__)

MODES = ('vhaha', 'single_link_redundancy', 'no_redundancy')

# Throughput is measured over this many heartbeat periods.
THROUGHPUT_WINDOW = 10


class PeerView(object):
    """What one HA believes about another: its last advertised role and priority."""

    def __init__(self, ha_id, role, priority):
        self.id = ha_id
        self.role = role
        self.priority = priority

    def priority_key(self):
        return (-self.priority, self.id.local_address)

    def __repr__(self):
        return 'PeerView(%s, %s)' % (self.id.local_address, self.role)


class FailureRecord(object):
    """One injected HA failure and how the system dealt with it. Times in us."""

    def __init__(self, ha_id, role, failed_at, permanent, predicted, observers=()):
        self.ha_id = ha_id
        self.role = role
        self.failed_at = failed_at
        self.permanent = permanent
        self.predicted = predicted
        # Group members that were watching when the HA failed.
        self.observers = frozenset(observers)
        self.suspicions = collections.OrderedDict()
        self.detected_at = None
        self.converged_at = None
        self.recovered_at = None
        self.outcome = None
        # Who took the promoted Backup's place, or 'no-candidate'.
        self.recruit = None

    def t_fd_r(self):
        if self.detected_at is None:
            return None
        return self.detected_at - self.failed_at

    def recovery_time(self):
        if self.converged_at is None:
            return None
        return self.converged_at - self.failed_at

    def converged(self):
        return self.converged_at is not None

    def window(self, end):
        """Interval during which the system is allowed to be degraded."""
        if self.converged_at is None:
            return (self.failed_at, end)
        return (self.failed_at, self.converged_at)


def payload_for(seq, size):
    pattern = struct.pack('>I', seq)
    return (pattern * (size // 4 + 1))[:size]


class Agent(object):

    def __init__(self, network, node):
        self.network = network
        self.sim = network.sim
        self.node = node
        self.epoch = 0
        self.handlers = {}

    def send(self, dst, message, delay=None):
        """Hand a message to the network once the node's processing is done."""
        if delay is None:
            delay = self.network.config.processing_delay
        self.sim.timer(self.node, self.sim.now + delay, 'send', epoch=self.epoch,
                       dst=dst, message=message)

    def timer(self, at, tag, **data):
        self.sim.timer(self.node, at, tag, epoch=self.epoch, **data)

    def on_timer(self, tag, epoch=None, **data):
        if epoch != self.epoch:
            return
        if tag == 'send':
            message = data['message']
            self.sim.unicast(self.node, data['dst'], message)
            self.network.message_sent(message)
            return
        getattr(self, 'on_%s' % tag)(**data)

    def on_message(self, message):
        handler = self.handlers.get(message.kind)
        if handler is None:
            log.debug("%s: ignoring %s", self.node, message.kind)
            return
        handler(message)

    def on_fail(self, permanent):
        pass

    def on_recover(self):
        self.epoch += 1

    def decode(self, message):
        try:
            return RegistrationMessage.from_bytes(message.payload)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return None

    def registration_message(self, msg, category, meta=None):
        data = msg.to_bytes()
        self.network.note_size(msg.label(), len(data))
        return Message(msg.label(), data, category, size=len(data), meta=meta)


class HaAgent(Agent):
    """A home agent: heartbeats, failure detection and recovery, secure
    registration, binding replication and the data path."""

    def __init__(self, network, node, state, registry=None):
        super(HaAgent, self).__init__(network, node)
        self.state = state
        self.registry = registry
        self.period = network.config.heartbeat_period
        self.detector = detector.DetectorState(self.period, network.tick_offset)
        self.view = collections.OrderedDict()
        self.handled = set()
        self.advertised_priority = state.priority
        self.traffic = collections.deque()
        self.running = False
        self.handlers = {
            'heartbeat': self.on_heartbeat_message,
            'recovery-announce': self.on_announce,
            'recruit': self.on_recruit,
            'replace': self.on_replace,
            'sync-request': self.on_sync_request,
            'sync': self.on_sync,
            'BU': self.on_binding_update,
            'R3': self.on_forwarded_request,
            'A1': self.on_auth_request,
            'data': self.on_data,
            'dhaad-request': self.on_dhaad_request,
            're-register': self.on_re_register,
        }

    @property
    def id(self):
        return self.state.id

    def member(self):
        return self.id in self.network.global_address.member_set

    def start(self, now, grace=False):
        """Arm heartbeat and detector timers from the next round boundary."""
        if not self.network.heartbeats_enabled() or not self.member():
            return
        self.running = True
        for peer in self.network.global_address.member_set:
            if peer != self.id:
                self.detector.watch(peer)
                if grace:
                    self.detector.last_seq[peer] = now // self.period - 1

        rounds = -(-now // self.period)
        self.timer(rounds * self.period, 'heartbeat')
        first = max(1, -(-(now - self.detector.offset) // self.period))
        self.timer(first * self.period + self.detector.offset, 'tick')

    def live_view(self):
        view = [PeerView(self.id, self.state.role, self.advertised_priority)]
        for ha_id, peer in self.view.items():
            if ha_id not in self.detector.suspected and \
                    ha_id in self.network.global_address.member_set:
                view.append(peer)
        return view

    def forget_peer(self, peer):
        self.detector.forget(peer)
        self.view.pop(peer, None)
        self.state.peer_table.pop(peer, None)

    def sample_traffic(self):
        self.traffic.append(self.sim.now)

    def update_throughput(self, now):
        window = THROUGHPUT_WINDOW * self.period
        while self.traffic and self.traffic[0] <= now - window:
            self.traffic.popleft()
        self.state.set_throughput(len(self.traffic) * US_PER_SEC / float(window))

    def on_heartbeat(self):
        if not self.running or not self.member():
            self.running = False
            return
        now = self.sim.now
        if self.state.role in (HaRole.ACTIVE, HaRole.BACKUP):
            expire_bindings(self.state, now)
        self.update_throughput(now)

        hb = detector.emit_heartbeat(self.state, now, self.period)
        self.advertised_priority = self.state.priority
        self.sim.record('heartbeat', src=self.node, dst='*', seq=hb.seq, role=hb.role)
        self.sim.multicast_vpn(self.node, lambda: Message('heartbeat', hb, 'heartbeat'),
                               self.network.member_nodes())
        self.timer(now + self.period, 'heartbeat')

    def on_heartbeat_message(self, message):
        if not self.running:
            return
        hb = message.payload
        revived = detector.on_heartbeat(self.detector, hb)
        self.view[hb.sender] = PeerView(hb.sender, hb.role, hb.priority)
        self.state.peer_table[hb.sender] = self.sim.now
        self.handled.discard(hb.sender)
        if revived:
            log.info("%s: %s is back", self.node, hb.sender.local_address)

    def on_tick(self):
        if not self.running:
            return
        now = self.sim.now
        newly = detector.tick(self.detector, now)
        for peer in sorted(newly, key=lambda p: p.local_address):
            self.sim.record('suspect', src=self.node, dst=self.network.topology.node_of(peer))
            self.network.record_suspicion(self.id, peer, now)
        self.handle_suspected()
        self.timer(now + self.period, 'tick')

    def handle_suspected(self):
        for peer in sorted(self.detector.suspected - self.handled, key=lambda p: p.local_address):
            known = self.view.get(peer)
            role = known.role if known is not None else HaRole.INACTIVE

            if role == HaRole.ACTIVE:
                if self.state.role != HaRole.BACKUP:
                    continue
                view = self.live_view()
                actor = detector.recovery_actor(HaRole.ACTIVE, view)
                if actor is None or actor.id != self.id:
                    continue
                self.handled.add(peer)
                plan = detector.recover(peer, HaRole.ACTIVE, view)
                self.sim.record('plan', src=self.node, dst=self.network.topology.node_of(peer),
                                actions=','.join(a.kind.value for a in plan))
                self.timer(self.sim.now + self.network.config.promotion_delay, 'promote',
                           faulty=peer, plan=plan)

            elif self.state.role == HaRole.ACTIVE:
                self.handled.add(peer)
                self.recover_peer(peer, role)

    def recover_peer(self, peer, role):
        permanent = self.network.failed_permanently(peer)
        try:
            plan = detector.recover(peer, role, self.live_view(), permanent,
                                    self.network.spare_views())
        except NoCandidateError as e:
            log.warning("%s: %s", self.node, e)
            self.sim.record('no-candidate', src=self.node,
                            dst=self.network.topology.node_of(peer))
            self.network.record_outcome(peer, 'no-candidate', self.sim.now)
            self.forget_peer(peer)
            return

        for action in plan:
            if action.kind == ActionKind.DELETE_FAULTY_ENTRY:
                self.forget_peer(peer)
            elif action.kind == ActionKind.RECRUIT_BACKUP:
                self.send_recruit(action.target, replaces=peer)
            elif action.kind == ActionKind.REPLACE_INACTIVE:
                self.send_replace(action.target, replaces=peer)
            elif action.kind == ActionKind.NO_OP:
                self.network.record_outcome(peer, 'noop', self.sim.now)

    def on_promote(self, faulty, plan):
        if faulty not in self.detector.suspected or self.state.role != HaRole.BACKUP:
            log.info("%s: promotion over %s called off", self.node, faulty.local_address)
            self.handled.discard(faulty)
            return

        recruit = None
        for action in plan:
            if action.kind == ActionKind.DELETE_FAULTY_ENTRY:
                self.forget_peer(faulty)
            elif action.kind == ActionKind.PROMOTE_BACKUP:
                if action.target != self.id:
                    log.warning("%s: plan promotes %s, not me", self.node,
                                action.target.local_address)
                    return
                apply_role_transition(self.state, HaRole.ACTIVE)
                self.network.global_address.map_active(self.id)
                self.sim.record('promote', src=self.node, dst=self.node)
                self.network.record_outcome(faulty, 'promoted', self.sim.now)
            elif action.kind == ActionKind.RECRUIT_BACKUP:
                recruit = action.target
                self.network.record_recruit(faulty, recruit.local_address)
            elif action.kind == ActionKind.NO_RECRUIT:
                self.sim.record('no-candidate', src=self.node, dst=self.node)
                self.network.record_recruit(faulty, 'no-candidate')

        announce = {'active': self.id, 'faulty': faulty, 'recruit': recruit}
        self.sim.multicast_vpn(self.node,
                               lambda: Message('recovery-announce', announce, 'recovery'),
                               self.network.member_nodes())
        if recruit is not None:
            self.send_recruit(recruit, replaces=None)

    def full_sync(self):
        entries = self.registry.export_all() if self.registry is not None else []
        return {'bindings': list(self.state.bindings.values()), 'entries': entries}

    def send_recruit(self, target, replaces):
        known = self.view.get(target)
        self.view[target] = PeerView(target, HaRole.BACKUP,
                                     known.priority if known else self.state.priority)
        payload = self.full_sync()
        payload['replaces'] = replaces
        node = self.network.topology.node_of(target)
        self.sim.record('recruit', src=self.node, dst=node)
        self.sim.unicast(self.node, node, Message('recruit', payload, 'recovery'))

    def send_replace(self, target, replaces):
        node = self.network.topology.node_of(target)
        self.network.global_address.retire(replaces)
        self.sim.record('replace', src=self.node, dst=node)
        self.sim.unicast(self.node, node, Message('replace', {'replaces': replaces}, 'recovery'))

    def on_announce(self, message):
        payload = message.payload
        if payload['faulty'] != self.id:
            self.forget_peer(payload['faulty'])
        active = self.view.get(payload['active'])
        if active is not None:
            active.role = HaRole.ACTIVE
        recruit = payload['recruit']
        if recruit is not None and recruit in self.view:
            self.view[recruit].role = HaRole.BACKUP

    def adopt(self, payload):
        sync_from_active(self.state, payload['bindings'])
        if self.registry is None:
            self.registry = self.network.new_registry(self.node)
        self.registry.replace_all(payload['entries'])

    def on_recruit(self, message):
        if self.state.role != HaRole.INACTIVE:
            log.warning("%s: recruited while %s", self.node, self.state.role)
            return
        apply_role_transition(self.state, HaRole.BACKUP)
        self.adopt(message.payload)
        self.sim.record('sync', src=message.src, dst=self.node)
        if message.payload['replaces'] is not None:
            self.network.record_outcome(message.payload['replaces'], 'recruited', self.sim.now)

    def on_replace(self, message):
        self.network.global_address.admit(self.id)
        self.start(self.sim.now, grace=True)
        self.network.record_outcome(message.payload['replaces'], 'replaced', self.sim.now)

    def on_sync_request(self, message):
        if self.state.role != HaRole.ACTIVE:
            return
        requester = self.network.topology.ha_id_of(message.src)
        known = self.view.get(requester)
        payload = self.full_sync()
        payload['demote'] = known is None or known.role != HaRole.BACKUP
        self.sim.unicast(self.node, message.src, Message('sync', payload, 'recovery'))

    def demote(self):
        apply_role_transition(self.state, HaRole.FAILED)
        apply_role_transition(self.state, HaRole.INACTIVE)
        self.registry = None

    def on_sync(self, message):
        if self.state.role != HaRole.BACKUP:
            return
        if message.payload['demote']:
            self.sim.record('demote', src=message.src, dst=self.node)
            self.demote()
            return
        self.adopt(message.payload)
        self.sim.record('sync', src=message.src, dst=self.node)

    def on_fail(self, permanent):
        self.state.live = False
        self.network.record_failure(self, permanent)

    def on_recover(self):
        super(HaAgent, self).on_recover()
        now = self.sim.now
        self.state.live = True
        self.network.record_recovery(self.id, now)
        self.handled.clear()
        self.detector.suspected.clear()

        if not self.member():
            self.running = False
            return

        if self.state.role == HaRole.ACTIVE and self.network.global_address.active != self.id:
            self.sim.record('zombie', src=self.node,
                            active=self.network.active_node() or '-')
            self.demote()
        elif self.state.role == HaRole.BACKUP:
            active = self.network.active_node()
            if active is not None and active != self.node:
                self.sim.unicast(self.node, active, Message('sync-request', None, 'recovery'))

        self.start(now, grace=True)

    def backup_nodes(self):
        return [self.network.topology.node_of(ha_id) for ha_id, peer in self.view.items()
                if peer.role == HaRole.BACKUP and ha_id not in self.detector.suspected
                and ha_id in self.network.global_address.member_set]

    def on_forwarded_request(self, message):
        self.network.trace_reg('r3-recv', message.meta)
        if self.state.role != HaRole.ACTIVE or self.registry is None:
            self.network.reject('not-active', self.node)
            return
        m3 = self.decode(message)
        if m3 is None:
            return
        try:
            m4, grant = registration.ha_process_request(self.registry, m3)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return

        now = self.sim.now
        binding = MobilityBinding(grant.mn_home, grant.coa, self.network.config.binding_lifetime,
                                  grant.sequence, registered_at=now)
        try:
            upsert_binding(self.state, binding)
        except (CapacityError, StaleBindingError, RoleError) as e:
            log.warning("%s: %s", self.node, e)
            self.network.reject(e.reason, self.node)
            return
        self.network.global_address.registered_mns.add(grant.mn_home)

        self.send(message.src, self.registration_message(m4, 'registration', message.meta))
        for node in self.backup_nodes():
            update = {'binding': binding, 'entry': self.registry.export_entry(grant.mn_home)}
            self.send(node, Message('BU', update, 'binding-update', meta=message.meta))

    def on_binding_update(self, message):
        if self.state.role != HaRole.BACKUP:
            return
        try:
            upsert_binding(self.state, message.payload['binding'])
        except StaleBindingError as e:
            log.debug("%s: %s", self.node, e)
        except CapacityError as e:
            log.warning("%s: %s", self.node, e)
            return
        if self.registry is None:
            self.registry = self.network.new_registry(self.node)
        self.registry.import_entry(message.payload['entry'])
        self.network.trace_reg('bu-recv', message.meta,
                               prop=self.sim.now - message.sent_at, dst=self.node)

    def on_auth_request(self, message):
        if self.state.role != HaRole.ACTIVE or self.registry is None:
            self.network.reject('not-active', self.node)
            return
        a1 = self.decode(message)
        if a1 is None:
            return
        try:
            a2 = registration.ha_forward_auth(self.registry, a1)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return
        self.send(a1['cn_coa'], self.registration_message(a2, 'authentication'))

    def on_data(self, message):
        pkt = message.payload
        self.sample_traffic()
        try:
            if pkt.shape() == 'global':
                active = self.network.global_address.active
                if active is None:
                    raise forwarding.NoLiveHaError("No Active HA is mapped")
                forwarding.route_to_active(pkt, self.id, active)
                self.sim.record('pickup', src=self.node, pkt=pkt.seq)
                if active != self.id:
                    self.sim.unicast(self.node, self.network.topology.node_of(active),
                                     Message('data', pkt))
                    return
            forwarding.tunnel_to_coa(pkt, self.state)
            mn_node = self.network.mn_node_of_home(pkt.inner().dst_mn)
        except forwarding.ForwardingError as e:
            self.network.lose(e.reason, pkt)
            return

        self.sim.record('tunnel', src=self.node, dst=mn_node, pkt=pkt.seq)
        self.sim.unicast(self.node, mn_node, Message('data', pkt))

    def on_dhaad_request(self, message):
        self.sim.unicast(self.node, message.src, Message('dhaad-reply', self.id, 'recovery'))

    def on_re_register(self, message):
        """Plain re-registration of an MN that lost its home agent."""
        home, coa = message.payload['home'], message.payload['coa']
        if self.state.role == HaRole.INACTIVE:
            apply_role_transition(self.state, HaRole.BACKUP)
        if self.state.role == HaRole.BACKUP:
            apply_role_transition(self.state, HaRole.ACTIVE)
        if self.registry is None:
            self.registry = self.network.new_registry(self.node)

        global_address = self.network.global_address
        global_address.admit(self.id)
        global_address.map_active(self.id)
        existing = self.state.binding_for(home)
        sequence = existing.sequence + 1 if existing is not None else 1
        upsert_binding(self.state, MobilityBinding(home, coa, self.network.config.binding_lifetime,
                                                   sequence, registered_at=self.sim.now))
        global_address.registered_mns.add(home)
        self.network.record_re_registration(self.sim.now)
        if not self.running:
            self.start(self.sim.now, grace=True)
        self.sim.unicast(self.node, message.src,
                         Message('re-register-reply', self.id.local_address, 'recovery'))


class FaAgent(Agent):

    def __init__(self, network, node, state):
        super(FaAgent, self).__init__(network, node)
        self.state = state
        self.pending = {}
        self.handlers = {
            'R1': self.on_request,
            'R5': self.on_reply,
        }

    def advertise(self, mn_node, coa):
        adv = registration.fa_advertise(self.state, coa)
        self.sim.unicast(self.node, mn_node, self.registration_message(adv, 'advertisement'))

    def on_request(self, message):
        self.network.trace_reg('r1-recv', message.meta)
        m2 = self.decode(message)
        if m2 is None:
            return
        try:
            m3 = registration.fa_forward_request(self.state, m2)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return

        active = self.network.active_node()
        if active is None:
            self.network.reject('no-active', self.node)
            return
        self.pending[m2['n_fa']] = (message.src, message.meta)
        self.send(active, self.registration_message(m3, 'registration', message.meta))

    def on_reply(self, message):
        self.network.trace_reg('r5-recv', message.meta)
        m4 = self.decode(message)
        if m4 is None:
            return
        try:
            m5 = registration.fa_process_reply(self.state, m4)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return
        mn_node, meta = self.pending.pop(m4['n_fa'])
        self.send(mn_node, self.registration_message(m5, 'registration', meta))


class MnAgent(Agent):

    def __init__(self, network, node, spec, state):
        super(MnAgent, self).__init__(network, node)
        self.spec = spec
        self.state = state
        self.registrations = 0
        self.observed = []
        self.last_data_at = None
        self.recovering_since = None
        self.handlers = {
            'AA1': self.on_advertisement,
            'R7': self.on_reply,
            'A3': self.on_auth_response,
            'data': self.on_data,
            'dhaad-reply': self.on_dhaad_reply,
            're-register-reply': self.on_re_register_reply,
        }

    def observe(self, address):
        if address not in self.observed:
            self.observed.append(address)

    def register(self, fa_node, coa):
        self.network.topology.attach(self.node, fa_node, self.spec.ota_delay)
        self.network.fas[fa_node].advertise(self.node, coa)

    def on_register(self, fa_node, coa):
        self.register(fa_node, coa)

    def on_authenticate(self, cn_node):
        self.authenticate(cn_node)

    def on_advertisement(self, message):
        adv = self.decode(message)
        if adv is None:
            return
        m2 = registration.mn_build_request(self.state, adv)
        self.registrations += 1
        meta = {'mn': self.state.home, 'n': self.registrations}
        self.send(message.src, self.registration_message(m2, 'registration', meta))

    def on_reply(self, message):
        m5 = self.decode(message)
        if m5 is None:
            return
        try:
            registration.mn_process_reply(self.state, m5)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return
        self.timer(self.sim.now + self.network.config.processing_delay, 'registered',
                   meta=message.meta)

    def on_registered(self, meta):
        self.network.trace_reg('r8-done', meta)
        self.observe(self.network.global_address.virtual_id)
        if self.last_data_at is None:
            self.last_data_at = self.sim.now

    def authenticate(self, cn_node):
        try:
            a1 = registration.mn_auth_request(self.state, cn_node)
        except ValueError as e:
            log.warning("%s: %s", self.node, e)
            self.network.reject('not-registered', self.node)
            return
        active = self.network.active_node()
        if active is None:
            self.network.reject('no-active', self.node)
            return
        self.send(active, self.registration_message(a1, 'authentication'))

    def on_auth_response(self, message):
        a3 = self.decode(message)
        if a3 is None:
            return
        try:
            registration.mn_process_auth_response(self.state, a3)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return
        self.network.auth_completed += 1
        self.sim.record('auth', src=message.src, dst=self.node)

    def on_data(self, message):
        pkt = message.payload
        try:
            payload, _outer = forwarding.decapsulate_at_coa(pkt, self.state.coa)
        except forwarding.ForwardingError as e:
            self.network.lose(e.reason, pkt)
            return
        self.last_data_at = self.sim.now
        self.network.packet_delivered(self, pkt, payload)

    def start_watchdog(self):
        period = self.network.config.heartbeat_period
        self.timer(self.sim.now + period, 'watchdog')

    def on_watchdog(self):
        now = self.sim.now
        config = self.network.config
        self.timer(now + config.heartbeat_period, 'watchdog')

        if not self.state.registered or not self.network.traffic_expected(self.node, now):
            return
        if self.recovering_since is not None and now - self.recovering_since < config.mn_timeout:
            return
        quiet_since = max(self.last_data_at or 0, self.network.traffic_start(self.node))
        if now - quiet_since < config.mn_timeout:
            return

        target = self.network.nearest_live_ha(self.node)
        if target is None:
            return
        self.recovering_since = now
        self.sim.record('watchdog', src=self.node, dst=target)
        self.sim.unicast(self.node, target, Message('dhaad-request', self.state.home, 'recovery'))

    def on_dhaad_reply(self, message):
        request = {'home': self.state.home, 'coa': self.state.coa}
        self.sim.unicast(self.node, message.src, Message('re-register', request, 'recovery'))

    def on_re_register_reply(self, message):
        self.recovering_since = None
        self.last_data_at = self.sim.now
        self.observe(message.payload)


class CnAgent(Agent):

    def __init__(self, network, node, spec, state):
        super(CnAgent, self).__init__(network, node)
        self.spec = spec
        self.state = state
        self.seq = 0
        self.interval = max(1, int(round(US_PER_SEC / float(spec.rate))))
        self.handlers = {
            'A2': self.on_forwarded_auth,
        }

    def start_traffic(self):
        self.timer(self.spec.start, 'traffic')

    def on_traffic(self):
        now = self.sim.now
        if now >= self.spec.stop:
            return
        self.timer(now + self.interval, 'traffic')

        self.seq += 1
        network = self.network
        mn = network.mns[self.spec.mn]
        payload = payload_for(self.seq, self.spec.payload)
        network.packets_sent += 1
        try:
            pkt = forwarding.cn_send(self.node, mn.state.home, network.global_address,
                                     payload, self.seq)
            pickup = forwarding.select_pickup_ha(
                network.global_address, mn.state.home, network.ha_states(),
                network.topology, attachment=network.topology.attachment_of(mn.node))
        except (forwarding.ForwardingError, UnreachableError) as e:
            network.lose(e.reason, None, self.seq)
            return
        self.sim.unicast(self.node, network.topology.node_of(pickup), Message('data', pkt))

    def on_forwarded_auth(self, message):
        a2 = self.decode(message)
        if a2 is None:
            return
        try:
            a3 = registration.cn_process_auth(self.state, a2)
        except RegistrationRejected as e:
            self.network.reject(e.reason, self.node)
            return
        mn_node = self.network.mn_node_of_coa(a3['mn_coa'])
        if mn_node is None:
            self.network.reject('unknown-coa', self.node)
            return
        self.send(mn_node, self.registration_message(a3, 'authentication'))


class Network(object):
    """Every agent of one run plus the books kept while it runs.

    Keyword arguments:
    config - the scenario (scenario.ScenarioConfig).
    sim - the simulator (simnet.Simulator).
    global_address - the Global HA address (hacore.GlobalHaAddress).
    world - registration principals (registration.World).
    """

    def __init__(self, config, sim, global_address, world):
        self.config = config
        self.sim = sim
        self.topology = sim.topology
        self.global_address = global_address
        self.world = world
        self.mode = config.mode
        self.prop_delay_max = 0
        self.tick_offset = 1
        self.has = collections.OrderedDict()
        self.fas = collections.OrderedDict()
        self.mns = collections.OrderedDict()
        self.cns = collections.OrderedDict()
        self.failures = []
        self.losses = collections.Counter()
        self.rejections = collections.Counter()
        self.violations = []
        self.message_sizes = collections.OrderedDict()
        self.packets_sent = 0
        self.packets_delivered = 0
        self.auth_completed = 0
        self.false_suspicions = 0

    def heartbeats_enabled(self):
        return self.mode != 'no_redundancy'

    def watchdog_enabled(self):
        return self.mode != 'vhaha'

    def new_registry(self, node):
        ha = self.world.ha
        return registration.HaRegistry(ha.name, ha.keys, ha.params,
                                       RandomStream(self.world.seed, 'replica/%s' % node),
                                       ha.directory)

    def member_nodes(self):
        return [self.topology.node_of(m) for m in sorted(self.global_address.member_set)]

    def ha_states(self):
        return [agent.state for agent in self.has.values()]

    def spare_views(self):
        return [PeerView(a.id, a.state.role, a.state.priority) for a in self.has.values()
                if a.state.live and not a.member() and a.state.role == HaRole.INACTIVE]

    def active_node(self):
        active = self.global_address.active
        if active is None:
            return None
        return self.topology.node_of(active)

    def mn_node_of_home(self, home):
        for node, mn in self.mns.items():
            if mn.state.home == home:
                return node
        raise forwarding.UnknownMnError("No MN with home address '%s'" % home)

    def mn_node_of_coa(self, coa):
        for node, mn in self.mns.items():
            if mn.state.coa == coa:
                return node
        return None

    def traffic_expected(self, mn_node, now):
        return any(cn.spec.mn == mn_node and cn.spec.start <= now < cn.spec.stop
                   for cn in self.cns.values())

    def traffic_start(self, mn_node):
        starts = [cn.spec.start for cn in self.cns.values() if cn.spec.mn == mn_node]
        return min(starts) if starts else 0

    def nearest_live_ha(self, mn_node):
        """Home agent discovery: the live HA closest to the MN's attachment."""
        attachment = self.topology.attachment_of(mn_node)
        live = [a for a in self.has.values() if a.state.live]
        if not live:
            return None

        def key(agent):
            hops = self.topology.hop_distance(self.topology.link_node(agent.id.home_link),
                                              attachment)
            return (hops, agent.id.local_address)

        return sorted(live, key=key)[0].node

    def message_sent(self, message):
        if message.kind == 'R1':
            self.trace_reg('r1-sent', message.meta)

    def trace_reg(self, step, meta, **extra):
        if not meta:
            return
        self.sim.record('reg', step=step, mn=meta['mn'], n=meta['n'], **extra)

    def note_size(self, label, size):
        self.message_sizes.setdefault(label, size)

    def reject(self, reason, node):
        self.rejections[reason] += 1
        self.sim.record('reject', node=node, reason=reason)

    def lose(self, reason, pkt, seq=None):
        self.losses[reason] += 1
        self.sim.record('loss', reason=reason, pkt=pkt.seq if pkt is not None else seq)

    def packet_delivered(self, mn, pkt, payload):
        self.packets_delivered += 1
        cn_spec = self.cns[pkt.inner().src].spec
        if payload != payload_for(pkt.seq, cn_spec.payload):
            self.violations.append("payload of packet %d altered on the way to %s" %
                                   (pkt.seq, mn.node))
        self.sim.record('deliver-data', dst=mn.node, pkt=pkt.seq)

    def record_failure(self, agent, permanent):
        if not agent.member():
            return
        predicted = detector.predicted_detection_time(self.config.heartbeat_period,
                                                      self.prop_delay_max)
        observers = self.global_address.member_set - {agent.id}
        self.failures.append(FailureRecord(agent.id, agent.state.role, self.sim.now,
                                           permanent, predicted, observers))

    def _open_record(self, ha_id):
        for record in reversed(self.failures):
            if record.ha_id == ha_id:
                return record
        return None

    def record_suspicion(self, observer, faulty, now):
        record = self._open_record(faulty)
        if record is None or record.recovered_at is not None:
            self.false_suspicions += 1
            return
        if observer not in record.observers:
            # An HA admitted later never heard from the failed one.
            return
        record.suspicions.setdefault(observer, now)
        if record.detected_at is None:
            record.detected_at = now

    def record_recruit(self, faulty, recruit):
        record = self._open_record(faulty)
        if record is not None and record.recruit is None:
            record.recruit = recruit

    def record_outcome(self, faulty, outcome, now):
        record = self._open_record(faulty)
        if record is None or record.outcome is not None:
            return
        record.outcome = outcome
        record.converged_at = now
        if outcome == 'no-candidate' and record.role == HaRole.ACTIVE and self.mode == 'vhaha':
            self.violations.append("no Backup left to replace Active %s" %
                                   faulty.local_address)

    def record_re_registration(self, now):
        for record in self.failures:
            if record.role == HaRole.ACTIVE and record.outcome is None:
                record.outcome = 're-registered'
                record.converged_at = now

    def record_recovery(self, ha_id, now):
        record = self._open_record(ha_id)
        if record is None or record.recovered_at is not None:
            return
        record.recovered_at = now
        if record.outcome is None:
            # Back before anyone took over.
            record.outcome = 'recovered'
            record.converged_at = now

    def failed_permanently(self, ha_id):
        record = self._open_record(ha_id)
        return record is not None and record.permanent
