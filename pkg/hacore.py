#!/usr/bin/env python

import collections
import copy
import enum
import logging
import math

log = logging.getLogger(__name__)

# Priority of an idle HA. It is ordered above every finite priority.
PRIORITY_MAX = math.inf

EXCLUSIVE_SERVICES = ('home-registration', 'deregistration',
                      'registration-refresh', 'ike', 'dhad')
REGULAR_SERVICES = ('tunneling', 'reverse-tunneling',
                    'return-routability', 'neighbor-discovery')
ALL_SERVICES = EXCLUSIVE_SERVICES + REGULAR_SERVICES


class CapacityError(RuntimeError):
    reason = 'capacity'


class RoleError(RuntimeError):
    reason = 'role'


class StaleBindingError(RuntimeError):
    reason = 'stale'


class IllegalTransitionError(RuntimeError):
    reason = 'illegal-transition'


class HaRole(enum.Enum):
    ACTIVE = 'active'
    BACKUP = 'backup'
    INACTIVE = 'inactive'
    FAILED = 'failed'

    def __str__(self):
        return self.value


# Services switched on for every role.
ROLE_SERVICES = {
    HaRole.ACTIVE: set(ALL_SERVICES),
    HaRole.BACKUP: set(REGULAR_SERVICES),
    HaRole.INACTIVE: {'tunneling'},
    HaRole.FAILED: set(),
}

LEGAL_TRANSITIONS = {
    (HaRole.BACKUP, HaRole.ACTIVE),
    (HaRole.INACTIVE, HaRole.BACKUP),
    (HaRole.FAILED, HaRole.INACTIVE),
}


HaId = collections.namedtuple('HaId', ['home_link', 'local_address'])


class GlobalHaAddress(object):
    """The virtual address every MN and CN uses to reach its home agent.

    Keyword arguments:
    virtual_id - address token that never changes (string).
    member_set - HAs sharing the address (iterable of HaId).
    """

    def __init__(self, virtual_id, member_set):
        self._virtual_id = virtual_id
        self.member_set = set(member_set)
        self.active = None
        self.registered_mns = set()

    @property
    def virtual_id(self):
        return self._virtual_id

    def admit(self, ha_id):
        """Add a spare HA replacing a permanently failed Inactive one."""
        self.member_set.add(ha_id)

    def retire(self, ha_id):
        if ha_id == self.active:
            raise RoleError("Can't retire the Active HA '%s'" % ha_id.local_address)
        self.member_set.discard(ha_id)

    def map_active(self, ha_id):
        if ha_id not in self.member_set:
            raise RoleError("HA '%s' is not a member of '%s'" %
                            (ha_id.local_address, self._virtual_id))
        log.info("global address %s -> %s", self._virtual_id, ha_id.local_address)
        self.active = ha_id

    def home_links(self):
        return {ha_id.home_link for ha_id in self.member_set}


class MobilityBinding(object):

    def __init__(self, mn_home_address, coa, lifetime, sequence, registered_at=0):
        if lifetime <= 0:
            raise ValueError("Binding lifetime must be positive: %r" % lifetime)
        self.mn_home_address = mn_home_address
        self.coa = coa
        self.lifetime = lifetime
        self.sequence = sequence
        self.registered_at = registered_at

    def expires_at(self):
        return self.registered_at + self.lifetime

    def comparable(self):
        return (self.mn_home_address, self.coa, self.lifetime,
                self.sequence, self.registered_at)

    def __eq__(self, other):
        return self.comparable() == other.comparable()

    def __repr__(self):
        return 'MobilityBinding(%s -> %s, seq=%d)' % (
            self.mn_home_address, self.coa, self.sequence)


def compute_workload(bindings_count, bindings_max, throughput_current, throughput_max):
    """Return the load of an HA as a fraction in [0, 1].

    Keyword arguments:
    bindings_count - bindings currently held (int).
    bindings_max - binding cache capacity (int).
    throughput_current - measured rate in packets/sec (float).
    throughput_max - rate capacity in packets/sec (float).
    """
    if bindings_max == 0 or throughput_max == 0:
        raise CapacityError("Zero capacity: bindings_max=%r throughput_max=%r" %
                            (bindings_max, throughput_max))
    if bindings_max < 0 or throughput_max < 0:
        raise ValueError("Negative capacity")
    if not 0 <= bindings_count <= bindings_max:
        raise ValueError("bindings_count %r outside [0, %r]" %
                         (bindings_count, bindings_max))
    if not 0 <= throughput_current <= throughput_max:
        raise ValueError("throughput_current %r outside [0, %r]" %
                         (throughput_current, throughput_max))

    return (bindings_count * throughput_current) / (bindings_max * throughput_max)


def compute_priority(workload):
    if not 0 <= workload <= 1:
        raise ValueError("Workload %r outside [0, 1]" % workload)
    if workload == 0:
        return PRIORITY_MAX
    return 1.0 / workload


class HaState(object):
    """One home agent: its role, binding cache and view of its peers."""

    def __init__(self, ha_id, role, bindings_max=100, throughput_max=1000.0):
        self.id = ha_id
        self.role = role
        self.bindings = collections.OrderedDict()
        self.bindings_max = bindings_max
        self.throughput_current = 0.0
        self.throughput_max = throughput_max
        self.workload = 0.0
        self.priority = PRIORITY_MAX
        self.peer_table = {}
        self.exclusive_services_enabled = {}
        self.live = True
        self.heartbeat_seq = -1
        self.last_heartbeat_at = None
        self._apply_services()
        self.recompute()

    def _apply_services(self):
        enabled = ROLE_SERVICES[self.role]
        self.exclusive_services_enabled = collections.OrderedDict(
            (name, name in enabled) for name in ALL_SERVICES)

    def exclusive_enabled(self):
        return all(self.exclusive_services_enabled[name]
                   for name in EXCLUSIVE_SERVICES)

    def set_throughput(self, rate):
        self.throughput_current = min(max(rate, 0.0), self.throughput_max)
        self.recompute()

    def recompute(self):
        self.workload = compute_workload(len(self.bindings), self.bindings_max,
                                         self.throughput_current, self.throughput_max)
        self.priority = compute_priority(self.workload)

    def priority_key(self):
        """Sort key putting the preferred HA first."""
        return (-self.priority, self.id.local_address)

    def binding_for(self, mn_home_address):
        return self.bindings.get(mn_home_address)

    def __repr__(self):
        return 'HaState(%s, %s, bindings=%d)' % (
            self.id.local_address, self.role, len(self.bindings))


def select_highest_priority(states):
    """Pick the preferred HA: highest priority, ties by lowest local address."""
    states = list(states)
    if not states:
        return None
    return sorted(states, key=lambda s: s.priority_key())[0]


def upsert_binding(state, binding):
    if state.role not in (HaRole.ACTIVE, HaRole.BACKUP):
        raise RoleError("HA '%s' is %s and holds no bindings" %
                        (state.id.local_address, state.role))

    existing = state.bindings.get(binding.mn_home_address)
    if existing is not None:
        if binding.sequence <= existing.sequence:
            raise StaleBindingError(
                "Binding for '%s' has sequence %d, cache holds %d" %
                (binding.mn_home_address, binding.sequence, existing.sequence))
    elif len(state.bindings) >= state.bindings_max:
        raise CapacityError("Binding cache of '%s' is full (%d)" %
                            (state.id.local_address, state.bindings_max))

    state.bindings[binding.mn_home_address] = copy.copy(binding)
    state.recompute()
    return state


def expire_bindings(state, now):
    expired = [home for home, binding in state.bindings.items()
               if binding.expires_at() <= now]
    for home in expired:
        log.debug("%s: binding for %s expired", state.id.local_address, home)
        del state.bindings[home]
    if expired:
        state.recompute()
    return expired


def sync_from_active(backup, active_bindings, promoting=False):
    """Replace the binding cache of a Backup with a full copy of the Active's.

    Keyword arguments:
    backup - HA receiving the copy (HaState).
    active_bindings - the Active's bindings (iterable of MobilityBinding).
    promoting - an Inactive HA is being recruited (bool, default: False).
    """
    allowed = (HaRole.BACKUP,) if not promoting else (HaRole.BACKUP, HaRole.INACTIVE)
    if backup.role not in allowed:
        raise RoleError("Can't sync into %s HA '%s'" %
                        (backup.role, backup.id.local_address))

    active_bindings = list(active_bindings)
    if len(active_bindings) > backup.bindings_max:
        raise CapacityError("%d bindings exceed capacity %d of '%s'" %
                            (len(active_bindings), backup.bindings_max,
                             backup.id.local_address))

    backup.bindings = collections.OrderedDict(
        (b.mn_home_address, copy.copy(b)) for b in active_bindings)
    backup.recompute()
    return backup


def apply_role_transition(state, new_role):
    old_role = state.role
    if new_role != HaRole.FAILED and (old_role, new_role) not in LEGAL_TRANSITIONS:
        raise IllegalTransitionError("%s -> %s is not allowed for '%s'" %
                                     (old_role, new_role, state.id.local_address))

    state.role = new_role
    if new_role in (HaRole.INACTIVE, HaRole.FAILED):
        state.bindings.clear()
    state._apply_services()
    state.recompute()
    log.info("%s: %s -> %s", state.id.local_address, old_role, new_role)
    return state
