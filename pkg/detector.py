#!/usr/bin/env python

import collections
import enum
import logging

from hacore import HaRole, select_highest_priority

log = logging.getLogger(__name__)

# Consecutive missed heartbeats that make a peer faulty.
MISS_THRESHOLD = 3


class NoCandidateError(RuntimeError):
    reason = 'no-candidate'


class Heartbeat(object):
    """Liveness announcement multicast inside the VPN.

    The role and priority of the sender ride along so that every HA keeps
    a current view of its peers.
    """

    def __init__(self, sender, seq, sent_at, role=None, priority=None):
        self.sender = sender
        self.seq = seq
        self.sent_at = sent_at
        self.role = role
        self.priority = priority

    def __repr__(self):
        return 'Heartbeat(%s, seq=%d)' % (self.sender.local_address, self.seq)


class DetectorState(object):
    """Missed-heartbeat failure detector of one HA.

    Heartbeat round k is emitted at k*period. Its deadline is the tick at
    (k + 1)*period + offset, where offset covers the largest propagation
    delay inside the VPN.

    Keyword arguments:
    period - heartbeat period T_H in microseconds (int).
    offset - tick offset in microseconds (int).
    peers - HAs to watch (iterable of HaId).
    """

    def __init__(self, period, offset=0, peers=(), miss_threshold=MISS_THRESHOLD):
        if period <= 0:
            raise ValueError("Heartbeat period must be positive: %r" % period)
        self.T_H = period
        self.offset = offset
        self.miss_threshold = miss_threshold
        self.peer_misses = collections.OrderedDict((p, 0) for p in peers)
        self.last_seq = {}
        self.suspected = set()

    def watch(self, peer):
        self.peer_misses.setdefault(peer, 0)

    def forget(self, peer):
        self.peer_misses.pop(peer, None)
        self.last_seq.pop(peer, None)
        self.suspected.discard(peer)


def emit_heartbeat(state, now, period):
    """Build the heartbeat a live HA sends at the round boundary `now`."""
    if not state.live:
        raise RuntimeError("Failed HA '%s' can't emit heartbeats" % state.id.local_address)
    if state.last_heartbeat_at is not None and now - state.last_heartbeat_at < period:
        raise ValueError("Heartbeat from '%s' at %d is early, last one at %d" %
                         (state.id.local_address, now, state.last_heartbeat_at))

    state.heartbeat_seq = now // period
    state.last_heartbeat_at = now
    return Heartbeat(state.id, state.heartbeat_seq, now, state.role, state.priority)


def on_heartbeat(detector, heartbeat):
    """Record a received heartbeat.

    Return True if the sender was suspected before (it came back).
    """
    sender = heartbeat.sender
    detector.watch(sender)
    if heartbeat.seq > detector.last_seq.get(sender, -1):
        detector.last_seq[sender] = heartbeat.seq
    detector.peer_misses[sender] = 0

    revived = sender in detector.suspected
    detector.suspected.discard(sender)
    return revived


def tick(detector, now):
    """Close the heartbeat round whose deadline is `now`.

    Return the set of peers that became suspected on this tick.
    """
    closed_round = (now - detector.offset) // detector.T_H - 1
    newly = set()

    for peer in detector.peer_misses:
        last = detector.last_seq.get(peer, -1)
        misses = max(0, closed_round - last)
        detector.peer_misses[peer] = misses
        if misses >= detector.miss_threshold and peer not in detector.suspected:
            detector.suspected.add(peer)
            newly.add(peer)

    return newly


def predicted_detection_time(T_H, prop_delay):
    """Failure detection and recovery time: 3*T_H + VPN propagation delay."""
    if T_H <= 0:
        raise ValueError("Heartbeat period must be positive: %r" % T_H)
    if prop_delay < 0:
        raise ValueError("Propagation delay must not be negative: %r" % prop_delay)
    return MISS_THRESHOLD * T_H + prop_delay


class ActionKind(enum.Enum):
    DELETE_FAULTY_ENTRY = 'delete'
    PROMOTE_BACKUP = 'promote'
    RECRUIT_BACKUP = 'recruit'
    REPLACE_INACTIVE = 'replace'
    NO_RECRUIT = 'no-candidate'
    NO_OP = 'noop'


RecoveryAction = collections.namedtuple('RecoveryAction', ['kind', 'target'])

NO_OP = RecoveryAction(ActionKind.NO_OP, None)


def recover(faulty, faulty_role, peers, permanent=False, spares=()):
    """Plan the recovery from the failure of one HA.

    Keyword arguments:
    faulty - the failed HA (HaId).
    faulty_role - its role when it failed (HaRole).
    peers - live HAs of the Global HA address (iterable of HaState).
    permanent - an Inactive HA went off for good (bool, default: False).
    spares - live HAs outside the group that may replace an Inactive one
             (iterable of HaState, default: empty).

    Return an ordered list of RecoveryAction.
    """
    peers = [p for p in peers if p.id != faulty]
    backups = [p for p in peers if p.role == HaRole.BACKUP]
    inactives = [p for p in peers if p.role == HaRole.INACTIVE]

    if faulty_role == HaRole.ACTIVE:
        promoted = select_highest_priority(backups)
        if promoted is None:
            raise NoCandidateError("No Backup HA can replace Active '%s'" %
                                   faulty.local_address)
        actions = [RecoveryAction(ActionKind.DELETE_FAULTY_ENTRY, faulty),
                   RecoveryAction(ActionKind.PROMOTE_BACKUP, promoted.id)]
        recruit = select_highest_priority(inactives)
        if recruit is not None:
            actions.append(RecoveryAction(ActionKind.RECRUIT_BACKUP, recruit.id))
        else:
            log.warning("No Inactive HA left to replace promoted '%s'",
                        promoted.id.local_address)
            actions.append(RecoveryAction(ActionKind.NO_RECRUIT, None))
        return actions

    if faulty_role == HaRole.BACKUP:
        recruit = select_highest_priority(inactives)
        if recruit is None:
            raise NoCandidateError("No Inactive HA can replace Backup '%s'" %
                                   faulty.local_address)
        return [RecoveryAction(ActionKind.DELETE_FAULTY_ENTRY, faulty),
                RecoveryAction(ActionKind.RECRUIT_BACKUP, recruit.id)]

    if faulty_role == HaRole.INACTIVE:
        if not permanent:
            return [NO_OP]
        candidates = [s for s in spares if s.id.home_link == faulty.home_link]
        replacement = select_highest_priority(candidates)
        if replacement is None:
            raise NoCandidateError("No HA on link %s can replace Inactive '%s'" %
                                   (faulty.home_link, faulty.local_address))
        return [RecoveryAction(ActionKind.REPLACE_INACTIVE, replacement.id)]

    return [NO_OP]


def recovery_actor(faulty_role, view):
    """Return the single HA that executes the recovery.

    The highest-priority live Backup handles a failed Active, the live
    Active handles everything else.

    Keyword arguments:
    faulty_role - role of the failed HA (HaRole).
    view - HAs believed live (iterable of HaState).
    """
    view = list(view)
    if faulty_role == HaRole.ACTIVE:
        return select_highest_priority(s for s in view if s.role == HaRole.BACKUP)

    for state in view:
        if state.role == HaRole.ACTIVE:
            return state
    return None
