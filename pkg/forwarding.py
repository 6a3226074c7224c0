#!/usr/bin/env python

import logging

from hacore import HaRole

log = logging.getLogger(__name__)


class ForwardingError(RuntimeError):
    """A packet could not make it through the pipeline. It counts as lost."""
    reason = 'forwarding'


class UnknownMnError(ForwardingError):
    reason = 'unknown-mn'


class NoLiveHaError(ForwardingError):
    reason = 'no-live-ha'


class ShapeError(ForwardingError):
    reason = 'shape'


class NoBindingError(ForwardingError):
    reason = 'no-binding'


class NotActiveError(ForwardingError):
    reason = 'not-active'


class WrongCoaError(ForwardingError):
    reason = 'wrong-coa'


class OuterGlobal(object):
    """CN -> MN addressing through the Global HA address."""

    def __init__(self, src, dst_mn, dst_global):
        self.src = src
        self.dst_mn = dst_mn
        self.dst_global = dst_global

    def __repr__(self):
        return 'OuterGlobal(%s -> %s via %s)' % (self.src, self.dst_mn, self.dst_global)


class PickupHeader(object):

    def __init__(self, nearest, active):
        self.nearest = nearest
        self.active = active

    def __repr__(self):
        return 'PickupHeader(%s -> %s)' % (self.nearest.local_address,
                                           self.active.local_address)


class TunnelHeader(object):

    def __init__(self, active, coa):
        self.active = active
        self.coa = coa

    def __repr__(self):
        return 'TunnelHeader(%s -> %s)' % (self.active.local_address, self.coa)


SHAPES = {
    (OuterGlobal,): 'global',
    (PickupHeader, OuterGlobal): 'pickup',
    (TunnelHeader, OuterGlobal): 'tunnel',
}


class Packet(object):
    """Data packet with its header stack, outermost header first."""

    def __init__(self, layers, payload, seq=0):
        self.layers = list(layers)
        self.payload = payload
        self.seq = seq

    def shape(self):
        return SHAPES.get(tuple(type(layer) for layer in self.layers))

    def outer(self):
        return self.layers[0]

    def inner(self):
        return self.layers[-1]

    def __repr__(self):
        return 'Packet(%s, seq=%d, %d bytes)' % (self.shape(), self.seq, len(self.payload))


def _expect_shape(pkt, shape):
    actual = pkt.shape()
    if actual != shape:
        raise ShapeError("Expected packet shape %s, got %s" % (shape, actual))


def cn_send(cn, mn_home, global_address, payload, seq=0):
    """Address a payload to an MN through its Global HA address."""
    if mn_home not in global_address.registered_mns:
        raise UnknownMnError("MN '%s' is not registered under '%s'" %
                             (mn_home, global_address.virtual_id))
    header = OuterGlobal(cn, mn_home, global_address.virtual_id)
    return Packet([header], bytes(payload), seq)


def select_pickup_ha(global_address, mn_home, peers, topology, attachment=None):
    """Choose the HA that picks up a packet sent to the Global HA address.

    The live member closest to the MN's current attachment point wins;
    ties go to the lower workload, then to the lower local address.

    Keyword arguments:
    global_address - the Global HA address (GlobalHaAddress).
    mn_home - home address of the destination MN (string).
    peers - candidate HAs (iterable of HaState).
    topology - network topology (simnet.Topology).
    attachment - node the MN is attached to (string, default: looked up
                 in the topology).
    """
    if attachment is None:
        attachment = topology.attachment_of(mn_home)

    live = [p for p in peers if p.live and p.id in global_address.member_set]
    if not live:
        raise NoLiveHaError("No live HA behind '%s'" % global_address.virtual_id)

    def key(state):
        hops = topology.hop_distance(topology.link_node(state.id.home_link), attachment)
        return (hops, state.workload, state.id.local_address)

    return sorted(live, key=key)[0].id


def route_to_active(pkt, pickup, active):
    """Push the internal routing header."""
    _expect_shape(pkt, 'global')
    pkt.layers.insert(0, PickupHeader(pickup, active))
    return pkt


def tunnel_to_coa(pkt, state):
    """Replace the pickup header with a tunnel to the MN's COA."""
    _expect_shape(pkt, 'pickup')
    if state.role != HaRole.ACTIVE:
        raise NotActiveError("HA '%s' is %s and can't tunnel" %
                             (state.id.local_address, state.role))

    mn_home = pkt.inner().dst_mn
    binding = state.binding_for(mn_home)
    if binding is None:
        raise NoBindingError("Active '%s' holds no binding for '%s'" %
                             (state.id.local_address, mn_home))

    pkt.layers[0] = TunnelHeader(state.id, binding.coa)
    return pkt


def decapsulate_at_coa(pkt, coa):
    """Strip the tunnel at the care-of address.

    Return (payload, OuterGlobal header) as seen by the MN.
    """
    _expect_shape(pkt, 'tunnel')
    if pkt.outer().coa != coa:
        raise WrongCoaError("Tunnel for '%s' arrived at '%s'" % (pkt.outer().coa, coa))

    pkt.layers.pop(0)
    return pkt.payload, pkt.inner()
