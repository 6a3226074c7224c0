import unittest

import simnet
from hacore import HaId
from simnet import Message, Simulator, Topology, TraceEvent

HA1 = HaId(1, 'ha1')
HA2 = HaId(1, 'ha2')
HA3 = HaId(2, 'ha3')


class Recorder(object):
    """Agent that remembers what happens to it."""

    def __init__(self):
        self.messages = []
        self.timers = []
        self.failures = []
        self.recoveries = 0

    def on_message(self, message):
        self.messages.append(message)

    def on_timer(self, tag, **data):
        self.timers.append((tag, data))

    def on_fail(self, permanent):
        self.failures.append(permanent)

    def on_recover(self):
        self.recoveries += 1


def topology():
    topo = Topology()
    topo.add_ha('ha1', HA1)
    topo.add_ha('ha2', HA2)
    topo.add_ha('ha3', HA3)
    topo.add_edge('ha1', 'link1', 100)
    topo.add_edge('ha2', 'link1', 100)
    topo.add_edge('ha3', 'link2', 100)
    topo.add_edge('link1', 'link2', 5000)
    topo.add_node('cn1', 'cn')
    topo.add_edge('cn1', 'link2', 10000)
    return topo


def simulator(**kwargs):
    sim = Simulator(topology(), **kwargs)
    agents = {}
    for node in ('ha1', 'ha2', 'ha3', 'cn1'):
        agents[node] = Recorder()
        sim.attach(node, agents[node])
    return sim, agents


class TestTime(unittest.TestCase):
    def test_conversions(self):
        self.assertEqual(simnet.seconds_to_us('0.1'), 100000)
        self.assertEqual(simnet.seconds_to_us(10.305001), 10305001)
        self.assertEqual(simnet.format_time(10305001), '10.305001')
        self.assertEqual(simnet.format_time(-5), '-0.000005')


class TestTopology(unittest.TestCase):
    def test_paths(self):
        topo = topology()
        self.assertEqual(topo.path_delay('ha1', 'ha3'), 5200)
        self.assertEqual(topo.hop_distance('ha1', 'ha3'), 3)
        self.assertEqual(topo.vpn_diameter(), 5200)
        self.assertEqual(topo.vpn_diameter([HA1, HA2]), 200)
        self.assertEqual(topo.link_count(), 2)
        self.assertTrue(topo.connected())

    def test_down_nodes_do_not_transit(self):
        topo = topology()
        topo.set_down({'link1'})
        with self.assertRaises(simnet.UnreachableError):
            topo.path_delay('ha1', 'ha3')
        self.assertEqual(topo.path_delay('ha3', 'link1'), 5100)
        self.assertTrue(topo.connected())

    def test_lookups(self):
        topo = topology()
        self.assertEqual(topo.node_of(HA3), 'ha3')
        self.assertEqual(topo.ha_id_of('ha2'), HA2)
        self.assertEqual(topo.home_link_members(1), [HA1, HA2])
        with self.assertRaises(simnet.UnknownTargetError):
            topo.ha_id_of('cn1')

    def test_attach_moves(self):
        topo = topology()
        topo.add_node('mn1', 'mn')
        topo.attach('mn1', 'link1', 2000)
        topo.attach('mn1', 'link2', 2000)
        self.assertEqual(topo.attachment_of('mn1'), 'link2')
        self.assertNotIn('link1', topo.edges['mn1'])

    def test_bad_edges(self):
        topo = topology()
        with self.assertRaises(simnet.UnknownTargetError):
            topo.add_edge('ha1', 'nowhere', 1)
        with self.assertRaises(ValueError):
            topo.add_edge('ha1', 'ha2', -1)
        with self.assertRaises(ValueError):
            topo.add_node('x', 'satellite')


class TestSimulator(unittest.TestCase):
    def test_unicast(self):
        sim, agents = simulator()
        sim.unicast('cn1', 'ha3', Message('data', b'x'))
        sim.run_until(10099)
        self.assertEqual(agents['ha3'].messages, [])
        sim.run_until(10100)
        self.assertEqual(len(agents['ha3'].messages), 1)
        self.assertEqual(sim.delivered['data'], 1)
        self.assertEqual(sim.now, 10100)

    def test_ordering_is_deterministic(self):
        """Events at the same time run in scheduling order."""
        sim, agents = simulator()
        for tag in ('a', 'b', 'c'):
            sim.timer('ha1', 50, tag)
        sim.timer('ha1', 10, 'first')
        sim.run_until(100)
        self.assertEqual([tag for tag, _ in agents['ha1'].timers], ['first', 'a', 'b', 'c'])

    def test_time_travel(self):
        sim, _ = simulator()
        sim.run_until(100)
        with self.assertRaises(simnet.TimeTravelError):
            sim.timer('ha1', 50, 'late')

    def test_failure_drops_and_silences(self):
        sim, agents = simulator()
        sim.inject_failure('ha3', 1000)
        sim.timer('ha3', 2000, 'tick')
        sim.run_until(1500)
        sim.unicast('ha1', 'ha3', Message('hb', category='heartbeat'))
        sim.run_until(10000)

        self.assertEqual(agents['ha3'].failures, [False])
        self.assertEqual(agents['ha3'].messages, [])
        self.assertEqual(agents['ha3'].timers, [])
        self.assertEqual(sim.dropped[('heartbeat', 'dst-failed')], 1)
        with self.assertRaises(RuntimeError):
            sim.unicast('ha3', 'ha1', Message('hb'))

    def test_recover(self):
        sim, agents = simulator()
        sim.inject_failure('ha2', 10)
        sim.recover('ha2', 20)
        sim.recover('ha1', 30)
        sim.run_until(100)
        self.assertEqual(agents['ha2'].recoveries, 1)
        self.assertEqual(agents['ha1'].recoveries, 0)
        self.assertTrue(sim.is_live('ha2'))

    def test_link_failure(self):
        """Every HA of the link fails for good and the link stops routing."""
        sim, agents = simulator()
        sim.inject_link_failure(1, 10)
        sim.run_until(20)
        self.assertEqual(agents['ha1'].failures, [True])
        self.assertEqual(agents['ha2'].failures, [True])
        self.assertEqual(agents['ha3'].failures, [])
        self.assertIsNone(sim.unicast('ha3', 'ha1', Message('x', category='recovery')))
        self.assertEqual(sim.dropped[('recovery', 'unreachable')], 1)
        with self.assertRaises(simnet.UnknownTargetError):
            sim.inject_link_failure(9, 30)

    def test_multicast(self):
        sim, agents = simulator()
        sim.multicast_vpn('ha1', lambda: Message('hb', category='heartbeat'))
        sim.run_until(10000)
        self.assertEqual(sim.sent['heartbeat'], 2)
        self.assertEqual(len(agents['ha2'].messages), 1)
        self.assertEqual(len(agents['ha3'].messages), 1)
        self.assertEqual(agents['ha1'].messages, [])

    def test_in_flight(self):
        sim, _ = simulator()
        sim.unicast('cn1', 'ha1', Message('data'))
        sim.run_until(100)
        self.assertEqual(sim.in_flight()['data'], 1)

    def test_heartbeat_loss(self):
        sim, agents = simulator(heartbeat_loss=0.999999)
        for _ in range(5):
            sim.unicast('ha1', 'ha2', Message('hb', category='heartbeat'))
        sim.unicast('ha1', 'ha2', Message('reg', category='registration'))
        sim.run_until(1000)
        self.assertEqual(sim.dropped[('heartbeat', 'heartbeat-loss')], 5)
        self.assertEqual([m.kind for m in agents['ha2'].messages], ['reg'])

    def test_livelock(self):
        sim, _ = simulator(max_events=3)
        for at in range(5):
            sim.timer('ha1', at, 'spin')
        with self.assertRaises(simnet.LivelockError):
            sim.run_until(10)

    def test_same_seed_same_trace(self):
        hashes = set()
        for _ in range(2):
            sim, _ = simulator(seed=9, jitter=50)
            sim.multicast_vpn('ha1', lambda: Message('hb', category='heartbeat'))
            sim.unicast('cn1', 'ha2', Message('data'))
            sim.run_until(100000)
            hashes.add(sim.trace_hash())
        self.assertEqual(len(hashes), 1)


class TestTraceEvent(unittest.TestCase):
    def test_dump_and_parse(self):
        event = TraceEvent(10305001, 'suspect', [('node', 'ha2'), ('peer', 'ha1')])
        line = event.dump_string()
        self.assertEqual(line, 't=10.305001 ev=suspect node=ha2 peer=ha1')
        parsed = TraceEvent.parse_string(line)
        self.assertEqual(parsed.at, 10305001)
        self.assertEqual(parsed['peer'], 'ha1')
        self.assertIsNone(parsed.get('missing'))

    def test_malformed(self):
        for line in ('', 'ev=x t=1', 't=1 ev=x broken'):
            with self.assertRaises(ValueError):
                TraceEvent.parse_string(line)


if __name__ == '__main__':
    unittest.main()
