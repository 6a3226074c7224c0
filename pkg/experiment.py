#!/usr/bin/env python
"""Runs a scenario on the simulator and turns the outcome into a report."""

import collections
import logging

import registration
from agents import CnAgent, FaAgent, HaAgent, MnAgent, Network, PeerView
from hacore import GlobalHaAddress, HaRole, HaState
from scenario import MODES, build_topology
from simnet import Simulator, format_time

log = logging.getLogger(__name__)

REG_STEPS = ('r1-sent', 'r1-recv', 'r3-recv', 'r5-recv', 'r8-done')

# Wire categories, in report order.
CATEGORIES = ('advertisement', 'registration', 'binding-update', 'heartbeat',
              'recovery', 'authentication', 'data')

FORMATS = ('text', 'table')


class IncompleteExchangeError(RuntimeError):
    reason = 'incomplete-exchange'


class RegistrationRecord(object):
    """Measured delays of one R1..R8 exchange, microseconds."""

    def __init__(self, mn, n, mn_fa, fa_ha, ha_fa, fa_mn, total, bu_prop=0):
        self.mn = mn
        self.n = n
        self.mn_fa = mn_fa
        self.fa_ha = fa_ha
        self.ha_fa = ha_fa
        self.fa_mn = fa_mn
        self.total = total
        self.bu_prop = bu_prop

    def legs(self):
        return (self.mn_fa, self.fa_ha, self.ha_fa, self.fa_mn)

    def home_total(self):
        """Registration at the Active plus propagation of the backup updates."""
        return self.total + self.bu_prop

    def __repr__(self):
        return 'RegistrationRecord(%s #%s, total=%d)' % (self.mn, self.n, self.total)


def registration_delay_decomposition(trace, strict=True):
    """Split every registration of a trace into its four legs.

    Keyword arguments:
    trace - trace events (list of simnet.TraceEvent).
    strict - raise on an exchange that did not complete (bool, default: True).

    Return a list of RegistrationRecord in the order the exchanges started.
    """
    exchanges = collections.OrderedDict()
    for event in trace:
        if event.ev != 'reg':
            continue
        key = (str(event['mn']), str(event['n']))
        steps = exchanges.setdefault(key, {'bu': []})
        if event['step'] == 'bu-recv':
            steps['bu'].append(int(event['prop']))
        else:
            steps.setdefault(event['step'], event.at)

    records = []
    for (mn, n), steps in exchanges.items():
        missing = [s for s in REG_STEPS if s not in steps]
        if missing:
            if strict:
                raise IncompleteExchangeError("Registration %s of %s lacks %s" %
                                              (n, mn, ', '.join(missing)))
            continue
        t = [steps[s] for s in REG_STEPS]
        records.append(RegistrationRecord(mn, int(n), t[1] - t[0], t[2] - t[1], t[3] - t[2],
                                          t[4] - t[3], t[4] - t[0], max(steps['bu'] or [0])))
    return records


def _time(us):
    return '-' if us is None else format_time(us)


class MetricsReport(object):

    def __init__(self, mode, seed, duration):
        self.mode = mode
        self.seed = seed
        self.duration = duration
        self.trace_hash = None
        self.packets_sent = 0
        self.packets_delivered = 0
        self.losses = collections.Counter()
        self.messages = collections.Counter()
        self.ota = collections.Counter()
        self.sizes = collections.OrderedDict()
        self.failures = []
        self.registrations = []
        self.incomplete_registrations = 0
        self.rejections = collections.Counter()
        self.auth_completed = 0
        self.false_suspicions = 0
        self.observed = collections.OrderedDict()
        self.violations = []

    def packets_lost(self):
        return sum(self.losses.values())

    def ota_recovery(self):
        return self.ota['recovery']

    def first_failure(self):
        return self.failures[0] if self.failures else None

    def flatten(self):
        """Every reported value as an ordered list of (key, string)."""
        fields = [
            ('mode', self.mode),
            ('seed', str(self.seed)),
            ('duration', _time(self.duration)),
            ('trace_hash', self.trace_hash or '-'),
            ('packets.sent', str(self.packets_sent)),
            ('packets.delivered', str(self.packets_delivered)),
            ('packets.lost', str(self.packets_lost())),
        ]
        fields.extend(('loss.%s' % reason, str(self.losses[reason]))
                      for reason in sorted(self.losses))
        fields.extend(('messages.%s' % cat, str(self.messages[cat])) for cat in CATEGORIES)
        fields.extend(('ota.%s' % cat, str(self.ota[cat])) for cat in CATEGORIES)
        fields.extend(('size.%s' % label, str(size)) for label, size in self.sizes.items())

        fields.append(('failures', str(len(self.failures))))
        for i, f in enumerate(self.failures, 1):
            prefix = 'failure.%d.' % i
            fields.extend([
                (prefix + 'ha', f.ha_id.local_address),
                (prefix + 'role', str(f.role)),
                (prefix + 'permanent', 'yes' if f.permanent else 'no'),
                (prefix + 'failed_at', _time(f.failed_at)),
                (prefix + 'detected_at', _time(f.detected_at)),
                (prefix + 't_fd_r', _time(f.t_fd_r())),
                (prefix + 't_fd_r_predicted', _time(f.predicted)),
                (prefix + 'recovery_time', _time(f.recovery_time())),
                (prefix + 'outcome', f.outcome or '-'),
                (prefix + 'recruit', f.recruit or '-'),
            ])

        fields.append(('registrations', str(len(self.registrations))))
        fields.append(('registrations.incomplete', str(self.incomplete_registrations)))
        for i, r in enumerate(self.registrations, 1):
            prefix = 'registration.%d.' % i
            fields.extend([
                (prefix + 'mn', r.mn),
                (prefix + 'n', str(r.n)),
                (prefix + 'mn_fa', _time(r.mn_fa)),
                (prefix + 'fa_ha', _time(r.fa_ha)),
                (prefix + 'ha_fa', _time(r.ha_fa)),
                (prefix + 'fa_mn', _time(r.fa_mn)),
                (prefix + 'total', _time(r.total)),
                (prefix + 'home_total', _time(r.home_total())),
            ])

        fields.extend(('rejected.%s' % reason, str(self.rejections[reason]))
                      for reason in sorted(self.rejections))
        fields.append(('auth.completed', str(self.auth_completed)))
        fields.append(('false_suspicions', str(self.false_suspicions)))
        fields.extend(('observed.%s' % mn, ','.join(addresses))
                      for mn, addresses in self.observed.items())
        fields.append(('violations', str(len(self.violations))))
        fields.extend(('violation.%d' % i, text) for i, text in enumerate(self.violations, 1))
        return fields


def emit_report(report, fmt='text'):
    """Render a report as `key: value` text or a tab separated table.

    Return bytes.
    """
    if fmt not in FORMATS:
        raise ValueError("Unknown report format '%s'" % fmt)
    pattern = '%s: %s' if fmt == 'text' else '%s\t%s'
    lines = [pattern % field for field in report.flatten()]
    return ('\n'.join(lines) + '\n').encode('utf-8')


def parse_report(data, fmt='text'):
    """Read an emitted report back as an ordered dict of strings."""
    if isinstance(data, bytes):
        data = data.decode('utf-8')
    separator = ': ' if fmt == 'text' else '\t'
    result = collections.OrderedDict()
    for line in data.split('\n'):
        if not line:
            continue
        key, sep, value = line.partition(separator)
        if not sep:
            raise ValueError("Malformed report line: '%s'" % line)
        result[key] = value
    return result


def build_network(config):
    """Wire every agent of a scenario onto a fresh simulator.

    Return agents.Network, not started.
    """
    topology = build_topology(config)
    sim = Simulator(topology, seed=config.seed, jitter=config.jitter,
                    heartbeat_loss=config.heartbeat_loss)

    world = registration.build_world(
        config.seed, config.security_bits, config.global_address,
        fas=list(config.fas), mns=[(mn.id, mn.home) for mn in config.mns.values()],
        cns=list(config.cns))

    members = [spec.ha_id() for spec in config.members()]
    global_address = GlobalHaAddress(config.global_address, members)
    network = Network(config, sim, global_address, world)
    network.prop_delay_max = topology.vpn_diameter(members)
    network.tick_offset = topology.vpn_diameter() + config.jitter + 1

    for name, spec in config.has.items():
        ha_id = spec.ha_id()
        role = spec.role if ha_id in global_address.member_set else HaRole.INACTIVE
        state = HaState(ha_id, role, spec.bindings_max, spec.throughput_max)
        registry = None
        if role == HaRole.ACTIVE:
            registry = world.ha
            global_address.map_active(ha_id)
        elif role == HaRole.BACKUP:
            registry = network.new_registry(name)
            registry.replace_all(world.ha.export_all())
        agent = HaAgent(network, name, state, registry)
        network.has[name] = agent
        sim.attach(name, agent)

    for agent in network.has.values():
        if not agent.member():
            continue
        for other in network.has.values():
            if other is not agent and other.member():
                agent.view[other.id] = PeerView(other.id, other.state.role, other.state.priority)

    for name in config.fas:
        network.fas[name] = FaAgent(network, name, world.fas[name])
        sim.attach(name, network.fas[name])
    for name, spec in config.mns.items():
        network.mns[name] = MnAgent(network, name, spec, world.mns[spec.home])
        sim.attach(name, network.mns[name])
    for name, spec in config.cns.items():
        network.cns[name] = CnAgent(network, name, spec, world.cns[name])
        sim.attach(name, network.cns[name])

    return network


def schedule(network):
    """Load the failure schedule, then arm every agent."""
    config, sim = network.config, network.sim

    for event in config.events:
        if event.action == 'fail':
            sim.inject_failure(event.args[0], event.at, permanent=len(event.args) == 2)
        elif event.action == 'fail-link':
            sim.inject_link_failure(int(event.args[0]), event.at)
        elif event.action == 'recover':
            sim.recover(event.args[0], event.at)

    for name, mn in network.mns.items():
        mn.timer(0, 'register', fa_node=mn.spec.fa, coa=mn.spec.coa)
    for event in config.events:
        if event.action == 'register':
            mn = network.mns[event.args[0]]
            coa = event.args[2] if len(event.args) == 3 else '%s.%s' % (mn.node, event.args[1])
            mn.timer(event.at, 'register', fa_node=event.args[1], coa=coa)
        elif event.action == 'authenticate':
            network.mns[event.args[0]].timer(event.at, 'authenticate', cn_node=event.args[1])

    for agent in network.has.values():
        agent.start(0)
    for cn in network.cns.values():
        cn.start_traffic()
    if network.watchdog_enabled():
        for mn in network.mns.values():
            mn.start_watchdog()


def _degraded(network, now):
    for failure in network.failures:
        start, end = failure.window(now)
        if start <= now <= end:
            return True
    return False


def check_invariants(network, now):
    """Whole-system checks of vhaha mode, outside of recovery windows.

    Return a list of violation messages.
    """
    if network.mode != 'vhaha' or _degraded(network, now):
        return []

    problems = []
    live_actives = [a for a in network.has.values()
                    if a.state.live and a.state.role == HaRole.ACTIVE]
    if len(live_actives) != 1:
        problems.append("%s: %d live Active HAs" % (format_time(now), len(live_actives)))
        return problems

    if network.config.backups < 1:
        return problems
    active = live_actives[0].state
    period = network.config.heartbeat_period
    for home, binding in active.bindings.items():
        if now - binding.registered_at < period:
            continue
        holders = [a for a in network.has.values() if a.state.live and
                   a.state.role in (HaRole.ACTIVE, HaRole.BACKUP) and
                   a.state.binding_for(home) is not None]
        if len(holders) < 2:
            problems.append("%s: binding of %s is held by %d HA" %
                            (format_time(now), home, len(holders)))
    return problems


def run_experiment(config):
    """Simulate a scenario to its end.

    Keyword arguments:
    config - a validated scenario (scenario.ScenarioConfig).

    Return (MetricsReport, trace).
    """
    network = build_network(config)
    sim = network.sim
    schedule(network)

    period = config.heartbeat_period
    violations = []
    now = 0
    while now < config.duration:
        now = min(now + period, config.duration)
        sim.run_until(now)
        for problem in check_invariants(network, now):
            if problem not in violations:
                violations.append(problem)

    report = collect(network)
    report.violations = violations + report.violations
    log.info("%s run done: %d events, %d trace lines, %d violations",
             config.mode, sim.processed, len(sim.trace), len(report.violations))
    return report, sim.trace


def collect(network):
    config, sim = network.config, network.sim
    report = MetricsReport(config.mode, config.seed, config.duration)
    report.trace_hash = sim.trace_hash()

    report.packets_sent = network.packets_sent
    report.packets_delivered = network.packets_delivered
    report.losses.update(network.losses)
    for (category, reason), count in sim.dropped.items():
        if category == 'data':
            report.losses[reason] += count
    in_flight = sim.in_flight()['data']
    if in_flight:
        report.losses['in-flight'] += in_flight

    report.messages.update(sim.sent)
    report.ota.update(sim.ota)
    report.sizes.update(network.message_sizes)
    report.failures = list(network.failures)

    report.registrations = registration_delay_decomposition(sim.trace, strict=False)
    started = {(str(e['mn']), str(e['n'])) for e in sim.trace if e.ev == 'reg'}
    report.incomplete_registrations = len(started) - len(report.registrations)

    report.rejections.update(network.rejections)
    report.auth_completed = network.auth_completed
    report.false_suspicions = network.false_suspicions
    for name, mn in network.mns.items():
        report.observed[name] = list(mn.observed)

    report.violations = list(network.violations)
    if report.packets_sent != report.packets_delivered + report.packets_lost():
        report.violations.append("sent %d != delivered %d + lost %d" % (
            report.packets_sent, report.packets_delivered, report.packets_lost()))
    if config.mode == 'vhaha':
        if report.ota_recovery():
            report.violations.append("%d OTA messages during recovery" % report.ota_recovery())
        for name, addresses in report.observed.items():
            if addresses and addresses != [config.global_address]:
                report.violations.append("MN %s observed %s" % (name, ', '.join(addresses)))
    return report


def compare_modes(config):
    """Run a scenario in every mode with the same seed and topology.

    Return an ordered dict of mode to MetricsReport.
    """
    reports = collections.OrderedDict()
    for mode in MODES:
        report, _trace = run_experiment(config.with_mode(mode))
        reports[mode] = report
    return reports


COMPARISON_COLUMNS = ('mode', 't_fd_r', 'recovery', 'outcome', 'lost', 'recovery_msgs',
                      'ota_recovery', 'reg_msgs', 'bu_msgs')


def comparison_rows(reports):
    rows = []
    for mode, report in reports.items():
        failure = report.first_failure()
        rows.append((
            mode,
            _time(failure.t_fd_r() if failure else None),
            _time(failure.recovery_time() if failure else None),
            (failure.outcome or '-') if failure else '-',
            str(report.packets_lost()),
            str(report.messages['recovery']),
            str(report.ota_recovery()),
            str(report.messages['registration'] + report.messages['binding-update']),
            str(report.messages['binding-update']),
        ))
    return rows


def comparison_table(reports):
    lines = ['\t'.join(COMPARISON_COLUMNS)]
    lines.extend('\t'.join(row) for row in comparison_rows(reports))
    return '\n'.join(lines) + '\n'
