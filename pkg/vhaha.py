#!/usr/bin/env python

import argparse
import logging
import sys

import experiment
import scenario
import simnet
import storage
import transcript
from detector import predicted_detection_time

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VIOLATION = 2


def s3_options(args):
    return {'endpoint': args.s3_endpoint,
            'access_key_id': args.s3_access_key_id,
            'secret_access_key': args.s3_secret_access_key,
            'region': args.s3_region}


def read_location(location, args):
    stor, key = storage.open_location(location, s3_options(args))
    return stor.read_file(key)


def write_location(location, data, args):
    stor, key = storage.open_location(location, s3_options(args))
    stor.write_file(key, data)


def load_config(args):
    config = scenario.parse_scenario(read_location(args.scenario, args).decode('utf-8'))
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def cmd_run(args):
    print("Running scenario: %s" % args.scenario)
    config = load_config(args)
    report, trace = experiment.run_experiment(config)

    if args.trace:
        lines = [event.dump_string() for event in trace]
        lines.append('# trace_hash=%s' % simnet.trace_hash(trace))
        write_location(args.trace, ('\n'.join(lines) + '\n').encode('utf-8'), args)

    data = experiment.emit_report(report, args.format)
    if args.report:
        write_location(args.report, data, args)
    else:
        sys.stdout.write(data.decode('utf-8'))

    print("trace hash: %s" % report.trace_hash)
    for violation in report.violations:
        print("Violation: %s" % violation)
    return EXIT_VIOLATION if report.violations else EXIT_OK


def cmd_compare(args):
    print("Comparing modes on scenario: %s" % args.scenario)
    config = load_config(args)
    reports = experiment.compare_modes(config)
    table = experiment.comparison_table(reports)

    if args.report:
        write_location(args.report, table.encode('utf-8'), args)
    else:
        sys.stdout.write(table)

    violated = False
    for mode, report in reports.items():
        for violation in report.violations:
            print("Violation (%s): %s" % (mode, violation))
            violated = True
    return EXIT_VIOLATION if violated else EXIT_OK


def cmd_verify_transcript(args):
    print("Verifying transcript: %s" % args.transcript)
    parsed = transcript.parse_transcript(read_location(args.transcript, args).decode('utf-8'))
    verdicts = transcript.verify_transcript(parsed)

    failed = 0
    for verdict in verdicts:
        status = 'ok' if verdict.ok else 'MISMATCH'
        outcome = verdict.outcome if verdict.reason is None else \
            '%s:%s' % (verdict.outcome, verdict.reason)
        print("%3d %-16s %-28s expect=%-28s %s" % (verdict.index + 1, verdict.kind.value, outcome,
                                                    verdict.expect or '-', status))
        if not verdict.ok:
            failed += 1

    leaks = transcript.find_identity_leaks(parsed)
    for index in leaks:
        print("Line %d carries ID_MN in plain text" % (index + 1))

    if failed or leaks:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_record_transcript(args):
    recorded = transcript.record_transcript(args.seed or 0, args.bits, args.ha, args.mn, args.home,
                                            args.fa, args.cn, args.coa, sessions=args.sessions,
                                            authenticate=not args.no_auth)
    data = recorded.dump_string().encode('utf-8')
    if args.output:
        write_location(args.output, data, args)
        print("Recorded %d messages to %s" % (len(recorded.lines), args.output))
    else:
        sys.stdout.write(data.decode('utf-8'))
    return EXIT_OK


def cmd_predict(args):
    period = simnet.seconds_to_us(args.th)
    prop = simnet.seconds_to_us(args.prop)
    predicted = predicted_detection_time(period, prop)
    print("T_FD-R = 3 * %s + %s = %s s" % (simnet.format_time(period), simnet.format_time(prop),
                                           simnet.format_time(predicted)))
    return EXIT_OK


def add_common(parser):
    parser.add_argument(
        '--s3-access-key-id', help='access key for connecting to S3')
    parser.add_argument(
        '--s3-secret-access-key', help='secret key for connecting to S3')

    parser.add_argument(
        '--s3-endpoint',
        help='region endpoint for connecting to S3 (default: s3.amazonaws.com)')

    parser.add_argument(
        '--s3-region',
        help='S3 region name')

    parser.add_argument(
        '--seed', type=int,
        help='override the seed of the scenario')


def build_parser():
    parser = argparse.ArgumentParser(
        description='Simulate a virtual home agent group and its secure registration')

    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        default=False,
        help='log debugging details')

    sub = parser.add_subparsers(dest='command')
    sub.required = True

    run = sub.add_parser('run', help='simulate one scenario and print its report')
    add_common(run)
    run.add_argument('--format', choices=experiment.FORMATS, default='text',
                     help='report format (default: text)')
    run.add_argument('--trace', help='where to write the event trace')
    run.add_argument('--report', help='where to write the report instead of stdout')
    run.add_argument(
        'scenario',
        help='scenario file. Either s3://bucket/prefix/file or /path/on/local/fs')
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser('compare', help='run a scenario in all three modes')
    add_common(compare)
    compare.add_argument('--report', help='where to write the comparison table')
    compare.add_argument('scenario', help='scenario file')
    compare.set_defaults(func=cmd_compare)

    verify = sub.add_parser('verify-transcript',
                            help='replay a registration transcript against honest principals')
    add_common(verify)
    verify.add_argument('transcript', help='transcript file')
    verify.set_defaults(func=cmd_verify_transcript)

    record = sub.add_parser('record-transcript', help='record an honest registration transcript')
    add_common(record)
    record.add_argument('--bits', type=int, default=64, help='modulus size (default: 64)')
    record.add_argument('--ha', default='global-ha', help='Global HA address identity')
    record.add_argument('--mn', default='mn1', help='ID_MN')
    record.add_argument('--home', default='hm1', help='MN home address')
    record.add_argument('--fa', default='fa1', help='FA identity')
    record.add_argument('--cn', default='cn1', help='CN identity')
    record.add_argument('--coa', default='coa1', help='care-of address')
    record.add_argument('--sessions', type=int, default=2,
                        help='foreign registrations (default: 2)')
    record.add_argument('--no-auth', action='store_true', default=False,
                        help='leave out the MN <-> CN authentication')
    record.add_argument('--output', help='where to write the transcript instead of stdout')
    record.set_defaults(func=cmd_record_transcript)

    predict = sub.add_parser('predict', help='failure detection and recovery time')
    predict.add_argument('--th', type=float, required=True, help='heartbeat period, seconds')
    predict.add_argument('--prop', type=float, required=True,
                         help='VPN propagation delay, seconds')
    predict.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    try:
        return args.func(args)
    except (scenario.ScenarioError, transcript.TranscriptError, ValueError) as e:
        print("Invalid input:\n%s" % e)
        return EXIT_INVALID


if __name__ == '__main__':
    sys.exit(main())
