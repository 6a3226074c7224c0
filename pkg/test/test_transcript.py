import unittest

import registration
import transcript
from registration import MessageKind
from transcript import Transcript

ID_MN = 'alice-secret-id'


class TestTranscript(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.recorded = transcript.record_transcript(5, 64, 'global-ha', ID_MN, 'hm1', 'fa1',
                                                    'cn1', 'coa1', sessions=2)

    def lines_of(self, kind):
        return [line for line in self.recorded.lines if line.kind == kind]

    def with_lines(self, lines):
        return Transcript(self.recorded.world_spec, lines)

    def assert_all_ok(self, verdicts):
        for verdict in verdicts:
            self.assertTrue(verdict.ok, "line %d (%s): %s %s, expected %s" % (
                verdict.index + 1, verdict.kind, verdict.outcome, verdict.reason,
                verdict.expect))

    def test_recorded_shape(self):
        """Two registrations and one authentication give 13 wire messages."""
        kinds = [line.kind for line in self.recorded.lines]
        self.assertEqual(len(kinds), 13)
        self.assertEqual(kinds[:5], [MessageKind.ADVERTISEMENT, MessageKind.REQUEST,
                                     MessageKind.FORWARDED_REQUEST, MessageKind.REPLY,
                                     MessageKind.INNER_REPLY])
        self.assertEqual(kinds[10:], [MessageKind.AUTH_REQUEST, MessageKind.FORWARDED_AUTH,
                                      MessageKind.AUTH_RESPONSE])
        self.assertTrue(all(line.expect == 'accept' for line in self.recorded.lines))

    def test_honest_transcript_accepted(self):
        self.assert_all_ok(transcript.verify_transcript(self.recorded))

    def test_dump_and_parse(self):
        """A dumped transcript parses back to the same lines and verifies."""
        parsed = transcript.parse_transcript(self.recorded.dump_string())
        self.assertEqual(parsed.world_spec, self.recorded.world_spec)
        self.assertEqual([line.data for line in parsed.lines],
                         [line.data for line in self.recorded.lines])
        self.assert_all_ok(transcript.verify_transcript(parsed))

    def test_no_identity_leak(self):
        """ID_MN never appears in plain text on the wire."""
        self.assertEqual(transcript.find_identity_leaks(self.recorded), [])

    def test_leak_detected(self):
        leaky = self.recorded.lines[0].replayed('accept')
        leaky.data += ID_MN.encode('utf-8')
        self.assertEqual(transcript.find_identity_leaks(self.with_lines([leaky])), [0])

    def test_replays_rejected(self):
        """Every replayed message after the first session is rejected."""
        lines = []
        for line in self.recorded.lines[:5]:
            lines.append(line)
            if line.kind != MessageKind.ADVERTISEMENT:
                lines.append(line.replayed())
        verdicts = transcript.verify_transcript(self.with_lines(lines))
        self.assert_all_ok(verdicts)
        reasons = [v.reason for v in verdicts if v.outcome == 'reject']
        self.assertEqual(reasons, ['replayed-nonce', 'replayed-nonce',
                                   'stale-nonce', 'stale-nonce'])

    def test_old_request_rejected_after_rotation(self):
        """A first-session request is useless once the MN has moved on."""
        first_r3 = self.lines_of(MessageKind.FORWARDED_REQUEST)[0]
        lines = self.recorded.lines[:10] + [first_r3.replayed('reject:unknown-temp-id')]
        self.assert_all_ok(transcript.verify_transcript(self.with_lines(lines)))

    def test_auth_replay_rejected(self):
        a1 = self.lines_of(MessageKind.AUTH_REQUEST)[0]
        a2 = self.lines_of(MessageKind.FORWARDED_AUTH)[0]
        lines = self.recorded.lines + [a1.replayed('reject:replayed-nonce'),
                                       a2.replayed('reject:replayed-nonce')]
        self.assert_all_ok(transcript.verify_transcript(self.with_lines(lines)))

    def check_tampering(self, kind):
        """Every single-bit corruption of the first `kind` message is rejected
        and leaves the receiver able to accept the original."""
        lines = []
        for line in self.recorded.lines:
            if line.kind == kind and not any(l.kind == kind for l in lines):
                lines.extend(line.flipped(bit) for bit in range(len(line.data) * 8))
            lines.append(line)
        verdicts = transcript.verify_transcript(self.with_lines(lines))
        self.assert_all_ok(verdicts)
        self.assertEqual(verdicts[-1].outcome, 'accept')

    def test_tampered_request(self):
        self.check_tampering(MessageKind.REQUEST)

    def test_forged_request_then_honest_exchange(self):
        """A forged R1 is refused by the home agent, the honest exchange still completes."""
        r1 = self.lines_of(MessageKind.REQUEST)[0]
        forged = r1.flipped(len(r1.data) * 8 - 1, 'reject:bad-mn-mac')
        lines = self.recorded.lines[:1] + [forged] + self.recorded.lines[1:]
        verdicts = transcript.verify_transcript(self.with_lines(lines))
        self.assert_all_ok(verdicts)
        self.assertEqual([v.outcome for v in verdicts[2:]],
                         ['accept'] * (len(self.recorded.lines) - 1))

    def test_tampered_forwarded_request(self):
        self.check_tampering(MessageKind.FORWARDED_REQUEST)

    def test_tampered_reply(self):
        self.check_tampering(MessageKind.REPLY)

    def test_tampered_inner_reply(self):
        self.check_tampering(MessageKind.INNER_REPLY)

    def test_tampered_auth_request(self):
        self.check_tampering(MessageKind.AUTH_REQUEST)

    def test_tampered_forwarded_auth(self):
        self.check_tampering(MessageKind.FORWARDED_AUTH)

    def test_tampered_auth_response(self):
        self.check_tampering(MessageKind.AUTH_RESPONSE)

    def test_expect_reason_mismatch(self):
        """A rejection for another reason than the expected one is flagged."""
        r1 = self.lines_of(MessageKind.REQUEST)[0]
        lines = self.recorded.lines[:2] + [r1.replayed('reject:bad-mn-mac')]
        verdicts = transcript.verify_transcript(self.with_lines(lines))
        self.assertEqual(verdicts[-1].reason, 'replayed-nonce')
        self.assertFalse(verdicts[-1].ok)

    def test_message_sizes(self):
        sizes = transcript.message_sizes(self.recorded)
        self.assertEqual(list(sizes), list(registration.WIRE_LABELS.values()))
        self.assertTrue(all(size > 0 for size in sizes.values()))
        self.assertGreater(sizes['R3'], sizes['R1'])


class TestParseTranscript(unittest.TestCase):
    HEADER = '# world seed=1 bits=64 ha=g mn=a home=h fa=f cn=c coa=x\n'

    def test_missing_header(self):
        with self.assertRaises(transcript.TranscriptError):
            transcript.parse_transcript('dir=FA->MN kind=Advertisement hex=00\n')

    def test_incomplete_header(self):
        with self.assertRaises(transcript.TranscriptError):
            transcript.parse_transcript('# world seed=1 bits=64\n')

    def test_bad_lines(self):
        for bad in ('dir=FA->MN kind=Nope hex=00',
                    'dir=FA->MN kind=Advertisement hex=0',
                    'dir=FA->MN kind=Advertisement hex=zz',
                    'garbage'):
            with self.assertRaises(transcript.TranscriptError):
                transcript.parse_transcript(self.HEADER + bad + '\n')

    def test_expectations_and_arrows(self):
        parsed = transcript.parse_transcript(
            self.HEADER +
            '\n'
            '# comment\n'
            'dir=FA->MN kind=Advertisement hex=00ff expect=reject:malformed\n'
            'dir=MN→FA kind=Request hex= expect=accept\n')
        self.assertEqual(parsed.world_spec['seed'], 1)
        self.assertEqual([line.expect for line in parsed.lines], ['reject:malformed', 'accept'])
        self.assertEqual(parsed.lines[0].data, b'\x00\xff')
        self.assertEqual(parsed.lines[1].dst, 'FA')

    def test_garbage_bytes_are_malformed(self):
        parsed = transcript.parse_transcript(
            self.HEADER + 'dir=FA->MN kind=Advertisement hex=00ff expect=reject:malformed\n')
        verdicts = transcript.verify_transcript(parsed)
        self.assertEqual(verdicts[0].reason, 'malformed')
        self.assertTrue(verdicts[0].ok)


if __name__ == '__main__':
    unittest.main()
