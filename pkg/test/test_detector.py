import unittest

import detector
from detector import ActionKind, DetectorState, Heartbeat, NoCandidateError
from hacore import HaId, HaRole, HaState, MobilityBinding, upsert_binding

T_H = 100000
OFFSET = 5001

HA1 = HaId(1, 'ha1')
HA2 = HaId(1, 'ha2')
HA3 = HaId(2, 'ha3')
HA4 = HaId(2, 'ha4')
HA5 = HaId(2, 'ha5')


def heartbeat(sender, k):
    return Heartbeat(sender, k, k * T_H)


class TestDetector(unittest.TestCase):
    def test_no_suspicion_while_heartbeats_arrive(self):
        state = DetectorState(T_H, OFFSET, [HA2])
        for k in range(50):
            detector.on_heartbeat(state, heartbeat(HA2, k))
            self.assertEqual(detector.tick(state, (k + 1) * T_H + OFFSET), set())
        self.assertEqual(state.peer_misses[HA2], 0)

    def test_three_misses(self):
        """A peer silent after round 99 is suspected on the tick at 10.305001 s."""
        state = DetectorState(T_H, OFFSET, [HA2])
        for k in range(100):
            detector.on_heartbeat(state, heartbeat(HA2, k))

        self.assertEqual(detector.tick(state, 10105001), set())
        self.assertEqual(detector.tick(state, 10205001), set())
        self.assertEqual(state.peer_misses[HA2], 2)
        self.assertEqual(detector.tick(state, 10305001), {HA2})
        self.assertEqual(detector.tick(state, 10405001), set())
        self.assertIn(HA2, state.suspected)

    def test_revival(self):
        state = DetectorState(T_H, OFFSET, [HA2])
        detector.tick(state, 4 * T_H + OFFSET)
        self.assertIn(HA2, state.suspected)
        self.assertTrue(detector.on_heartbeat(state, heartbeat(HA2, 4)))
        self.assertNotIn(HA2, state.suspected)
        self.assertFalse(detector.on_heartbeat(state, heartbeat(HA2, 5)))

    def test_late_heartbeat_keeps_highest_seq(self):
        state = DetectorState(T_H, OFFSET, [HA2])
        detector.on_heartbeat(state, heartbeat(HA2, 7))
        detector.on_heartbeat(state, heartbeat(HA2, 5))
        self.assertEqual(state.last_seq[HA2], 7)

    def test_new_sender_watched(self):
        state = DetectorState(T_H, OFFSET)
        detector.on_heartbeat(state, heartbeat(HA3, 1))
        self.assertIn(HA3, state.peer_misses)
        state.forget(HA3)
        self.assertNotIn(HA3, state.peer_misses)

    def test_bad_period(self):
        with self.assertRaises(ValueError):
            DetectorState(0)

    def test_predicted_detection_time(self):
        self.assertEqual(detector.predicted_detection_time(T_H, 5000), 305000)
        self.assertEqual(detector.predicted_detection_time(1000000, 0), 3000000)
        with self.assertRaises(ValueError):
            detector.predicted_detection_time(0, 5000)
        with self.assertRaises(ValueError):
            detector.predicted_detection_time(T_H, -1)


class TestEmitHeartbeat(unittest.TestCase):
    def test_emit(self):
        state = HaState(HA1, HaRole.ACTIVE)
        beat = detector.emit_heartbeat(state, 3 * T_H, T_H)
        self.assertEqual(beat.seq, 3)
        self.assertEqual(beat.role, HaRole.ACTIVE)
        with self.assertRaises(ValueError):
            detector.emit_heartbeat(state, 3 * T_H + 10, T_H)
        self.assertEqual(detector.emit_heartbeat(state, 4 * T_H, T_H).seq, 4)

    def test_failed_ha_is_silent(self):
        state = HaState(HA1, HaRole.ACTIVE)
        state.live = False
        with self.assertRaises(RuntimeError):
            detector.emit_heartbeat(state, 0, T_H)


def group():
    active = HaState(HA1, HaRole.ACTIVE)
    backup_a = HaState(HA2, HaRole.BACKUP)
    backup_b = HaState(HA3, HaRole.BACKUP)
    inactive = HaState(HA4, HaRole.INACTIVE)
    upsert_binding(backup_a, MobilityBinding('hm1', 'coa1', 600, 1))
    backup_a.set_throughput(10.0)
    return [active, backup_a, backup_b, inactive]


class TestRecovery(unittest.TestCase):
    def test_active_failure(self):
        """The idle Backup is promoted and the Inactive one recruited."""
        actions = detector.recover(HA1, HaRole.ACTIVE, group())
        self.assertEqual([(a.kind, a.target) for a in actions],
                         [(ActionKind.DELETE_FAULTY_ENTRY, HA1),
                          (ActionKind.PROMOTE_BACKUP, HA3),
                          (ActionKind.RECRUIT_BACKUP, HA4)])

    def test_active_failure_without_inactive(self):
        """The promotion goes ahead, the missing recruit is part of the plan."""
        actions = detector.recover(HA1, HaRole.ACTIVE, group()[:3])
        self.assertEqual([(a.kind, a.target) for a in actions],
                         [(ActionKind.DELETE_FAULTY_ENTRY, HA1),
                          (ActionKind.PROMOTE_BACKUP, HA3),
                          (ActionKind.NO_RECRUIT, None)])

    def test_active_failure_without_backup(self):
        with self.assertRaises(NoCandidateError):
            detector.recover(HA1, HaRole.ACTIVE, [HaState(HA4, HaRole.INACTIVE)])

    def test_backup_failure(self):
        actions = detector.recover(HA2, HaRole.BACKUP, group())
        self.assertEqual([(a.kind, a.target) for a in actions],
                         [(ActionKind.DELETE_FAULTY_ENTRY, HA2),
                          (ActionKind.RECRUIT_BACKUP, HA4)])
        with self.assertRaises(NoCandidateError):
            detector.recover(HA2, HaRole.BACKUP, group()[:3])

    def test_inactive_failure(self):
        """A transient failure needs nothing, a permanent one a spare on the same link."""
        self.assertEqual(detector.recover(HA4, HaRole.INACTIVE, group()), [detector.NO_OP])

        spares = [HaState(HaId(1, 'ha0'), HaRole.INACTIVE), HaState(HA5, HaRole.INACTIVE)]
        actions = detector.recover(HA4, HaRole.INACTIVE, group(), permanent=True, spares=spares)
        self.assertEqual(actions, [detector.RecoveryAction(ActionKind.REPLACE_INACTIVE, HA5)])

        with self.assertRaises(NoCandidateError):
            detector.recover(HA4, HaRole.INACTIVE, group(), permanent=True, spares=spares[:1])

    def test_recovery_actor(self):
        view = group()
        self.assertEqual(detector.recovery_actor(HaRole.ACTIVE, view[1:]).id, HA3)
        self.assertEqual(detector.recovery_actor(HaRole.BACKUP, view).id, HA1)
        self.assertIsNone(detector.recovery_actor(HaRole.BACKUP, view[1:]))


if __name__ == '__main__':
    unittest.main()
