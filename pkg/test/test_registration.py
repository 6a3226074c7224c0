import unittest
from unittest import mock

import registration
import selfcert
from registration import MessageKind, RegistrationMessage, RegistrationRejected


def make_world(seed=3):
    return registration.build_world(seed, 64, 'global-ha', fas=['fa1', 'fa2'],
                                    mns=[('alice', 'hm1'), ('bob', 'hm2')], cns=['cn1'])


def register(world, home='hm1', fa='fa1', coa='coa1'):
    """Run one honest registration and return (grant, m5)."""
    fa_state, mn = world.fas[fa], world.mns[home]
    adv = registration.fa_advertise(fa_state, coa)
    m3 = registration.fa_forward_request(fa_state, registration.mn_build_request(mn, adv))
    m4, grant = registration.ha_process_request(world.ha, m3)
    m5 = registration.fa_process_reply(fa_state, m4)
    return grant, m5


class TestRegistrationMessage(unittest.TestCase):
    def test_serialization(self):
        """Bytes decode to an equal message, nested messages included."""
        world = make_world()
        adv = registration.fa_advertise(world.fas['fa1'], 'coa1')
        m2 = registration.mn_build_request(world.mns['hm1'], adv)
        m3 = registration.fa_forward_request(world.fas['fa1'], m2)

        decoded = RegistrationMessage.from_bytes(m3.to_bytes())
        self.assertEqual(decoded, m3)
        self.assertEqual(decoded['m2'], m2)
        self.assertEqual(decoded.label(), 'R3')
        self.assertEqual(list(decoded.fields), list(registration.FIELDS[decoded.kind]))

    def test_malformed(self):
        for data in (b'', b'\x00\x00\x00\x03Foo', b'garbage-bytes'):
            with self.assertRaises(RegistrationRejected) as ctx:
                RegistrationMessage.from_bytes(data)
            self.assertEqual(ctx.exception.reason, 'malformed')

    def test_trailing_bytes(self):
        world = make_world()
        adv = registration.fa_advertise(world.fas['fa1'], 'coa1')
        with self.assertRaises(RegistrationRejected):
            RegistrationMessage.from_bytes(adv.to_bytes() + b'x')

    def test_missing_field(self):
        message = RegistrationMessage(MessageKind.ADVERTISEMENT, [('fa_id', 'fa1')])
        with self.assertRaises(RegistrationRejected) as ctx:
            message['n_fa']
        self.assertEqual(ctx.exception.reason, 'malformed')


class TestRegistration(unittest.TestCase):
    def test_initial_registration(self):
        world = make_world()
        entry = world.ha.entries['hm1']
        self.assertEqual(entry.id_mn, 'alice')
        self.assertEqual(world.mns['hm1'].record.temp_id, entry.initial.temp_id)
        self.assertFalse(world.mns['hm1'].registered)

    def test_duplicate_identity(self):
        world = make_world()
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.initial_registration(world.ha, 'alice', 'hm9')
        self.assertEqual(ctx.exception.reason, 'duplicate-identity')

    def test_full_exchange(self):
        """MN, FA and HA end up sharing K_MN-FA, the HA records the CoA."""
        world = make_world()
        grant, m5 = register(world)
        mn = world.mns['hm1']

        self.assertEqual(registration.mn_process_reply(mn, m5), 'accept')
        self.assertTrue(mn.registered)
        self.assertEqual(grant.mn_home, 'hm1')
        self.assertEqual(grant.coa, 'coa1')
        self.assertEqual(grant.fa_id, 'fa1')
        self.assertEqual(grant.sequence, 1)
        self.assertEqual(grant.lookup, 'initial')
        self.assertEqual(mn.k_mn_fa, world.fas['fa1'].visitors['coa1'])
        self.assertEqual(mn.k_mn_fa, world.ha.entries['hm1'].k_mn_fa)

    def test_parameters_rotate(self):
        """The second registration uses the dynamic record and retires the initial one."""
        world = make_world()
        mn = world.mns['hm1']
        first_temp_id = mn.record.temp_id
        registration.mn_process_reply(mn, register(world)[1])
        self.assertNotEqual(mn.record.temp_id, first_temp_id)
        self.assertTrue(mn.record.dynamic)

        grant, m5 = register(world, fa='fa2', coa='coa2')
        registration.mn_process_reply(mn, m5)
        entry = world.ha.entries['hm1']
        self.assertEqual(grant.lookup, 'dynamic')
        self.assertEqual(grant.sequence, 2)
        self.assertIsNone(entry.initial)
        self.assertEqual(entry.coa, 'coa2')
        with self.assertRaises(RegistrationRejected):
            world.ha.lookup_temp_id(first_temp_id)

    def test_request_nonces_forgotten_on_rotation(self):
        """Only nonces under the live records are kept."""
        world = make_world()
        mn = world.mns['hm1']
        entry = world.ha.entries['hm1']
        for fa, coa in (('fa1', 'coa1'), ('fa2', 'coa2'), ('fa1', 'coa3')):
            m5 = register(world, fa=fa, coa=coa)[1]
            registration.mn_process_reply(mn, m5)
            self.assertEqual(entry.seen_nonces, {m5['n_mn']})

    def test_tampered_request_rejected_at_home(self):
        """The FA relays a corrupted request, the HA refuses it."""
        world = make_world()
        fa, mn = world.fas['fa1'], world.mns['hm1']
        adv = registration.fa_advertise(fa, 'coa1')
        m2 = registration.mn_build_request(mn, adv)
        m2.fields['key_request'] = 2
        m3 = registration.fa_forward_request(fa, m2)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.ha_process_request(world.ha, m3)
        self.assertEqual(ctx.exception.reason, 'bad-mn-mac')

    def test_forged_fa_witness(self):
        """An FA presenting a witness the TA never issued is not authenticated."""
        world = make_world()
        fa = world.fas['fa1']
        adv = registration.fa_advertise(fa, 'coa1')
        m3 = registration.fa_forward_request(fa, registration.mn_build_request(world.mns['hm1'],
                                                                               adv))
        witness = m3['w_f']
        m3.fields['w_f'] = selfcert.Witness(witness.value + 1, witness.salt)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.ha_process_request(world.ha, m3)
        self.assertEqual(ctx.exception.reason, 'bad-fa-mac')

    def test_wrong_fa(self):
        world = make_world()
        adv = registration.fa_advertise(world.fas['fa1'], 'coa1')
        m2 = registration.mn_build_request(world.mns['hm1'], adv)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.fa_forward_request(world.fas['fa2'], m2)
        self.assertEqual(ctx.exception.reason, 'stale-nonce')

    def test_unknown_temp_id(self):
        world = make_world()
        other = make_world(seed=4)
        adv = registration.fa_advertise(world.fas['fa1'], 'coa1')
        mn = other.mns['hm1']
        mn.params, mn.ha_witness = world.params, world.ha.keys.witness
        m3 = registration.fa_forward_request(world.fas['fa1'],
                                             registration.mn_build_request(mn, adv))
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.ha_process_request(world.ha, m3)
        self.assertEqual(ctx.exception.reason, 'unknown-temp-id')

    def test_forged_request_keeps_fa_nonce(self):
        """A request the HA refuses does not use up N_FA at the FA."""
        world = make_world()
        fa, mn = world.fas['fa1'], world.mns['hm1']
        adv = registration.fa_advertise(fa, 'coa1')
        m2 = registration.mn_build_request(mn, adv)
        forged = RegistrationMessage.from_bytes(m2.to_bytes())
        forged.fields['temp_id'] = b'\x00' * len(m2['temp_id'])
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.ha_process_request(world.ha, registration.fa_forward_request(fa, forged))
        self.assertEqual(ctx.exception.reason, 'unknown-temp-id')
        self.assertIn(adv['n_fa'], fa.advertised)

        m4, _ = registration.ha_process_request(world.ha, registration.fa_forward_request(fa, m2))
        m5 = registration.fa_process_reply(fa, m4)
        self.assertEqual(registration.mn_process_reply(mn, m5), 'accept')
        self.assertNotIn(adv['n_fa'], fa.advertised)
        self.assertEqual(fa.sessions, {})

    def test_request_relayed_once(self):
        world = make_world()
        fa = world.fas['fa1']
        adv = registration.fa_advertise(fa, 'coa1')
        m2 = registration.mn_build_request(world.mns['hm1'], adv)
        registration.fa_forward_request(fa, m2)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.fa_forward_request(fa, m2)
        self.assertEqual(ctx.exception.reason, 'replayed-nonce')

    def test_request_for_other_coa(self):
        """N_FA only admits the CoA it was advertised with."""
        world = make_world()
        fa = world.fas['fa1']
        adv = registration.fa_advertise(fa, 'coa1')
        m2 = registration.mn_build_request(world.mns['hm1'], adv)
        m2.fields['mn_coa'] = 'elsewhere'
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.fa_forward_request(fa, m2)
        self.assertEqual(ctx.exception.reason, 'stale-nonce')

    def test_authentication_leaves_registry_alone(self):
        world = make_world()
        fa = world.fas['fa1']
        adv = registration.fa_advertise(fa, 'coa1')
        m2 = registration.mn_build_request(world.mns['hm1'], adv)
        entry, record, _ = registration.ha_authenticate_request(
            world.ha, registration.fa_forward_request(fa, m2))
        self.assertIs(record, entry.initial)
        self.assertEqual(entry.sequence, 0)
        self.assertEqual(entry.seen_nonces, set())
        self.assertIsNone(entry.pending)

    def test_reply_for_other_nonce(self):
        """A reply carrying another pending nonce is stale at the MN."""
        world = make_world()
        mn = world.mns['hm1']
        _, m5 = register(world)
        mn.pending_nonce = b'\x00' * registration.NONCE_SIZE
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.mn_process_reply(mn, m5)
        self.assertEqual(ctx.exception.reason, 'stale-nonce')
        self.assertFalse(mn.registered)


class TestAuthentication(unittest.TestCase):
    def setUp(self):
        self.world = make_world()
        self.mn = self.world.mns['hm1']
        registration.mn_process_reply(self.mn, register(self.world)[1])

    def test_shared_key(self):
        """MN and CN agree on K_CN-MN through the home agent."""
        a2 = registration.ha_forward_auth(self.world.ha,
                                          registration.mn_auth_request(self.mn, 'cn1'))
        cn = self.world.cns['cn1']
        a3 = registration.cn_process_auth(cn, a2)
        key = registration.mn_process_auth_response(self.mn, a3)
        self.assertEqual(key, cn.sessions['coa1'])
        self.assertEqual(len(key), selfcert.KEY_SIZE)
        self.assertEqual(self.mn.cn_keys['cn1'], key)

    def test_authenticate_in_one_call(self):
        cn = self.world.cns['cn1']
        key = registration.mn_cn_authenticate(self.mn, self.world.ha, cn)
        self.assertEqual(key, cn.sessions['coa1'])
        self.assertEqual(self.mn.auth_pending, {})

    def test_substituted_cn_witness(self):
        a2 = registration.ha_forward_auth(self.world.ha,
                                          registration.mn_auth_request(self.mn, 'cn1'))
        a3 = registration.cn_process_auth(self.world.cns['cn1'], a2)
        witness = a3['w_cn']
        a3.fields['w_cn'] = selfcert.Witness(witness.value + 1, witness.salt)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.mn_process_auth_response(self.mn, a3)
        self.assertEqual(ctx.exception.reason, 'bad-cn-mac')
        self.assertNotIn('cn1', self.mn.cn_keys)

    def test_unregistered_mn(self):
        with self.assertRaises(ValueError):
            registration.mn_auth_request(self.world.mns['hm2'], 'cn1')

    def test_unknown_cn(self):
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.ha_forward_auth(self.world.ha,
                                         registration.mn_auth_request(self.mn, 'cn9'))
        self.assertEqual(ctx.exception.reason, 'unknown-coa')

    def test_auth_nonces_forgotten_on_move(self):
        cn = self.world.cns['cn1']
        entry = self.world.ha.entries['hm1']
        registration.mn_cn_authenticate(self.mn, self.world.ha, cn)
        self.assertEqual(len(entry.auth_nonces), 1)

        registration.mn_process_reply(self.mn, register(self.world, fa='fa2', coa='coa2')[1])
        self.assertEqual(entry.auth_nonces, set())

    def test_cn_nonce_window(self):
        """The CN remembers the newest REPLAY_WINDOW nonces."""
        cn = self.world.cns['cn1']
        with mock.patch.object(registration, 'REPLAY_WINDOW', 2):
            for _ in range(3):
                registration.mn_cn_authenticate(self.mn, self.world.ha, cn)
        self.assertEqual(len(cn.seen_nonces), 2)
        self.assertEqual(set(cn.seen_nonces.values()), {'coa1'})

    def test_response_replay(self):
        a2 = registration.ha_forward_auth(self.world.ha,
                                          registration.mn_auth_request(self.mn, 'cn1'))
        a3 = registration.cn_process_auth(self.world.cns['cn1'], a2)
        registration.mn_process_auth_response(self.mn, a3)
        with self.assertRaises(RegistrationRejected) as ctx:
            registration.mn_process_auth_response(self.mn, a3)
        self.assertEqual(ctx.exception.reason, 'stale-nonce')


class TestRegistry(unittest.TestCase):
    def test_import_keeps_newer(self):
        world = make_world()
        registration.mn_process_reply(world.mns['hm1'], register(world)[1])
        entry = world.ha.export_entry('hm1')

        replica = registration.HaRegistry('global-ha', world.ha.keys, world.params,
                                          selfcert.RandomStream(1, 'replica'))
        self.assertTrue(replica.import_entry(entry))
        self.assertEqual(replica.by_coa('coa1').home, 'hm1')

        older = world.ha.export_entry('hm1')
        older.sequence = 0
        self.assertFalse(replica.import_entry(older))
        self.assertEqual(replica.entries['hm1'].sequence, 1)

    def test_unknown_coa(self):
        with self.assertRaises(RegistrationRejected) as ctx:
            make_world().ha.by_coa('nowhere')
        self.assertEqual(ctx.exception.reason, 'unknown-coa')


if __name__ == '__main__':
    unittest.main()
