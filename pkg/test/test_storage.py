import os
import shutil
import tempfile
import unittest

import scenario
import storage
from fixtures import QUIET


class TestMemoryStorage(unittest.TestCase):
    def test_base_functionality(self):
        stor = storage.MemoryStorage()
        stor.write_file('runs/b.txt', b'b')
        stor.write_file('runs/a.txt', b'a')
        stor.write_file('top.txt', b'top')

        self.assertTrue(stor.exists('runs/a.txt'))
        self.assertFalse(stor.exists('runs/c.txt'))
        self.assertEqual(stor.read_file('runs/b.txt'), b'b')
        self.assertEqual(list(stor.files('runs')), ['runs/a.txt', 'runs/b.txt'])
        self.assertEqual(len(list(stor.files())), 3)
        with self.assertRaises(RuntimeError):
            stor.read_file('missing')

    def test_load_scenario(self):
        stor = storage.MemoryStorage({'quiet.scenario': QUIET.encode('utf-8')})
        config = scenario.load_scenario(stor, 'quiet.scenario')
        self.assertEqual(config.active().name, 'ha1')


class TestFilesystemStorage(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_base_functionality(self):
        stor = storage.FilesystemStorage(self.tmpdir)
        stor.write_file('reports/run.txt', b'mode: vhaha\n')
        self.assertTrue(stor.exists('reports/run.txt'))
        self.assertEqual(stor.read_file('reports/run.txt'), b'mode: vhaha\n')
        self.assertEqual(list(stor.files('reports')), [os.path.join('reports', 'run.txt')])

    def test_missing_basedir(self):
        stor = storage.FilesystemStorage(os.path.join(self.tmpdir, 'nowhere'))
        with self.assertRaises(RuntimeError):
            stor.write_file('x', b'x')


class TestOpenLocation(unittest.TestCase):
    def test_local(self):
        stor, key = storage.open_location('/tmp/runs/report.txt')
        self.assertIsInstance(stor, storage.FilesystemStorage)
        self.assertEqual(stor.basedir, '/tmp/runs')
        self.assertEqual(key, 'report.txt')

        stor, key = storage.open_location('report.txt')
        self.assertEqual(stor.basedir, '.')

    def test_s3(self):
        stor, key = storage.open_location('s3://bucket/prefix/run/report.txt',
                                          {'endpoint': 'http://localhost:9000',
                                           'access_key_id': 'id', 'secret_access_key': 'key',
                                           'region': 'us-east-1'})
        self.assertIsInstance(stor, storage.S3Storage)
        self.assertEqual(stor.bucket, 'bucket')
        self.assertEqual(stor.prefix, 'prefix/run')
        self.assertEqual(key, 'report.txt')
        self.assertEqual(stor._fullkey(key), 'prefix/run/report.txt')

    def test_s3_without_key(self):
        with self.assertRaises(RuntimeError):
            storage.open_location('s3://bucket')


if __name__ == '__main__':
    unittest.main()
