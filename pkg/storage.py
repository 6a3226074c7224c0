#!/usr/bin/env python
"""Where scenarios, transcripts, traces and reports are read and written:
a local directory, an S3 bucket or memory."""

import collections
import errno
import logging
import os
from io import BytesIO

import boto3
import botocore.exceptions

log = logging.getLogger(__name__)


class Storage:

    def __init__(self):
        pass

    def read_file(self, key):
        raise NotImplementedError()

    def write_file(self, key, data):
        raise NotImplementedError()

    def exists(self, key):
        raise NotImplementedError()

    def files(self, subdir=None):
        raise NotImplementedError()


def _mkdir_recursive(path):
    try:
        os.makedirs(path)
    except OSError as exc:
        if exc.errno == errno.EEXIST and os.path.isdir(path):
            pass
        else:
            raise


class FilesystemStorage(Storage):

    def __init__(self, basedir='.'):
        self.basedir = basedir

    def read_file(self, key):
        fullpath = os.path.join(self.basedir, key)
        with open(fullpath, 'rb') as f:
            return f.read()

    def write_file(self, key, data):
        fullpath = os.path.join(self.basedir, key)

        if not os.path.exists(self.basedir):
            raise RuntimeError("Base directory doesn't exist: '%s'" %
                               self.basedir)

        dirname = os.path.dirname(fullpath)

        if dirname and not os.path.exists(dirname):
            _mkdir_recursive(dirname)

        with open(fullpath, 'wb+') as f:
            f.write(data)

    def exists(self, key):
        return os.path.exists(os.path.join(self.basedir, key))

    def files(self, subdir=None):
        basedir = self.basedir

        if subdir is not None:
            basedir = os.path.join(basedir, subdir)

        for dirname, _, files in os.walk(basedir):
            for filename in sorted(files):
                yield os.path.relpath(os.path.join(dirname, filename), self.basedir)


class S3Storage(Storage):

    def __init__(self,
                 endpoint,
                 bucket,
                 prefix="",
                 aws_access_key_id=None,
                 aws_secret_access_key=None,
                 aws_region=None):
        self.bucket = bucket
        self.prefix = prefix

        self.client = boto3.client('s3', endpoint_url=endpoint,
                                   aws_access_key_id=aws_access_key_id,
                                   aws_secret_access_key=aws_secret_access_key,
                                   region_name=aws_region)
        self.resource = boto3.resource(
            's3',
            endpoint_url=endpoint,
            aws_access_key_id=aws_access_key_id,
            aws_secret_access_key=aws_secret_access_key,
            region_name=aws_region)

    def _fullkey(self, key):
        return os.path.normpath(os.path.join(self.prefix, key.lstrip('/')))

    def read_file(self, key):
        s3obj = self.resource.Object(self.bucket, self._fullkey(key))

        buf = BytesIO()
        s3obj.download_fileobj(buf)
        return buf.getvalue()

    def write_file(self, key, data):
        s3obj = self.resource.Object(self.bucket, self._fullkey(key))

        buf = BytesIO()
        buf.write(data)
        buf.seek(0)
        s3obj.upload_fileobj(buf)

    def exists(self, key):
        try:
            self.client.head_object(Bucket=self.bucket, Key=self._fullkey(key))
        except botocore.exceptions.ClientError as e:
            if e.response.get('Error', {}).get('Code') in ('404', 'NoSuchKey'):
                return False
            raise
        return True

    def files(self, subdir=None):
        dirname = self.prefix

        if subdir is not None:
            dirname = os.path.join(dirname, subdir.lstrip('/'))

        dirname = os.path.normpath(dirname)

        paginator = self.client.get_paginator('list_objects')
        for result in paginator.paginate(Bucket=self.bucket, Prefix=dirname):
            for fileobj in result.get('Contents') or []:
                yield os.path.relpath(fileobj.get('Key'), self.prefix or '.')


class MemoryStorage(Storage):
    """Keeps files in a dict."""

    def __init__(self, files=None):
        self.data = collections.OrderedDict(files or {})

    def read_file(self, key):
        try:
            return self.data[key]
        except KeyError:
            raise RuntimeError("No such file: '%s'" % key)

    def write_file(self, key, data):
        self.data[key] = bytes(data)

    def exists(self, key):
        return key in self.data

    def files(self, subdir=None):
        for key in sorted(self.data):
            if subdir is None or key.startswith(subdir.rstrip('/') + '/'):
                yield key


def open_location(location, s3_options=None):
    """Split a file location into a storage and a key.

    Keyword arguments:
    location - `s3://bucket/prefix/file` or a local path (string).
    s3_options - endpoint, access key, secret key and region (dict).

    Return (Storage, key).
    """
    if location.startswith('s3://'):
        path = location[len('s3://'):]
        if '/' not in path:
            raise RuntimeError("S3 location needs a key: '%s'" % location)
        bucket, key = path.split('/', 1)
        prefix, name = os.path.split(key)
        options = s3_options or {}
        stor = S3Storage(options.get('endpoint'),
                         bucket,
                         prefix,
                         options.get('access_key_id'),
                         options.get('secret_access_key'),
                         options.get('region'))
        return stor, name

    dirname, name = os.path.split(location)
    return FilesystemStorage(dirname or '.'), name
