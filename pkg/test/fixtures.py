"""Scenarios shared by the tests."""

import os

TEST_DIR = os.path.dirname(os.path.abspath(__file__))
SCENARIO_DIR = os.path.join(TEST_DIR, '..', 'scenarios')


def scenario_text(name):
    with open(os.path.join(SCENARIO_DIR, name + '.scenario')) as f:
        return f.read()


# Two links, no failure.
QUIET = """
[scenario]
mode = vhaha
seed = 1
duration = 3
heartbeat_period = 0.1
backups = 2

[ha ha1]
link = 1
role = active

[ha ha2]
link = 1
role = backup

[ha ha3]
link = 2
role = backup

[ha ha4]
link = 2

[fa fa1]

[mn mn1]
id = alice
home = hm1
fa = fa1

[cn cn1]
mn = mn1
rate = 50
stop = 2.5

[edges]
link1 -- link2 = 0.005
fa1 -- link1 = 0.002
cn1 -- link2 = 0.01
"""


def with_events(text, *events):
    return text + '\n[events]\n' + '\n'.join(events) + '\n'
