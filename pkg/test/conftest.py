import os
import sys

# The suite is written for `unittest discover -s test`, which puts this
# directory on sys.path so `from fixtures import ...` resolves; mirror that.
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
