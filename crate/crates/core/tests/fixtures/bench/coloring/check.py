import json
import sys

EDGES = [(0, 1), (1, 2), (2, 3), (3, 0)]

try:
    c = json.load(open(sys.argv[1]))["colors"]
    assert len(c) == 4 and all(x in (0, 1) for x in c)
except (ValueError, KeyError, TypeError, AssertionError):
    print("colors must be four values from {0, 1}")
    sys.exit(2)
bad = [e for e in EDGES if c[e[0]] == c[e[1]]]
if bad:
    print("same colour on edges", bad)
    sys.exit(1)
