import json
import sys

try:
    q = json.load(open(sys.argv[1]))["queens"]
except (ValueError, KeyError, TypeError) as e:
    print("bad solution:", e)
    sys.exit(2)
if sorted(q) != [0, 1, 2, 3]:
    print("columns must be a permutation of 0..3")
    sys.exit(1)
for i in range(4):
    for j in range(i + 1, 4):
        if abs(q[i] - q[j]) == j - i:
            print("queens in rows", i, "and", j, "share a diagonal")
            sys.exit(1)
