import json
import sys

W = [3, 4, 5]
V = [4, 5, 6]
CAP = 8

try:
    take = json.load(open(sys.argv[1]))["take"]
    assert all(isinstance(i, int) and 0 <= i < len(W) for i in take)
except (ValueError, KeyError, TypeError, AssertionError):
    print("take must be a list of item indices")
    sys.exit(2)
if len(set(take)) != len(take):
    print("an item was taken twice")
    sys.exit(1)
if sum(W[i] for i in take) > CAP:
    print("capacity exceeded")
    sys.exit(1)
print(json.dumps({"objective": sum(V[i] for i in take)}))
