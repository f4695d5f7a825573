"""Pure-Python scan loops over the dense transition table.

Used when the compiled kernel is unavailable, and as its reference.
"""


def search(delta, out_start, out_ids, payload):
    s = 0
    found = []
    for i, b in enumerate(payload):
        s = delta[(s << 8) | b]
        lo = out_start[s]
        hi = out_start[s + 1]
        if lo != hi:
            for k in range(lo, hi):
                found.append((out_ids[k], i))
    return found


def matched(delta, out_start, out_ids, pat_len, anchor, payload):
    s = 0
    last = len(payload) - 1
    seen = set()
    for i, b in enumerate(payload):
        s = delta[(s << 8) | b]
        lo = out_start[s]
        hi = out_start[s + 1]
        if lo != hi:
            for k in range(lo, hi):
                pid = out_ids[k]
                a = anchor[pid]
                if a:
                    if a & 1 and i + 1 != pat_len[pid]:
                        continue
                    if a & 2 and i != last:
                        continue
                seen.add(pid)
    return sorted(seen)
