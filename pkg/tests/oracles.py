"""Slow, obviously-correct reference implementations used as test oracles."""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~“”‘’«»–—…")


def tokens(text: str) -> list[str]:
    out = []
    for raw in text.split():
        word = raw.casefold()
        lo, hi = 0, len(word)
        while lo < hi and word[lo] in PUNCT:
            lo += 1
        while hi > lo and word[hi - 1] in PUNCT:
            hi -= 1
        if lo < hi:
            out.append(word[lo:hi])
    return out


def overlap(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    short, long_ = (ta, tb) if len(ta) <= len(tb) else (tb, ta)
    pool = list(long_)
    shared = 0
    for tok in short:
        if tok in pool:
            pool.remove(tok)
            shared += 1
    return shared / len(short)


def aligned(t1, t2, theta: float) -> bool:
    return (
        t1.source == t2.source
        and t1.target == t2.target
        and overlap(t1.condition, t2.condition) >= theta
        and overlap(t1.action, t2.action) >= theta
    )


def max_matching(preds, truths, theta: float) -> int:
    """Maximum bipartite matching size by DP over truth subsets."""
    n_t = len(truths)
    edges = [[aligned(p, t, theta) for t in truths] for p in preds]

    @lru_cache(maxsize=None)
    def best(i: int, used: int) -> int:
        if i == len(preds):
            return 0
        result = best(i + 1, used)
        for j in range(n_t):
            if edges[i][j] and not used >> j & 1:
                result = max(result, 1 + best(i + 1, used | 1 << j))
        return result

    return best(0, 0)


def best_grouping(cands, theta: float, need: int) -> list[list]:
    """Exhaustive grouping with the most accepted groups.

    A group holds at most one candidate per provider and has a centre that
    aligns with every other member. Ties are broken by the total number of
    votes in accepted groups. Each connected component of the alignment
    graph is searched on its own. Returns the accepted groups.
    """
    n = len(cands)
    adj = [
        frozenset(
            j for j in range(n)
            if j != i and cands[i].provider != cands[j].provider and aligned(cands[i], cands[j], theta)
        )
        for i in range(n)
    ]
    providers = [c.provider for c in cands]
    seen: set[int] = set()
    accepted: list[list] = []
    for start in range(n):
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v] - seen:
                seen.add(w)
                stack.append(w)
        accepted += [[cands[i] for i in g] for g in _search(comp, adj, providers, need)]
    return accepted


def _groups_with(first: int, remaining: frozenset, adj, providers):
    """Every valid group inside ``remaining`` that contains ``first``."""
    found = set()
    for centre in {first} | (adj[first] & remaining):
        pool = sorted((adj[centre] & remaining) - {first})
        base = {centre, first}
        if len({providers[i] for i in base}) != len(base):
            continue
        for size in range(len(pool) + 1):
            for extra in combinations(pool, size):
                group = base | set(extra)
                if len({providers[i] for i in group}) == len(group):
                    found.add(frozenset(group))
    return found


def _search(comp, adj, providers, need: int) -> list[frozenset]:
    @lru_cache(maxsize=None)
    def solve(remaining: frozenset):
        if not remaining:
            return (0, 0), ()
        first = min(remaining)
        best_score, best_groups = None, ()
        for group in _groups_with(first, remaining, adj, providers):
            sub_score, sub_groups = solve(remaining - group)
            ok = len(group) >= need
            score = (sub_score[0] + ok, sub_score[1] + (len(group) if ok else 0))
            if best_score is None or score > best_score:
                best_score, best_groups = score, sub_groups + ((group,) if ok else ())
        return best_score, best_groups

    return [sorted(g) for g in solve(frozenset(comp))[1]]
