from mcache.cache import CacheKey, ClientCache, ClientTxState, canonical_args
from mcache.scheduler import MId, Response

K1 = CacheKey.of("findItemById", "svc", (1,))
K2 = CacheKey.of("findItemById", "svc", (2,))


def cachable(result, m):
    return Response(result=result, cachable=True, m=m)


def test_canonical_args_is_order_independent_for_dicts():
    assert canonical_args(({"b": 1, "a": 2},)) == canonical_args(({"a": 2, "b": 1},))
    assert CacheKey.of("f", None, (1, "x")) == CacheKey.of("f", None, (1, "x"))


def test_hit_appends_mid_to_L():
    c = ClientCache()
    t1 = ClientTxState(1)
    c.apply_response(t1, K1, cachable("a", MId(1, 1)))
    t2 = ClientTxState(2)
    assert c.lookup(t2, K1) == (True, "a")
    assert t2.L == [MId(1, 1)] and t2.hits == 1
    assert c.take_hits(t2) == [MId(1, 1)] and t2.L == []


def test_miss_counts():
    c = ClientCache()
    t = ClientTxState(1)
    assert c.lookup(t, K1) == (False, None)
    assert t.misses == 1 and c.stats.misses == 1


def test_result_after_write_is_private_until_commit():
    c = ClientCache()
    t1, t2 = ClientTxState(1), ClientTxState(2)
    c.apply_response(t1, K2, Response(cachable=False))
    assert t1.write_occurred
    c.apply_response(t1, K1, cachable("a", MId(1, 2)))
    assert c.entry(K1).locked_by == 1
    assert c.lookup(t2, K1)[0] is False
    assert c.lookup(t1, K1)[0] is True
    c.on_commit(t1)
    assert c.entry(K1).locked_by is None
    assert c.lookup(t2, K1)[0] is True


def test_abort_deletes_private_results():
    c = ClientCache()
    t1 = ClientTxState(1)
    c.apply_response(t1, K2, Response(cachable=False))
    c.apply_response(t1, K1, cachable("a", MId(1, 2)))
    c.on_abort(t1)
    assert K1 not in c and t1.produced == [] and not t1.write_occurred


def test_without_recovery_locking_results_are_shared():
    c = ClientCache(recovery_locking=False)
    t1, t2 = ClientTxState(1), ClientTxState(2)
    c.apply_response(t1, K2, Response(cachable=False))
    c.apply_response(t1, K1, cachable("a", MId(1, 2)))
    assert c.lookup(t2, K1)[0] is True


def test_invalidations_and_server_evictions():
    c = ClientCache()
    t = ClientTxState(1)
    c.apply_response(t, K1, cachable("a", MId(1, 1)))
    c.apply_response(t, K2, cachable("b", MId(1, 2)))
    c.apply_response(t, CacheKey.of("updateItem", "svc", (1,)), Response(cachable=False, h=[MId(1, 1)], evicted=[MId(1, 2)]))
    assert len(c) == 0
    assert c.stats.invalidations == 1 and c.stats.server_evictions == 1


def test_lru_capacity_one():
    c = ClientCache(capacity=1)
    t = ClientTxState(1)
    c.apply_response(t, K1, cachable("a", MId(1, 1)))
    c.apply_response(t, K2, cachable("b", MId(1, 2)))
    assert K1 not in c and K2 in c and c.stats.evictions == 1


def test_lru_skips_locked_entries():
    c = ClientCache(capacity=1)
    t1, t2 = ClientTxState(1), ClientTxState(2)
    c.apply_response(t1, K2, Response(cachable=False))
    c.apply_response(t1, K1, cachable("a", MId(1, 2)))
    c.apply_response(t2, K2, cachable("b", MId(2, 1)))
    # the locked entry survives; the unlocked one is the only candidate
    assert K1 in c and K2 not in c
    c.on_commit(t1)
    assert len(c) == 1


def test_touch_on_hit_changes_victim():
    c = ClientCache(capacity=2)
    t = ClientTxState(1)
    k3 = CacheKey.of("findItemById", "svc", (3,))
    c.apply_response(t, K1, cachable("a", MId(1, 1)))
    c.apply_response(t, K2, cachable("b", MId(1, 2)))
    c.lookup(ClientTxState(2), K1)
    c.apply_response(t, k3, cachable("c", MId(1, 3)))
    assert K1 in c and K2 not in c


def test_serve_hits_off():
    c = ClientCache(serve_hits=False)
    t = ClientTxState(1)
    c.apply_response(t, K1, cachable("a", MId(1, 1)))
    assert c.lookup(t, K1)[0] is False


def test_invoke_delegates_with_pending_hits():
    c = ClientCache()
    t = ClientTxState(1)
    c.apply_response(t, K1, cachable("a", MId(1, 1)))
    c.invoke(t, K1, lambda L: None)
    seen = []

    def delegate(L):
        seen.append(L)
        return cachable("b", MId(1, 2))

    assert c.invoke(t, K2, delegate) == "b"
    assert seen == [[MId(1, 1)]]
