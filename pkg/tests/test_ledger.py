import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ReplayLedger
from propulsion import DuplicateIdentity, Individual, PopulationLedger, SearchSpace
from propulsion.ledger import DEACTIVATED, DEFERRED, read_ledger_csv


def ind(gen, loss=1.0, island=0, rank=0):
    return Individual((float(gen),), loss, island, rank, gen)


def ident(gen, island=0, rank=0):
    return (island, rank, gen)


def test_record_on_empty_ledger():
    led = PopulationLedger()
    led.record(ind(0))
    assert [i.identity for i in led.active_view()] == [ident(0)]


def test_deactivation_before_arrival_is_absorbed():
    led = PopulationLedger()
    assert led.deactivate(ident(1)) == DEFERRED
    led.record(ind(1))
    assert not led.get(ident(1)).active
    assert led.replaced_cache == [] and led.active_view() == []


def test_duplicate_record_raises():
    led = PopulationLedger()
    led.record(ind(0))
    with pytest.raises(DuplicateIdentity):
        led.record(ind(0))


def test_unevaluated_record_raises():
    with pytest.raises(ValueError):
        PopulationLedger().record(Individual((0.0,), None, 0, 0, 0))


def test_deactivate_present_and_twice():
    led = PopulationLedger()
    led.record(ind(0))
    assert led.deactivate(ident(0)) == DEACTIVATED
    assert led.deactivate(ident(0)) == DEACTIVATED
    assert len(led) == 1 and not led.records[0].active


def test_deactivate_absent_goes_to_cache():
    led = PopulationLedger()
    assert led.deactivate(ident(7)) == DEFERRED
    assert led.replaced_cache == [ident(7)]


def test_active_view_examples():
    led = PopulationLedger()
    assert led.active_view() == []
    led.record(ind(0))
    led.record(ind(1))
    led.deactivate(ident(0))
    assert [i.identity for i in led.active_view()] == [ident(1)]


def test_active_view_losses_align_with_individuals():
    led = PopulationLedger()
    for g in range(200):
        led.record(ind(g, loss=float(g % 13)))
    for g in range(0, 200, 3):
        led.deactivate(ident(g))
    view = led.active_view()
    assert list(view.losses) == [i.loss for i in view]


def test_hundred_records_forty_deactivated():
    led, oracle = PopulationLedger(), ReplayLedger()
    for g in range(100):
        led.record(ind(g))
        oracle.record(ident(g))
    for g in range(0, 100, 5):
        for k in (g, g + 1):
            led.deactivate(ident(k))
            oracle.deactivate(ident(k))
    view = [i.identity for i in led.active_view()]
    assert len(view) == 60 and view == oracle.active()


def test_flush_resolves_arrived_identity():
    led = PopulationLedger()
    led.deactivate(ident(3))
    # simulate arrival without the record-time shortcut
    led.replaced_cache, cached = [], led.replaced_cache
    led.record(ind(3))
    led.replaced_cache = cached
    assert led.flush_cache() == 1
    assert led.replaced_cache == [] and not led.get(ident(3)).active


def test_flush_keeps_absent_identity():
    led = PopulationLedger()
    led.deactivate(ident(3))
    assert led.flush_cache() == 0
    assert led.replaced_cache == [ident(3)]


def test_flush_counts_resolvable():
    led = PopulationLedger()
    for g in (1, 2, 3):
        led.deactivate(ident(g))
    pending = led.replaced_cache
    led.replaced_cache = []
    led.record(ind(1))
    led.record(ind(2))
    led.replaced_cache = pending
    assert led.flush_cache() == 2
    assert led.replaced_cache == [ident(3)]


def test_best_and_csv_round_trip():
    space = SearchSpace.box(1, 10.0)
    led = PopulationLedger()
    for g, loss in enumerate([3.0, 0.1 + 0.2, 2.0]):
        led.record(ind(g, loss))
    led.deactivate(ident(2))
    assert led.best(1)[0].identity == ident(1)
    text = led.dump_csv(space)
    assert text.splitlines()[0] == "origin_island,origin_rank,generation,active,loss,x1"
    back = read_ledger_csv(io.StringIO(text), space)
    assert [(i.identity, i.active, i.loss, i.genes) for i in back] == [
        (i.identity, i.active, i.loss, i.genes) for i in led.records
    ]


# -- replay oracle ------------------------------------------------------------

identities = st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 6))
operations = st.lists(
    st.one_of(
        st.tuples(st.just("record"), identities),
        st.tuples(st.just("deactivate"), identities),
        st.tuples(st.just("flush"), st.none()),
    ),
    max_size=200,
)


@settings(max_examples=300, deadline=None)
@given(operations)
def test_replay_oracle_agreement(ops):
    led, oracle = PopulationLedger(), ReplayLedger()
    inactive = 0
    for op, arg in ops:
        if op == "record":
            expected = oracle.record(arg)
            if expected == "duplicate":
                with pytest.raises(DuplicateIdentity):
                    led.record(Individual((0.0,), 1.0, *arg))
            else:
                led.record(Individual((0.0,), 1.0, *arg))
        elif op == "deactivate":
            assert led.deactivate(arg) == oracle.deactivate(arg)
        else:
            assert led.flush_cache() == oracle.flush()
        now_inactive = sum(not r.active for r in led.records)
        assert now_inactive >= inactive
        inactive = now_inactive
    assert [i.identity for i in led.active_view()] == oracle.active()
    assert led.replaced_cache == oracle.cache
    assert not set(led.replaced_cache) & {r.identity for r in led.records}


@settings(max_examples=100, deadline=None)
@given(st.permutations(["record", "deactivate", "flush"]), st.booleans())
def test_race_absorption(order, repeat):
    led = PopulationLedger()
    steps = list(order) + (list(order) if repeat else [])
    recorded = False
    for step in steps:
        if step == "record" and not recorded:
            led.record(ind(5))
            recorded = True
        elif step == "deactivate":
            led.deactivate(ident(5))
        elif step == "flush":
            led.flush_cache()
    if not recorded:
        led.record(ind(5))
    led.flush_cache()
    assert not led.get(ident(5)).active and led.replaced_cache == []
