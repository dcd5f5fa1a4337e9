import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attn_transition.model import ModelConfig, forward, init_random
from attn_transition.transition import (
    DegenerateEliminationWarning,
    IntervalError,
    ScheduleError,
    TransitionParams,
    compare_generation,
    dispense,
    interval_count,
    plan_schedule,
    run_with_transition,
)
from helpers import random_attention
from oracles import dispense_scalar, schedule_oracle


# -- schedule ----------------------------------------------------------------

def test_twenty_nine_intervals():
    assert interval_count(2030, 70) == 29
    sched = plan_schedule(2030, 32, TransitionParams(interval=70, lay=1))
    assert [e // 70 for _, _, e in sched.entries] == list(range(3, 30))


def test_four_layers_only_layer_one():
    i = 10
    sched = plan_schedule(8 * i, 4, TransitionParams(interval=i, lay=2))
    assert sched.entries == ((1, 2 * i, 3 * i), (1, 3 * i, 4 * i))


def test_eight_layers_enumerated():
    p = TransitionParams(interval=16, lay=2)
    sched = plan_schedule(256, 8, p)
    assert list(sched.entries) == schedule_oracle(256, 8, 2, 16)
    assert list(sched.entries) == [
        (1, 32, 48), (1, 48, 64),
        (2, 64, 80), (2, 80, 96),
        (3, 96, 112), (3, 112, 128),
        (4, 128, 144), (4, 144, 160),
        (5, 160, 176), (5, 176, 192),
    ]


def test_scheduling_stops_when_intervals_run_out():
    sched = plan_schedule(100, 16, TransitionParams(interval=10, lay=3))
    # intervals 3..10 -> groups (3,4,5), (6,7,8); (9,10) is not a full group
    assert [(L, e // 10) for L, _, e in sched.entries] == [(1, 3), (1, 4), (1, 5), (2, 6), (2, 7), (2, 8)]


def test_lay_zero_is_empty():
    assert len(plan_schedule(10, 4, TransitionParams(lay=0, interval=16))) == 0


@pytest.mark.parametrize("kwargs", [
    dict(seq_len=40, n_layers=4, params=TransitionParams(interval=16)),
    dict(seq_len=400, n_layers=3, params=TransitionParams(interval=16)),
    dict(seq_len=400, n_layers=6, params=TransitionParams(interval=16), start_interval=2),
])
def test_schedule_errors(kwargs):
    with pytest.raises(ScheduleError):
        plan_schedule(**kwargs)


@settings(max_examples=300)
@given(st.integers(4, 16), st.integers(1, 6), st.integers(1, 40), st.integers(0, 600), st.integers(3, 6))
def test_schedule_properties(n_layers, lay, interval, extra, start):
    seq_len = start * interval + extra
    sched = plan_schedule(seq_len, n_layers, TransitionParams(interval=interval, lay=lay), start)
    assert list(sched.entries) == schedule_oracle(seq_len, n_layers, lay, interval, start)
    for layer, s, e in sched.entries:
        assert 0 < layer < n_layers - 2
        assert s >= 2 * interval and e - s == interval and e <= seq_len
        assert e // interval >= start
    counts = {L: len(sched.for_layer(L)) for L in sched.layers}
    assert all(c == lay for c in counts.values())
    assert sched.layers == list(range(1, 1 + len(sched.layers)))


# -- dispense ----------------------------------------------------------------

def compare_with_oracle(att, s, e, p):
    got, rep = dispense(att, s, e, p, warn=False)
    ref, info = dispense_scalar(att.tolist(), s, e, p.alpha, p.beta, p.near_factor, p.far_factor,
                                p.mask_floor, p.halve_first_token, p.renormalize)
    np.testing.assert_allclose(got, np.array(ref), rtol=0, atol=1e-12)
    for (b, h, r), d in info.items():
        assert rep.eliminated[b, h, r - s] == pytest.approx(d["eliminated"], abs=1e-12)
        assert rep.mask_sum[b, h, r - s] == pytest.approx(d["mask_sum"], abs=1e-12)
        assert rep.kept[b, h, r - s] == pytest.approx(d["kept"], abs=1e-12)
    return got, rep


def test_alpha_zero_leaves_tensor_unchanged(rng):
    att = random_attention(rng, 1, 2, 12)
    out, rep = dispense(att, 8, 12, TransitionParams(alpha=0.0, beta=0.7, interval=4))
    assert np.array_equal(out, att)
    assert not rep.eliminated.any() and not rep.added.any() and not rep.n_eliminated.any()


def test_beta_zero_only_eliminates(rng):
    att = random_attention(rng, 2, 2, 16)
    out, rep = dispense(att, 8, 12, TransitionParams(alpha=1.5, beta=0.0, interval=4), warn=False)
    assert rep.eliminated.sum() > 0
    assert np.array_equal(out[:, :, 8:12].sum(axis=-1), rep.kept)
    assert np.array_equal(rep.post_sum, rep.kept)


def test_hand_built_case():
    # b=1, n=1, i=2, s=4, e=6; six keys
    l = 6
    att = np.zeros((1, 1, l, l))
    for q in range(l):
        att[0, 0, q, : q + 1] = 1.0 / (q + 1)
    att[0, 0, 4, :5] = [0.50, 0.05, 0.20, 0.10, 0.15]
    att[0, 0, 5, :6] = [0.40, 0.30, 0.02, 0.08, 0.12, 0.08]
    p = TransitionParams(alpha=0.6, beta=0.5, interval=2)  # bound = 0.1
    out, rep = compare_with_oracle(att, 4, 6, p)
    # row 4: drops 0.05, window keys 0..3 -> mask [1, 0.01, 1, 1], sum 3.01
    q4 = 0.05 / 3.01 * 0.5
    np.testing.assert_allclose(out[0, 0, 4, :5], [0.5 + 3 * q4, 0 + 3 * q4, 0.2 + 7 * q4, 0.1 + 7 * q4, 0.15],
                               atol=1e-15)
    # row 5: drops keys 2, 3 and 5; mask over keys 0..3 = [1, 1, 0.01, 0.01]
    q5 = 0.18 / 2.02 * 0.5
    np.testing.assert_allclose(out[0, 0, 5], [0.4 + 3 * q5, 0.3 + 3 * q5, 7 * q5, 7 * q5, 0.12, 0.0], atol=1e-15)
    assert rep.n_eliminated.tolist() == [[[1, 3]]]
    assert np.array_equal(out[0, 0, :4], att[0, 0, :4])


def test_mass_identity_when_mask_full(rng):
    # flat rows over the window keep every window entry above the bound
    l, i, s, e = 24, 4, 12, 16
    att = np.zeros((1, 1, l, l))
    for q in range(l):
        att[0, 0, q, : q + 1] = 1.0 / (q + 1)
        if q >= s:
            att[0, 0, q, q] += 0.0
    p = TransitionParams(alpha=0.5, beta=0.8, interval=i, halve_first_token=True)
    out, rep = compare_with_oracle(att, s, e, p)
    assert np.all(rep.mask_sum == 2 * i)
    np.testing.assert_allclose(rep.post_sum - rep.kept, 5 * p.beta * rep.eliminated, atol=1e-9)


def test_first_token_rule(rng):
    att = random_attention(rng, 1, 2, 12, sink=6.0)
    p = TransitionParams(alpha=0.0, beta=0.0, interval=4, halve_first_token=True)
    out, rep = dispense(att, 8, 12, p)
    np.testing.assert_array_equal(out[:, :, 8:12, 0], att[:, :, 8:12, 0] - att[:, :, 8:12, 0] * 0.5)
    np.testing.assert_allclose(rep.eliminated, att[:, :, 8:12, 0] / 2, atol=1e-15)


def test_renormalize_restores_row_mass(rng):
    att = random_attention(rng, 2, 3, 20)
    out, rep = compare_with_oracle(att, 12, 16, TransitionParams(alpha=1.2, interval=4, renormalize=True))
    np.testing.assert_allclose(out[:, :, 12:16].sum(axis=-1), 1.0, atol=1e-9)


@pytest.mark.parametrize("s,e,i", [(4, 6, 3), (2, 4, 2), (8, 13, 4), (10, 14, 4)])
def test_interval_preconditions(rng, s, e, i):
    att = random_attention(rng, 1, 1, 12)
    with pytest.raises(IntervalError):
        dispense(att, s, e, TransitionParams(interval=i))


def test_unnormalized_rows_rejected(rng):
    att = random_attention(rng, 1, 1, 12) * 1.5
    with pytest.raises(IntervalError):
        dispense(att, 8, 12, TransitionParams(interval=4))


def test_degenerate_elimination_warns(rng):
    att = random_attention(rng, 1, 1, 12)
    with pytest.warns(DegenerateEliminationWarning):
        out, rep = dispense(att, 8, 12, TransitionParams(alpha=12.0, interval=4))
    assert rep.degenerate
    # nothing survives, so the whole window falls to the mask floor
    assert np.all(rep.kept == 0)
    np.testing.assert_allclose(rep.mask_sum, 8 * 0.01)
    expected = np.repeat(7 * 0.5 / 0.08 * rep.eliminated[0, 0][:, None], 4, axis=1)
    np.testing.assert_allclose(out[0, 0, 8:12, 4:8], expected)


def random_case(rng):
    b = int(rng.choice([1, 2]))
    n = int(rng.choice([1, 4]))
    i = int(rng.choice([2, 8]))
    k = int(rng.integers(3, 7))
    s, e = (k - 1) * i, k * i
    l = e + int(rng.integers(0, 2 * i))
    p = TransitionParams(
        alpha=float(rng.choice([0.5, 1.0, 1.5])),
        beta=float(rng.choice([0.1, 0.5, 1.2])),
        interval=i,
        halve_first_token=bool(rng.integers(0, 2)),
    )
    return random_attention(rng, b, n, l), s, e, p


@pytest.mark.parametrize("seed", range(40))
def test_oracle_equivalence_and_invariants(seed):
    rng = np.random.default_rng(seed)
    att, s, e, p = random_case(rng)
    out, rep = compare_with_oracle(att, s, e, p)
    i = e - s
    untouched = np.ones(att.shape[2], dtype=bool)
    untouched[s:e] = False
    assert np.array_equal(out[:, :, untouched], att[:, :, untouched])
    assert np.array_equal(out[..., e:], att[..., e:])
    expected_added = p.beta * rep.eliminated * (p.near_factor + p.far_factor) * i / rep.mask_sum
    np.testing.assert_allclose(rep.post_sum - rep.kept, expected_added, atol=1e-9)
    np.testing.assert_allclose(rep.post_sum, rep.kept + rep.added, atol=1e-9)
    assert np.all(rep.eliminated >= 0)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0.0, 3.0), min_size=2, max_size=5))
def test_elimination_count_monotone_in_alpha(seed, alphas):
    rng = np.random.default_rng(seed)
    att = random_attention(rng, 1, 2, 24)
    counts = [dispense(att, 16, 24, TransitionParams(alpha=a, interval=8), warn=False)[1].n_eliminated.sum()
              for a in sorted(alphas)]
    assert counts == sorted(counts)


def test_report_record_keys(rng):
    att = random_attention(rng, 1, 1, 12)
    _, rep = dispense(att, 8, 12, TransitionParams(interval=4), layer=2)
    rec = rep.to_record()
    assert (rec["layer"], rec["interval"], rec["s"], rec["e"]) == (2, 3, 8, 12)


def test_params_validation():
    for bad in (dict(alpha=-1), dict(beta=-0.1), dict(interval=0), dict(mask_floor=0), dict(near_factor=-1)):
        with pytest.raises(ValueError):
            TransitionParams(**bad)


# -- model integration -------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    w = init_random(ModelConfig(rng_seed=42))
    toks = np.random.default_rng(7).integers(0, 256, 96).tolist()
    return w, toks


def traces_equal(a, b):
    return (np.array_equal(a.logits, b.logits)
            and all(np.array_equal(x, y) for x, y in zip(a.hidden, b.hidden))
            and all(np.array_equal(x, y) for x, y in zip(a.attention, b.attention)))


def test_empty_schedule_is_plain_forward(toy):
    w, toks = toy
    assert traces_equal(run_with_transition(w, toks, TransitionParams(lay=0)), forward(w, toks))


def test_alpha_zero_is_plain_forward(toy):
    w, toks = toy
    t = run_with_transition(w, toks, TransitionParams(alpha=0.0, beta=1.2))
    assert traces_equal(t, forward(w, toks))
    assert len(t.reports) == 2


def test_beta_zero_with_no_elimination_is_plain_forward(toy):
    w, toks = toy
    assert traces_equal(run_with_transition(w, toks, TransitionParams(alpha=0.0, beta=0.0)), forward(w, toks))


def test_transition_changes_only_scheduled_layer(toy):
    w, toks = toy
    base, t = forward(w, toks), run_with_transition(w, toks, TransitionParams(alpha=1.0, beta=0.5))
    assert np.array_equal(t.attention[0], base.attention[0])
    assert not np.array_equal(t.attention[1], base.attention[1])
    assert [(r.layer, r.s, r.e) for r in t.reports] == [(1, 32, 48), (1, 48, 64)]
    # rows before the first scheduled interval are untouched at every layer
    assert np.array_equal(t.hidden[-1][:32], base.hidden[-1][:32])


def test_generation_comparison_disabled(toy):
    w, toks = toy
    comp = compare_generation(w, toks[:64], 4, None)
    assert comp.baseline == comp.transition and comp.logit_l2 == [0.0] * 4


def test_no_warnings_leak_from_hooks(toy):
    w, toks = toy
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_with_transition(w, toks, TransitionParams(alpha=50.0))
