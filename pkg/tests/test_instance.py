from __future__ import annotations

import numpy as np
import pytest

from orsched.distributions import LogNormalParams, NormalParams
from orsched.instance import (
    PROFILES,
    Instance,
    InstanceFormatError,
    ORDaySlot,
    Surgery,
    SurgeryType,
    load_instance,
    synthesize_instance,
    write_instance,
)


def make_type(tid="T1", mean=100.0, var=400.0, pool=None):
    from orsched.distributions import fit_type_params, lognormal_from_moments

    if pool is not None:
        sm, normal, lognormal = fit_type_params(pool)
        return SurgeryType(tid, sm, normal, lognormal, len(pool), tuple(pool))
    ln = lognormal_from_moments(mean, var)
    return SurgeryType(tid, mean, NormalParams(mean, var), ln, 30, ())


def tiny_instance():
    types = [make_type("T1", 100.0, 400.0), make_type("T2", 200.0, 900.0)]
    surgeries = [
        Surgery("S1", "T1", 0, None),
        Surgery("S2", "T2", 0, 1),
        Surgery("S3", "T1", 1, None),
    ]
    slots = [ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR1", 1, 510.0)]
    return Instance(types=types, surgeries=surgeries, slots=slots, alpha=0.15)


def test_due_index_rules():
    inst = tiny_instance()
    s1, s2, s3 = inst.surgeries
    assert inst.due_index(s2) == 1
    # undated surgeries inherit the latest stated due date plus one
    assert inst.due_index(s1) == 2
    assert inst.due_index(s3) == 2
    assert inst.must_schedule(s2)
    assert not inst.must_schedule(s1)


def test_due_index_without_any_dated_surgery():
    inst = tiny_instance()
    surgeries = [Surgery("S1", "T1", 0, None)]
    inst2 = Instance(types=inst.types, surgeries=surgeries, slots=inst.slots)
    assert inst2.due_index(surgeries[0]) == inst2.horizon + 1


def test_validation_errors():
    inst = tiny_instance()
    with pytest.raises(InstanceFormatError):
        Instance(types=inst.types, surgeries=[Surgery("S1", "NOPE", 0, None)], slots=inst.slots)
    with pytest.raises(InstanceFormatError):
        Instance(types=inst.types, surgeries=[Surgery("S1", "T1", 2, 1)], slots=inst.slots)
    with pytest.raises(InstanceFormatError):
        Instance(
            types=inst.types,
            surgeries=inst.surgeries,
            slots=[ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR1", 0, 510.0)],
        )
    with pytest.raises(ValueError):
        Instance(types=inst.types, surgeries=inst.surgeries, slots=inst.slots, alpha=1.5)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    pool_a = list(60.0 + 10.0 * rng.random(40))
    pool_b = list(200.0 + 30.0 * rng.random(35))
    types = [make_type("T1", pool=pool_a), make_type("T2", pool=pool_b)]
    inst = Instance(
        types=types,
        surgeries=[Surgery("S1", "T1", 0, None), Surgery("S2", "T2", 1, 3)],
        slots=[ORDaySlot("OR1", d, 510.0) for d in range(5)],
        alpha=0.2,
        name="rt",
    )
    write_instance(inst, tmp_path)
    back = load_instance(tmp_path, alpha=0.2)
    assert [t.type_id for t in back.types] == ["T1", "T2"]
    # fitted parameters survive the round trip bit-for-bit (repr floats)
    for t0, t1 in zip(inst.types, back.types):
        assert t0.sample_mean == t1.sample_mean
        assert t0.normal == t1.normal
        assert t0.lognormal == t1.lognormal
    assert back.surgeries[0].due is None
    assert back.surgeries[1].due == 3
    assert len(back.slots) == 5


def test_load_cleaning_and_exclusion(tmp_path):
    (tmp_path / "types.csv").write_text(
        "type_id,duration_minutes\n"
        "T1,100\nT1,120\nT1,-5\nT1,900\n"
        "T2,600\nT2,650\n",
        encoding="utf-8",
    )
    (tmp_path / "surgeries.csv").write_text(
        "surgery_id,type_id,release,due\nS1,T1,0,\nS2,T2,0,\n", encoding="utf-8"
    )
    (tmp_path / "slots.csv").write_text(
        "or_id,day,capacity_minutes\nOR1,0,510\n", encoding="utf-8"
    )
    with pytest.warns(UserWarning):
        inst = load_instance(tmp_path)
    t1 = inst.get_type("T1")
    assert t1.n_observations == 2  # -5 and 900 dropped
    assert t1.sample_mean == pytest.approx(110.0)
    # T2 mean 625 > capacity 510 -> surgery excluded
    assert [s.surgery_id for s in inst.surgeries] == ["S1"]


def test_load_reports_row_numbers(tmp_path):
    (tmp_path / "types.csv").write_text(
        "type_id,duration_minutes\nT1,100\nT1,abc\n", encoding="utf-8"
    )
    (tmp_path / "surgeries.csv").write_text(
        "surgery_id,type_id,release,due\n", encoding="utf-8"
    )
    (tmp_path / "slots.csv").write_text(
        "or_id,day,capacity_minutes\nOR1,0,510\n", encoding="utf-8"
    )
    with pytest.raises(InstanceFormatError, match="row 3"):
        load_instance(tmp_path)


@pytest.mark.parametrize("profile", sorted(PROFILES))
def test_synthesized_profiles_match_shape(profile):
    prof = PROFILES[profile]
    inst = synthesize_instance(profile, seed=11)
    assert len(inst.surgeries) == prof.n_surgeries
    assert len(inst.types) == prof.n_types
    assert sum(1 for s in inst.surgeries if s.has_due) == prof.n_dated
    hist = [0] * len(prof.release_histogram)
    for s in inst.surgeries:
        hist[s.release] += 1
    assert tuple(hist) == prof.release_histogram
    assert len(inst.slots) == sum(prof.ors_per_day)
    assert inst.mean_sd() == pytest.approx(prof.mean_sd, abs=5.0)
    if prof.total_mean_duration is not None:
        assert inst.total_mean_duration() == pytest.approx(
            prof.total_mean_duration, rel=0.05
        )
    # every type actually used, pools big enough to fit from
    used = {s.type_id for s in inst.surgeries}
    assert used == {t.type_id for t in inst.types}
    assert all(t.n_observations >= 30 for t in inst.types)
    assert all(0.0 < d <= 720.0 for t in inst.types for d in t.duration_pool)


def test_synthesis_deterministic():
    a = synthesize_instance("ent2", seed=3)
    b = synthesize_instance("ent2", seed=3)
    assert a.types == b.types
    assert a.surgeries == b.surgeries
    assert a.slots == b.slots
    c = synthesize_instance("ent2", seed=4)
    assert c.types != a.types


def test_ent_capacity_layout():
    inst = synthesize_instance("ent1", seed=0)
    caps = {(sl.day, sl.or_id): sl.capacity for sl in inst.slots}
    assert caps[(4, "OR2")] == 720.0
    assert caps[(4, "OR1")] == 510.0
    assert caps[(0, "OR2")] == 510.0
    assert inst.total_capacity() == pytest.approx(5310.0)


def test_cardiology_capacity_total():
    inst = synthesize_instance("cardiology1", seed=0)
    assert inst.total_capacity() == pytest.approx(11730.0)
    assert len(inst.slots) == 23
