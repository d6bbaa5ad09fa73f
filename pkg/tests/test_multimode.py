from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from scipy.stats import unitary_group

from conftest import random_params
from threebody.errors import AmbiguousStates, DimensionCap, TruncationError
from threebody.multimode import (
    DEFAULT_GAPS_MHZ,
    SWEEP_HEADER,
    CompositeSystem,
    CouplerTemplate,
    CouplingTerm,
    SubsystemSpec,
    analyze,
    asymptotic_params,
    build_coupler,
    build_flux_qubit,
    build_multilevel_qubit,
    build_oscillator,
    composite_from_dict,
    coupler_gap_sweep,
    exact_diagonalize,
    extract_effective_params,
    hierarchical_diagonalize,
    identify_computational_states,
    load_composite,
    monotonicity_violations,
)
from threebody.spin_model import BasisState, enumerate_transitions, energy

Z = np.diag([1.0, -1.0])  # +1 on bit 0


def _gap(sub):
    e = np.linalg.eigvalsh(sub.hamiltonian)
    return e[1] - e[0]


@pytest.mark.parametrize("eps,delta,gap", [(0.0, 1250.0, 2500.0), (300.0, 400.0, 1000.0)])
def test_flux_qubit_gap(eps, delta, gap):
    assert _gap(build_flux_qubit(eps, delta)) == pytest.approx(gap)


def test_flux_qubit_symmetry_point_superpositions():
    _, v = np.linalg.eigh(build_flux_qubit(0.0, 1000.0).hamiltonian)
    np.testing.assert_allclose(np.abs(v) ** 2, 0.5)


def test_subsystem_validation():
    with pytest.raises(ValueError):
        SubsystemSpec("a", [[0, 1], [0, 0]])
    with pytest.raises(ValueError):
        SubsystemSpec("a", [[1.0]])
    with pytest.raises(ValueError):
        SubsystemSpec("a", np.eye(2), {"z": [[0, 1j], [1j, 0]]})
    with pytest.raises(ValueError):
        CompositeSystem([build_coupler(1.0, "a")], [CouplingTerm(1.0, (("a", "nope"),))])
    with pytest.raises(ValueError):
        CompositeSystem([build_coupler(1.0, "a"), build_coupler(2.0, "a")])


def _two_spin(w1, w2, g):
    a = SubsystemSpec("a", 0.5 * w1 * Z, {"x": [[0, 1], [1, 0]]})
    b = SubsystemSpec("b", 0.5 * w2 * Z, {"x": [[0, 1], [1, 0]]})
    return CompositeSystem([a, b], [CouplingTerm(g, (("a", "x"), ("b", "x")))])


def test_two_spin_analytic_spectrum():
    w1, w2, g = 5000.0, 4300.0, 120.0
    s = np.hypot((w1 + w2) / 2, g)
    d = np.hypot((w1 - w2) / 2, g)
    expected = np.sort([-s, -d, d, s])
    np.testing.assert_allclose(exact_diagonalize(_two_spin(w1, w2, g)).energies, expected, atol=1e-10)


def test_uncoupled_spectrum_is_sum_of_parts():
    subs = [build_multilevel_qubit(5000, -300, name="a"), build_oscillator(3000, 4, name="b"),
            build_flux_qubit(100, 800, name="c")]
    e = exact_diagonalize(CompositeSystem(subs)).energies
    parts = [np.linalg.eigvalsh(s.hamiltonian) for s in subs]
    sums = np.sort([sum(c) for c in itertools.product(*parts)])
    np.testing.assert_allclose(e, sums, atol=1e-9)


def test_reordering_invariance():
    sys_ = CouplerTemplate().build(9000.0)
    a = exact_diagonalize(sys_).energies
    for order in ([3, 2, 1, 0], [1, 3, 0, 2]):
        np.testing.assert_allclose(exact_diagonalize(sys_.reordered(order)).energies, a, atol=1e-8)


def test_dimension_cap():
    subs = [build_oscillator(1000 * (i + 1), 9, name=f"o{i}") for i in range(4)]
    with pytest.raises(DimensionCap):
        exact_diagonalize(CompositeSystem(subs))
    with pytest.raises(DimensionCap):
        exact_diagonalize(CouplerTemplate().build(9000.0), cap=10)


def test_hierarchical_full_keep_equals_exact():
    sys_ = CouplerTemplate().build(9000.0)
    a = exact_diagonalize(sys_).energies
    b = hierarchical_diagonalize(sys_, list(sys_.dims)).energies
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_truncation_errors():
    sys_ = CouplerTemplate().build(9000.0)
    with pytest.raises(TruncationError):
        hierarchical_diagonalize(sys_, [3, 3, 1, 2])
    with pytest.raises(TruncationError):
        hierarchical_diagonalize(sys_, [4, 3, 3, 2])


def _oscillator_pair(rng):
    a = build_oscillator(rng.uniform(4000, 6000), 10, rng.uniform(-300, 0), "a")
    b = build_oscillator(rng.uniform(4000, 6000), 10, rng.uniform(-300, 0), "b")
    return CompositeSystem([a, b], [CouplingTerm(rng.uniform(50, 300), (("a", "x"), ("b", "x")))])


def test_hierarchical_convergence_two_oscillators():
    sys_ = _oscillator_pair(np.random.default_rng(0))
    exact = exact_diagonalize(sys_).energies[:4]
    errs = [np.abs(hierarchical_diagonalize(sys_, k).energies[:4] - exact).max() for k in range(3, 9)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < errs[0]


def test_uncoupled_truncation_is_exact():
    subs = [build_oscillator(5000, 6, -200, "a"), build_oscillator(4100, 6, -250, "b")]
    sys_ = CompositeSystem(subs)
    exact = exact_diagonalize(sys_).energies
    for k in (2, 3, 5):
        e = hierarchical_diagonalize(sys_, k).energies
        parts = [np.linalg.eigvalsh(s.hamiltonian)[:k] for s in subs]
        np.testing.assert_allclose(e, np.sort([x + y for x, y in itertools.product(*parts)]), atol=1e-9)
        assert e[0] == pytest.approx(exact[0])


def test_unitary_covariance():
    sys_ = CouplerTemplate().build(9000.0)
    a = exact_diagonalize(sys_).energies
    u = unitary_group.rvs(3, random_state=4)
    subs = list(sys_.subsystems)
    subs[1] = subs[1].rotated(u)
    b = exact_diagonalize(CompositeSystem(subs, sys_.couplings)).energies
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_uncoupled_identification_is_exact():
    tpl = CouplerTemplate(zz=(0, 0, 0), xx=(0, 0, 0), g=(0, 0, 0))
    ext = analyze(tpl.build(9000.0))
    assert ext.states.overlaps == pytest.approx((1.0,) * 8)
    p = ext.params
    np.testing.assert_allclose(p.omega, tpl.qubit_frequencies, atol=1e-9)
    np.testing.assert_allclose([*p.j, p.k123], 0.0, atol=1e-9)


def test_weak_coupling_overlaps():
    tpl = CouplerTemplate(zz=(5, 5, 5), xx=(1, 1, 1), g=(20, 20, 20))
    assert analyze(tpl.build(20000.0)).min_overlap > 0.99


def test_coupler_resonant_with_qubit_is_ambiguous():
    with pytest.raises(AmbiguousStates) as exc:
        analyze(CouplerTemplate().build(4900.0))
    assert exc.value.min_overlap < 0.5


def _diagonal_embedding(p):
    """Three spins with E = -1/2 sum w s + sum J s s + K s s s, written as a composite."""
    subs = [SubsystemSpec(f"q{i}", -0.5 * w * Z, {"z": Z}) for i, w in enumerate(p.omega)]
    terms = [CouplingTerm(j, ((f"q{a - 1}", "z"), (f"q{b - 1}", "z")))
             for (a, b), j in zip(((1, 2), (1, 3), (2, 3)), p.j)]
    terms.append(CouplingTerm(p.k123, (("q0", "z"), ("q1", "z"), ("q2", "z"))))
    return CompositeSystem(subs, terms)


def test_diagonal_embedding_roundtrip(rng):
    for _ in range(20):
        p = random_params(rng, scale=(6000.0, 150.0, 10.0))
        # keep every qubit frequency positive so bit 1 is the excited level
        p = type(p)(tuple(abs(w) + 500 for w in p.omega), p.j, p.k123)
        ext = analyze(_diagonal_embedding(p))
        np.testing.assert_allclose(ext.params.as_vector(), p.as_vector(), atol=1e-9 * 6000)
        assert np.abs(ext.residuals).max() <= 1e-9


def test_zz_model_matches_brute_force(rng):
    # flux qubits away from symmetry plus z-z couplings, 16-dim with a coupler
    subs = [build_flux_qubit(rng.uniform(-500, 500), rng.uniform(1500, 2500), f"q{i}") for i in range(3)]
    subs.append(build_coupler(15000.0, "c"))
    terms = [CouplingTerm(rng.uniform(-50, 50), ((f"q{a}", "z"), (f"q{b}", "z")))
             for a, b in ((0, 1), (0, 2), (1, 2))]
    sys_ = CompositeSystem(subs, terms)
    spec = exact_diagonalize(sys_)
    assert spec.vectors.shape == (16, 16)
    states = identify_computational_states(spec)
    ext = extract_effective_params(states)
    for t in enumerate_transitions():
        direct = states.energy(t.upper.label) - states.energy(t.lower.label)
        model = energy(ext.params, t.upper) - energy(ext.params, t.lower)
        assert model == pytest.approx(direct, abs=1e-9)


def test_sweep_default_template():
    tpl = CouplerTemplate()
    rows = coupler_gap_sweep(tpl)
    gaps = [r.gap for r in rows]
    assert gaps == list(DEFAULT_GAPS_MHZ) and all(np.diff(gaps) < 0)
    assert not any(r.flagged for r in rows)
    asym = asymptotic_params(tpl)
    assert abs(rows[0].params.k123 - asym.k123) <= 0.1 * abs(asym.k123)
    k = {r.gap: abs(r.params.k123) for r in rows}
    assert k[9000.0] > k[50000.0]
    # not a claim of the model, only a survey; the default template happens to be monotone
    assert monotonicity_violations(rows) == []
    assert len(rows[0].csv_row()) == len(SWEEP_HEADER)


def test_sweep_flags_ambiguous_rows():
    rows = coupler_gap_sweep(CouplerTemplate(), [9000.0, 4900.0])
    assert [r.flagged for r in rows] == [False, True]
    assert rows[1].min_overlap < 0.5


def test_sweep_requires_descending_gaps():
    with pytest.raises(ValueError):
        coupler_gap_sweep(CouplerTemplate(), [9000.0, 10000.0])


def test_two_level_template_builds():
    ext = analyze(CouplerTemplate(levels=2).build(9000.0))
    assert len(set(ext.states.indices)) == 8


def test_template_dict_roundtrip():
    tpl = CouplerTemplate(g=(-500.0, 500.0, 300.0))
    assert CouplerTemplate.from_dict(tpl.to_dict()) == tpl
    with pytest.raises(KeyError):
        CouplerTemplate.from_dict({"bogus": 1})


def test_json_schema_loader(tmp_path):
    desc = {
        "subsystems": [
            {"name": "q1", "builder": "flux_qubit", "epsilon_mhz": 0.0, "delta_mhz": 2500.0},
            {"name": "q2", "builder": "multilevel_qubit", "frequency_mhz": 4000.0, "anharmonicity_mhz": 1000.0},
            {"name": "q3", "hamiltonian_mhz": [[0, 0], [0, 3000]], "operators": {"z": [[0, 1], [1, 0]]}},
            {"name": "c", "builder": "coupler", "gap_mhz": 9000.0},
        ],
        "couplings": [{"strength_mhz": 100.0, "factors": [["q3", "z"], ["c", "z"]]}],
    }
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(desc))
    sys_ = load_composite(path)
    assert sys_.dims == (2, 3, 2, 2)
    np.testing.assert_allclose(exact_diagonalize(sys_).energies,
                               exact_diagonalize(composite_from_dict(desc)).energies)
    with pytest.raises(KeyError):
        composite_from_dict({"subsystems": [{"builder": "nope"}]})


def test_hierarchical_identification_matches_exact():
    sys_ = CouplerTemplate().build(9000.0)
    a = analyze(sys_).params.as_vector()
    b = analyze(sys_, keep=list(sys_.dims)).params.as_vector()
    np.testing.assert_allclose(a, b, atol=1e-8)
    c = analyze(sys_, keep=[2, 2, 2, 2]).params.as_vector()
    assert np.abs(c - a).max() > 1e-3  # dropping the second excited levels changes K
