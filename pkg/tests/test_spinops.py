import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from hmae import spinops
from hmae.spinops import Hamiltonian, HamiltonianTerm, PauliString

from oracles import dense_oracle, kron_string, random_hamiltonian


def heisenberg2(J=1.0):
    return Hamiltonian.from_list(2, [(J, "XX"), (J, "YY"), (J, "ZZ")])


def tfim2(J, h):
    return Hamiltonian.from_list(2, [(-J, "ZZ"), (-h, "XI"), (-h, "IX")])


def partial_trace_loops(rho, keep, n):
    """Element-by-element partial trace, written independently of the library."""
    keep = sorted(keep)
    trace_out = [s for s in range(n) if s not in keep]
    dk = 1 << len(keep)
    out = np.zeros((dk, dk), dtype=complex)

    def index(bits_keep, bits_out):
        bits = [0] * n
        for s, b in zip(keep, bits_keep):
            bits[s] = b
        for s, b in zip(trace_out, bits_out):
            bits[s] = b
        return int("".join(map(str, bits)), 2)

    for a, b in itertools.product(itertools.product((0, 1), repeat=len(keep)), repeat=2):
        ia = int("".join(map(str, a)), 2) if a else 0
        ib = int("".join(map(str, b)), 2) if b else 0
        for e in itertools.product((0, 1), repeat=len(trace_out)):
            out[ia, ib] += rho[index(a, e), index(b, e)]
    return out


class TestPauliAlgebra:

    def test_string_validation(self):
        with pytest.raises(ValueError):
            PauliString("XQ")
        with pytest.raises(ValueError):
            PauliString("")
        assert PauliString("ixz").ops == "IXZ"

    def test_support_and_locality(self):
        p = PauliString("IXIZ")
        assert p.support == frozenset({1, 3})
        assert p.locality == 2
        assert PauliString.from_sites(4, {1: "X", 3: "Z"}) == p

    def test_dense_matches_kron(self):
        for ops in ("X", "YZ", "XIZ", "ZYXI"):
            np.testing.assert_allclose(PauliString(ops).to_dense(), kron_string(ops), atol=0)

    def test_commutation_matches_dense(self):
        for a, b in itertools.product(["".join(p) for p in itertools.product("IXYZ", repeat=2)], repeat=2):
            A, B = kron_string(a), kron_string(b)
            dense = np.allclose(A @ B, B @ A)
            assert PauliString(a).commutes_with(PauliString(b)) == dense

    def test_term_rejects_complex_coefficient(self):
        with pytest.raises(ValueError):
            HamiltonianTerm(1.0 + 1e-6j, PauliString("X"))
        assert HamiltonianTerm(2.0 + 1e-13j, PauliString("X")).coeff == 2.0

    def test_term_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            HamiltonianTerm(float("nan"), PauliString("Z"))


class TestHamiltonian:

    def test_canonical_order_and_merge(self):
        H = Hamiltonian.from_list(2, [(1.0, "ZZ"), (0.5, "XI"), (0.25, "ZZ"), (0.0, "YY")])
        assert [t.pauli.ops for t in H.terms] == ["XI", "ZZ"]
        assert H.coefficients.tolist() == [0.5, 1.25]

    def test_cancelling_terms_dropped(self):
        H = Hamiltonian.from_list(1, [(1.0, "Z"), (-1.0, "Z")])
        assert len(H) == 0

    def test_qubit_mismatch(self):
        with pytest.raises(ValueError):
            Hamiltonian.from_list(2, [(1.0, "XXX")])

    def test_size_limit(self):
        with pytest.raises(spinops.SizeLimitError):
            Hamiltonian(13, [])

    def test_matvec_matches_dense(self, rng):
        for n in (1, 3, 5):
            H = random_hamiltonian(rng, n, geometric=False)
            v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
            np.testing.assert_allclose(H.matvec(v), dense_oracle(H) @ v, atol=1e-12)
            V = rng.normal(size=(1 << n, 3))
            np.testing.assert_allclose(H.matvec(V), dense_oracle(H) @ V, atol=1e-12)


class TestToDense:

    def test_single_z(self):
        np.testing.assert_array_equal(spinops.to_dense(Hamiltonian.from_list(1, [(1.0, "Z")])), np.diag([1, -1]))

    def test_empty(self):
        np.testing.assert_array_equal(spinops.to_dense(Hamiltonian(2, [])), np.zeros((4, 4)))

    def test_half_xx_antidiagonal(self):
        M = spinops.to_dense(Hamiltonian.from_list(2, [(0.5, "XX")]))
        np.testing.assert_array_equal(M, 0.5 * np.fliplr(np.eye(4)))

    def test_random_matches_oracle(self, rng):
        for _ in range(20):
            H = random_hamiltonian(rng, int(rng.integers(1, 6)), geometric=False)
            M = spinops.to_dense(H)
            np.testing.assert_allclose(M, dense_oracle(H), atol=1e-12)
            np.testing.assert_allclose(M, M.conj().T, atol=1e-12)


class TestCommutatorNorm:

    def test_examples(self):
        x0 = HamiltonianTerm(1.0, PauliString("XI"))
        z0 = HamiltonianTerm(1.0, PauliString("ZI"))
        z1 = HamiltonianTerm(1.0, PauliString("IZ"))
        assert spinops.commutator_frob_norm(x0, z0) == pytest.approx(4.0, abs=1e-12)
        assert spinops.commutator_frob_norm(z0, z1) == 0.0
        assert spinops.commutator_frob_norm(HamiltonianTerm(0.0, PauliString("XI")), z0) == 0.0

    def test_mismatched_qubits(self):
        with pytest.raises(ValueError):
            spinops.commutator_frob_norm(HamiltonianTerm(1.0, PauliString("X")), HamiltonianTerm(1.0, PauliString("XX")))

    def test_fast_path_equals_dense_random_coefficients(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 5))
            a, b = ("".join(rng.choice(list("IXYZ"), n)) for _ in range(2))
            ca, cb = rng.normal(size=2)
            A, B = ca * kron_string(a), cb * kron_string(b)
            dense = np.linalg.norm(A @ B - B @ A)
            fast = spinops.commutator_frob_norm(HamiltonianTerm(ca, PauliString(a)), HamiltonianTerm(cb, PauliString(b)))
            assert abs(fast - dense) <= 1e-10

    def test_norm_matrix_symmetric_zero_diagonal(self, rng):
        H = random_hamiltonian(rng, 4)
        C = spinops.commutator_norm_matrix(H)
        np.testing.assert_allclose(C, C.T)
        assert np.all(np.diag(C) == 0)


class TestDiagonalization:

    def test_examples(self):
        np.testing.assert_allclose(spinops.diagonalize(np.diag([3.0, -1.0])).eigenvalues, [-1, 3])
        np.testing.assert_allclose(spinops.spectrum(Hamiltonian.from_list(1, [(1.0, "X")])).eigenvalues, [-1, 1])
        np.testing.assert_allclose(spinops.spectrum(heisenberg2()).eigenvalues, [-3, 1, 1, 1], atol=1e-12)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            spinops.diagonalize(np.array([[0, 1], [0, 0]], dtype=float))

    def test_eigenpair_residuals(self, rng):
        H = random_hamiltonian(rng, 5)
        M = dense_oracle(H)
        spec = spinops.spectrum(H)
        assert np.all(np.diff(spec.eigenvalues) >= 0)
        resid = M @ spec.eigenvectors - spec.eigenvectors * spec.eigenvalues
        assert np.linalg.norm(resid, axis=0).max() <= 1e-8 * np.linalg.norm(M)
        np.testing.assert_allclose(spec.eigenvectors.conj().T @ spec.eigenvectors, np.eye(32), atol=1e-10)


class TestGroundState:

    def test_field(self):
        gs = spinops.ground_state(Hamiltonian.from_list(1, [(2.0, "Z")]))
        assert gs.energy == pytest.approx(-2.0)
        assert np.linalg.norm(gs.state) == pytest.approx(1.0)

    def test_tfim2_closed_form(self):
        assert spinops.ground_state(tfim2(1.0, 1.0)).energy == pytest.approx(-math.sqrt(5), abs=1e-9)

    def test_heisenberg_singlet(self):
        gs = spinops.ground_state(heisenberg2())
        assert gs.energy == pytest.approx(-3.0, abs=1e-12)
        assert not gs.degenerate

    def test_degenerate_flag(self):
        gs = spinops.ground_state(Hamiltonian.from_list(2, [(1.0, "ZI")]))
        assert gs.degenerate


class TestThermalState:

    def test_beta_zero_maximally_mixed(self, rng):
        H = random_hamiltonian(rng, 3)
        np.testing.assert_allclose(spinops.thermal_state(H, 0.0), np.eye(8) / 8, atol=1e-14)

    def test_low_temperature_projector(self):
        rho = spinops.thermal_state(Hamiltonian.from_list(1, [(1.0, "Z")]), 200.0)
        np.testing.assert_allclose(rho, np.diag([0.0, 1.0]), atol=1e-12)

    def test_closed_form_beta_one(self):
        rho = spinops.thermal_state(Hamiltonian.from_list(1, [(1.0, "Z")]), 1.0)
        z = math.exp(-1) + math.exp(1)
        np.testing.assert_allclose(rho, np.diag([math.exp(-1) / z, math.exp(1) / z]), atol=1e-14)

    def test_matches_expm(self, rng):
        for _ in range(5):
            H = random_hamiltonian(rng, 4)
            beta = float(rng.uniform(0.1, 3))
            E = scipy.linalg.expm(-beta * dense_oracle(H))
            np.testing.assert_allclose(spinops.thermal_state(H, beta), E / np.trace(E), atol=1e-10)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            spinops.thermal_state(Hamiltonian.from_list(1, [(1.0, "Z")]), -1.0)

    def test_large_beta_no_overflow(self):
        rho = spinops.thermal_state(Hamiltonian.from_list(2, [(100.0, "ZZ")]), 50.0)
        assert np.all(np.isfinite(rho))
        assert np.trace(rho).real == pytest.approx(1.0)

    def test_entropy_nonincreasing_in_beta(self, rng):
        H = random_hamiltonian(rng, 4)
        s = [spinops.von_neumann_entropy(spinops.thermal_state(H, b)) for b in np.linspace(0, 5, 21)]
        assert np.all(np.diff(s) <= 1e-12)


class TestPartialTrace:

    def test_product_state(self, rng):
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        ra = a @ a.conj().T
        ra /= np.trace(ra)
        rb = b @ b.conj().T
        rb /= np.trace(rb)
        np.testing.assert_allclose(spinops.partial_trace(np.kron(ra, rb), [0], 3), ra, atol=1e-12)
        np.testing.assert_allclose(spinops.partial_trace(np.kron(ra, rb), [1, 2], 3), rb, atol=1e-12)

    def test_bell_state(self):
        psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
        np.testing.assert_allclose(spinops.partial_trace(np.outer(psi, psi), [0], 2), np.eye(2) / 2, atol=1e-14)
        np.testing.assert_allclose(spinops.partial_trace(psi, [1], 2), np.eye(2) / 2, atol=1e-14)

    def test_mixed(self):
        np.testing.assert_allclose(spinops.partial_trace(np.eye(4) / 4, [1], 2), np.eye(2) / 2)

    def test_empty_keep(self):
        with pytest.raises(ValueError):
            spinops.partial_trace(np.eye(4) / 4, [], 2)

    def test_full_keep_identity(self, rng):
        rho = spinops.thermal_state(random_hamiltonian(rng, 3), 1.0)
        np.testing.assert_allclose(spinops.partial_trace(rho, [0, 1, 2], 3), rho, atol=1e-14)

    def test_matches_loop_oracle(self, rng):
        rho = spinops.thermal_state(random_hamiltonian(rng, 4, geometric=False), 0.7)
        for keep in ([0], [2], [1, 3], [0, 2, 3], [3, 0]):
            out = spinops.partial_trace(rho, keep, 4)
            np.testing.assert_allclose(out, partial_trace_loops(rho, keep, 4), atol=1e-12)
            assert np.trace(out).real == pytest.approx(1.0)
            np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


class TestEntropy:

    def test_examples(self):
        psi = np.zeros(4)
        psi[0] = 1
        assert spinops.von_neumann_entropy(np.outer(psi, psi)) == pytest.approx(0.0, abs=1e-14)
        assert spinops.von_neumann_entropy(np.eye(8) / 8) == pytest.approx(3 * math.log(2), abs=1e-12)
        assert spinops.von_neumann_entropy(np.diag([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-14)

    def test_bounds(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 5))
            s = spinops.von_neumann_entropy(spinops.thermal_state(random_hamiltonian(rng, n), 1.0))
            assert -1e-12 <= s <= n * math.log(2) + 1e-12

    def test_pure_state_schmidt_symmetry(self, rng):
        psi = rng.normal(size=32) + 1j * rng.normal(size=32)
        psi /= np.linalg.norm(psi)
        for V in ([0], [1, 2], [0, 4]):
            M = [s for s in range(5) if s not in V]
            sv = spinops.von_neumann_entropy(spinops.partial_trace(psi, V, 5))
            sm = spinops.von_neumann_entropy(spinops.partial_trace(psi, M, 5))
            assert sv == pytest.approx(sm, abs=1e-9)


class TestQMI:

    def test_product_hamiltonian_zero(self):
        H = Hamiltonian.from_list(2, [(1.0, "ZI"), (1.0, "IZ")])
        for beta in (0.1, 1.0, 10.0):
            assert spinops.qmi(H, ([0], [1]), beta) == pytest.approx(0.0, abs=1e-12)

    def test_bell_ground_state(self):
        H = Hamiltonian.from_list(2, [(-1.0, "XX"), (-1.0, "ZZ")])
        assert spinops.qmi(H, ([0], [1]), 50.0) == pytest.approx(2 * math.log(2), abs=1e-3)

    def test_beta_zero(self, rng):
        H = random_hamiltonian(rng, 4)
        assert spinops.qmi(H, ([0, 1], [2, 3]), 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_invalid_partitions(self):
        H = heisenberg2()
        for part in (([0], [0, 1]), ([], [0, 1]), ([0], [])):
            with pytest.raises(ValueError):
                spinops.qmi(H, part, 1.0)

    def test_nonnegative_random(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 6))
            H = random_hamiltonian(rng, n, geometric=False)
            k = int(rng.integers(1, n))
            V = sorted(rng.choice(n, k, replace=False).tolist())
            M = [s for s in range(n) if s not in V]
            assert spinops.qmi(H, (V, M), float(rng.uniform(0, 3))) >= 0.0


class TestSitePartition:

    def test_two_fields(self):
        H = Hamiltonian.from_list(2, [(1.0, "ZI"), (1.0, "IZ")])
        # canonical order: IZ (site 1) before ZI (site 0)
        assert spinops.term_partition_to_site_partition(H, [0]) == ([0], [1])

    def test_mask_all_repaired(self):
        H = Hamiltonian.from_list(2, [(1.0, "XX"), (0.5, "ZI"), (0.3, "IZ")])
        V, M = spinops.term_partition_to_site_partition(H, range(len(H)))
        assert len(V) == 1 and len(M) == 1

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            spinops.term_partition_to_site_partition(heisenberg2(), [])

    def test_empty_visible_repair(self):
        H = Hamiltonian.from_list(2, [(2.0, "XX"), (0.5, "IZ")])
        xx = [t.pauli.ops for t in H.terms].index("XX")
        assert spinops.term_partition_to_site_partition(H, [xx]) == ([1], [0])

    def test_always_proper_bipartition(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 6))
            H = random_hamiltonian(rng, n)
            if len(H) < 2:
                continue
            masked = rng.choice(len(H), int(rng.integers(1, len(H))), replace=False)
            V, M = spinops.term_partition_to_site_partition(H, masked)
            assert V and M and sorted(V + M) == list(range(n))


class TestPowerIteration:

    def test_examples(self):
        lo, hi = spinops.extremal_eigenvalues_power(Hamiltonian.from_list(1, [(1.0, "Z")]))
        assert (lo, hi) == (pytest.approx(-1, abs=1e-6), pytest.approx(1, abs=1e-6))
        lo, hi = spinops.extremal_eigenvalues_power(Hamiltonian.from_list(2, [(3.0, "XX")]))
        assert (lo, hi) == (pytest.approx(-3, abs=1e-5), pytest.approx(3, abs=1e-5))

    def test_tfim4_matches_dense(self):
        H = Hamiltonian.from_list(4, [(-1.0, "ZZII"), (-1.0, "IZZI"), (-1.0, "IIZZ"), (-0.7, "XIII"),
                                      (-0.7, "IXII"), (-0.7, "IIXI"), (-0.7, "IIIX")])
        w = np.linalg.eigvalsh(dense_oracle(H))
        lo, hi = spinops.extremal_eigenvalues_power(H)
        assert abs(lo - w[0]) <= 1e-5 * abs(w[0])
        assert abs(hi - w[-1]) <= 1e-5 * abs(w[-1])

    def test_convergence_error_carries_estimate(self, rng):
        H = random_hamiltonian(rng, 6)
        with pytest.raises(spinops.ConvergenceError) as info:
            spinops.extremal_eigenvalues_power(H, tol=1e-15, max_iter=3)
        lo, hi = info.value.best_estimate
        assert np.isfinite(lo) and np.isfinite(hi) and lo <= hi


class TestEnergyScale:

    def test_examples(self):
        z = Hamiltonian.from_list(1, [(1.0, "Z")])
        assert spinops.characteristic_energy_scale(z) == pytest.approx(2.0)
        assert spinops.energy_gap(z) == pytest.approx(2.0)
        assert spinops.characteristic_energy_scale(heisenberg2()) == pytest.approx(4.0)
        assert spinops.characteristic_energy_scale(Hamiltonian.from_list(1, [(5.0, "Z")])) == pytest.approx(10.0)

    def test_power_method_agrees(self, rng):
        H = random_hamiltonian(rng, 5)
        dense = spinops.characteristic_energy_scale(H)
        assert spinops.characteristic_energy_scale(H, method="power") == pytest.approx(dense, rel=1e-5)

    def test_zero_hamiltonian(self):
        with pytest.raises(ValueError):
            spinops.characteristic_energy_scale(Hamiltonian(2, []))

    def test_degenerate_gap_zero(self):
        assert spinops.energy_gap(Hamiltonian.from_list(2, [(1.0, "ZI")])) == 0.0


class TestCorrelationLength:

    def test_product_ground_state(self):
        H = Hamiltonian.from_list(4, [(1.0, "ZIII"), (1.0, "IZII"), (1.0, "IIZI"), (1.0, "IIIZ")])
        fit = spinops.correlation_length(H)
        assert fit.xi == 0.0 and fit.degenerate

    def test_paramagnetic_tfim_brute_force(self):
        n = 6
        pairs = [(-1.0, "I" * i + "ZZ" + "I" * (n - i - 2)) for i in range(n - 1)]
        pairs += [(-2.0, "I" * i + "X" + "I" * (n - i - 1)) for i in range(n)]
        H = Hamiltonian.from_list(n, pairs)
        w, v = np.linalg.eigh(dense_oracle(H))
        psi = v[:, 0]
        z = [kron_string("I" * i + "Z" + "I" * (n - i - 1)) for i in range(n)]
        ev = lambda O: float(np.real(psi.conj() @ O @ psi))
        rs, logs = [], []
        for r in range(1, n):
            c = ev(z[0] @ z[r]) - ev(z[0]) * ev(z[r])
            if abs(c) > 1e-8:
                rs.append(r)
                logs.append(math.log(abs(c)))
        expected = -1.0 / np.polyfit(rs, logs, 1)[0]
        fit = spinops.correlation_length(H)
        assert not fit.degenerate
        assert fit.xi == pytest.approx(expected, rel=1e-8)
        assert 0 < fit.xi < 10 * n

    def test_single_point_degenerate(self):
        psi = np.zeros(4)
        psi[0] = psi[3] = 1 / math.sqrt(2)
        fit = spinops.correlation_length_from_state(psi, 2)
        assert fit.xi == 0.0 and fit.degenerate


class TestHalfChainEntropy:

    def test_examples(self):
        product = np.zeros(16)
        product[0] = 1
        assert spinops.entanglement_entropy_halfchain(product, 4) == pytest.approx(0.0, abs=1e-12)
        bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
        assert spinops.entanglement_entropy_halfchain(bell, 2) == pytest.approx(math.log(2))
        ghz = np.zeros(16)
        ghz[0] = ghz[15] = 1 / math.sqrt(2)
        assert spinops.entanglement_entropy_halfchain(ghz, 4) == pytest.approx(math.log(2))

    def test_matches_partial_trace(self, rng):
        psi = rng.normal(size=64) + 1j * rng.normal(size=64)
        psi /= np.linalg.norm(psi)
        ref = spinops.von_neumann_entropy(partial_trace_loops(np.outer(psi, psi.conj()), [0, 1, 2], 6))
        assert spinops.entanglement_entropy_halfchain(psi, 6) == pytest.approx(ref, abs=1e-10)


class TestExpectation:

    def test_term_and_vector(self):
        psi = np.array([1.0, 0.0])
        assert spinops.expectation(HamiltonianTerm(2.0, PauliString("Z")), psi) == pytest.approx(2.0)
        rho = spinops.thermal_state(Hamiltonian.from_list(1, [(1.0, "Z")]), 1.0)
        assert spinops.expectation(Hamiltonian.from_list(1, [(1.0, "Z")]), rho) == pytest.approx(-math.tanh(1.0))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 5), beta=st.floats(0.0, 5.0))
def test_thermal_state_is_density_matrix(seed, n, beta):
    H = random_hamiltonian(np.random.default_rng(seed), n, geometric=False)
    rho = spinops.thermal_state(H, beta)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-10)
    assert abs(np.trace(rho).real - 1) <= 1e-10
    assert np.linalg.eigvalsh(rho).min() >= -1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 5))
def test_partial_trace_preserves_trace(seed, n):
    rng = np.random.default_rng(seed)
    rho = spinops.thermal_state(random_hamiltonian(rng, n), float(rng.uniform(0, 2)))
    keep = sorted(rng.choice(n, int(rng.integers(1, n + 1)), replace=False).tolist())
    out = spinops.partial_trace(rho, keep, n)
    assert out.shape == (1 << len(keep),) * 2
    assert abs(np.trace(out).real - 1) <= 1e-10
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12)
