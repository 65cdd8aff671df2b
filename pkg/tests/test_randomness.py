"""Beacon determinism, sortition statistics, and the verification oracle."""

import numpy as np
import pytest
from scipy.stats import chi2

from cicsim.hashing import sha256
from cicsim.randomness import SortitionOracle, check_sort, keygen, random_gen

SEED = sha256(b"randomness-tests")


def test_beacon_is_deterministic_and_counter_sensitive():
    assert random_gen(SEED, 0) == random_gen(SEED, 0)
    assert random_gen(SEED, 0) != random_gen(SEED, 1)
    assert random_gen(sha256(b"other"), 0) != random_gen(SEED, 0)


def test_beacon_uniformity_chi_square():
    # first byte of 1e6 draws over 256 bins at the 1% level
    draws = 1_000_000
    counts = np.zeros(256, dtype=np.int64)
    for i in range(draws):
        counts[random_gen(SEED, i)[0]] += 1
    expected = draws / 256
    statistic = float(((counts - expected) ** 2 / expected).sum())
    assert statistic < chi2.ppf(0.99, 255)


def test_sortition_extremes():
    keys = keygen(SEED, 1)
    nonce = sha256(b"nonce")
    assert check_sort(keys, nonce, 1.0).selected
    assert not check_sort(keys, nonce, 0.0).selected
    with pytest.raises(ValueError):
        check_sort(keys, nonce, 1.5)


def test_selection_probability_and_variance():
    # E[|ES|] = 200 and Var ~ Mq(1-q) = 175 for M=1600, q=0.125
    m, q, nonces = 1600, 0.125, 2000
    all_keys = [keygen(SEED, i) for i in range(m)]
    sizes = np.empty(nonces, dtype=np.int64)
    for j in range(nonces):
        nonce = random_gen(SEED, 10_000 + j)
        sizes[j] = sum(check_sort(k, nonce, q).selected for k in all_keys)
    mean = sizes.mean()
    assert abs(mean - 200) <= 200 * 0.02
    # sample-variance tolerance: sd of s^2 is ~ var * sqrt(2/(n-1)) ~ 5.5
    assert abs(sizes.var(ddof=1) - 175) <= 30


def test_selection_is_independent_across_nodes():
    # pairwise correlation of membership indicators stays near zero
    m, q, nonces = 40, 0.3, 600
    all_keys = [keygen(SEED, i) for i in range(m)]
    table = np.empty((nonces, m), dtype=np.int8)
    for j in range(nonces):
        nonce = random_gen(SEED, 50_000 + j)
        table[j] = [check_sort(k, nonce, q).selected for k in all_keys]
    corr = np.corrcoef(table.T)
    off_diag = corr[~np.eye(m, dtype=bool)]
    # Bonferroni over 780 pairs at the 0.1% family level: |rho| < ~5/sqrt(n)
    assert np.abs(off_diag).max() < 5 / np.sqrt(nonces)


def test_oracle_verifies_genuine_results_and_rejects_forgeries():
    oracle = SortitionOracle()
    keys = keygen(SEED, 3)
    oracle.register(keys)
    nonce = sha256(b"it-nonce")
    q = 0.9
    result = check_sort(keys, nonce, q)
    assert result.selected
    assert oracle.verify(keys.pk, nonce, q, result)
    # unknown key, tampered output, tampered proof, wrong nonce
    stranger = keygen(SEED, 4)
    assert not oracle.verify(stranger.pk, nonce, q, result)
    forged = type(result)(selected=True, output=sha256(b"x"), proof=result.proof)
    assert not oracle.verify(keys.pk, nonce, q, forged)
    assert not oracle.verify(keys.pk, sha256(b"other-nonce"), q, result)


def test_result_encoding_is_fixed_width():
    keys = keygen(SEED, 5)
    selected = check_sort(keys, sha256(b"n"), 1.0)
    missed = check_sort(keys, sha256(b"n"), 0.0)
    assert len(selected.encode()) == 64
    assert len(missed.encode()) == 64
    assert missed.encode() == bytes(64)


def test_keygen_is_unique_per_node():
    keys = {keygen(SEED, i).pk for i in range(100)}
    assert len(keys) == 100
