//! The BB84 protocol pipeline: state preparation, intercept-resend
//! eavesdropping, depolarization, measurement, sifting and shared-bit QBER
//! estimation, plus the closed-form analytics used as oracles.

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::randomness::RngSource;

/// One photon in transit: the encoded classical bit and the encoding basis
/// (false = rectilinear, true = diagonal). Both may be altered by Eve or by
/// channel depolarization before measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonRecord {
    pub bit: bool,
    pub basis: bool,
}

/// Quantum-channel error parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Fraction of photons Eve intercepts, in [0,1].
    pub epsilon: f64,
    /// Depolarization probability, in [0,1].
    pub p: f64,
    pub eve_enabled: bool,
}

/// Outcome of basis reconciliation.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    /// Strictly increasing photon indices where the bases matched.
    pub kept_indices: Vec<usize>,
    pub alice_sifted: BitString,
    pub bob_sifted: BitString,
}

/// How the publicly compared (shared) positions are chosen within the sifted
/// key. Prefix selection is the reproducible default; position choice does
/// not affect error statistics under the i.i.d. error model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedSelection {
    Prefix,
    Random,
}

/// Outcome of parameter estimation over the shared bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub shared_count: usize,
    pub mismatches: usize,
    pub qber_est: f64,
    pub usable_alice: BitString,
    pub usable_bob: BitString,
}

/// Encodes photon i as (data[i], bases[i]).
pub fn prepare(data: &BitString, bases: &BitString) -> Result<Vec<PhotonRecord>> {
    if data.len() != bases.len() {
        return Err(Error::LengthMismatch {
            left: data.len(),
            right: bases.len(),
        });
    }
    Ok(data
        .iter()
        .zip(bases.iter())
        .map(|(bit, basis)| PhotonRecord { bit, basis })
        .collect())
}

/// True iff photon `i` is intercepted under the deterministic stride rule,
/// which selects exactly `floor(N * epsilon)` indices.
pub fn stride_intercepts(i: usize, epsilon: f64) -> bool {
    ((i as f64 + 1.0) * epsilon).floor() > (i as f64 * epsilon).floor()
}

/// Intercept-resend attack. Eve measures each intercepted photon in a random
/// basis; a correct-basis measurement resends the original qubit, a wrong one
/// resends a fresh random bit in Eve's basis.
pub fn eve_intercept(
    photons: &mut [PhotonRecord],
    epsilon: f64,
    eve_bases: &mut RngSource,
    eve_coins: &mut RngSource,
) -> Result<()> {
    check_ratio("epsilon", epsilon)?;
    for (i, photon) in photons.iter_mut().enumerate() {
        if !stride_intercepts(i, epsilon) {
            continue;
        }
        let eve_basis = eve_bases.next_bit()?;
        if eve_basis == photon.basis {
            // Transparent interception: the original qubit is resent.
            continue;
        }
        photon.bit = eve_coins.next_bit()?;
        photon.basis = eve_basis;
    }
    Ok(())
}

/// Depolarizing channel: per photon, with probability 1-p nothing happens;
/// with probability p/3 each the bit flips, the basis flips (phase flip), or
/// both flip.
pub fn depolarize(photons: &mut [PhotonRecord], p: f64, rng: &mut RngSource) -> Result<()> {
    check_ratio("p", p)?;
    if p == 0.0 {
        return Ok(());
    }
    for photon in photons.iter_mut() {
        let u = rng.next_f64()?;
        if u < 1.0 - p {
            continue;
        }
        let slot = (u - (1.0 - p)) / (p / 3.0);
        if slot < 1.0 {
            photon.bit = !photon.bit;
        } else if slot < 2.0 {
            photon.basis = !photon.basis;
        } else {
            photon.bit = !photon.bit;
            photon.basis = !photon.basis;
        }
    }
    Ok(())
}

/// Bob's measurement: d'(i) equals the arriving photon's bit when its current
/// basis matches Bob's choice, otherwise a fair coin flip.
pub fn measure(
    photons: &[PhotonRecord],
    bob_bases: &BitString,
    coins: &mut RngSource,
) -> Result<BitString> {
    if photons.len() != bob_bases.len() {
        return Err(Error::LengthMismatch {
            left: photons.len(),
            right: bob_bases.len(),
        });
    }
    let mut measured = BitString::with_capacity(photons.len());
    for (photon, basis) in photons.iter().zip(bob_bases.iter()) {
        if photon.basis == basis {
            measured.push(photon.bit);
        } else {
            measured.push(coins.next_bit()?);
        }
    }
    Ok(measured)
}

/// Keeps the positions where Alice's and Bob's declared bases agree.
pub fn sift(
    alice_bases: &BitString,
    bob_bases: &BitString,
    alice_data: &BitString,
    bob_data: &BitString,
) -> Result<SiftResult> {
    let n = alice_bases.len();
    for other in [bob_bases.len(), alice_data.len(), bob_data.len()] {
        if other != n {
            return Err(Error::LengthMismatch { left: n, right: other });
        }
    }
    let mut kept_indices = Vec::new();
    let mut alice_sifted = BitString::new();
    let mut bob_sifted = BitString::new();
    for i in 0..n {
        if alice_bases.get(i) == bob_bases.get(i) {
            kept_indices.push(i);
            alice_sifted.push(alice_data.get(i).unwrap());
            bob_sifted.push(bob_data.get(i).unwrap());
        }
    }
    Ok(SiftResult {
        kept_indices,
        alice_sifted,
        bob_sifted,
    })
}

/// Positions within the sifted key publicly compared for estimation:
/// `max(1, round(f * L))` of them, a deterministic prefix or a seeded random
/// subset.
pub fn shared_positions(
    sifted_len: usize,
    f: f64,
    selection: SharedSelection,
    rng: Option<&mut RngSource>,
) -> Result<Vec<usize>> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::OutOfRange {
            what: "sharing rate f",
            value: f,
            expected: "0 < f <= 1",
        });
    }
    if sifted_len == 0 {
        return Err(Error::EmptySiftedKey);
    }
    let shared_count = ((f * sifted_len as f64).round() as usize).clamp(1, sifted_len);
    match selection {
        SharedSelection::Prefix => Ok((0..shared_count).collect()),
        SharedSelection::Random => rng
            .expect("random shared selection needs an rng")
            .sample_indices(sifted_len, shared_count),
    }
}

/// Parameter estimation: compares the shared bits one-to-one and estimates
/// the QBER as mismatches over the shared-bit count; the non-shared bits form
/// the usable keys.
pub fn share_and_estimate(
    sift: &SiftResult,
    f: f64,
    selection: SharedSelection,
    rng: Option<&mut RngSource>,
) -> Result<EstimationResult> {
    let positions = shared_positions(sift.alice_sifted.len(), f, selection, rng)?;
    estimate_at_positions(sift, &positions)
}

/// Estimation with explicit shared positions (sorted ascending); the
/// networked mode derives positions on each side and calls this.
pub fn estimate_at_positions(sift: &SiftResult, positions: &[usize]) -> Result<EstimationResult> {
    let len = sift.alice_sifted.len();
    let mut is_shared = vec![false; len];
    let mut mismatches = 0usize;
    for &pos in positions {
        is_shared[pos] = true;
        if sift.alice_sifted.bit(pos)? != sift.bob_sifted.bit(pos)? {
            mismatches += 1;
        }
    }
    let mut usable_alice = BitString::new();
    let mut usable_bob = BitString::new();
    for i in 0..len {
        if !is_shared[i] {
            usable_alice.push(sift.alice_sifted.get(i).unwrap());
            usable_bob.push(sift.bob_sifted.get(i).unwrap());
        }
    }
    Ok(EstimationResult {
        shared_count: positions.len(),
        mismatches,
        qber_est: mismatches as f64 / positions.len() as f64,
        usable_alice,
        usable_bob,
    })
}

/// Mismatch fraction on the usable (non-shared) keys; research-mode only.
pub fn remaining_key_qber(est: &EstimationResult) -> Result<f64> {
    if est.usable_alice.is_empty() {
        return Err(Error::Undefined("no usable bits remain"));
    }
    Ok(est.usable_alice.mismatches(&est.usable_bob)? as f64 / est.usable_alice.len() as f64)
}

/// Exact QBER over full sifted keys: mismatches over sifted length.
pub fn qber_exact(alice_sifted: &BitString, bob_sifted: &BitString) -> Result<f64> {
    if alice_sifted.is_empty() {
        return Err(Error::EmptySiftedKey);
    }
    Ok(alice_sifted.mismatches(bob_sifted)? as f64 / alice_sifted.len() as f64)
}

/// Closed-form analytics.
pub mod analytics {
    use crate::error::{Error, Result};

    /// Theoretical sifted-key QBER under depolarization p and interception
    /// rate epsilon: eps/4 + (p/3)(2 - eps).
    pub fn theoretical_qber(p: f64, epsilon: f64) -> f64 {
        epsilon / 4.0 + (p / 3.0) * (2.0 - epsilon)
    }

    /// Shannon binary entropy, with h(0) = h(1) = 0 by continuity.
    pub fn binary_entropy(x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange {
                what: "entropy argument",
                value: x,
                expected: "[0, 1]",
            });
        }
        if x == 0.0 || x == 1.0 {
            return Ok(0.0);
        }
        Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
    }

    /// Theoretical secret-key fraction k_th = h(1/2 - q_e) - h(QBER).
    pub fn theoretical_secret_fraction(q_e: f64, qber: f64) -> Result<f64> {
        if !(0.0..=0.5).contains(&q_e) {
            return Err(Error::OutOfRange {
                what: "q_e",
                value: q_e,
                expected: "[0, 1/2]",
            });
        }
        Ok(binary_entropy(0.5 - q_e)? - binary_entropy(qber)?)
    }

    /// Secret-key rate: (final length / sifted length) * R_sifted. The final
    /// length here is the usable (non-shared) key length.
    pub fn secret_key_rate(final_len: u64, sifted_len: u64, r_sifted_bps: f64) -> Result<f64> {
        if sifted_len == 0 {
            return Err(Error::Undefined("sifted length is zero"));
        }
        Ok(final_len as f64 / sifted_len as f64 * r_sifted_bps)
    }
}

fn check_ratio(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value,
            expected: "[0, 1]",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn rng(seed: u64) -> RngSource {
        RngSource::seeded(seed)
    }

    #[test]
    fn prepare_pairs_bits_with_bases() {
        let photons = prepare(&bits("10"), &bits("01")).unwrap();
        assert_eq!(
            photons,
            vec![
                PhotonRecord { bit: true, basis: false },
                PhotonRecord { bit: false, basis: true }
            ]
        );
        assert_eq!(
            prepare(&bits("0"), &bits("0")).unwrap(),
            vec![PhotonRecord { bit: false, basis: false }]
        );
        assert!(prepare(&bits("1010"), &bits("101")).is_err());
    }

    #[test]
    fn stride_rule_counts() {
        for &(n, eps) in &[(10_000usize, 0.5), (10_000, 1.0), (10_000, 0.0), (7, 0.3)] {
            let count = (0..n).filter(|&i| stride_intercepts(i, eps)).count();
            assert_eq!(count, (n as f64 * eps).floor() as usize, "n={n} eps={eps}");
        }
    }

    #[test]
    fn eve_zero_epsilon_is_identity() {
        let mut photons = prepare(&bits("1011"), &bits("0110")).unwrap();
        let original = photons.clone();
        eve_intercept(&mut photons, 0.0, &mut rng(1), &mut rng(2)).unwrap();
        assert_eq!(photons, original);
    }

    #[test]
    fn eve_full_interception_touches_every_photon() {
        // epsilon = 1 intercepts all indices by the stride rule.
        assert!((0..4).all(|i| stride_intercepts(i, 1.0)));
    }

    #[test]
    fn eve_correct_basis_is_transparent() {
        // Force e == beta for all photons: find a seed whose first 4 eve
        // basis bits equal the photon bases.
        let bases = bits("0110");
        let photons_orig = prepare(&bits("1011"), &bases).unwrap();
        let seed = (0..)
            .find(|&s| {
                let drawn = rng(s).next_bits(4).unwrap();
                drawn == bases
            })
            .unwrap();
        let mut photons = photons_orig.clone();
        eve_intercept(&mut photons, 1.0, &mut rng(seed), &mut rng(99)).unwrap();
        assert_eq!(photons, photons_orig);
    }

    #[test]
    fn depolarize_identity_at_zero() {
        let mut photons = prepare(&bits("1011"), &bits("0110")).unwrap();
        let original = photons.clone();
        depolarize(&mut photons, 0.0, &mut rng(1)).unwrap();
        assert_eq!(photons, original);
    }

    #[test]
    fn depolarize_full_splits_equally() {
        let n = 100_000;
        let data = rng(1).next_bits(n).unwrap();
        let bases = rng(2).next_bits(n).unwrap();
        let original = prepare(&data, &bases).unwrap();
        let mut photons = original.clone();
        depolarize(&mut photons, 1.0, &mut rng(3)).unwrap();
        let mut counts = [0usize; 4]; // none, bit, phase, both
        for (before, after) in original.iter().zip(&photons) {
            let bit_flip = before.bit != after.bit;
            let basis_flip = before.basis != after.basis;
            counts[bit_flip as usize + 2 * basis_flip as usize] += 1;
        }
        assert_eq!(counts[0], 0, "p=1 leaves no photon unchanged");
        let sigma = 3.0 * (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - n as f64 / 3.0).abs() < sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn depolarize_partial_unchanged_fraction() {
        let n = 100_000;
        let data = rng(4).next_bits(n).unwrap();
        let bases = rng(5).next_bits(n).unwrap();
        let original = prepare(&data, &bases).unwrap();
        let mut photons = original.clone();
        depolarize(&mut photons, 0.3, &mut rng(6)).unwrap();
        let unchanged = original
            .iter()
            .zip(&photons)
            .filter(|(a, b)| a == b)
            .count() as f64
            / n as f64;
        assert!((unchanged - 0.7).abs() < 3.0 * (0.21f64 / n as f64).sqrt());
    }

    #[test]
    fn measure_matched_basis_is_exact() {
        let photons = vec![PhotonRecord { bit: true, basis: false }];
        let d = measure(&photons, &bits("0"), &mut rng(1)).unwrap();
        assert_eq!(d.to_string(), "1");
    }

    #[test]
    fn measure_mismatched_basis_is_a_fair_coin() {
        let photons = vec![PhotonRecord { bit: true, basis: false }; 100_000];
        let bases: BitString = (0..100_000).map(|_| true).collect();
        let d = measure(&photons, &bases, &mut rng(7)).unwrap();
        let mean = d.count_ones() as f64 / 1e5;
        assert!((mean - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn noiseless_identity() {
        let n = 1000;
        let data = rng(8).next_bits(n).unwrap();
        let bases = rng(9).next_bits(n).unwrap();
        let photons = prepare(&data, &bases).unwrap();
        let d = measure(&photons, &bases, &mut rng(10)).unwrap();
        assert_eq!(d, data);
    }

    #[test]
    fn sift_definition() {
        let res = sift(&bits("0101"), &bits("0110"), &bits("1100"), &bits("1111")).unwrap();
        assert_eq!(res.kept_indices, vec![0, 1]);
        assert_eq!(res.alice_sifted.to_string(), "11");
        assert_eq!(res.bob_sifted.to_string(), "11");

        let all = sift(&bits("0101"), &bits("0101"), &bits("1100"), &bits("0011")).unwrap();
        assert_eq!(all.kept_indices.len(), 4);

        assert!(sift(&bits("01"), &bits("011"), &bits("11"), &bits("11")).is_err());
    }

    #[test]
    fn sift_keeps_half_for_independent_bases() {
        let n = 10_000;
        let a = rng(11).next_bits(n).unwrap();
        let b = rng(12).next_bits(n).unwrap();
        let d = rng(13).next_bits(n).unwrap();
        let res = sift(&a, &b, &d, &d).unwrap();
        let kept = res.kept_indices.len() as f64;
        assert!((kept - 5000.0).abs() < 3.0 * 2500f64.sqrt());
    }

    #[test]
    fn estimate_identical_keys() {
        let s = sift(&bits("0000"), &bits("0000"), &bits("1010"), &bits("1010")).unwrap();
        let est = share_and_estimate(&s, 0.5, SharedSelection::Prefix, None).unwrap();
        assert_eq!(est.qber_est, 0.0);
    }

    #[test]
    fn estimate_prefix_mismatch() {
        // L = 10, f = 1/2, one mismatch inside the shared prefix.
        let alice = bits("1111100000");
        let bob = bits("1011100000");
        let s = SiftResult {
            kept_indices: (0..10).collect(),
            alice_sifted: alice,
            bob_sifted: bob,
        };
        let est = share_and_estimate(&s, 0.5, SharedSelection::Prefix, None).unwrap();
        assert_eq!(est.shared_count, 5);
        assert_eq!(est.mismatches, 1);
        assert!((est.qber_est - 0.2).abs() < 1e-15);
        assert_eq!(est.usable_alice.len(), 5);
        assert_eq!(est.usable_bob.len(), 5);
    }

    #[test]
    fn full_disclosure_matches_exact_qber() {
        let n = 2000;
        let a = rng(14).next_bits(n).unwrap();
        let mut b = a.clone();
        // flip a few bits
        let mut noisy = BitString::new();
        for (i, bit) in b.iter().enumerate() {
            noisy.push(if i % 97 == 0 { !bit } else { bit });
        }
        b = noisy;
        let s = SiftResult {
            kept_indices: (0..n).collect(),
            alice_sifted: a.clone(),
            bob_sifted: b.clone(),
        };
        let est = share_and_estimate(&s, 1.0, SharedSelection::Prefix, None).unwrap();
        assert_eq!(est.shared_count, n);
        assert_eq!(est.usable_alice.len(), 0);
        assert_eq!(est.qber_est, qber_exact(&a, &b).unwrap());
    }

    #[test]
    fn random_selection_same_error_rate_structure() {
        let n = 1000;
        let a = rng(15).next_bits(n).unwrap();
        let b = rng(16).next_bits(n).unwrap();
        let s = SiftResult {
            kept_indices: (0..n).collect(),
            alice_sifted: a,
            bob_sifted: b,
        };
        let mut r = rng(17);
        let est =
            share_and_estimate(&s, 0.5, SharedSelection::Random, Some(&mut r)).unwrap();
        assert_eq!(est.shared_count, 500);
        assert_eq!(est.usable_alice.len(), 500);
    }

    #[test]
    fn remaining_key_examples() {
        let s = SiftResult {
            kept_indices: (0..8).collect(),
            alice_sifted: bits("00001111"),
            bob_sifted: bits("00001011"),
        };
        let est = share_and_estimate(&s, 0.5, SharedSelection::Prefix, None).unwrap();
        assert_eq!(est.qber_est, 0.0);
        // usable = last four bits: 1111 vs 1011
        assert_eq!(remaining_key_qber(&est).unwrap(), 0.25);
    }

    #[test]
    fn qber_exact_examples() {
        let a = bits("1010");
        assert_eq!(qber_exact(&a, &a).unwrap(), 0.0);
        assert_eq!(qber_exact(&a, &bits("0101")).unwrap(), 1.0);
        let mut b50 = BitString::new();
        let a50: BitString = (0..50).map(|_| false).collect();
        for i in 0..50 {
            b50.push(i == 7);
        }
        assert!((qber_exact(&a50, &b50).unwrap() - 0.02).abs() < 1e-15);
        assert!(qber_exact(&BitString::new(), &BitString::new()).is_err());
    }

    #[test]
    fn empty_sifted_key_is_an_error() {
        let s = SiftResult {
            kept_indices: vec![],
            alice_sifted: BitString::new(),
            bob_sifted: BitString::new(),
        };
        assert!(matches!(
            share_and_estimate(&s, 0.5, SharedSelection::Prefix, None),
            Err(Error::EmptySiftedKey)
        ));
    }

    mod analytics_tests {
        use super::super::analytics::*;

        #[test]
        fn theoretical_qber_values() {
            assert_eq!(theoretical_qber(0.0, 0.0), 0.0);
            assert_eq!(theoretical_qber(0.0, 1.0), 0.25);
            assert!((theoretical_qber(0.3, 1.0) - 0.35).abs() < 1e-15);
        }

        #[test]
        fn entropy_values() {
            assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
            assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
            assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
            assert!((binary_entropy(0.25).unwrap() - 0.8112781244591328).abs() < 1e-12);
            assert!(binary_entropy(1.5).is_err());
        }

        #[test]
        fn secret_fraction_values() {
            assert_eq!(theoretical_secret_fraction(0.0, 0.0).unwrap(), 1.0);
            assert_eq!(theoretical_secret_fraction(0.5, 0.0).unwrap(), 0.0);
            assert!(
                (theoretical_secret_fraction(0.0, 0.25).unwrap() - 0.18872187554086717).abs()
                    < 1e-12
            );
            assert!(theoretical_secret_fraction(0.6, 0.0).is_err());
        }

        #[test]
        fn secret_key_rate_values() {
            assert_eq!(secret_key_rate(50, 50, 1234.0).unwrap(), 1234.0);
            assert_eq!(secret_key_rate(25, 50, 1000.0).unwrap(), 500.0);
            assert_eq!(secret_key_rate(25, 50, 16500.0).unwrap(), 8250.0);
            assert!(secret_key_rate(0, 0, 1.0).is_err());
        }
    }
}
