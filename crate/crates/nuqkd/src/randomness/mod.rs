//! Random bit sources.
//!
//! Every stochastic draw in the simulator (data bits, basis choices, Eve's
//! bases, measurement coins, depolarization coins, detection coins, the attack
//! schedule) comes through an [`RngSource`]. Sources are handed out by a
//! [`StreamFactory`] as independently seeded substreams keyed by
//! `(master seed, consumer label, iteration index)`, so toggling one module
//! never perturbs another consumer's stream.

pub mod remote;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::error::{Error, Result};

pub use crate::bits::hex_to_bits;
pub use remote::RemoteClient;

/// Which physical source backs the bit streams.
#[derive(Debug, Clone, PartialEq)]
pub enum RngSourceKind {
    /// Deterministic stream; equal seeds yield identical streams.
    SeededDeterministic { seed: u64 },
    /// Operating-system entropy.
    OsEntropy,
    /// Remote quantum-RNG HTTP service streaming hexadecimal tokens.
    RemoteQrng { endpoint: String, batch_size: usize },
}

/// Named consumers of randomness. Each label owns an independent substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamLabel {
    AliceData,
    AliceBases,
    BobBases,
    EveBases,
    EveCoins,
    MeasurementCoins,
    DepolarizationCoins,
    DetectionCoins,
    SourcePulses,
    SharedSelection,
    AttackSchedule,
}

impl StreamLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamLabel::AliceData => "alice-data",
            StreamLabel::AliceBases => "alice-bases",
            StreamLabel::BobBases => "bob-bases",
            StreamLabel::EveBases => "eve-bases",
            StreamLabel::EveCoins => "eve-coins",
            StreamLabel::MeasurementCoins => "measurement-coins",
            StreamLabel::DepolarizationCoins => "depolarization-coins",
            StreamLabel::DetectionCoins => "detection-coins",
            StreamLabel::SourcePulses => "source-pulses",
            StreamLabel::SharedSelection => "shared-selection",
            StreamLabel::AttackSchedule => "attack-schedule",
        }
    }
}

/// Stable substream seed from (master seed, label, iteration).
pub fn derive_seed(master: u64, label: &str, iteration: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    hasher.update([0x1f]);
    hasher.update(iteration.to_le_bytes());
    hasher.finalize().into()
}

/// Derives a fresh 64-bit master seed, used for per-sweep-point seeding.
pub fn derive_master(master: u64, label: &str, index: u64) -> u64 {
    let bytes = derive_seed(master, label, index);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

/// Hands out per-consumer, per-iteration substreams.
pub struct StreamFactory {
    kind: RngSourceKind,
    remote: Option<Arc<Mutex<RemoteClient>>>,
    fallback_os: bool,
}

impl StreamFactory {
    pub fn new(kind: RngSourceKind, timeout: Duration, fallback_os: bool) -> Self {
        let remote = match &kind {
            RngSourceKind::RemoteQrng {
                endpoint,
                batch_size,
            } => Some(Arc::new(Mutex::new(RemoteClient::new(
                endpoint.clone(),
                *batch_size,
                timeout,
            )))),
            _ => None,
        };
        Self {
            kind,
            remote,
            fallback_os,
        }
    }

    pub fn kind(&self) -> &RngSourceKind {
        &self.kind
    }

    pub fn stream(&self, label: StreamLabel, iteration: u64) -> RngSource {
        let inner = match &self.kind {
            RngSourceKind::SeededDeterministic { seed } => Inner::Seeded(ChaCha12Rng::from_seed(
                derive_seed(*seed, label.as_str(), iteration),
            )),
            RngSourceKind::OsEntropy => Inner::Os(StdRng::from_entropy()),
            RngSourceKind::RemoteQrng { .. } => Inner::Remote {
                client: Arc::clone(self.remote.as_ref().unwrap()),
                fallback: None,
                fallback_allowed: self.fallback_os,
            },
        };
        RngSource::from_inner(inner)
    }
}

enum Inner {
    Seeded(ChaCha12Rng),
    Os(StdRng),
    Remote {
        client: Arc<Mutex<RemoteClient>>,
        fallback: Option<StdRng>,
        fallback_allowed: bool,
    },
}

/// One consumer's stream of random values.
///
/// Bit draws are served MSB-first from a one-byte buffer, so consecutive
/// `next_bits` calls consume contiguous segments of the generator output:
/// restarting the stream and drawing n+m bits reproduces an n-bit draw
/// followed by an m-bit draw.
pub struct RngSource {
    inner: Inner,
    bit_buf: u8,
    bit_len: u8,
}

impl RngSource {
    fn from_inner(inner: Inner) -> Self {
        RngSource {
            inner,
            bit_buf: 0,
            bit_len: 0,
        }
    }

    /// Deterministic source seeded directly; used by tests and oracles.
    pub fn seeded(seed: u64) -> Self {
        RngSource::from_inner(Inner::Seeded(ChaCha12Rng::from_seed(derive_seed(
            seed, "direct", 0,
        ))))
    }

    fn buffered_bit<R: RngCore>(buf: &mut u8, len: &mut u8, rng: &mut R) -> bool {
        if *len == 0 {
            *buf = (rng.next_u32() & 0xff) as u8;
            *len = 8;
        }
        let bit = *buf & 0x80 != 0;
        *buf <<= 1;
        *len -= 1;
        bit
    }

    /// Returns exactly `n` bits; consecutive calls return disjoint segments.
    pub fn next_bits(&mut self, n: usize) -> Result<BitString> {
        if n == 0 {
            return Err(Error::EmptyRequest);
        }
        match &mut self.inner {
            Inner::Seeded(rng) => {
                Ok((0..n)
                    .map(|_| Self::buffered_bit(&mut self.bit_buf, &mut self.bit_len, rng))
                    .collect())
            }
            Inner::Os(rng) => {
                Ok((0..n)
                    .map(|_| Self::buffered_bit(&mut self.bit_buf, &mut self.bit_len, rng))
                    .collect())
            }
            Inner::Remote { .. } => {
                if let Some(bits) = self.remote_bits(n)? {
                    Ok(bits)
                } else {
                    // fallback engaged
                    self.next_bits(n)
                }
            }
        }
    }

    pub fn next_bit(&mut self) -> Result<bool> {
        Ok(self.next_bits(1)?.get(0).unwrap())
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> Result<f64> {
        match &mut self.inner {
            Inner::Seeded(rng) => Ok(rng.gen()),
            Inner::Os(rng) => Ok(rng.gen()),
            Inner::Remote { .. } => {
                let bits = self.next_bits(64)?;
                let mut word = 0u64;
                for b in bits.iter() {
                    word = (word << 1) | b as u64;
                }
                Ok((word >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
            }
        }
    }

    /// Uniform integer in [0, bound) by rejection.
    pub fn next_index(&mut self, bound: usize) -> Result<usize> {
        assert!(bound > 0);
        if bound == 1 {
            return Ok(0);
        }
        let bits_needed = usize::BITS - (bound - 1).leading_zeros();
        loop {
            let raw = self.next_bits(bits_needed as usize)?;
            let mut v = 0usize;
            for b in raw.iter() {
                v = (v << 1) | b as usize;
            }
            if v < bound {
                return Ok(v);
            }
        }
    }

    /// `count` distinct indices in [0, total), sorted ascending.
    /// Partial Fisher-Yates over the index range.
    pub fn sample_indices(&mut self, total: usize, count: usize) -> Result<Vec<usize>> {
        assert!(count <= total);
        let mut pool: Vec<usize> = (0..total).collect();
        for i in 0..count {
            let j = i + self.next_index(total - i)?;
            pool.swap(i, j);
        }
        let mut chosen = pool[..count].to_vec();
        chosen.sort_unstable();
        Ok(chosen)
    }

    /// One Poisson(mu) draw (Knuth's multiplicative method; fine for the
    /// sub-unity means this simulator works with).
    pub fn poisson(&mut self, mu: f64) -> Result<u64> {
        if !(mu > 0.0) || mu > 700.0 {
            return Err(Error::OutOfRange {
                what: "poisson mean",
                value: mu,
                expected: "0 < mu <= 700",
            });
        }
        let floor = (-mu).exp();
        let mut k = 0u64;
        let mut product = 1.0;
        loop {
            product *= self.next_f64()?;
            if product <= floor {
                return Ok(k);
            }
            k += 1;
        }
    }

    fn remote_bits(&mut self, n: usize) -> Result<Option<BitString>> {
        let Inner::Remote {
            client,
            fallback,
            fallback_allowed,
        } = &mut self.inner
        else {
            unreachable!()
        };
        if let Some(rng) = fallback {
            return Ok(Some(
                (0..n)
                    .map(|_| Self::buffered_bit(&mut self.bit_buf, &mut self.bit_len, rng))
                    .collect(),
            ));
        }
        let outcome = client
            .lock()
            .map_err(|_| Error::Source("remote client poisoned".into()))?
            .take_bits(n);
        match outcome {
            Ok(bits) => Ok(Some(bits)),
            Err(err) if *fallback_allowed => {
                log::warn!("remote QRNG failed ({err}); falling back to OS entropy");
                *fallback = Some(StdRng::from_entropy());
                Ok(None)
            }
            Err(err) => Err(err),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factory(seed: u64) -> StreamFactory {
        StreamFactory::new(
            RngSourceKind::SeededDeterministic { seed },
            Duration::from_secs(10),
            false,
        )
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let a = factory(42)
            .stream(StreamLabel::AliceData, 0)
            .next_bits(8)
            .unwrap();
        let b = factory(42)
            .stream(StreamLabel::AliceData, 0)
            .next_bits(8)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn consecutive_calls_disjoint_segments() {
        let mut s = factory(42).stream(StreamLabel::AliceData, 0);
        let first = s.next_bits(8).unwrap();
        let second = s.next_bits(8).unwrap();
        // Same stream, restarted, yields first ++ second.
        let both = factory(42)
            .stream(StreamLabel::AliceData, 0)
            .next_bits(16)
            .unwrap();
        assert_eq!(both.slice(0, 8).unwrap(), first);
        assert_eq!(both.slice(8, 16).unwrap(), second);
    }

    #[test]
    fn zero_bits_rejected() {
        assert!(factory(1)
            .stream(StreamLabel::AliceData, 0)
            .next_bits(0)
            .is_err());
    }

    #[test]
    fn labels_and_iterations_give_distinct_streams() {
        let f = factory(7);
        let a = f.stream(StreamLabel::AliceData, 0).next_bits(128).unwrap();
        let b = f.stream(StreamLabel::AliceBases, 0).next_bits(128).unwrap();
        let c = f.stream(StreamLabel::AliceData, 1).next_bits(128).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn monobit_frequency_seeded() {
        let bits = factory(7)
            .stream(StreamLabel::AliceData, 0)
            .next_bits(1_000_000)
            .unwrap();
        let ones = bits.count_ones() as f64 / 1e6;
        assert!((0.497..=0.503).contains(&ones), "monobit fraction {ones}");
    }

    #[test]
    fn monobit_frequency_os() {
        let f = StreamFactory::new(RngSourceKind::OsEntropy, Duration::from_secs(10), false);
        let bits = f
            .stream(StreamLabel::AliceData, 0)
            .next_bits(1_000_000)
            .unwrap();
        let ones = bits.count_ones() as f64 / 1e6;
        assert!((0.497..=0.503).contains(&ones), "monobit fraction {ones}");
    }

    #[test]
    fn sample_indices_distinct_sorted() {
        let mut s = factory(3).stream(StreamLabel::AttackSchedule, 0);
        let idx = s.sample_indices(1000, 500).unwrap();
        assert_eq!(idx.len(), 500);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 1000));
    }

    #[test]
    fn poisson_mean_sane() {
        let mut s = factory(11).stream(StreamLabel::SourcePulses, 0);
        let n = 100_000;
        let total: u64 = (0..n).map(|_| s.poisson(0.5).unwrap()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (0.5f64 / n as f64).sqrt());
    }
}
