//! Orchestrates runs and parameter sweeps: executes the full enabled
//! pipeline per iteration, assembles records, and writes the output files.

use std::fs;
use std::path::Path;
use std::time::Duration;

use crate::attack::{self, AttackSchedule};
use crate::bb84::{self, SharedSelection};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::link;
use crate::randomness::{StreamFactory, StreamLabel};
use crate::report::{self, IterationRecord, RunSummary};

pub struct RunOutput {
    pub records: Vec<IterationRecord>,
    pub summary: RunSummary,
    pub schedule: AttackSchedule,
}

pub fn make_factory(config: &SimConfig) -> StreamFactory {
    StreamFactory::new(
        config.rng_kind(),
        Duration::from_secs_f64(config.qrng_timeout_s),
        config.qrng_fallback_os,
    )
}

/// Ground truth of which iterations the eavesdropper attacks. With the
/// random attacks module off, eve (when enabled) attacks every iteration.
pub fn attack_schedule_for(config: &SimConfig, factory: &StreamFactory) -> Result<AttackSchedule> {
    if !config.eve_enabled {
        return Ok(AttackSchedule::none(config.iterations));
    }
    match config.attack_rate {
        Some(rate) => attack::build_attack_schedule(
            config.iterations,
            rate,
            &mut factory.stream(StreamLabel::AttackSchedule, 0),
        ),
        None => Ok(AttackSchedule::all(config.iterations)),
    }
}

/// One key distribution through the full enabled pipeline.
pub fn run_iteration(
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    attacked: bool,
) -> Result<IterationRecord> {
    let n = config.photons as usize;
    let alice_data = factory
        .stream(StreamLabel::AliceData, iteration)
        .next_bits(n)?;
    let alice_bases = factory
        .stream(StreamLabel::AliceBases, iteration)
        .next_bits(n)?;
    let bob_bases = factory
        .stream(StreamLabel::BobBases, iteration)
        .next_bits(n)?;

    let mut photons = bb84::prepare(&alice_data, &alice_bases)?;
    if attacked {
        bb84::eve_intercept(
            &mut photons,
            config.epsilon,
            &mut factory.stream(StreamLabel::EveBases, iteration),
            &mut factory.stream(StreamLabel::EveCoins, iteration),
        )?;
    }
    bb84::depolarize(
        &mut photons,
        config.p_depol,
        &mut factory.stream(StreamLabel::DepolarizationCoins, iteration),
    )?;
    let bob_data = bb84::measure(
        &photons,
        &bob_bases,
        &mut factory.stream(StreamLabel::MeasurementCoins, iteration),
    )?;

    let sift = bb84::sift(&alice_bases, &bob_bases, &alice_data, &bob_data)?;
    let sifted_len = sift.kept_indices.len() as u64;

    let (shared_len, qber_est, decided_attacked, qber_remaining) = if sifted_len == 0 {
        (0, None, None, None)
    } else {
        let mut selection_rng = factory.stream(StreamLabel::SharedSelection, iteration);
        let rng = matches!(config.shared_selection, SharedSelection::Random)
            .then_some(&mut selection_rng);
        let est = bb84::share_and_estimate(&sift, config.sharing_rate, config.shared_selection, rng)?;
        let decided = attack::decide(est.qber_est, config.threshold);
        let remaining = if config.research {
            bb84::remaining_key_qber(&est).ok()
        } else {
            None
        };
        (
            est.shared_count as u64,
            Some(est.qber_est),
            Some(decided),
            remaining,
        )
    };

    let timing = acquisition_fields(config, factory, iteration, sifted_len)?;

    Ok(IterationRecord {
        iteration,
        truly_attacked: attacked,
        decided_attacked,
        sifted_len,
        shared_len,
        qber_est,
        qber_remaining,
        t_source_s: timing.map(|t| t.0),
        t_dead_s: timing.map(|t| t.1),
        t_quantum_s: timing.map(|t| t.2),
        sifted_rate_bps: timing.map(|t| t.3),
    })
}

/// Timing fields `(t_source, t_dead, t_quantum, rate)` of one iteration, or
/// None when no physics module is enabled. Deterministic given the factory,
/// so both networked terminals compute identical values locally.
pub fn acquisition_fields(
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    sifted_len: u64,
) -> Result<Option<(f64, f64, f64, f64)>> {
    if !config.physics_enabled() {
        return Ok(None);
    }
    let acq = link::simulate_acquisition(
        config.photons,
        &config.source_params(),
        &config.link_params(),
        &config.detector_params(),
        &mut factory.stream(StreamLabel::SourcePulses, iteration),
        &mut factory.stream(StreamLabel::DetectionCoins, iteration),
        config.pulse_cap,
    )?;
    let rate = link::sifted_rate_from_iteration(sifted_len, &acq)?;
    Ok(Some((acq.t_source_s, acq.t_dead_s, acq.t_quantum_s, rate)))
}

/// Executes `config.iterations` key distributions in-process.
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    let factory = make_factory(config);
    let schedule = attack_schedule_for(config, &factory)?;
    let mut records = Vec::with_capacity(config.iterations as usize);
    for iteration in 0..config.iterations {
        records.push(run_iteration(
            config,
            &factory,
            iteration,
            schedule.is_attacked(iteration),
        )?);
    }
    let summary = report::summarize(&records);
    Ok(RunOutput {
        records,
        summary,
        schedule,
    })
}

/// Writes `config.resolved`, `iterations.csv`, `summary.csv`, `schedule.csv`
/// and, when the random attacks module is enabled, `roc.csv`.
pub fn write_run_outputs(config: &SimConfig, output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved"), config.to_kv_text())?;
    report::write_iterations_csv(&output.records, &dir.join("iterations.csv"))?;
    report::write_summary_csv(&output.summary, &dir.join("summary.csv"))?;
    report::write_schedule_csv(&output.schedule, &dir.join("schedule.csv"))?;
    if config.attack_rate.is_some() {
        let decisions: Vec<_> = output
            .records
            .iter()
            .map(|r| attack::DecisionRecord {
                iteration: r.iteration,
                qber_est: r.qber_est,
                decided_attacked: r.decided_attacked.unwrap_or(false),
                truly_attacked: r.truly_attacked,
            })
            .collect();
        let curve = attack::roc_points(&decisions, &attack::default_roc_thresholds())?;
        report::write_roc_csv(&curve, &dir.join("roc.csv"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PDepol,
    Epsilon,
    Photons,
    SharingRate,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p_depol" => Ok(SweepAxis::PDepol),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "photons" => Ok(SweepAxis::Photons),
            "sharing_rate" => Ok(SweepAxis::SharingRate),
            _ => Err(Error::Config(vec![format!(
                "unknown sweep axis `{s}` (available: p_depol, epsilon, photons, sharing_rate)"
            )])),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PDepol => "p_depol",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Photons => "photons",
            SweepAxis::SharingRate => "sharing_rate",
        }
    }

    fn apply(self, config: &mut SimConfig, value: f64) {
        match self {
            SweepAxis::PDepol => config.p_depol = value,
            SweepAxis::Epsilon => config.epsilon = value,
            SweepAxis::Photons => config.photons = value as u64,
            SweepAxis::SharingRate => config.sharing_rate = value,
        }
    }
}

pub struct SweepPoint {
    pub value: f64,
    pub summary: RunSummary,
}

/// One run per axis value. Each point derives its seed from (master seed,
/// point index) so adding points never reshuffles existing ones.
pub fn sweep(base: &SimConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config(vec!["sweep values list is empty".into()]));
    }
    let mut points = Vec::with_capacity(values.len());
    for (index, &value) in values.iter().enumerate() {
        let mut config = base.clone();
        axis.apply(&mut config, value);
        config.seed = crate::randomness::derive_master(base.seed, "sweep", index as u64);
        let output = run(&config)?;
        points.push(SweepPoint {
            value,
            summary: output.summary,
        });
    }
    Ok(points)
}

/// Combined sweep CSV: axis value followed by summary columns.
pub fn write_sweep_csv(points: &[SweepPoint], axis: SweepAxis, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "{},qber_est_mean,qber_est_std,sifted_len_mean,sifted_len_std,\
shared_len_mean,shared_len_std,sifted_rate_mean,sifted_rate_std,\
t_quantum_mean,t_quantum_std",
        axis.as_str()
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        let s = &p.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.value,
            opt(s.qber_est.mean),
            opt(s.qber_est.std),
            opt(s.sifted_len.mean),
            opt(s.sifted_len.std),
            opt(s.shared_len.mean),
            opt(s.shared_len.std),
            opt(s.sifted_rate_bps.mean),
            opt(s.sifted_rate_bps.std),
            opt(s.t_quantum_s.mean),
            opt(s.t_quantum_s.std),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_run_has_zero_qber() {
        let config = SimConfig {
            iterations: 1,
            ..SimConfig::default()
        };
        let out = run(&config).unwrap();
        let r = &out.records[0];
        assert_eq!(r.qber_est, Some(0.0));
        assert!((r.sifted_len as f64 - 5000.0).abs() < 3.0 * 50.0);
        assert_eq!(r.decided_attacked, Some(false));
        assert_eq!(r.t_source_s, None);
        assert_eq!(r.sifted_rate_bps, None);
    }

    #[test]
    fn runs_are_deterministic_under_seed() {
        let config = SimConfig {
            photons: 500,
            iterations: 5,
            eve_enabled: true,
            epsilon: 0.5,
            p_depol: 0.1,
            research: true,
            ..SimConfig::default()
        };
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn module_toggle_does_not_perturb_protocol_streams() {
        // Enabling the physics modules must leave the protocol outcome
        // (sifted lengths, QBER) bit-identical.
        let base = SimConfig {
            photons: 1000,
            iterations: 3,
            p_depol: 0.2,
            ..SimConfig::default()
        };
        let with_physics = SimConfig {
            detector: Some(crate::config::DetectorConfig {
                eta_d: 0.5,
                additive_yield_mode: false,
            }),
            dead_time_s: Some(1e-6),
            ..base.clone()
        };
        let a = run(&base).unwrap();
        let b = run(&with_physics).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.sifted_len, rb.sifted_len);
            assert_eq!(ra.qber_est, rb.qber_est);
            assert!(rb.t_quantum_s.is_some());
        }
    }

    #[test]
    fn mean_qber_tracks_analytic_value() {
        let config = SimConfig {
            iterations: 100,
            eve_enabled: true,
            epsilon: 1.0,
            p_depol: 0.3,
            ..SimConfig::default()
        };
        let out = run(&config).unwrap();
        let mean = out.summary.qber_est.mean.unwrap();
        let q = bb84::analytics::theoretical_qber(0.3, 1.0); // 0.35
        let se = (q * (1.0 - q) / 2500.0).sqrt() / 10.0;
        assert!((mean - q).abs() < 3.0 * se, "mean {mean} vs {q}");
    }

    #[test]
    fn invalid_config_rejected() {
        let config = SimConfig {
            photons: 0,
            ..SimConfig::default()
        };
        assert!(matches!(run(&config), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_seeds_are_stable_under_extension() {
        let base = SimConfig {
            photons: 200,
            iterations: 3,
            ..SimConfig::default()
        };
        let short = sweep(&base, SweepAxis::PDepol, &[0.0, 0.5]).unwrap();
        let long = sweep(&base, SweepAxis::PDepol, &[0.0, 0.5, 1.0]).unwrap();
        for (a, b) in short.iter().zip(&long) {
            assert_eq!(a.summary.qber_est.mean, b.summary.qber_est.mean);
        }
        assert!(sweep(&base, SweepAxis::PDepol, &[]).is_err());
    }

    #[test]
    fn run_outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let config = SimConfig {
            photons: 200,
            iterations: 4,
            eve_enabled: true,
            attack_rate: Some(0.5),
            ..SimConfig::default()
        };
        let out = run(&config).unwrap();
        write_run_outputs(&config, &out, dir.path()).unwrap();
        for file in ["config.resolved", "iterations.csv", "summary.csv", "schedule.csv", "roc.csv"] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        let echoed = SimConfig::from_kv_text(
            &fs::read_to_string(dir.path().join("config.resolved")).unwrap(),
        )
        .unwrap();
        assert_eq!(echoed, config);
    }
}
