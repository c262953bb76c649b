//! Simulation configuration: the flat `key = value` config format, defaults,
//! validation, and the experiment-replication presets.

use std::fmt::Write as _;

use crate::bb84::SharedSelection;
use crate::error::{Error, Result};
use crate::link::{DetectorParams, LinkParams, SourceParams};
use crate::randomness::RngSourceKind;

pub const DEFAULT_QRNG_ENDPOINT: &str = "https://qrng.anu.edu.au/API/jsonI.php?type=hex16";

/// Weak-pulse laser source inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakPulseConfig {
    pub mu: f64,
}

/// Detector efficiency module inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub eta_d: f64,
    pub additive_yield_mode: bool,
}

/// Which generator backs the bit streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngChoice {
    Seeded,
    Os,
    Remote,
}

/// All universal and optional parameters of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Raw key size: photons per key-distribution iteration.
    pub photons: u64,
    pub iterations: u64,
    pub eve_enabled: bool,
    /// Fraction of photons Eve intercepts per attacked iteration.
    pub epsilon: f64,
    pub p_depol: f64,
    /// Fraction of the sifted key publicly compared for estimation.
    pub sharing_rate: f64,
    /// Pre-agreed QBER abort threshold.
    pub threshold: f64,
    pub ip: String,
    pub port: u16,
    pub rng: RngChoice,
    pub seed: u64,
    pub qrng_endpoint: String,
    pub qrng_batch_size: usize,
    pub qrng_timeout_s: f64,
    /// Fall back to OS entropy when the remote source fails (default: abort).
    pub qrng_fallback_os: bool,
    pub shared_selection: SharedSelection,
    /// Server terminal plays Alice (sender) unless swapped.
    pub server_is_alice: bool,
    /// Random attacks module: fraction of iterations attacked.
    pub attack_rate: Option<f64>,
    /// Remaining-key (research) module.
    pub research: bool,
    /// Weak pulse laser source module.
    pub weak_pulse: Option<WeakPulseConfig>,
    /// Source repetition rate; used by every timing module.
    pub f_source_hz: f64,
    /// Channel attenuation module.
    pub attenuation: Option<LinkParams>,
    /// Detector efficiency module.
    pub detector: Option<DetectorConfig>,
    /// Dead time module: recovery interval per detection, seconds.
    pub dead_time_s: Option<f64>,
    /// Abort threshold on expected emitted pulses per iteration.
    pub pulse_cap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            photons: 10_000,
            iterations: 100,
            eve_enabled: false,
            epsilon: 1.0,
            p_depol: 0.0,
            sharing_rate: 0.5,
            threshold: 0.125,
            ip: "127.0.0.1".into(),
            port: 5005,
            rng: RngChoice::Seeded,
            seed: 1,
            qrng_endpoint: DEFAULT_QRNG_ENDPOINT.into(),
            qrng_batch_size: 1024,
            qrng_timeout_s: 10.0,
            qrng_fallback_os: false,
            shared_selection: SharedSelection::Prefix,
            server_is_alice: true,
            attack_rate: None,
            research: false,
            weak_pulse: None,
            f_source_hz: 1e6,
            attenuation: None,
            detector: None,
            dead_time_s: None,
            pulse_cap: 1e10,
        }
    }
}

impl SimConfig {
    /// Any timing/physics module enabled?
    pub fn physics_enabled(&self) -> bool {
        self.weak_pulse.is_some()
            || self.attenuation.is_some()
            || self.detector.is_some()
            || self.dead_time_s.is_some()
    }

    pub fn source_params(&self) -> SourceParams {
        match &self.weak_pulse {
            Some(wp) => SourceParams {
                mu: wp.mu,
                f_source_hz: self.f_source_hz,
                ideal: false,
            },
            None => SourceParams {
                mu: 0.0,
                f_source_hz: self.f_source_hz,
                ideal: true,
            },
        }
    }

    pub fn link_params(&self) -> LinkParams {
        self.attenuation.unwrap_or_default()
    }

    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            eta_d: self.detector.map_or(1.0, |d| d.eta_d),
            tau_dead_s: self.dead_time_s.unwrap_or(0.0),
            additive_yield_mode: self.detector.is_some_and(|d| d.additive_yield_mode),
        }
    }

    pub fn rng_kind(&self) -> RngSourceKind {
        match self.rng {
            RngChoice::Seeded => RngSourceKind::SeededDeterministic { seed: self.seed },
            RngChoice::Os => RngSourceKind::OsEntropy,
            RngChoice::Remote => RngSourceKind::RemoteQrng {
                endpoint: self.qrng_endpoint.clone(),
                batch_size: self.qrng_batch_size,
            },
        }
    }

    /// Checks every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        fn ratio(problems: &mut Vec<String>, key: &str, v: f64) {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{key} must be in [0, 1], got {v}"));
            }
        }
        if self.photons == 0 {
            problems.push("photons must be >= 1".into());
        }
        if self.iterations == 0 {
            problems.push("iterations must be >= 1".into());
        }
        ratio(&mut problems, "epsilon", self.epsilon);
        ratio(&mut problems, "p_depol", self.p_depol);
        ratio(&mut problems, "threshold", self.threshold);
        if !(self.sharing_rate > 0.0 && self.sharing_rate <= 1.0) {
            problems.push(format!(
                "sharing_rate must be in (0, 1], got {}",
                self.sharing_rate
            ));
        }
        if let Some(rate) = self.attack_rate {
            ratio(&mut problems, "attack_rate", rate);
        }
        if let Some(wp) = &self.weak_pulse {
            if !(wp.mu > 0.0) {
                problems.push(format!("source.mu must be > 0, got {}", wp.mu));
            }
        }
        if !(self.f_source_hz > 0.0) {
            problems.push(format!("source.f_hz must be > 0, got {}", self.f_source_hz));
        }
        if let Some(link) = &self.attenuation {
            for (key, v) in [
                ("attenuation.channel_db_per_km", link.alpha_ch_db_per_km),
                ("attenuation.distance_km", link.distance_km),
                ("attenuation.detector_db", link.alpha_det_db),
            ] {
                if v < 0.0 {
                    problems.push(format!("{key} must be >= 0, got {v}"));
                }
            }
        }
        if let Some(det) = &self.detector {
            ratio(&mut problems, "detector.eta", det.eta_d);
        }
        if let Some(tau) = self.dead_time_s {
            if tau < 0.0 {
                problems.push(format!("dead_time_s must be >= 0, got {tau}"));
            }
        }
        if !(self.pulse_cap > 0.0) {
            problems.push(format!("pulse_cap must be > 0, got {}", self.pulse_cap));
        }
        if self.rng == RngChoice::Remote && self.qrng_batch_size == 0 {
            problems.push("qrng.batch_size must be >= 1".into());
        }
        if !(self.qrng_timeout_s > 0.0) {
            problems.push(format!(
                "qrng.timeout_s must be > 0, got {}",
                self.qrng_timeout_s
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Parses the flat config format: one `key = value` per line, `#` starts
    /// a comment. Unknown keys and type mismatches are all reported.
    pub fn from_kv_text(text: &str) -> Result<SimConfig> {
        let mut config = SimConfig::default();
        let mut problems = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", lineno + 1));
                continue;
            };
            if let Err(message) = config.apply_kv(key.trim(), value.trim()) {
                problems.push(format!("line {}: {message}", lineno + 1));
            }
        }
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Applies one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("key `{key}`: cannot parse {value:?}"))
        }
        fn boolean(key: &str, value: &str) -> std::result::Result<bool, String> {
            match value.to_ascii_lowercase().as_str() {
                "yes" | "true" | "1" | "on" => Ok(true),
                "no" | "false" | "0" | "off" => Ok(false),
                _ => Err(format!("key `{key}`: expected yes/no, got {value:?}")),
            }
        }
        match key {
            "photons" => self.photons = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "eve" => self.eve_enabled = boolean(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "p_depol" => self.p_depol = num(key, value)?,
            "sharing_rate" => self.sharing_rate = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "ip" => self.ip = value.to_string(),
            "port" => self.port = num(key, value)?,
            "rng" => {
                self.rng = match value {
                    "seeded" => RngChoice::Seeded,
                    "os" => RngChoice::Os,
                    "remote" => RngChoice::Remote,
                    _ => return Err(format!("key `rng`: expected seeded/os/remote, got {value:?}")),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "qrng.endpoint" => self.qrng_endpoint = value.to_string(),
            "qrng.batch_size" => self.qrng_batch_size = num(key, value)?,
            "qrng.timeout_s" => self.qrng_timeout_s = num(key, value)?,
            "qrng.fallback_os" => self.qrng_fallback_os = boolean(key, value)?,
            "shared_selection" => {
                self.shared_selection = match value {
                    "prefix" => SharedSelection::Prefix,
                    "random" => SharedSelection::Random,
                    _ => {
                        return Err(format!(
                            "key `shared_selection`: expected prefix/random, got {value:?}"
                        ))
                    }
                }
            }
            "server_is_alice" => self.server_is_alice = boolean(key, value)?,
            "attack_rate" => self.attack_rate = Some(num(key, value)?),
            "research" => self.research = boolean(key, value)?,
            "source.mu" => {
                self.weak_pulse = Some(WeakPulseConfig {
                    mu: num(key, value)?,
                })
            }
            "source.f_hz" => self.f_source_hz = num(key, value)?,
            "attenuation.channel_db_per_km" => {
                self.attenuation.get_or_insert_with(Default::default).alpha_ch_db_per_km =
                    num(key, value)?
            }
            "attenuation.distance_km" => {
                self.attenuation.get_or_insert_with(Default::default).distance_km =
                    num(key, value)?
            }
            "attenuation.detector_db" => {
                self.attenuation.get_or_insert_with(Default::default).alpha_det_db =
                    num(key, value)?
            }
            "detector.eta" => {
                let additive = self.detector.is_some_and(|d| d.additive_yield_mode);
                self.detector = Some(DetectorConfig {
                    eta_d: num(key, value)?,
                    additive_yield_mode: additive,
                });
            }
            "detector.additive_yield" => {
                let eta = self.detector.map_or(1.0, |d| d.eta_d);
                self.detector = Some(DetectorConfig {
                    eta_d: eta,
                    additive_yield_mode: boolean(key, value)?,
                });
            }
            "dead_time_s" => self.dead_time_s = Some(num(key, value)?),
            "pulse_cap" => self.pulse_cap = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Fully resolved config in the same flat format; parsing it back yields
    /// a field-for-field equal config.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
        kv("photons", self.photons.to_string());
        kv("iterations", self.iterations.to_string());
        kv("eve", yn(self.eve_enabled));
        kv("epsilon", self.epsilon.to_string());
        kv("p_depol", self.p_depol.to_string());
        kv("sharing_rate", self.sharing_rate.to_string());
        kv("threshold", self.threshold.to_string());
        kv("ip", self.ip.clone());
        kv("port", self.port.to_string());
        kv(
            "rng",
            match self.rng {
                RngChoice::Seeded => "seeded",
                RngChoice::Os => "os",
                RngChoice::Remote => "remote",
            }
            .to_string(),
        );
        kv("seed", self.seed.to_string());
        kv("qrng.endpoint", self.qrng_endpoint.clone());
        kv("qrng.batch_size", self.qrng_batch_size.to_string());
        kv("qrng.timeout_s", self.qrng_timeout_s.to_string());
        kv("qrng.fallback_os", yn(self.qrng_fallback_os));
        kv(
            "shared_selection",
            match self.shared_selection {
                SharedSelection::Prefix => "prefix",
                SharedSelection::Random => "random",
            }
            .to_string(),
        );
        kv("server_is_alice", yn(self.server_is_alice));
        if let Some(rate) = self.attack_rate {
            kv("attack_rate", rate.to_string());
        }
        kv("research", yn(self.research));
        if let Some(wp) = &self.weak_pulse {
            kv("source.mu", wp.mu.to_string());
        }
        kv("source.f_hz", self.f_source_hz.to_string());
        if let Some(link) = &self.attenuation {
            kv(
                "attenuation.channel_db_per_km",
                link.alpha_ch_db_per_km.to_string(),
            );
            kv("attenuation.distance_km", link.distance_km.to_string());
            kv("attenuation.detector_db", link.alpha_det_db.to_string());
        }
        if let Some(det) = &self.detector {
            kv("detector.eta", det.eta_d.to_string());
            kv("detector.additive_yield", yn(det.additive_yield_mode));
        }
        if let Some(tau) = self.dead_time_s {
            kv("dead_time_s", tau.to_string());
        }
        kv("pulse_cap", self.pulse_cap.to_string());
        out
    }

    /// Built-in replication presets.
    pub fn preset(name: &str) -> Result<SimConfig> {
        match name {
            "exp1" => SimConfig::from_kv_text(include_str!("../presets/exp1.conf")),
            "exp2" => SimConfig::from_kv_text(include_str!("../presets/exp2.conf")),
            _ => Err(Error::Config(vec![format!(
                "unknown preset `{name}` (available: exp1, exp2)"
            )])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut c = SimConfig::default();
        c.eve_enabled = true;
        c.epsilon = 0.3;
        c.attack_rate = Some(0.5);
        c.research = true;
        c.weak_pulse = Some(WeakPulseConfig { mu: 0.189 });
        c.attenuation = Some(LinkParams {
            alpha_ch_db_per_km: 3.0,
            distance_km: 1.27,
            alpha_det_db: 0.0,
        });
        c.detector = Some(DetectorConfig {
            eta_d: 0.4,
            additive_yield_mode: true,
        });
        c.dead_time_s = Some(5e-8);
        let text = c.to_kv_text();
        let back = SimConfig::from_kv_text(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let c = SimConfig::from_kv_text("# header\n\nphotons = 42 # trailing\n").unwrap();
        assert_eq!(c.photons, 42);
    }

    #[test]
    fn unknown_key_reported_with_line() {
        let err = SimConfig::from_kv_text("photons = 1\nbogus = 2\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2"), "{text}");
        assert!(text.contains("bogus"), "{text}");
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut c = SimConfig::default();
        c.photons = 0;
        c.epsilon = 2.0;
        c.sharing_rate = 0.0;
        let err = c.validate().unwrap_err();
        let text = err.to_string();
        for needle in ["photons", "epsilon", "sharing_rate"] {
            assert!(text.contains(needle), "{text}");
        }
    }

    #[test]
    fn preset_fidelity() {
        let exp1 = SimConfig::preset("exp1").unwrap();
        let wp = exp1.weak_pulse.unwrap();
        assert_eq!(wp.mu, 0.189);
        assert_eq!(exp1.f_source_hz, 1e6);
        let link = exp1.attenuation.unwrap();
        assert_eq!(link.alpha_ch_db_per_km, 3.0);
        assert_eq!(link.distance_km, 1.27);
        assert_eq!(link.alpha_det_db, 0.0);
        assert_eq!(exp1.detector.unwrap().eta_d, 0.4);
        assert_eq!(exp1.dead_time_s, Some(0.0));

        let exp2 = SimConfig::preset("exp2").unwrap();
        assert_eq!(exp2.weak_pulse.unwrap().mu, 0.1);
        assert_eq!(exp2.f_source_hz, 1e6);
        let link = exp2.attenuation.unwrap();
        assert_eq!(link.alpha_ch_db_per_km, 1.0);
        assert_eq!(link.distance_km, 20.0);
        assert_eq!(link.alpha_det_db, 3.0);
        assert_eq!(exp2.detector.unwrap().eta_d, 0.5);
        assert_eq!(exp2.dead_time_s, Some(50e-9));

        assert!(SimConfig::preset("exp3").is_err());
    }

    #[test]
    fn module_keys_enable_modules() {
        let c = SimConfig::from_kv_text("").unwrap();
        assert!(!c.physics_enabled());
        assert!(c.source_params().ideal);
        let c = SimConfig::from_kv_text("detector.eta = 0.5\n").unwrap();
        assert!(c.physics_enabled());
        assert_eq!(c.detector_params().eta_d, 0.5);
        assert!(c.source_params().ideal);
    }
}
