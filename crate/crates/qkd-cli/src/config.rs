//! Run configuration assembly: preset tables, the key=value config file
//! format, and the preset < file < flags precedence chain.

use qkd::engine::EngineConfig;
use qkd::optics::LinkParams;
use qkd::types::RngSeed;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    File { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleArg {
    Alice,
    Bob,
    Loopback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Lab,
    Bank18,
    Bank35,
    Custom,
}

impl Preset {
    fn parse(v: &str) -> Result<Preset, String> {
        match v {
            "lab" => Ok(Preset::Lab),
            "bank18" => Ok(Preset::Bank18),
            "bank35" => Ok(Preset::Bank35),
            "custom" => Ok(Preset::Custom),
            other => Err(format!("unknown preset '{}' (lab, bank18, bank35, custom)", other)),
        }
    }

    fn link(self) -> Option<LinkParams> {
        match self {
            Preset::Lab => Some(LinkParams::lab()),
            Preset::Bank18 => Some(LinkParams::bank18()),
            Preset::Bank35 => Some(LinkParams::bank35()),
            Preset::Custom => None,
        }
    }
}

/// One layer of settings; `None` means "not stated at this layer".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub role: Option<RoleArg>,
    pub preset: Option<Preset>,
    pub sessions: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub listen: Option<String>,
    pub dial: Option<String>,
    pub capture: Option<PathBuf>,
    pub mean_photon_number: Option<f64>,
    pub channel_loss_db: Option<f64>,
    pub detector_efficiency: Option<f64>,
    pub dark_count_prob: Option<f64>,
    pub visibility: Option<f64>,
    pub dead_time_slots: Option<u32>,
    pub pulse_rate_hz: Option<f64>,
    pub trains_per_session: Option<u32>,
    pub pulses_per_train: Option<u32>,
    pub inject_error_rate: Option<f64>,
    pub eps_pa: Option<f64>,
    pub qber_abort_threshold: Option<f64>,
    pub ec_efficiency_f: Option<f64>,
    pub duty_cycle: Option<f64>,
    pub window_bytes: Option<usize>,
    pub timeout_secs: Option<u64>,
}

/// Keys accepted in config files and `--set`, one per engine or run field.
pub const CONFIG_KEYS: &[&str] = &[
    "role",
    "preset",
    "sessions",
    "seed",
    "out",
    "listen",
    "dial",
    "capture",
    "mean_photon_number",
    "channel_loss_db",
    "detector_efficiency",
    "dark_count_prob",
    "visibility",
    "dead_time_slots",
    "pulse_rate_hz",
    "trains_per_session",
    "pulses_per_train",
    "inject_error_rate",
    "eps_pa",
    "qber_abort_threshold",
    "ec_efficiency_f",
    "duty_cycle",
    "window_bytes",
    "timeout_secs",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{} expects {}, got '{}'", key, what, v))
}

fn parse_seed(v: &str) -> Result<u64, String> {
    let parsed = match v.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => v.parse(),
    };
    parsed.map_err(|_| format!("seed expects a decimal or 0x-prefixed integer, got '{}'", v))
}

impl Overrides {
    /// Applies one `key = value` assignment; error strings carry no position
    /// so callers can attach a line number or flag name.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "role" => {
                self.role = Some(match value {
                    "alice" => RoleArg::Alice,
                    "bob" => RoleArg::Bob,
                    "loopback" => RoleArg::Loopback,
                    other => return Err(format!("unknown role '{}' (alice, bob, loopback)", other)),
                })
            }
            "preset" => self.preset = Some(Preset::parse(value)?),
            "sessions" => self.sessions = Some(parse_num(key, value, "a positive integer")?),
            "seed" => self.seed = Some(parse_seed(value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "listen" => self.listen = Some(value.to_string()),
            "dial" => self.dial = Some(value.to_string()),
            "capture" => self.capture = Some(PathBuf::from(value)),
            "mean_photon_number" => {
                self.mean_photon_number = Some(parse_num(key, value, "a number")?)
            }
            "channel_loss_db" => self.channel_loss_db = Some(parse_num(key, value, "a number")?),
            "detector_efficiency" => {
                self.detector_efficiency = Some(parse_num(key, value, "a number")?)
            }
            "dark_count_prob" => self.dark_count_prob = Some(parse_num(key, value, "a number")?),
            "visibility" => self.visibility = Some(parse_num(key, value, "a number")?),
            "dead_time_slots" => self.dead_time_slots = Some(parse_num(key, value, "an integer")?),
            "pulse_rate_hz" => self.pulse_rate_hz = Some(parse_num(key, value, "a number")?),
            "trains_per_session" => {
                self.trains_per_session = Some(parse_num(key, value, "an integer")?)
            }
            "pulses_per_train" => {
                self.pulses_per_train = Some(parse_num(key, value, "an integer")?)
            }
            "inject_error_rate" => {
                self.inject_error_rate = Some(parse_num(key, value, "a number")?)
            }
            "eps_pa" => self.eps_pa = Some(parse_num(key, value, "a number")?),
            "qber_abort_threshold" => {
                self.qber_abort_threshold = Some(parse_num(key, value, "a number")?)
            }
            "ec_efficiency_f" => self.ec_efficiency_f = Some(parse_num(key, value, "a number")?),
            "duty_cycle" => self.duty_cycle = Some(parse_num(key, value, "a number")?),
            "window_bytes" => self.window_bytes = Some(parse_num(key, value, "an integer")?),
            "timeout_secs" => self.timeout_secs = Some(parse_num(key, value, "an integer")?),
            other => return Err(format!("unknown key '{}'", other)),
        }
        Ok(())
    }

    /// Lays `upper` on top of `self`: stated values win, unstated fall
    /// through.
    pub fn overlay(mut self, upper: Overrides) -> Overrides {
        macro_rules! take {
            ($($f:ident),* $(,)?) => {
                $(if upper.$f.is_some() { self.$f = upper.$f; })*
            };
        }
        take!(
            role, preset, sessions, seed, out, listen, dial, capture, mean_photon_number,
            channel_loss_db, detector_efficiency, dark_count_prob, visibility, dead_time_slots,
            pulse_rate_hz, trains_per_session, pulses_per_train, inject_error_rate, eps_pa,
            qber_abort_threshold, ec_efficiency_f, duty_cycle, window_bytes, timeout_secs,
        );
        self
    }
}

/// Parses the config file text: one `key = value` per line, `#` starts a
/// full-line comment, blank lines ignored.
pub fn parse_config_file(path: &str, text: &str) -> Result<Overrides, ConfigError> {
    let mut o = Overrides::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::File {
            path: path.to_string(),
            line,
            msg: format!("expected key = value, got '{}'", trimmed),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::File {
                path: path.to_string(),
                line,
                msg: "empty key or value".into(),
            });
        }
        o.apply_kv(key, value)
            .map_err(|msg| ConfigError::File { path: path.to_string(), line, msg })?;
    }
    Ok(o)
}

/// Fully resolved instructions for one invocation.
#[derive(Debug)]
pub struct RunPlan {
    pub role: RoleArg,
    pub engine: EngineConfig,
    pub out_dir: PathBuf,
    pub listen: Option<String>,
    pub dial: Option<String>,
    pub capture: Option<PathBuf>,
    pub seed_was_random: bool,
}

/// Resolves the merged override stack into a validated plan. The custom
/// preset demands every physical field; named presets allow partial
/// overrides on top of their table values.
pub fn build_plan(merged: Overrides) -> Result<RunPlan, ConfigError> {
    let role = merged
        .role
        .ok_or_else(|| ConfigError::Invalid("role is required (alice, bob, loopback)".into()))?;
    let preset = merged.preset.ok_or_else(|| {
        ConfigError::Invalid("preset is required (lab, bank18, bank35, custom)".into())
    })?;

    let link = match preset.link() {
        Some(mut link) => {
            macro_rules! apply {
                ($($f:ident),*) => { $(if let Some(v) = merged.$f { link.$f = v; })* };
            }
            apply!(
                mean_photon_number,
                channel_loss_db,
                detector_efficiency,
                dark_count_prob,
                visibility,
                dead_time_slots,
                pulse_rate_hz
            );
            link
        }
        None => {
            macro_rules! need {
                ($f:ident) => {
                    merged.$f.ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "custom preset requires explicit {}",
                            stringify!($f)
                        ))
                    })?
                };
            }
            LinkParams {
                mean_photon_number: need!(mean_photon_number),
                channel_loss_db: need!(channel_loss_db),
                detector_efficiency: need!(detector_efficiency),
                dark_count_prob: need!(dark_count_prob),
                visibility: need!(visibility),
                dead_time_slots: need!(dead_time_slots),
                pulse_rate_hz: need!(pulse_rate_hz),
            }
        }
    };

    let (seed, seed_was_random) = match merged.seed {
        Some(s) => (s, false),
        None => (qkd::rng::os_random_wide() as u64, true),
    };
    let mut engine = EngineConfig::new(link, RngSeed(seed), merged.sessions.unwrap_or(10));
    if let Some(v) = merged.trains_per_session {
        engine.trains_per_session = v;
    }
    if let Some(v) = merged.pulses_per_train {
        engine.pulses_per_train = v;
    }
    if let Some(v) = merged.inject_error_rate {
        engine.inject_error_rate = v;
    }
    if let Some(v) = merged.eps_pa {
        engine.pa.eps_pa = v;
    }
    if let Some(v) = merged.qber_abort_threshold {
        engine.pa.qber_abort_threshold = v;
    }
    if let Some(v) = merged.ec_efficiency_f {
        engine.pa.ec_efficiency_f = v;
    }
    if let Some(v) = merged.duty_cycle {
        engine.duty_cycle = v;
    }
    if let Some(v) = merged.window_bytes {
        engine.window_bytes = v;
    }
    if let Some(v) = merged.timeout_secs {
        engine.timeout = Some(Duration::from_secs(v));
    }
    engine.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

    Ok(RunPlan {
        role,
        engine,
        out_dir: merged.out.unwrap_or_else(|| PathBuf::from(".")),
        listen: merged.listen,
        dial: merged.dial,
        capture: merged.capture,
        seed_was_random,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Overrides {
        let mut o = Overrides::default();
        o.apply_kv("role", "loopback").unwrap();
        o.apply_kv("preset", "lab").unwrap();
        o.apply_kv("seed", "7").unwrap();
        o
    }

    #[test]
    fn file_parse_reports_line_numbers() {
        let text = "# comment\nsessions = 5\nvisibility banana\n";
        let err = parse_config_file("run.conf", text).unwrap_err();
        assert_eq!(err.to_string(), "run.conf:3: expected key = value, got 'visibility banana'");

        let text = "sessions = 5\nflux_capacitance = 3\n";
        let err = parse_config_file("run.conf", text).unwrap_err();
        assert!(err.to_string().starts_with("run.conf:2: unknown key"));
    }

    #[test]
    fn overlay_prefers_the_upper_layer() {
        let mut file = Overrides::default();
        file.apply_kv("sessions", "5").unwrap();
        file.apply_kv("visibility", "0.9").unwrap();
        let mut flags = Overrides::default();
        flags.apply_kv("sessions", "9").unwrap();
        let merged = file.overlay(flags);
        assert_eq!(merged.sessions, Some(9));
        assert_eq!(merged.visibility, Some(0.9));
    }

    #[test]
    fn custom_preset_demands_all_physical_fields() {
        let mut o = base();
        o.apply_kv("preset", "custom").unwrap();
        o.apply_kv("mean_photon_number", "0.5").unwrap();
        let err = build_plan(o.clone()).unwrap_err();
        assert!(err.to_string().contains("requires explicit channel_loss_db"));
    }

    #[test]
    fn named_preset_accepts_partial_overrides() {
        let mut o = base();
        o.apply_kv("visibility", "0.99").unwrap();
        let plan = build_plan(o).unwrap();
        assert_eq!(plan.engine.link.visibility, 0.99);
        assert_eq!(plan.engine.link.channel_loss_db, LinkParams::lab().channel_loss_db);
        assert!(!plan.seed_was_random);
        assert_eq!(plan.engine.master_seed, RngSeed(7));
    }

    #[test]
    fn seed_accepts_hex() {
        assert_eq!(parse_seed("0xFF").unwrap(), 255);
        assert_eq!(parse_seed("255").unwrap(), 255);
        assert!(parse_seed("xyz").is_err());
    }

    #[test]
    fn validation_failures_surface_as_config_errors() {
        let mut o = base();
        o.apply_kv("duty_cycle", "1.5").unwrap();
        let err = build_plan(o).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(err.to_string().contains("duty cycle"));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let mut o = Overrides::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "role" => "alice",
                "preset" => "lab",
                "out" | "listen" | "dial" | "capture" => "x",
                "seed" => "0x1",
                _ => "1",
            };
            o.apply_kv(key, value).unwrap_or_else(|e| panic!("{}: {}", key, e));
        }
    }
}
