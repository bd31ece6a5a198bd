//! Validated system configuration, unit conversions and special functions.
//!
//! The configuration is a TOML document split into sections. Every key has a
//! default, so an empty document yields the reference parameter set. Unknown
//! keys are rejected. Any key can be overridden from the environment with
//! `DWMRO_<SECTION>_<KEY>` (upper case), e.g. `DWMRO_NETWORK_NUM_FUES=4`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Prefix for environment-variable overrides.
pub const ENV_PREFIX: &str = "DWMRO";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("invalid environment override {var}: {reason}")]
    EnvOverride { var: String, reason: String },
    #[error("non-finite power value {0}")]
    NonFinite(f64),
}

impl ConfigError {
    /// Name of the offending field for validation failures.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_sues: usize,
    pub num_fues: usize,
    pub fbs_antennas: usize,
    pub sat_antennas: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_sues: 3,
            num_fues: 2,
            fbs_antennas: 6,
            sat_antennas: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub doppler_hz: f64,
    pub slot_s: f64,
    pub rician_k: f64,
    pub carrier_hz: f64,
    pub sat_distance_m: f64,
    /// Satellite antenna gain G_s (linear).
    pub sat_gain: f64,
    /// SUE antenna gain G_m (linear).
    pub sue_gain: f64,
    /// FUE antenna gain G_k (linear).
    pub fue_gain: f64,
    /// Terrestrial log-distance loss: `-(intercept_db + slope_db * log10(d_m))`.
    pub terrestrial_intercept_db: f64,
    pub terrestrial_slope_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            doppler_hz: 10.0,
            slot_s: 1e-3,
            rician_k: 4.0,
            carrier_hz: 2e9,
            sat_distance_m: 600e3,
            sat_gain: 1e3,
            sue_gain: 1e3,
            fue_gain: 1.0,
            terrestrial_intercept_db: 38.46,
            terrestrial_slope_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub p_max_dbm: f64,
    pub p_sat_dbm: f64,
    pub sigma_a_dbm: f64,
    pub sigma_b_dbm: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            p_max_dbm: 20.0,
            p_sat_dbm: 43.0,
            sigma_a_dbm: -70.0,
            sigma_b_dbm: -75.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QosConfig {
    pub xi_sue: f64,
    pub xi_fue: f64,
    pub phi_fue_mw: f64,
}

impl Default for QosConfig {
    fn default() -> Self {
        Self {
            xi_sue: 0.5,
            xi_fue: 0.3,
            phi_fue_mw: 0.1,
        }
    }
}

/// Logistic energy-harvesting circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EhConfig {
    pub e_max_mw: f64,
    /// Sensitivity, 1/mW.
    pub mu: f64,
    /// Turn-on threshold, mW.
    pub nu_mw: f64,
}

impl Default for EhConfig {
    fn default() -> Self {
        Self {
            e_max_mw: 24.0,
            mu: 150.0,
            nu_mw: 0.024,
        }
    }
}

/// User placement around the FBS, which sits at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub fue_min_m: f64,
    pub fue_max_m: f64,
    pub sue_min_m: f64,
    pub sue_max_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            fue_min_m: 2.0,
            fue_max_m: 8.0,
            sue_min_m: 20.0,
            sue_max_m: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub omega: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Communication cost charged to the gate for each offload.
    pub gate_cost: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            gate_cost: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub episodes: usize,
    pub episode_len: usize,
    pub batch_size: usize,
    pub wm_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gate_lr: f64,
    pub gamma: f64,
    pub lambda_return: f64,
    pub horizon: usize,
    pub det_dim: usize,
    pub stoch_dim: usize,
    pub hidden_dim: usize,
    pub gate_hidden_dim: usize,
    pub free_bits: f64,
    pub beta_dyn: f64,
    pub beta_rep: f64,
    /// Relative weight of the reward term inside the prediction loss.
    pub reward_loss_weight: f64,
    pub entropy_coef: f64,
    /// Bound on the actor mean (soft, via `b * tanh(x / b)`).
    pub action_bound: f64,
    /// Imagination start states per actor-critic update; 0 uses every
    /// posterior state of the replayed batch.
    pub imagination_starts: usize,
    pub max_grad_norm: f64,
    pub wm_updates_per_episode: usize,
    pub ac_updates_per_episode: usize,
    pub replay_capacity: usize,
    pub gate_update_every: usize,
    pub gate_epochs: usize,
    pub gate_clip: f64,
    pub gate_warmup_episodes: usize,
    pub checkpoint_every: usize,
    /// Gates forced closed for the whole run.
    pub pure_dwm: bool,
    /// Scale applied to the mutual component before subtraction.
    pub refine_coefficient: f64,
    pub egt_alpha: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 20_000,
            episode_len: 20,
            batch_size: 16,
            wm_lr: 6e-4,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gate_lr: 3e-4,
            gamma: 0.99,
            lambda_return: 0.95,
            horizon: 15,
            det_dim: 256,
            stoch_dim: 32,
            hidden_dim: 256,
            gate_hidden_dim: 64,
            free_bits: 1.0,
            beta_dyn: 1.0,
            beta_rep: 0.1,
            reward_loss_weight: 1.0,
            entropy_coef: 0.0,
            action_bound: 4.0,
            imagination_starts: 0,
            max_grad_norm: 100.0,
            wm_updates_per_episode: 1,
            ac_updates_per_episode: 1,
            replay_capacity: 1000,
            gate_update_every: 10,
            gate_epochs: 4,
            gate_clip: 0.2,
            gate_warmup_episodes: 100,
            checkpoint_every: 100,
            pure_dwm: false,
            refine_coefficient: 1.0,
            egt_alpha: 0.5,
        }
    }
}

/// Complete, validated configuration. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub network: NetworkConfig,
    pub channel: ChannelConfig,
    pub power: PowerConfig,
    pub qos: QosConfig,
    pub eh: EhConfig,
    pub geometry: GeometryConfig,
    pub reward: RewardConfig,
    pub training: TrainingConfig,
}

/// Converts dBm to mW.
pub fn dbm_to_mw(p_dbm: f64) -> Result<f64, ConfigError> {
    if !p_dbm.is_finite() {
        return Err(ConfigError::NonFinite(p_dbm));
    }
    Ok(10f64.powf(p_dbm / 10.0))
}

/// Converts mW to dBm. Requires a strictly positive, finite power.
pub fn mw_to_dbm(p_mw: f64) -> Result<f64, ConfigError> {
    if !p_mw.is_finite() || p_mw <= 0.0 {
        return Err(ConfigError::NonFinite(p_mw));
    }
    Ok(10.0 * p_mw.log10())
}

/// Zeroth-order Bessel function of the first kind.
///
/// Power series below |x| = 14, Hankel asymptotic expansion above. Absolute
/// error stays below 1e-10 for |x| < 1e3.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 14.0 {
        let q = -(ax * ax) / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > 2.0 {
                break;
            }
            k += 1.0;
            if k > 200.0 {
                break;
            }
        }
        sum
    } else {
        // P0 = c0 - c2/x^2 + c4/x^4 - ..., Q0 = -c1/x + c3/x^3 - ...
        // with c_n = prod_{j=1..n} (2j-1)^2 / (n! 8^n).
        let mut p = 0.0;
        let mut q = 0.0;
        let mut a = 1.0;
        let mut prev = f64::INFINITY;
        for n in 0..60 {
            let term = a / ax.powi(n);
            if term.abs() > prev {
                break;
            }
            prev = term.abs();
            match n % 4 {
                0 => p += term,
                1 => q -= term,
                2 => p -= term,
                _ => q += term,
            }
            let m = (2 * n + 1) as f64;
            a *= m * m / (((n + 1) as f64) * 8.0);
            if prev < 1e-18 {
                break;
            }
        }
        let chi = ax - PI / 4.0;
        (2.0 / (PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

impl SystemConfig {
    /// Parses a TOML document, applies `DWMRO_*` overrides from the process
    /// environment and validates the result.
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let vars: BTreeMap<String, String> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        Self::from_toml_str_with_env(source, &vars)
    }

    /// Same as [`SystemConfig::from_toml_str`] with an explicit override map.
    pub fn from_toml_str_with_env(
        source: &str,
        vars: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        let mut doc: toml::Table =
            toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_env_overrides(&mut doc, vars)?;
        let config: SystemConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical TOML rendering.
    pub fn hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive_count(field: &'static str, v: usize) -> Result<(), ConfigError> {
            if v == 0 {
                return Err(ConfigError::Invalid {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
            Ok(())
        }
        fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
            Ok(())
        }
        fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
            Ok(())
        }
        fn finite(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if !v.is_finite() {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be finite, got {v}"),
                });
            }
            Ok(())
        }
        fn unit_interval(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must lie in [0, 1], got {v}"),
                });
            }
            Ok(())
        }

        let n = &self.network;
        positive_count("num_sues", n.num_sues)?;
        positive_count("num_fues", n.num_fues)?;
        positive_count("fbs_antennas", n.fbs_antennas)?;
        positive_count("sat_antennas", n.sat_antennas)?;

        let c = &self.channel;
        non_negative("doppler_hz", c.doppler_hz)?;
        positive("slot_s", c.slot_s)?;
        positive("rician_k", c.rician_k)?;
        positive("carrier_hz", c.carrier_hz)?;
        positive("sat_distance_m", c.sat_distance_m)?;
        positive("sat_gain", c.sat_gain)?;
        positive("sue_gain", c.sue_gain)?;
        positive("fue_gain", c.fue_gain)?;
        finite("terrestrial_intercept_db", c.terrestrial_intercept_db)?;
        finite("terrestrial_slope_db", c.terrestrial_slope_db)?;

        let p = &self.power;
        finite("p_max_dbm", p.p_max_dbm)?;
        finite("p_sat_dbm", p.p_sat_dbm)?;
        finite("sigma_a_dbm", p.sigma_a_dbm)?;
        finite("sigma_b_dbm", p.sigma_b_dbm)?;

        let q = &self.qos;
        non_negative("xi_sue", q.xi_sue)?;
        non_negative("xi_fue", q.xi_fue)?;
        non_negative("phi_fue_mw", q.phi_fue_mw)?;

        positive("e_max_mw", self.eh.e_max_mw)?;
        positive("eh_mu", self.eh.mu)?;
        non_negative("eh_nu_mw", self.eh.nu_mw)?;

        let g = &self.geometry;
        positive("fue_min_m", g.fue_min_m)?;
        positive("sue_min_m", g.sue_min_m)?;
        if !(g.fue_max_m.is_finite() && g.fue_max_m >= g.fue_min_m) {
            return Err(ConfigError::Invalid {
                field: "fue_max_m",
                reason: "must be >= fue_min_m".into(),
            });
        }
        if !(g.sue_max_m.is_finite() && g.sue_max_m >= g.sue_min_m) {
            return Err(ConfigError::Invalid {
                field: "sue_max_m",
                reason: "must be >= sue_min_m".into(),
            });
        }

        let r = &self.reward;
        finite("omega", r.omega)?;
        non_negative("lambda1", r.lambda1)?;
        non_negative("lambda2", r.lambda2)?;
        non_negative("lambda3", r.lambda3)?;
        non_negative("gate_cost", r.gate_cost)?;

        let t = &self.training;
        if t.episode_len < 2 {
            return Err(ConfigError::Invalid {
                field: "episode_len",
                reason: format!("must be at least 2, got {}", t.episode_len),
            });
        }
        positive_count("horizon", t.horizon)?;
        positive_count("batch_size", t.batch_size)?;
        positive_count("det_dim", t.det_dim)?;
        positive_count("stoch_dim", t.stoch_dim)?;
        positive_count("hidden_dim", t.hidden_dim)?;
        positive_count("gate_hidden_dim", t.gate_hidden_dim)?;
        positive_count("replay_capacity", t.replay_capacity)?;
        positive_count("gate_update_every", t.gate_update_every)?;
        positive_count("gate_epochs", t.gate_epochs)?;
        positive_count("checkpoint_every", t.checkpoint_every)?;
        positive("wm_lr", t.wm_lr)?;
        positive("actor_lr", t.actor_lr)?;
        positive("critic_lr", t.critic_lr)?;
        positive("gate_lr", t.gate_lr)?;
        unit_interval("gamma", t.gamma)?;
        unit_interval("lambda_return", t.lambda_return)?;
        non_negative("free_bits", t.free_bits)?;
        non_negative("beta_dyn", t.beta_dyn)?;
        non_negative("beta_rep", t.beta_rep)?;
        non_negative("reward_loss_weight", t.reward_loss_weight)?;
        non_negative("entropy_coef", t.entropy_coef)?;
        positive("action_bound", t.action_bound)?;
        positive("max_grad_norm", t.max_grad_norm)?;
        positive("gate_clip", t.gate_clip)?;
        finite("refine_coefficient", t.refine_coefficient)?;
        unit_interval("egt_alpha", t.egt_alpha)?;
        Ok(())
    }

    pub fn num_sues(&self) -> usize {
        self.network.num_sues
    }
    pub fn num_fues(&self) -> usize {
        self.network.num_fues
    }
    pub fn fbs_antennas(&self) -> usize {
        self.network.fbs_antennas
    }
    pub fn sat_antennas(&self) -> usize {
        self.network.sat_antennas
    }

    /// FBS per-beam power budget in mW.
    pub fn p_max_mw(&self) -> f64 {
        10f64.powf(self.power.p_max_dbm / 10.0)
    }
    pub fn p_sat_mw(&self) -> f64 {
        10f64.powf(self.power.p_sat_dbm / 10.0)
    }
    pub fn sigma_a_mw(&self) -> f64 {
        10f64.powf(self.power.sigma_a_dbm / 10.0)
    }
    pub fn sigma_b_mw(&self) -> f64 {
        10f64.powf(self.power.sigma_b_dbm / 10.0)
    }

    /// Per-slot temporal correlation of every fading process.
    pub fn fading_rho(&self) -> f64 {
        bessel_j0(2.0 * PI * self.channel.doppler_hz * self.channel.slot_s)
    }

    /// Raw action length: real and imaginary beam parts plus the PS logit.
    pub fn action_dim(&self) -> usize {
        2 * self.fbs_antennas() + 1
    }

    /// Observation length: channel, interference, energy, rate, three flags.
    pub fn obs_dim(&self) -> usize {
        2 * self.fbs_antennas() + 6
    }

    /// Copy with a different number of FUEs.
    pub fn with_num_fues(&self, k: usize) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        c.network.num_fues = k;
        c.validate()?;
        Ok(c)
    }
}

fn apply_env_overrides(
    doc: &mut toml::Table,
    vars: &BTreeMap<String, String>,
) -> Result<(), ConfigError> {
    let defaults = toml::Value::try_from(SystemConfig::default())
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    let Some(sections) = defaults.as_table() else {
        return Ok(());
    };
    for (section, keys) in sections {
        let Some(keys) = keys.as_table() else { continue };
        for (key, default) in keys {
            let var = format!(
                "{ENV_PREFIX}_{}_{}",
                section.to_uppercase(),
                key.to_uppercase()
            );
            let Some(raw) = vars.get(&var) else { continue };
            let value = parse_override(raw, default).map_err(|reason| {
                ConfigError::EnvOverride {
                    var: var.clone(),
                    reason,
                }
            })?;
            let table = doc
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(table) = table.as_table_mut() else {
                return Err(ConfigError::Parse(format!("`{section}` must be a table")));
            };
            table.insert(key.clone(), value);
        }
    }
    Ok(())
}

fn parse_override(raw: &str, default: &toml::Value) -> Result<toml::Value, String> {
    let raw = raw.trim();
    match default {
        toml::Value::Integer(_) => raw
            .parse::<i64>()
            .map(toml::Value::Integer)
            .map_err(|e| e.to_string()),
        toml::Value::Float(_) => raw
            .parse::<f64>()
            .map(toml::Value::Float)
            .map_err(|e| e.to_string()),
        toml::Value::Boolean(_) => raw
            .parse::<bool>()
            .map(toml::Value::Boolean)
            .map_err(|e| e.to_string()),
        _ => Ok(toml::Value::String(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_j0(x: f64) -> f64 {
        // 40-term alternating series, independent of the production path.
        let mut sum = 0.0;
        let mut fact = 1.0;
        for k in 0..40 {
            if k > 0 {
                fact *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (x / 2.0).powi(2 * k) / (fact * fact);
        }
        sum
    }

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_mw(0.0).unwrap(), 1.0);
        assert!((dbm_to_mw(20.0).unwrap() - 100.0).abs() < 1e-12);
        assert!((dbm_to_mw(-70.0).unwrap() - 1e-7).abs() < 1e-20);
        assert!(dbm_to_mw(f64::NAN).is_err());
        assert!(dbm_to_mw(f64::INFINITY).is_err());
        assert!(mw_to_dbm(0.0).is_err());
    }

    #[test]
    fn dbm_roundtrip() {
        for i in -200..=200 {
            let p = i as f64 * 0.73;
            let back = mw_to_dbm(dbm_to_mw(p).unwrap()).unwrap();
            let rel = if p == 0.0 { back.abs() } else { ((back - p) / p).abs() };
            assert!(rel < 1e-12, "{p} -> {back}");
        }
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_j0(0.0), 1.0);
        let x = 2.0 * PI * 10.0 * 0.001;
        assert!((x - 0.0628319).abs() < 1e-7);
        assert!((bessel_j0(x) - 0.999_013_2).abs() < 1e-7);
        assert!((bessel_j0(x) - series_j0(x)).abs() < 1e-15);
        assert!(bessel_j0(2.404_825_557_7).abs() < 1e-9);
    }

    #[test]
    fn bessel_matches_series_on_0_5() {
        for i in 0..=500 {
            let x = i as f64 * 0.01;
            assert!((bessel_j0(x) - series_j0(x)).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn bessel_large_arguments() {
        // Reference values from the known zeros and tabulated points.
        assert!(bessel_j0(14.930_917_708_487_786).abs() < 1e-10);
        assert!(bessel_j0(30.634_606_468_431_975).abs() < 1e-10);
        assert!((bessel_j0(100.0) - 0.019_985_850_304_223_122).abs() < 1e-10);
        assert!((bessel_j0(-3.0) - bessel_j0(3.0)).abs() == 0.0);
        // continuity across the branch switch
        assert!((bessel_j0(14.0 - 1e-9) - bessel_j0(14.0)).abs() < 1e-9);
    }

    #[test]
    fn empty_source_is_defaults() {
        let cfg = SystemConfig::from_toml_str_with_env("", &BTreeMap::new()).unwrap();
        assert_eq!(cfg, SystemConfig::default());
        assert_eq!(cfg.num_sues(), 3);
        assert_eq!(cfg.num_fues(), 2);
        assert_eq!(cfg.fbs_antennas(), 6);
        assert_eq!(cfg.sat_antennas(), 8);
    }

    #[test]
    fn zero_fues_rejected_with_field_name() {
        let err = SystemConfig::from_toml_str_with_env("[network]\nnum_fues = 0\n", &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.field(), Some("num_fues"));
        assert!(err.to_string().contains("num_fues"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = SystemConfig::from_toml_str_with_env("[network]\nnum_fue = 3\n", &BTreeMap::new())
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = SystemConfig::from_toml_str_with_env("[bogus]\nx = 1\n", &BTreeMap::new())
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn env_override_applies() {
        let mut vars = BTreeMap::new();
        vars.insert("DWMRO_NETWORK_NUM_FUES".to_string(), "5".to_string());
        vars.insert("DWMRO_REWARD_GATE_COST".to_string(), "0.2".to_string());
        vars.insert("DWMRO_TRAINING_PURE_DWM".to_string(), "true".to_string());
        let cfg = SystemConfig::from_toml_str_with_env("[network]\nnum_fues = 3\n", &vars).unwrap();
        assert_eq!(cfg.num_fues(), 5);
        assert_eq!(cfg.reward.gate_cost, 0.2);
        assert!(cfg.training.pure_dwm);

        vars.insert("DWMRO_NETWORK_NUM_SUES".to_string(), "many".to_string());
        let err = SystemConfig::from_toml_str_with_env("", &vars).unwrap_err();
        assert!(matches!(err, ConfigError::EnvOverride { .. }));
    }

    #[test]
    fn other_invariants() {
        let bad = |src: &str, field: &str| {
            let err = SystemConfig::from_toml_str_with_env(src, &BTreeMap::new()).unwrap_err();
            assert_eq!(err.field(), Some(field), "{src}");
        };
        bad("[training]\nepisode_len = 1\n", "episode_len");
        bad("[training]\nhorizon = 0\n", "horizon");
        bad("[eh]\ne_max_mw = 0.0\n", "e_max_mw");
        bad("[eh]\nmu = -1.0\n", "eh_mu");
        bad("[channel]\nslot_s = 0.0\n", "slot_s");
        bad("[channel]\nrician_k = 0.0\n", "rician_k");
        bad("[power]\np_max_dbm = inf\n", "p_max_dbm");
    }

    #[test]
    fn load_is_deterministic() {
        let src = "[network]\nnum_fues = 4\n[training]\nseed = 9\n";
        let a = SystemConfig::from_toml_str_with_env(src, &BTreeMap::new()).unwrap();
        let b = SystemConfig::from_toml_str_with_env(src, &BTreeMap::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), SystemConfig::default().hash());
        let again = SystemConfig::from_toml_str_with_env(&a.to_toml_string(), &BTreeMap::new()).unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn derived_dimensions() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.action_dim(), 13);
        assert_eq!(cfg.obs_dim(), 18);
        assert!((cfg.p_max_mw() - 100.0).abs() < 1e-9);
        assert!((cfg.fading_rho() - 0.999_013_2).abs() < 1e-7);
    }
}
