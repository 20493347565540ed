//! Scenario files: `key = value` lines under `[system]`, `[geometry]` and
//! `[simulation]` headers. Unknown keys are rejected. Every key is
//! optional; missing ones fall back to [`SystemConfig::default`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    beta_from_geometry, coherence_symbols, dbm_to_normalized_snr, noise_power_dbm, ConfigError,
    GeometryParams, SystemConfig,
};
use crate::rate::BeamMode;

/// Large-scale profiles and small-scale trials per grid point at desk scale.
pub const DESK_PROFILES: usize = 200;
pub const DESK_TRIALS: usize = 200;
/// Counts restored by `--full`.
pub const FULL_PROFILES: usize = 1000;
pub const FULL_TRIALS: usize = 1000;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for {key}: {msg}")]
    Value { key: &'static str, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    n_rf: Option<usize>,
    l_per_sub: Option<usize>,
    n_total: Option<usize>,
    k_users: Option<usize>,
    m_ph: Option<usize>,
    beta: Option<f64>,
    gamma: Option<f64>,
    rho: Option<f64>,
    rho_dbm: Option<f64>,
    rho_p: Option<f64>,
    rho_p_dbm: Option<f64>,
    tau_p: Option<usize>,
    tau_c: Option<u64>,
    eps_r: Option<f64>,
    cell_radius: Option<f64>,
    pathloss_exp: Option<f64>,
    f_c: Option<f64>,
    f_m: Option<f64>,
    bandwidth: Option<f64>,
    noise_density_dbm_hz: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometrySection {
    antenna_gain_dbi: Option<f64>,
    element_area: Option<f64>,
    d_b2p: Option<f64>,
    /// Derive beta from the geometry when `[system] beta` is absent.
    derive_beta: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    trials: Option<usize>,
    profiles: Option<usize>,
    beam_mode: Option<String>,
    power_control: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    geometry: GeometrySection,
    #[serde(default)]
    simulation: SimulationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerControl {
    Equal,
    LargeNrf,
    Numeric,
}

impl FromStr for PowerControl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equal" => Ok(Self::Equal),
            "large_nrf" => Ok(Self::LargeNrf),
            "numeric" => Ok(Self::Numeric),
            other => Err(format!(
                "unknown power control {other:?} (expected equal | large_nrf | numeric)"
            )),
        }
    }
}

impl fmt::Display for PowerControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Equal => "equal",
            Self::LargeNrf => "large_nrf",
            Self::Numeric => "numeric",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub trials: usize,
    pub profiles: usize,
    pub beam_mode: BeamMode,
    pub power_control: PowerControl,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            trials: DESK_TRIALS,
            profiles: DESK_PROFILES,
            beam_mode: BeamMode::IdealQuantized,
            power_control: PowerControl::Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: SystemConfig,
    pub geometry: GeometryParams,
    pub simulation: SimulationSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            geometry: GeometryParams::default(),
            simulation: SimulationSettings::default(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }
}

impl FromStr for Scenario {
    type Err = LoadError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let raw: RawFile =
            toml::from_str(text).map_err(|e| LoadError::Parse(e.message().to_string()))?;
        build(raw)
    }
}

fn build(raw: RawFile) -> Result<Scenario, LoadError> {
    let d = SystemConfig::default();
    let s = raw.system;
    let bandwidth = s.bandwidth.unwrap_or(d.bandwidth);
    let noise_density = s.noise_density_dbm_hz.unwrap_or(d.noise_density_dbm_hz);
    let noise = noise_power_dbm(noise_density, bandwidth);
    // Linear SNRs take precedence over dBm powers.
    let snr = |linear: Option<f64>, dbm: Option<f64>, default_dbm: f64| {
        linear.unwrap_or_else(|| dbm_to_normalized_snr(dbm.unwrap_or(default_dbm), noise))
    };
    let n_rf = s.n_rf.unwrap_or(d.n_rf);
    let l_per_sub = s.l_per_sub.unwrap_or(d.l_per_sub);
    let k_users = s.k_users.unwrap_or(d.k_users);
    let f_m = s.f_m.unwrap_or(d.f_m);
    let gamma = s.gamma.unwrap_or(d.gamma);

    let g = raw.geometry;
    let gd = GeometryParams::default();
    let geometry = GeometryParams {
        antenna_gain_dbi: g.antenna_gain_dbi.unwrap_or(gd.antenna_gain_dbi),
        element_area: g.element_area.unwrap_or(gd.element_area),
        d_b2p: g.d_b2p.unwrap_or(gd.d_b2p),
    };
    let beta = match (s.beta, g.derive_beta.unwrap_or(false)) {
        (Some(b), _) => b,
        (None, true) => beta_from_geometry(&geometry, gamma),
        (None, false) => d.beta,
    };

    let system = SystemConfig {
        n_rf,
        l_per_sub,
        n_total: s.n_total.unwrap_or(n_rf * l_per_sub),
        k_users,
        m_ph: s.m_ph.unwrap_or(d.m_ph),
        beta,
        gamma,
        rho: snr(s.rho, s.rho_dbm, -10.0),
        rho_p: snr(s.rho_p, s.rho_p_dbm, -20.0),
        tau_p: s.tau_p.unwrap_or(k_users),
        tau_c: s.tau_c.unwrap_or_else(|| coherence_symbols(f_m, bandwidth)),
        eps_r: s.eps_r.unwrap_or(d.eps_r),
        cell_radius: s.cell_radius.unwrap_or(d.cell_radius),
        pathloss_exp: s.pathloss_exp.unwrap_or(d.pathloss_exp),
        f_c: s.f_c.unwrap_or(d.f_c),
        f_m,
        bandwidth,
        noise_density_dbm_hz: noise_density,
    }
    .validate()?;

    let sd = SimulationSettings::default();
    let sim = raw.simulation;
    let simulation = SimulationSettings {
        trials: positive("trials", sim.trials.unwrap_or(sd.trials))?,
        profiles: positive("profiles", sim.profiles.unwrap_or(sd.profiles))?,
        beam_mode: match sim.beam_mode {
            Some(m) => m.parse().map_err(|msg| LoadError::Value {
                key: "beam_mode",
                msg,
            })?,
            None => sd.beam_mode,
        },
        power_control: match sim.power_control {
            Some(p) => p.parse().map_err(|msg| LoadError::Value {
                key: "power_control",
                msg,
            })?,
            None => sd.power_control,
        },
    };
    Ok(Scenario {
        system,
        geometry,
        simulation,
    })
}

fn positive(key: &'static str, v: usize) -> Result<usize, LoadError> {
    if v == 0 {
        Err(LoadError::Value {
            key,
            msg: "must be at least 1".into(),
        })
    } else {
        Ok(v)
    }
}
