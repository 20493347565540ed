//! System parameters, unit conversion and geometry-derived constants.

use std::f64::consts::PI;

use thiserror::Error;

/// First violated invariant of a [`SystemConfig`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} must be at least {min}, got {got}")]
    CountTooSmall {
        field: &'static str,
        min: usize,
        got: usize,
    },
    #[error("n_total mismatch: n_rf * l_per_sub = {expected}, n_total = {got}")]
    NTotalMismatch { expected: usize, got: usize },
    #[error("tau_p must equal k_users (tau_p = {tau_p}, k_users = {k_users})")]
    PilotLength { tau_p: usize, k_users: usize },
    #[error("{field} must be positive and finite, got {value}")]
    NotPositive { field: &'static str, value: f64 },
    #[error("{field} must be finite and non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("{field} must lie in [0, 1], got {value}")]
    OutsideUnitInterval { field: &'static str, value: f64 },
}

/// Every scalar parameter of the system.
///
/// `rho` and `rho_p` are linear SNRs normalised by the noise power. Use
/// [`dbm_to_normalized_snr`] (or the config file's `*_dbm` keys) to derive
/// them from transmit powers.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// RF chains, one per sub-PMS.
    pub n_rf: usize,
    /// Reflecting elements per sub-PMS.
    pub l_per_sub: usize,
    /// Total reflecting elements, `n_rf * l_per_sub`.
    pub n_total: usize,
    pub k_users: usize,
    /// Phase-shift resolution (number of discrete phases).
    pub m_ph: usize,
    /// Amplitude coefficient of each reflecting element.
    pub beta: f64,
    /// Energy reflection efficiency.
    pub gamma: f64,
    /// Downlink transmit SNR (linear).
    pub rho: f64,
    /// Pilot SNR per symbol (linear).
    pub rho_p: f64,
    /// Pilot length in symbols.
    pub tau_p: usize,
    /// Coherence interval in symbols. Informational only: no pre-log
    /// penalty is applied to rates.
    pub tau_c: u64,
    /// Average received training power (linear).
    pub eps_r: f64,
    /// User-disk radius in metres.
    pub cell_radius: f64,
    pub pathloss_exp: f64,
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Maximum Doppler shift, Hz.
    pub f_m: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    pub noise_density_dbm_hz: f64,
}

impl Default for SystemConfig {
    /// Reference configuration: 4 RF chains of 8 elements, 8 users, binary
    /// phases, 4.25 GHz carrier, 180 kHz bandwidth, -169 dBm/Hz noise,
    /// -10 dBm data and -20 dBm pilot power.
    fn default() -> Self {
        let bandwidth = 180_000.0;
        let noise_density = -169.0;
        let noise = noise_power_dbm(noise_density, bandwidth);
        Self {
            n_rf: 4,
            l_per_sub: 8,
            n_total: 32,
            k_users: 8,
            m_ph: 2,
            beta: 0.01,
            gamma: 1.0,
            rho: dbm_to_normalized_snr(-10.0, noise),
            rho_p: dbm_to_normalized_snr(-20.0, noise),
            tau_p: 8,
            tau_c: coherence_symbols(1.0, bandwidth),
            eps_r: 1.0e3,
            cell_radius: 200.0,
            pathloss_exp: 3.0,
            f_c: 4.25e9,
            f_m: 1.0,
            bandwidth,
            noise_density_dbm_hz: noise_density,
        }
    }
}

impl SystemConfig {
    /// Return `self` unchanged if every invariant holds, else the first
    /// violation.
    pub fn validate(self) -> Result<Self, ConfigError> {
        for (field, got) in [
            ("n_rf", self.n_rf),
            ("l_per_sub", self.l_per_sub),
            ("n_total", self.n_total),
            ("k_users", self.k_users),
            ("tau_p", self.tau_p),
        ] {
            if got < 1 {
                return Err(ConfigError::CountTooSmall { field, min: 1, got });
            }
        }
        if self.m_ph < 2 {
            return Err(ConfigError::CountTooSmall {
                field: "m_ph",
                min: 2,
                got: self.m_ph,
            });
        }
        let expected = self.n_rf * self.l_per_sub;
        if expected != self.n_total {
            return Err(ConfigError::NTotalMismatch {
                expected,
                got: self.n_total,
            });
        }
        if self.tau_p != self.k_users {
            return Err(ConfigError::PilotLength {
                tau_p: self.tau_p,
                k_users: self.k_users,
            });
        }
        // Zero transmit power is a legitimate boundary (all rates vanish).
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(ConfigError::Negative {
                field: "rho",
                value: self.rho,
            });
        }
        for (field, value) in [
            ("rho_p", self.rho_p),
            ("eps_r", self.eps_r),
            ("cell_radius", self.cell_radius),
            ("pathloss_exp", self.pathloss_exp),
            ("f_c", self.f_c),
            ("f_m", self.f_m),
            ("bandwidth", self.bandwidth),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NotPositive { field, value });
            }
        }
        for (field, value) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::OutsideUnitInterval { field, value });
            }
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return Err(ConfigError::NotPositive {
                field: "noise_density_dbm_hz",
                value: self.noise_density_dbm_hz,
            });
        }
        Ok(self)
    }

    /// Set `n_rf` and keep `n_total` consistent.
    pub fn with_n_rf(mut self, n_rf: usize) -> Self {
        self.n_rf = n_rf;
        self.n_total = n_rf * self.l_per_sub;
        self
    }

    /// Set `l_per_sub` and keep `n_total` consistent.
    pub fn with_l_per_sub(mut self, l: usize) -> Self {
        self.l_per_sub = l;
        self.n_total = self.n_rf * l;
        self
    }

    /// Set `k_users` and the pilot length with it.
    pub fn with_k_users(mut self, k: usize) -> Self {
        self.k_users = k;
        self.tau_p = k;
        self
    }

    /// Noise power over the configured bandwidth, dBm.
    pub fn noise_dbm(&self) -> f64 {
        noise_power_dbm(self.noise_density_dbm_hz, self.bandwidth)
    }
}

/// Horn-feed and element geometry between the BS and the metasurface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    pub antenna_gain_dbi: f64,
    /// Effective element area, m^2.
    pub element_area: f64,
    /// BS-to-PMS distance, m.
    pub d_b2p: f64,
}

impl Default for GeometryParams {
    /// 20 dBi horn, 12 mm x 12 mm elements, 1 m feed distance.
    fn default() -> Self {
        Self {
            antenna_gain_dbi: 20.0,
            element_area: 12e-3 * 12e-3,
            d_b2p: 1.0,
        }
    }
}

impl GeometryParams {
    /// Feed path-loss coefficient `G A_e / (4 pi d^2)`, with `G` linear.
    pub fn alpha_b2p(&self) -> f64 {
        db_to_linear(self.antenna_gain_dbi) * self.element_area / (4.0 * PI * self.d_b2p.powi(2))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise power in dBm for a spectral density (dBm/Hz) and bandwidth (Hz).
pub fn noise_power_dbm(density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    density_dbm_hz + 10.0 * bandwidth_hz.log10()
}

/// Ratio of a power to the noise power, both in dBm, as a linear SNR.
pub fn dbm_to_normalized_snr(power_dbm: f64, noise_dbm: f64) -> f64 {
    db_to_linear(power_dbm - noise_dbm)
}

/// Number of symbols in one coherence time `sqrt(9 / (16 pi f_m^2))`.
pub fn coherence_symbols(f_m: f64, bandwidth_hz: f64) -> u64 {
    let coherence_time = (9.0 / (16.0 * PI * f_m * f_m)).sqrt();
    (bandwidth_hz * coherence_time).floor() as u64
}

/// Large-scale fading coefficient `distance^-exponent`.
pub fn path_loss(distance: f64, exponent: f64) -> f64 {
    distance.powf(-exponent)
}

/// Element amplitude coefficient `gamma * alpha_b2p`.
pub fn beta_from_geometry(geo: &GeometryParams, gamma: f64) -> f64 {
    gamma * geo.alpha_b2p()
}
