//! Experiment runner: parameter sweeps over large-scale profiles and
//! small-scale trials, figure presets and CSV output.
//!
//! Every run writes rows with the header [`CSV_HEADER`]. A row holds the
//! mean over large-scale profiles of one series at one grid point, with the
//! standard error across profiles.
//!
//! Seeds: large-scale profiles come from the fixed [`PROFILE_SEED`], so
//! closed-form series do not depend on the master seed. Small-scale trials
//! for profile `p` use `derive_seed(seed, p)` at every grid point (common
//! random numbers along a sweep).

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::asymptotics::{
    rate_large_k, rate_large_l, rate_large_nrf, rate_large_pilot, rate_mph_limit,
};
use crate::beamtraining::{compare_schemes, BeamError, CorrelationMetric, Scheme, TrainingSetup};
use crate::channel::{sample_user_positions, LargeScaleProfile};
use crate::config::{
    PowerControl, Scenario, DESK_PROFILES, DESK_TRIALS, FULL_PROFILES, FULL_TRIALS,
};
use crate::estimation::{equiv_channel_stats, estimate_stats_all};
use crate::model::{coherence_symbols, dbm_to_normalized_snr, ConfigError, SystemConfig};
use crate::powercontrol::{
    equal_allocation, large_nrf_allocation, numeric_maxmin, PowerError, SEARCH_BUDGET,
};
use crate::rate::{multicast_rate, simulate_end_to_end, BeamMode, PowerAllocation, RateError};
use crate::rng;

pub const CSV_HEADER: &str = "series,sweep_var,sweep_value,user_or_min,mean,stderr,seed";

/// Seed of the large-scale profile draws.
pub const PROFILE_SEED: u64 = 0x5EED_0F_D20B5;

/// Identifiers accepted by [`figure`].
pub const FIGURE_IDS: [&str; 7] = [
    "f2_rate_vs_snr",
    "f3_rate_vs_L_beta",
    "f4_rate_vs_nrf",
    "f5_rate_vs_L_mph",
    "f6_rate_vs_mph",
    "f7_rate_vs_K",
    "f_necs",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown sweep parameter {name:?}; valid keys: {valid}")]
    UnknownParam { name: String, valid: String },
    #[error("unknown figure {0:?}; valid ids: {ids}", ids = FIGURE_IDS.join(", "))]
    UnknownFigure(String),
    #[error("invalid value {value} for {param}")]
    InvalidValue { param: &'static str, value: f64 },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// A [`SystemConfig`] field that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NRf,
    LPerSub,
    KUsers,
    MPh,
    Beta,
    Gamma,
    Rho,
    RhoDbm,
    RhoP,
    RhoPDbm,
    EpsR,
    EpsRDbm,
    CellRadius,
    PathlossExp,
    FC,
    FM,
    Bandwidth,
    NoiseDensity,
}

impl SweepParam {
    pub const ALL: [SweepParam; 18] = [
        Self::NRf,
        Self::LPerSub,
        Self::KUsers,
        Self::MPh,
        Self::Beta,
        Self::Gamma,
        Self::Rho,
        Self::RhoDbm,
        Self::RhoP,
        Self::RhoPDbm,
        Self::EpsR,
        Self::EpsRDbm,
        Self::CellRadius,
        Self::PathlossExp,
        Self::FC,
        Self::FM,
        Self::Bandwidth,
        Self::NoiseDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NRf => "n_rf",
            Self::LPerSub => "l_per_sub",
            Self::KUsers => "k_users",
            Self::MPh => "m_ph",
            Self::Beta => "beta",
            Self::Gamma => "gamma",
            Self::Rho => "rho",
            Self::RhoDbm => "rho_dbm",
            Self::RhoP => "rho_p",
            Self::RhoPDbm => "rho_p_dbm",
            Self::EpsR => "eps_r",
            Self::EpsRDbm => "eps_r_dbm",
            Self::CellRadius => "cell_radius",
            Self::PathlossExp => "pathloss_exp",
            Self::FC => "f_c",
            Self::FM => "f_m",
            Self::Bandwidth => "bandwidth",
            Self::NoiseDensity => "noise_density_dbm_hz",
        }
    }

    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| HarnessError::UnknownParam {
                name: name.to_string(),
                valid: Self::ALL.map(Self::name).join(", "),
            })
    }

    /// `cfg` with this field set to `value`, derived fields updated and the
    /// result validated. Count fields need a positive integral value.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig, HarnessError> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(HarnessError::InvalidValue {
                    param: self.name(),
                    value,
                })
            }
        };
        let mut c = cfg.clone();
        match self {
            Self::NRf => c = c.with_n_rf(count()?),
            Self::LPerSub => c = c.with_l_per_sub(count()?),
            Self::KUsers => c = c.with_k_users(count()?),
            Self::MPh => c.m_ph = count()?,
            Self::Beta => c.beta = value,
            Self::Gamma => c.gamma = value,
            Self::Rho => c.rho = value,
            Self::RhoDbm => c.rho = dbm_to_normalized_snr(value, c.noise_dbm()),
            Self::RhoP => c.rho_p = value,
            Self::RhoPDbm => c.rho_p = dbm_to_normalized_snr(value, c.noise_dbm()),
            Self::EpsR => c.eps_r = value,
            Self::EpsRDbm => c.eps_r = dbm_to_normalized_snr(value, c.noise_dbm()),
            Self::CellRadius => c.cell_radius = value,
            Self::PathlossExp => c.pathloss_exp = value,
            Self::FC => c.f_c = value,
            Self::FM => {
                c.f_m = value;
                c.tau_c = coherence_symbols(value, c.bandwidth);
            }
            Self::Bandwidth => {
                c.bandwidth = value;
                c.tau_c = coherence_symbols(c.f_m, value);
            }
            Self::NoiseDensity => c.noise_density_dbm_hz = value,
        }
        Ok(c.validate()?)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Quantity reported by one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    /// End-to-end simulation.
    Numeric,
    /// Exact closed form.
    Analytic,
    /// Unlimited pilot power, equal allocation.
    LargePilot,
    /// Many RF chains, SINR-equalising allocation.
    LargeNrf,
    /// Many elements per sub-surface.
    LargeL,
    /// Many elements and unlimited phase resolution.
    MphLimit,
    /// Many users.
    LargeK,
}

impl Series {
    pub fn label(self) -> &'static str {
        match self {
            Self::Numeric => "numeric",
            Self::Analytic => "analytic",
            Self::LargePilot => "approximate:large_pilot",
            Self::LargeNrf => "approximate:large_nrf",
            Self::LargeL => "approximate:large_l",
            Self::MphLimit => "approximate:mph_limit",
            Self::LargeK => "approximate:large_k",
        }
    }
}

/// Fixed overrides applied before the sweep value; one line per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub overrides: Vec<(SweepParam, f64)>,
}

impl Curve {
    pub fn base() -> Self {
        Self {
            overrides: Vec::new(),
        }
    }

    pub fn with(param: SweepParam, value: f64) -> Self {
        Self {
            overrides: vec![(param, value)],
        }
    }

    /// `[n_rf=4]`-style suffix appended to series labels; empty for the base curve.
    pub fn tag(&self) -> String {
        if self.overrides.is_empty() {
            return String::new();
        }
        let parts: Vec<String> = self
            .overrides
            .iter()
            .map(|(p, v)| format!("{p}={v}"))
            .collect();
        format!("[{}]", parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: String,
    pub base: SystemConfig,
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub curves: Vec<Curve>,
    pub series: Vec<Series>,
    /// Small-scale trials per profile.
    pub trials: usize,
    /// Large-scale profiles per grid point.
    pub profiles: usize,
    pub seed: u64,
    pub beam_mode: BeamMode,
    pub power_control: PowerControl,
    /// Also emit one row per user index.
    pub per_user: bool,
}

impl ExperimentPlan {
    /// One-curve plan over `values` with numeric and analytic series.
    pub fn sweep(scenario: &Scenario, param: SweepParam, values: Vec<f64>, seed: u64) -> Self {
        Self {
            scenario: format!("sweep_{param}"),
            base: scenario.system.clone(),
            sweep: param,
            values,
            curves: vec![Curve::base()],
            series: vec![Series::Analytic, Series::Numeric],
            trials: scenario.simulation.trials,
            profiles: scenario.simulation.profiles,
            seed,
            beam_mode: scenario.simulation.beam_mode,
            power_control: scenario.simulation.power_control,
            per_user: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidPlan(m.to_string()));
        if self.values.is_empty() {
            return fail("empty grid");
        }
        if self.curves.is_empty() {
            return fail("no curves");
        }
        if self.series.is_empty() {
            return fail("no series");
        }
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.profiles == 0 {
            return fail("profiles must be at least 1");
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub series: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    /// `min` for the multicast rate, a user index, or `all`.
    pub user_or_min: String,
    pub mean: f64,
    pub stderr: f64,
    pub seed: u64,
}

pub fn write_rows<W: Write>(out: &mut W, rows: &[Row]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            r.series, r.sweep_var, r.sweep_value, r.user_or_min, r.mean, r.stderr, r.seed
        )?;
    }
    Ok(())
}

/// Write rows to `path`, creating parent directories.
pub fn write_rows_to(path: &Path, rows: &[Row]) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut buf = Vec::new();
    write_rows(&mut buf, rows).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}

/// Large-scale profile `p` for a configuration (independent of the master seed).
pub fn profile_for(cfg: &SystemConfig, p: usize) -> LargeScaleProfile {
    let mut r = rng::substream(PROFILE_SEED, p as u64);
    sample_user_positions(&mut r, cfg.k_users, cfg.cell_radius, cfg.pathloss_exp)
}

/// Power allocation for one profile.
pub fn allocate(
    cfg: &SystemConfig,
    profile: &LargeScaleProfile,
    control: PowerControl,
    seed: u64,
) -> Result<PowerAllocation, HarnessError> {
    let stats = equiv_channel_stats(cfg.l_per_sub, cfg.beta, cfg.k_users, cfg.m_ph);
    let users = estimate_stats_all(&profile.alphas, &stats, cfg.tau_p, cfg.rho_p);
    Ok(match control {
        PowerControl::Equal => equal_allocation(cfg.k_users),
        PowerControl::LargeNrf => large_nrf_allocation(&users)?,
        PowerControl::Numeric => {
            // Degenerate statistics surface below through multicast_rate.
            multicast_rate(
                cfg.rho,
                cfg.n_rf,
                &stats,
                &users,
                &equal_allocation(cfg.k_users),
            )?;
            let rate = |etas: &[f64]| {
                let alloc = PowerAllocation {
                    etas: etas.to_vec(),
                    phi: None,
                };
                multicast_rate(cfg.rho, cfg.n_rf, &stats, &users, &alloc)
                    .expect("statistics checked above")
                    .per_user_rates
            };
            numeric_maxmin(rate, cfg.k_users, SEARCH_BUDGET, seed)
        }
    })
}

/// Per-profile values of every series: the multicast rate and, if
/// requested, the per-user rates.
struct ProfileResult {
    min: Vec<f64>,
    users: Vec<Vec<f64>>,
}

fn evaluate_profile(
    plan: &ExperimentPlan,
    cfg: &SystemConfig,
    p: usize,
) -> Result<ProfileResult, HarnessError> {
    let profile = profile_for(cfg, p);
    let seed = rng::derive_seed(plan.seed, p as u64);
    let alloc = allocate(cfg, &profile, plan.power_control, seed)?;
    let stats = equiv_channel_stats(cfg.l_per_sub, cfg.beta, cfg.k_users, cfg.m_ph);
    let users = estimate_stats_all(&profile.alphas, &stats, cfg.tau_p, cfg.rho_p);
    let (n, l, k, m) = (cfg.n_rf, cfg.l_per_sub, cfg.k_users, cfg.m_ph);
    let mut out = ProfileResult {
        min: Vec::new(),
        users: Vec::new(),
    };
    for series in &plan.series {
        let (min, per_user) = match series {
            Series::Numeric => {
                let rep =
                    simulate_end_to_end(cfg, &profile, &alloc, plan.beam_mode, plan.trials, seed)?;
                (rep.multicast_rate, rep.per_user_rates)
            }
            Series::Analytic => {
                let rep = multicast_rate(cfg.rho, n, &stats, &users, &alloc)?;
                (rep.multicast_rate, rep.per_user_rates)
            }
            approx => {
                let r = match approx {
                    Series::LargePilot => {
                        rate_large_pilot(n, l, k, m, cfg.beta, cfg.rho, profile.alpha_min())
                    }
                    Series::LargeNrf => {
                        rate_large_nrf(n, &stats, cfg.tau_p, cfg.rho_p, &profile.alphas)
                    }
                    Series::LargeL => rate_large_l(n, l, k, m),
                    Series::MphLimit => rate_mph_limit(n, l, k),
                    Series::LargeK => rate_large_k(n, l, k, m),
                    Series::Numeric | Series::Analytic => unreachable!(),
                };
                (r, vec![r; k])
            }
        };
        out.min.push(min);
        out.users.push(per_user);
    }
    Ok(out)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run a plan: every (grid point, curve, profile) is evaluated in
/// parallel, then rows are assembled in grid, curve, series order.
pub fn run_scenario(plan: &ExperimentPlan) -> Result<Vec<Row>, HarnessError> {
    plan.validate()?;
    let mut configs = Vec::new();
    for &value in &plan.values {
        for curve in &plan.curves {
            let mut cfg = plan.base.clone();
            for &(param, v) in &curve.overrides {
                cfg = param.apply(&cfg, v)?;
            }
            configs.push((value, curve, plan.sweep.apply(&cfg, value)?));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..plan.profiles).map(move |p| (c, p)))
        .collect();
    let results: Vec<ProfileResult> = jobs
        .par_iter()
        .map(|&(c, p)| evaluate_profile(plan, &configs[c].2, p))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (c, (value, curve, cfg)) in configs.iter().enumerate() {
        let chunk = &results[c * plan.profiles..(c + 1) * plan.profiles];
        let tag = curve.tag();
        for (s, series) in plan.series.iter().enumerate() {
            let row = |user_or_min: String, xs: Vec<f64>| {
                let (mean, stderr) = mean_stderr(&xs);
                Row {
                    series: format!("{}{tag}", series.label()),
                    sweep_var: plan.sweep.name().to_string(),
                    sweep_value: *value,
                    user_or_min,
                    mean,
                    stderr,
                    seed: plan.seed,
                }
            };
            rows.push(row("min".into(), chunk.iter().map(|r| r.min[s]).collect()));
            if plan.per_user {
                for k in 0..cfg.k_users {
                    rows.push(row(
                        k.to_string(),
                        chunk.iter().map(|r| r.users[s][k]).collect(),
                    ));
                }
            }
        }
    }
    Ok(rows)
}

/// Clone `scenario` per value of `param` and run the default sweep plan.
pub fn sweep(
    scenario: &Scenario,
    param: &str,
    values: &[f64],
    seed: u64,
) -> Result<Vec<Row>, HarnessError> {
    let param = SweepParam::parse(param)?;
    run_scenario(&ExperimentPlan::sweep(
        scenario,
        param,
        values.to_vec(),
        seed,
    ))
}

/// Desk-scale preset of a figure; `full` restores 1000 x 1000 averaging.
///
/// | id | sweep | curves | desk profiles x trials |
/// |----|-------|--------|------------------------|
/// | f2_rate_vs_snr | rho_dbm -30..30 | n_rf 2, 4, 8 | 200 x 200 |
/// | f3_rate_vs_L_beta | l_per_sub 8..128 | beta 0.01, 0.05, 0.1 | 100 x 100 |
/// | f4_rate_vs_nrf | n_rf 1..64 (large_nrf allocation) | - | 100 x 100 |
/// | f5_rate_vs_L_mph | l_per_sub 25..400 | m_ph 2, 4, 20 | 50 x 50 |
/// | f6_rate_vs_mph | m_ph 2..64 at L = 100 | - | 50 x 50 |
/// | f7_rate_vs_K | k_users 2..40 | l_per_sub 100, 200 | 50 x 50 |
///
/// `f_necs` is not a rate sweep; see [`necs_figure`].
pub fn figure_plan(id: &str, seed: u64, full: bool) -> Result<ExperimentPlan, HarnessError> {
    use Series::*;
    use SweepParam::*;
    let base = SystemConfig::default();
    let plan = |scenario: &str,
                sweep: SweepParam,
                values: Vec<f64>,
                curves: Vec<Curve>,
                series: Vec<Series>,
                desk: usize| ExperimentPlan {
        scenario: scenario.to_string(),
        base: base.clone(),
        sweep,
        values,
        curves,
        series,
        trials: if full { FULL_TRIALS } else { desk },
        profiles: if full { FULL_PROFILES } else { desk },
        seed,
        beam_mode: BeamMode::IdealQuantized,
        power_control: PowerControl::Equal,
        per_user: false,
    };
    let curves =
        |p: SweepParam, vs: &[f64]| vs.iter().map(|&v| Curve::with(p, v)).collect::<Vec<_>>();
    let mut out = match id {
        "f2_rate_vs_snr" => plan(
            id,
            RhoDbm,
            vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            curves(NRf, &[2.0, 4.0, 8.0]),
            vec![Analytic, Numeric],
            DESK_PROFILES.max(DESK_TRIALS),
        ),
        "f3_rate_vs_L_beta" => plan(
            id,
            LPerSub,
            vec![8.0, 16.0, 32.0, 64.0, 128.0],
            curves(Beta, &[0.01, 0.05, 0.1]),
            vec![Analytic, Numeric, LargePilot],
            100,
        ),
        "f4_rate_vs_nrf" => {
            let mut p = plan(
                id,
                NRf,
                vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
                vec![Curve::base()],
                vec![Analytic, Numeric, LargeNrf],
                100,
            );
            p.power_control = PowerControl::LargeNrf;
            p
        }
        "f5_rate_vs_L_mph" => plan(
            id,
            LPerSub,
            vec![25.0, 50.0, 100.0, 200.0, 400.0],
            curves(MPh, &[2.0, 4.0, 20.0]),
            vec![Analytic, Numeric, LargeL],
            50,
        ),
        "f6_rate_vs_mph" => {
            let mut p = plan(
                id,
                MPh,
                vec![2.0, 3.0, 4.0, 8.0, 16.0, 64.0],
                vec![Curve::base()],
                vec![Analytic, Numeric, LargeL, MphLimit],
                50,
            );
            p.base = p.base.with_l_per_sub(100);
            p
        }
        "f7_rate_vs_K" => plan(
            id,
            KUsers,
            vec![2.0, 5.0, 10.0, 20.0, 40.0],
            curves(LPerSub, &[100.0, 200.0]),
            vec![Analytic, Numeric, LargeK],
            50,
        ),
        "f_necs" => {
            return Err(HarnessError::InvalidPlan(
                "f_necs is produced by necs_figure".into(),
            ))
        }
        other => return Err(HarnessError::UnknownFigure(other.to_string())),
    };
    out.base = out.base.validate()?;
    Ok(out)
}

/// Training-power grid of the NECS figure, dBm.
pub const NECS_EPS_R_DBM: [f64; 6] = [-120.0, -110.0, -100.0, -90.0, -80.0, -70.0];

/// Beam-training comparison on a 4-element single-RF-chain surface with 4
/// users and beta = 0.01, for M_ph in {2, 4}. Training power is converted
/// from dBm with the default noise floor. `channels` realizations per point
/// (desk 1000, full 5000).
pub fn necs_figure(seed: u64, channels: usize) -> Result<Vec<Row>, HarnessError> {
    let noise = SystemConfig::default().noise_dbm();
    let mut rows = Vec::new();
    for &eps_dbm in &NECS_EPS_R_DBM {
        for m_ph in [2usize, 4] {
            let setup = TrainingSetup {
                n_elements: 4,
                m_ph,
                k_users: 4,
                beta: 0.01,
                eps_r: dbm_to_normalized_snr(eps_dbm, noise),
                metric: CorrelationMetric::default(),
            };
            let cmp = compare_schemes(&setup, channels, seed)?;
            for scheme in Scheme::ALL {
                let acc = cmp.get(scheme);
                rows.push(Row {
                    series: format!("{}[m_ph={m_ph}]", scheme.label()),
                    sweep_var: "eps_r_dbm".into(),
                    sweep_value: eps_dbm,
                    user_or_min: "all".into(),
                    mean: acc.ratio(),
                    stderr: acc.stderr(),
                    seed,
                });
            }
        }
    }
    Ok(rows)
}

/// Run a figure preset by id.
pub fn figure(id: &str, seed: u64, full: bool) -> Result<Vec<Row>, HarnessError> {
    if id == "f_necs" {
        return necs_figure(seed, if full { 5000 } else { 1000 });
    }
    run_scenario(&figure_plan(id, seed, full)?)
}

/// Write `channels.csv`, `estimates.csv` and `allocation.csv` for the first
/// `trials` (at most 4) blocks of large-scale profile 0 into `dir`, using
/// ideal quantized beams.
pub fn dump_artifacts(scenario: &Scenario, seed: u64, dir: &Path) -> Result<(), HarnessError> {
    use crate::beamtraining::{combiner_from_beam, ideal_beam, quantize_beam};
    use crate::channel::{write_channel_dump, ChannelRealization};
    use crate::estimation::{
        equivalent_channels, mmse_estimate, pilot_matrix, receive_pilots, write_estimation_dump,
    };
    use crate::powercontrol::write_allocation_csv;

    let cfg = &scenario.system;
    let io_err = |path: PathBuf| move |source| HarnessError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
    let profile = profile_for(cfg, 0);
    let seed = rng::derive_seed(seed, 0);
    let stats = equiv_channel_stats(cfg.l_per_sub, cfg.beta, cfg.k_users, cfg.m_ph);
    let pilots = pilot_matrix(cfg.tau_p);
    let (mut channels_csv, mut estimates_csv) = (Vec::new(), Vec::new());
    for t in 0..scenario.simulation.trials.min(4) {
        let real = ChannelRealization::draw(seed, t as u64, cfg.n_total, &profile);
        let beam = quantize_beam(&ideal_beam(&real, cfg.beta), cfg.m_ph);
        let comb = combiner_from_beam(&beam, cfg.n_rf, cfg.l_per_sub)?;
        let eq = equivalent_channels(&comb, &real);
        let block = receive_pilots(
            &eq,
            cfg.rho_p,
            &pilots,
            &mut rng::substream(seed, 1 << 32 | t as u64),
        );
        let est: Vec<_> = block
            .despread
            .iter()
            .zip(&profile.alphas)
            .map(|(y, &a)| mmse_estimate(y, a, &stats, cfg.tau_p, cfg.rho_p))
            .collect();
        let err: Vec<Vec<_>> = eq
            .iter()
            .zip(&est)
            .map(|(g, e)| g.iter().zip(e).map(|(g, e)| g - e).collect())
            .collect();
        let path = dir.join("channels.csv");
        write_channel_dump(&mut channels_csv, t, &real, t == 0).map_err(io_err(path))?;
        let path = dir.join("estimates.csv");
        write_estimation_dump(&mut estimates_csv, t, &est, &err, t == 0).map_err(io_err(path))?;
    }
    let alloc = allocate(cfg, &profile, scenario.simulation.power_control, seed)?;
    let mut alloc_csv = Vec::new();
    let path = dir.join("allocation.csv");
    write_allocation_csv(
        &mut alloc_csv,
        &profile.alphas,
        &alloc,
        &scenario.simulation.power_control.to_string(),
    )
    .map_err(io_err(path))?;
    for (name, bytes) in [
        ("channels.csv", channels_csv),
        ("estimates.csv", estimates_csv),
        ("allocation.csv", alloc_csv),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(path.clone()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> ExperimentPlan {
        let mut s = Scenario::default();
        s.system = s.system.with_n_rf(2).with_k_users(3);
        s.simulation.trials = 1;
        s.simulation.profiles = 1;
        ExperimentPlan {
            series: vec![Series::Numeric],
            ..ExperimentPlan::sweep(&s, SweepParam::RhoDbm, vec![0.0], 3)
        }
    }

    fn csv(rows: &[Row]) -> String {
        let mut buf = Vec::new();
        write_rows(&mut buf, rows).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn minimal_plan_gives_one_row() {
        let text = csv(&run_scenario(&tiny_plan()).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(
            lines[1].starts_with("numeric,rho_dbm,0,min,"),
            "{}",
            lines[1]
        );
        assert!(lines[1].ends_with(",3"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut plan = tiny_plan();
        plan.trials = 50;
        plan.profiles = 4;
        plan.series = vec![Series::Analytic, Series::Numeric];
        assert_eq!(
            csv(&run_scenario(&plan).unwrap()),
            csv(&run_scenario(&plan).unwrap())
        );
    }

    #[test]
    fn analytic_series_ignores_seed() {
        let mut plan = tiny_plan();
        plan.profiles = 5;
        plan.series = vec![Series::Analytic, Series::LargePilot];
        let a = run_scenario(&plan).unwrap();
        plan.seed = 99;
        let b = run_scenario(&plan).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.mean, x.stderr), (y.mean, y.stderr));
        }
    }

    #[test]
    fn sweep_grid_points() {
        let mut s = Scenario::default();
        s.simulation.trials = 2;
        s.simulation.profiles = 2;
        let rows = sweep(&s, "l_per_sub", &[8.0, 16.0], 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].sweep_value, 8.0);
        assert_eq!(rows[2].sweep_value, 16.0);
    }

    #[test]
    fn unknown_sweep_key_lists_valid_keys() {
        let err = sweep(&Scenario::default(), "antennas", &[1.0], 1).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("antennas") && msg.contains("n_rf") && msg.contains("rho_dbm"),
            "{msg}"
        );
    }

    #[test]
    fn sweep_values_are_checked() {
        let cfg = SystemConfig::default();
        assert!(matches!(
            SweepParam::NRf.apply(&cfg, 2.5),
            Err(HarnessError::InvalidValue { .. })
        ));
        assert!(matches!(
            SweepParam::Gamma.apply(&cfg, 2.0),
            Err(HarnessError::Config(_))
        ));
        let c = SweepParam::NRf.apply(&cfg, 8.0).unwrap();
        assert_eq!(c.n_total, 64);
        let c = SweepParam::KUsers.apply(&cfg, 3.0).unwrap();
        assert_eq!(c.tau_p, 3);
    }

    #[test]
    fn empty_plans_are_rejected() {
        let mut plan = tiny_plan();
        plan.values.clear();
        assert!(matches!(
            run_scenario(&plan),
            Err(HarnessError::InvalidPlan(_))
        ));
        let mut plan = tiny_plan();
        plan.trials = 0;
        assert!(matches!(
            run_scenario(&plan),
            Err(HarnessError::InvalidPlan(_))
        ));
    }

    #[test]
    fn figure_ids() {
        for id in FIGURE_IDS.iter().filter(|id| **id != "f_necs") {
            let plan = figure_plan(id, 1, false).unwrap();
            assert!(plan.validate().is_ok());
            assert_eq!(figure_plan(id, 1, true).unwrap().trials, FULL_TRIALS);
        }
        assert!(matches!(
            figure("f9", 1, false),
            Err(HarnessError::UnknownFigure(_))
        ));
    }

    #[test]
    fn artifacts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Scenario::default();
        s.simulation.trials = 2;
        dump_artifacts(&s, 1, dir.path()).unwrap();
        let channels = std::fs::read_to_string(dir.path().join("channels.csv")).unwrap();
        assert_eq!(channels.lines().count(), 1 + 2 * 32 * 8);
        let est = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        assert_eq!(est.lines().count(), 1 + 2 * 8 * 4);
        let alloc = std::fs::read_to_string(dir.path().join("allocation.csv")).unwrap();
        assert_eq!(alloc.lines().count(), 1 + 8);
    }

    #[test]
    fn per_user_rows() {
        let mut plan = tiny_plan();
        plan.per_user = true;
        plan.series = vec![Series::Analytic];
        let rows = run_scenario(&plan).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.user_or_min.as_str()).collect();
        assert_eq!(labels, ["min", "0", "1", "2"]);
        let min = rows[1..]
            .iter()
            .map(|r| r.mean)
            .fold(f64::INFINITY, f64::min);
        assert!(rows[0].mean <= min + 1e-12);
    }
}
