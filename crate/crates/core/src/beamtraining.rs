//! Finite-resolution phase-shift beams and beam selection.
//!
//! A beam assigns one reflection coefficient `beta * exp(j theta)` to every
//! element of the metasurface. Beams are selected by one of:
//!
//! * [`train_bisection`]: adaptive pairwise search that measures two
//!   minimally correlated beams per stage and keeps the candidates closer to
//!   the stronger one,
//! * [`train_exhaustive`]: measure every codebook entry,
//! * [`train_random`]: uniform pick, no measurements,
//! * [`ideal_beam`]: continuous phases co-phased with the users' summed
//!   channel, optionally followed by [`quantize_beam`].

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::{complex_normal, ChannelRealization};

/// Default upper bound on the number of enumerated beams.
pub const DEFAULT_CODEBOOK_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamError {
    #[error("codebook too large: {m_ph}^{n} beams exceeds cap {cap}")]
    CodebookTooLarge { n: usize, m_ph: usize, cap: usize },
    #[error("beam length {got} does not match {expected} elements")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed beam record: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Phases {
    /// Index `m` means phase `2 pi m / m_ph`.
    Discrete { indices: Vec<u32>, m_ph: u32 },
    /// Radians in `[0, 2 pi)`.
    Continuous(Vec<f64>),
}

/// Phase-shift beam with a common amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    amplitude: f64,
    phases: Phases,
}

impl Beam {
    pub fn discrete(indices: Vec<u32>, m_ph: usize, amplitude: f64) -> Self {
        let m = m_ph as u32;
        assert!(m >= 2, "at least two phase levels");
        assert!(indices.iter().all(|&i| i < m), "phase index out of range");
        Self {
            amplitude,
            phases: Phases::Discrete { indices, m_ph: m },
        }
    }

    pub fn continuous(phases: Vec<f64>, amplitude: f64) -> Self {
        let phases = phases.into_iter().map(|p| p.rem_euclid(TAU)).collect();
        Self {
            amplitude,
            phases: Phases::Continuous(phases),
        }
    }

    pub fn len(&self) -> usize {
        match &self.phases {
            Phases::Discrete { indices, .. } => indices.len(),
            Phases::Continuous(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Phase indices and resolution of a discrete beam.
    pub fn indices(&self) -> Option<(&[u32], usize)> {
        match &self.phases {
            Phases::Discrete { indices, m_ph } => Some((indices, *m_ph as usize)),
            Phases::Continuous(_) => None,
        }
    }

    pub fn phase(&self, n: usize) -> f64 {
        match &self.phases {
            Phases::Discrete { indices, m_ph } => TAU * f64::from(indices[n]) / f64::from(*m_ph),
            Phases::Continuous(p) => p[n],
        }
    }

    pub fn coefficient(&self, n: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase(n))
    }

    pub fn coefficients(&self) -> Vec<Complex64> {
        (0..self.len()).map(|n| self.coefficient(n)).collect()
    }

    /// `i0,i1,...,beta` for discrete beams.
    pub fn to_csv_line(&self) -> Option<String> {
        let (indices, _) = self.indices()?;
        let mut line: Vec<String> = indices.iter().map(u32::to_string).collect();
        line.push(format!("{:e}", self.amplitude));
        Some(line.join(","))
    }

    pub fn from_csv_line(line: &str, m_ph: usize) -> Result<Self, BeamError> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        let (beta, idx) = fields
            .split_last()
            .ok_or_else(|| BeamError::Parse("empty line".into()))?;
        if idx.is_empty() {
            return Err(BeamError::Parse("no phase indices".into()));
        }
        let amplitude: f64 = beta
            .parse()
            .map_err(|_| BeamError::Parse(format!("bad amplitude {beta:?}")))?;
        let indices = idx
            .iter()
            .map(|s| match s.parse::<u32>() {
                Ok(i) if (i as usize) < m_ph => Ok(i),
                _ => Err(BeamError::Parse(format!("bad phase index {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::discrete(indices, m_ph, amplitude))
    }
}

/// Every discrete beam of a given length and resolution.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub beams: Vec<Beam>,
    pub n_elements: usize,
    pub m_ph: usize,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Codebook with one explicit beam list; all beams must share length.
    pub fn from_beams(beams: Vec<Beam>, m_ph: usize) -> Self {
        let n_elements = beams.first().map_or(0, Beam::len);
        assert!(beams.iter().all(|b| b.len() == n_elements));
        Self {
            beams,
            n_elements,
            m_ph,
        }
    }
}

/// All `m_ph^n` beams in lexicographic phase-index order.
pub fn enumerate_codebook(
    n: usize,
    m_ph: usize,
    beta: f64,
    cap: usize,
) -> Result<Codebook, BeamError> {
    let too_large = BeamError::CodebookTooLarge { n, m_ph, cap };
    let size = u32::try_from(n)
        .ok()
        .and_then(|e| m_ph.checked_pow(e))
        .ok_or(too_large.clone())?;
    if size > cap {
        return Err(too_large);
    }
    let mut beams = Vec::with_capacity(size);
    let mut digits = vec![0u32; n];
    for _ in 0..size {
        beams.push(Beam::discrete(digits.clone(), m_ph, beta));
        // Increment the last digit first so the order is lexicographic.
        for d in digits.iter_mut().rev() {
            *d += 1;
            if (*d as usize) < m_ph {
                break;
            }
            *d = 0;
        }
    }
    Ok(Codebook {
        beams,
        n_elements: n,
        m_ph,
    })
}

/// Block-diagonal `n_rf x N` combining matrix of a beam: row `n` holds the
/// coefficients of sub-surface `n` on columns `n*l .. (n+1)*l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub n_rf: usize,
    pub l: usize,
    coeffs: Vec<Complex64>,
}

impl Combiner {
    /// `C h`: one inner product `c_n^T h_n` per sub-surface (no conjugate).
    pub fn apply(&self, h: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(h.len(), self.coeffs.len());
        self.coeffs
            .chunks(self.l)
            .zip(h.chunks(self.l))
            .map(|(c, x)| c.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Dense row `n` of the matrix (zeros outside the block).
    pub fn row(&self, n: usize) -> Vec<Complex64> {
        let mut row = vec![Complex64::new(0.0, 0.0); self.coeffs.len()];
        let block = n * self.l..(n + 1) * self.l;
        row[block.clone()].copy_from_slice(&self.coeffs[block]);
        row
    }

    /// `sum_k ||C x_k||^2` over the given columns.
    pub fn energy(&self, columns: &[Vec<Complex64>]) -> f64 {
        columns
            .iter()
            .map(|x| self.apply(x).iter().map(Complex64::norm_sqr).sum::<f64>())
            .sum()
    }
}

pub fn combiner_from_beam(beam: &Beam, n_rf: usize, l: usize) -> Result<Combiner, BeamError> {
    if beam.len() != n_rf * l {
        return Err(BeamError::LengthMismatch {
            expected: n_rf * l,
            got: beam.len(),
        });
    }
    Ok(Combiner {
        n_rf,
        l,
        coeffs: beam.coefficients(),
    })
}

/// `Re(b1^H b2)`.
pub fn beam_correlation(b1: &[Complex64], b2: &[Complex64]) -> f64 {
    assert_eq!(b1.len(), b2.len());
    b1.iter().zip(b2).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Received combined training signal and its power.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingObservation {
    pub r: Vec<Complex64>,
    pub power: f64,
}

impl TrainingObservation {
    pub fn new(r: Vec<Complex64>) -> Self {
        let power = r.iter().map(Complex64::norm_sqr).sum();
        Self { r, power }
    }
}

/// Noiseless part of the training signal, `sum_k sqrt(p_k) C g_k` (unit tone).
pub fn training_signal(
    c: &Combiner,
    realization: &ChannelRealization,
    powers: &[f64],
) -> Vec<Complex64> {
    assert_eq!(powers.len(), realization.k_users());
    let mut r = vec![Complex64::new(0.0, 0.0); c.n_rf];
    for (g, p) in realization.g.iter().zip(powers) {
        let s = p.sqrt();
        for (acc, y) in r.iter_mut().zip(c.apply(g)) {
            *acc += y * s;
        }
    }
    r
}

/// Training signal plus fresh CN(0, I) receiver noise.
pub fn receive_training<R: Rng + ?Sized>(
    c: &Combiner,
    realization: &ChannelRealization,
    powers: &[f64],
    rng: &mut R,
) -> TrainingObservation {
    let mut r = training_signal(c, realization, powers);
    for x in r.iter_mut() {
        *x += complex_normal(rng);
    }
    TrainingObservation::new(r)
}

/// Similarity used to pair and prune beams during bisection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationMetric {
    /// `Re(v1^H v2)`.
    #[default]
    Real,
    /// `|v1^H v2|`, blind to a common phase rotation of either beam.
    Magnitude,
}

impl CorrelationMetric {
    fn eval(self, a: &[Complex64], b: &[Complex64]) -> f64 {
        match self {
            Self::Real => beam_correlation(a, b),
            Self::Magnitude => a
                .iter()
                .zip(b)
                .map(|(x, y)| x.conj() * y)
                .sum::<Complex64>()
                .norm(),
        }
    }
}

/// One bisection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionStage {
    /// Codebook indices of the measured pair, in selection order.
    pub pair: (usize, usize),
    pub powers: (f64, f64),
    pub winner: usize,
    /// Candidates surviving the stage, ascending codebook order.
    pub kept: Vec<usize>,
    /// The strict filter removed nothing and the fallback (keep the
    /// better-correlated half) was applied.
    pub guarded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    /// Codebook index of the selected beam.
    pub index: usize,
    pub measurements: usize,
    pub stages: Vec<BisectionStage>,
}

/// Bisection beam search.
///
/// Each stage picks the pair of remaining beams with the lowest
/// correlation (first such pair in lexicographic order), measures both and
/// keeps every candidate strictly more correlated with the stronger beam
/// than with the weaker one. The stronger beam is always kept, so the set
/// never empties. If the filter removes nothing, the better-correlated half
/// is kept instead so every stage shrinks the set. Measurement ties go
/// to the first beam of the pair.
///
/// Pair selection is quadratic in the number of candidates; intended for
/// codebooks up to a few thousand beams.
pub fn train_bisection<F>(
    codebook: &Codebook,
    metric: CorrelationMetric,
    mut measure: F,
) -> TrainingOutcome
where
    F: FnMut(&Beam) -> f64,
{
    assert!(!codebook.is_empty(), "empty codebook");
    let coeffs: Vec<Vec<Complex64>> = codebook.beams.iter().map(Beam::coefficients).collect();
    let corr = |a: usize, b: usize| metric.eval(&coeffs[a], &coeffs[b]);
    let mut set: Vec<usize> = (0..codebook.len()).collect();
    // Correlations of discrete beams are sums of cosines; exact ties (such
    // as orthogonal beams) come out as rounding noise around zero.
    let tol = 1e-9 * coeffs.iter().map(|c| corr_self(c)).fold(0.0, f64::max);
    let mut stages = Vec::new();
    let mut measurements = 0;
    while set.len() > 1 {
        let (a, b) = min_correlation_pair(&set, &corr, tol);
        let pa = measure(&codebook.beams[a]);
        let pb = measure(&codebook.beams[b]);
        measurements += 2;
        let (winner, loser) = if pa >= pb { (a, b) } else { (b, a) };
        let mut kept: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&c| c == winner || corr(winner, c) > corr(loser, c) + tol)
            .collect();
        let guarded = kept.len() == set.len();
        if guarded {
            kept = better_half(&set, winner, &corr);
        }
        stages.push(BisectionStage {
            pair: (a, b),
            powers: (pa, pb),
            winner,
            kept: kept.clone(),
            guarded,
        });
        set = kept;
    }
    TrainingOutcome {
        index: set[0],
        measurements,
        stages,
    }
}

fn corr_self(c: &[Complex64]) -> f64 {
    c.iter().map(Complex64::norm_sqr).sum()
}

fn min_correlation_pair(
    set: &[usize],
    corr: &impl Fn(usize, usize) -> f64,
    tol: f64,
) -> (usize, usize) {
    let mut best = (set[0], set[1]);
    let mut best_val = f64::INFINITY;
    for (i, &a) in set.iter().enumerate() {
        for &b in &set[i + 1..] {
            let v = corr(a, b);
            // Strict comparison keeps the lexicographically first minimum.
            if v < best_val - tol {
                best_val = v;
                best = (a, b);
            }
        }
    }
    best
}

fn better_half(set: &[usize], winner: usize, corr: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = set
        .iter()
        .filter(|&&c| c != winner)
        .map(|&c| (c, corr(winner, c)))
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let keep = set.len().div_ceil(2);
    let mut kept: Vec<usize> = std::iter::once(winner)
        .chain(ranked.into_iter().map(|(c, _)| c))
        .take(keep)
        .collect();
    kept.sort_unstable();
    kept
}

/// Measure every beam; the first maximum wins.
pub fn train_exhaustive<F>(codebook: &Codebook, mut measure: F) -> TrainingOutcome
where
    F: FnMut(&Beam) -> f64,
{
    assert!(!codebook.is_empty(), "empty codebook");
    let mut best = (0, f64::NEG_INFINITY);
    for (i, beam) in codebook.beams.iter().enumerate() {
        let p = measure(beam);
        if p > best.1 {
            best = (i, p);
        }
    }
    TrainingOutcome {
        index: best.0,
        measurements: codebook.len(),
        stages: Vec::new(),
    }
}

/// Uniformly random codebook entry.
pub fn train_random<R: Rng + ?Sized>(codebook: &Codebook, rng: &mut R) -> TrainingOutcome {
    assert!(!codebook.is_empty(), "empty codebook");
    TrainingOutcome {
        index: rng.random_range(0..codebook.len()),
        measurements: 0,
        stages: Vec::new(),
    }
}

/// Continuous beam co-phased with the summed user channel: element `n`
/// gets `beta * conj(h_sum[n]) / |h_sum[n]|`, so `c^T h_sum` is real and
/// positive. A zero sum maps to phase 0.
pub fn ideal_beam(realization: &ChannelRealization, beta: f64) -> Beam {
    let phases = realization
        .h_sum()
        .iter()
        .map(|s| if s.norm_sqr() > 0.0 { -s.arg() } else { 0.0 })
        .collect();
    Beam::continuous(phases, beta)
}

/// Round every phase to the nearest of `2 pi m / m_ph`; the residual error
/// lies in `(-pi/m_ph, pi/m_ph]`.
pub fn quantize_beam(beam: &Beam, m_ph: usize) -> Beam {
    if let Some((_, m)) = beam.indices() {
        if m == m_ph {
            return beam.clone();
        }
    }
    let m = m_ph as f64;
    let indices = (0..beam.len())
        .map(|n| {
            let x = beam.phase(n) * m / TAU;
            ((x - 0.5).ceil().rem_euclid(m)) as u32
        })
        .collect();
    Beam::discrete(indices, m_ph, beam.amplitude())
}

/// Rotate each sub-surface block of a discrete beam by the grid phase that
/// best cancels the phase of its observed training output `r[n]`, making
/// `c_n^T h_sum,n` approximately real and positive. Received power is
/// unchanged.
pub fn align_to_observation(beam: &Beam, r: &[Complex64], l: usize) -> Beam {
    let (indices, m_ph) = beam.indices().expect("discrete beam");
    let m = m_ph as f64;
    let mut out = indices.to_vec();
    for (block, obs) in out.chunks_mut(l).zip(r) {
        let shift = ((-obs.arg() * m / TAU - 0.5).ceil()).rem_euclid(m) as u32;
        for i in block.iter_mut() {
            *i = (*i + shift) % m_ph as u32;
        }
    }
    Beam::discrete(out, m_ph, beam.amplitude())
}

/// Ratio of expected equivalent-channel energies `E||C H||^2 / E||C_opt H||^2`
/// accumulated over an ensemble.
#[derive(Debug, Clone, Default)]
pub struct NecsAccumulator {
    num: f64,
    den: f64,
    num_sq: f64,
    den_sq: f64,
    cross: f64,
    count: usize,
}

impl NecsAccumulator {
    pub fn push(&mut self, energy: f64, ideal_energy: f64) {
        self.num += energy;
        self.den += ideal_energy;
        self.num_sq += energy * energy;
        self.den_sq += ideal_energy * ideal_energy;
        self.cross += energy * ideal_energy;
        self.count += 1;
    }

    pub fn ratio(&self) -> f64 {
        self.num / self.den
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Delta-method standard error of the ratio of means.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let (mx, my) = (self.num / n, self.den / n);
        let vx = (self.num_sq / n - mx * mx) * n / (n - 1.0);
        let vy = (self.den_sq / n - my * my) * n / (n - 1.0);
        let cxy = (self.cross / n - mx * my) * n / (n - 1.0);
        let r = mx / my;
        ((vx - 2.0 * r * cxy + r * r * vy) / (n * my * my))
            .max(0.0)
            .sqrt()
    }
}

/// NECS of a fixed beam against the per-realization ideal beam.
pub fn necs(beam: &Beam, ensemble: &[ChannelRealization], n_rf: usize) -> Result<f64, BeamError> {
    assert!(!ensemble.is_empty(), "empty ensemble");
    let l = beam.len() / n_rf;
    let c = combiner_from_beam(beam, n_rf, l)?;
    let mut acc = NecsAccumulator::default();
    for real in ensemble {
        let ideal = combiner_from_beam(&ideal_beam(real, beam.amplitude()), n_rf, l)?;
        acc.push(c.energy(&real.h), ideal.energy(&real.h));
    }
    Ok(acc.ratio())
}

/// `eps_r_dbm,scheme,necs` rows.
pub fn write_necs_csv<W: Write>(out: &mut W, rows: &[(f64, &str, f64)]) -> io::Result<()> {
    writeln!(out, "eps_r_dbm,scheme,necs")?;
    for (eps, scheme, value) in rows {
        writeln!(out, "{eps},{scheme},{value:.6}")?;
    }
    Ok(())
}

/// Beam-selection schemes compared by [`compare_schemes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Bisection,
    Exhaustive,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Bisection, Scheme::Exhaustive, Scheme::Random];

    pub fn label(self) -> &'static str {
        match self {
            Self::Bisection => "proposed",
            Self::Exhaustive => "exhaustive",
            Self::Random => "random",
        }
    }
}

/// NECS of every scheme over one channel ensemble.
#[derive(Debug, Clone, Default)]
pub struct SchemeComparison {
    pub bisection: NecsAccumulator,
    pub exhaustive: NecsAccumulator,
    pub random: NecsAccumulator,
    /// Largest number of bisection stages over the ensemble.
    pub max_stages: usize,
}

impl SchemeComparison {
    pub fn get(&self, scheme: Scheme) -> &NecsAccumulator {
        match scheme {
            Scheme::Bisection => &self.bisection,
            Scheme::Exhaustive => &self.exhaustive,
            Scheme::Random => &self.random,
        }
    }
}

/// Setup of a single-RF-chain training comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSetup {
    pub n_elements: usize,
    pub m_ph: usize,
    pub k_users: usize,
    pub beta: f64,
    /// Average received training power relative to unit noise.
    pub eps_r: f64,
    pub metric: CorrelationMetric,
}

/// Train bisection, exhaustive and random beams on `channels` seeded
/// realizations with noisy measurements and accumulate their NECS.
/// Channel `i` draws from sub-stream `i` of `seed`; realizations run in
/// parallel and are reduced in index order.
pub fn compare_schemes(
    setup: &TrainingSetup,
    channels: usize,
    seed: u64,
) -> Result<SchemeComparison, BeamError> {
    use rayon::prelude::*;

    let n = setup.n_elements;
    let codebook = enumerate_codebook(n, setup.m_ph, setup.beta, DEFAULT_CODEBOOK_CAP)?;
    let profile = crate::channel::LargeScaleProfile::from_alphas(vec![1.0; setup.k_users], 1.0);
    let powers = vec![crate::channel::training_power(1.0, n, setup.eps_r); setup.k_users];
    let combiner = |b: &Beam| combiner_from_beam(b, 1, n).expect("beam spans the surface");
    let rows: Vec<([f64; 3], f64, usize)> = (0..channels)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::substream(seed, i as u64);
            let real =
                ChannelRealization::draw(crate::rng::derive_seed(seed, i as u64), 0, n, &profile);
            let mut measure =
                |b: &Beam| receive_training(&combiner(b), &real, &powers, &mut rng).power;
            let bis = train_bisection(&codebook, setup.metric, &mut measure);
            let exh = train_exhaustive(&codebook, &mut measure);
            let rnd = train_random(&codebook, &mut rng);
            let energy = |idx: usize| combiner(&codebook.beams[idx]).energy(&real.h);
            let ideal = combiner(&ideal_beam(&real, setup.beta)).energy(&real.h);
            (
                [energy(bis.index), energy(exh.index), energy(rnd.index)],
                ideal,
                bis.stages.len(),
            )
        })
        .collect();
    let mut out = SchemeComparison::default();
    for ([b, e, r], ideal, stages) in rows {
        out.bisection.push(b, ideal);
        out.exhaustive.push(e, ideal);
        out.random.push(r, ideal);
        out.max_stages = out.max_stages.max(stages);
    }
    Ok(out)
}

/// Mean of `exp(j dtheta)` for a uniform quantization error; the per-element
/// coherent-gain loss of `m_ph`-level phases.
pub fn quantization_gain(m_ph: f64) -> f64 {
    m_ph / PI * (PI / m_ph).sin()
}
