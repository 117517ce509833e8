//! Seeded instance generators for three signal-processing applications,
//! plus an exhaustive oracle for fully discrete instances.
//!
//! All generators draw from ChaCha8 seeded with the caller's 64-bit seed,
//! one stream per tensor (stream 0 for the channel or covariance draw,
//! stream 1 for the planted point, stream 2 for the noise), with matrices
//! filled column by column. Identical parameters therefore produce
//! bit-identical instances on every platform.
//!
//! Complex Gaussian entries have i.i.d. real and imaginary parts of variance
//! one half, so each entry has unit variance.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{
    ArgumentSet, CMatrix, CVector, HermitianMatrix, ModulusBounds, ProblemCQP,
};
use crate::TAU;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AppsError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("exhaustive search requires discrete arguments and fixed moduli")]
    NotEnumerable,
    #[error("enumeration size {size} exceeds the 10^7 limit")]
    TooLarge { size: u128 },
}

/// Maximum-likelihood detection of an M-PSK vector through a Gaussian
/// channel: `m` outputs, `n` inputs, constellation order `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoSpec {
    pub m: usize,
    pub n: usize,
    pub constellation: usize,
    pub snr_db: f64,
    pub seed: u64,
}

/// Unimodular radar code design: maximize the matched-filter SNR subject to
/// elementwise similarity with a reference code.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarSpec {
    /// Code length; 7 selects the built-in Barker reference code.
    pub n: usize,
    /// Noise correlation; drawn uniformly from `[0.2, 0.8]` when `None`.
    pub rho: Option<f64>,
    /// Normalized target Doppler (Doppler frequency times pulse repetition
    /// time) of the steering vector.
    pub fd_tr: f64,
    /// Half-width of the per-coordinate argument interval around the
    /// reference code.
    pub delta_angle: f64,
    pub seed: u64,
    /// Reference unimodular code; required when `n != 7`.
    pub reference: Option<Vec<Complex64>>,
}

impl Default for RadarSpec {
    fn default() -> Self {
        RadarSpec {
            n: 7,
            rho: None,
            fd_tr: 0.15,
            delta_angle: PI / 6.0,
            seed: 0,
            reference: None,
        }
    }
}

/// Virtual beamforming: `n` single-antenna transmitters maximize the power
/// received by `m` antennas under per-transmitter power budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct VbSpec {
    pub m: usize,
    pub n: usize,
    /// Per-transmitter power budgets; all one when `None`.
    pub power: Option<Vec<f64>>,
    pub seed: u64,
}

/// Side information about a generated or enumerated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// The transmitted vector a detection instance was built around.
    pub planted: Option<CVector>,
    /// Constant dropped when reducing the application objective to the
    /// solver's form; add it back for reporting on the application's scale.
    pub offset: f64,
    /// Noise scale used by the detection generator.
    pub sigma: Option<f64>,
    /// Exact optimum value, when enumerated.
    pub value: Option<f64>,
    /// Exact minimizer, when enumerated (first in coordinate-digit order
    /// among ties).
    pub minimizer: Option<CVector>,
}

/// Fresh generator on substream `stream` of the given seed.
fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Builds a detection instance: channel `H` (`m` by `n`) and noise from the
/// standard complex Gaussian, planted symbols uniform on the M-PSK set, and
/// the noise scale solved exactly from
/// `snr_db = 10 log10(|H x*|^2 / (sigma^2 n))`. The quadratic form is
/// `Q = H' H`, `c = -H' r` with `r = H x* + sigma v`; the constant
/// `|r|^2 / 2` needed to report residual-scale objective values is returned
/// in the ground truth.
pub fn gen_mimo(spec: &MimoSpec) -> Result<(ProblemCQP, GroundTruth), AppsError> {
    if spec.n < 1 || spec.m < spec.n {
        return Err(AppsError::InvalidSpec(format!(
            "need outputs >= inputs >= 1, got {} outputs and {} inputs",
            spec.m, spec.n
        )));
    }
    if spec.constellation < 2 {
        return Err(AppsError::InvalidSpec(format!(
            "constellation order must be at least 2, got {}",
            spec.constellation
        )));
    }
    if spec.snr_db.is_nan() {
        return Err(AppsError::InvalidSpec("snr_db is NaN".into()));
    }

    let (m, n, order) = (spec.m, spec.n, spec.constellation);
    let mut rng = rng_stream(spec.seed, 0);
    let mut h = CMatrix::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            h[(i, j)] = complex_gaussian(&mut rng);
        }
    }

    let mut rng = rng_stream(spec.seed, 1);
    let planted = CVector::from_fn(n, |_, _| {
        let k = rng.random_range(0..order);
        Complex64::cis(TAU * k as f64 / order as f64)
    });

    let mut rng = rng_stream(spec.seed, 2);
    let noise = CVector::from_fn(m, |_, _| complex_gaussian(&mut rng));

    let hx = &h * &planted;
    let sigma = (hx.norm_squared() / (n as f64 * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let r = &hx + noise.scale(sigma);

    let q = HermitianMatrix::hermitize(&(h.adjoint() * &h));
    let c = -(h.adjoint() * &r);
    let p = ProblemCQP::new(
        q,
        c,
        vec![ModulusBounds::fixed(1.0).expect("unit modulus is valid"); n],
        vec![ArgumentSet::psk(order).expect("order >= 2"); n],
    )
    .expect("generated instance is valid");
    let truth = GroundTruth {
        planted: Some(planted),
        offset: 0.5 * r.norm_squared(),
        sigma: Some(sigma),
        value: None,
        minimizer: None,
    };
    Ok((p, truth))
}

/// Builds a radar code design instance: exponential noise covariance
/// `M_ij = rho^|i-j|`, steering vector `p_k = exp(j 2 pi k fd_tr)`, quadratic
/// form `Q = -2 (M^-1 o (p p')^*)` (elementwise product), unit moduli, and
/// argument intervals of half-width `delta_angle` centered on the reference
/// code's arguments.
pub fn gen_radar(spec: &RadarSpec) -> Result<ProblemCQP, AppsError> {
    if spec.n < 1 {
        return Err(AppsError::InvalidSpec("code length must be at least 1".into()));
    }
    if !(spec.delta_angle > 0.0 && spec.delta_angle <= PI / 2.0) {
        return Err(AppsError::InvalidSpec(format!(
            "similarity half-width must lie in (0, pi/2], got {}",
            spec.delta_angle
        )));
    }
    if !spec.fd_tr.is_finite() {
        return Err(AppsError::InvalidSpec("normalized Doppler must be finite".into()));
    }
    let reference: Vec<Complex64> = match &spec.reference {
        Some(x0) => {
            if x0.len() != spec.n {
                return Err(AppsError::InvalidSpec(format!(
                    "reference code has length {}, expected {}",
                    x0.len(),
                    spec.n
                )));
            }
            x0.clone()
        }
        None => {
            if spec.n != 7 {
                return Err(AppsError::InvalidSpec(
                    "lengths other than 7 require an explicit reference code".into(),
                ));
            }
            [1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect()
        }
    };
    if reference.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
        return Err(AppsError::InvalidSpec("reference code must be unimodular".into()));
    }
    let rho = match spec.rho {
        Some(r) => {
            if !(0.0..1.0).contains(&r) {
                return Err(AppsError::InvalidSpec(format!(
                    "correlation must lie in [0, 1), got {r}"
                )));
            }
            r
        }
        None => rng_stream(spec.seed, 0).random_range(0.2..=0.8),
    };

    let n = spec.n;
    let cov = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
        rho.powi((i as i32 - j as i32).abs())
    });
    let cov_inv = cov.try_inverse().expect("exponential covariance is positive definite");
    let steer = CVector::from_fn(n, |k, _| Complex64::cis(TAU * spec.fd_tr * k as f64));
    let q = CMatrix::from_fn(n, n, |i, j| {
        -2.0 * cov_inv[(i, j)] * steer[i].conj() * steer[j]
    });
    let args = reference
        .iter()
        .map(|z| {
            ArgumentSet::interval(z.arg() - spec.delta_angle, z.arg() + spec.delta_angle)
                .expect("half-width at most pi/2 keeps the interval valid")
        })
        .collect();
    Ok(ProblemCQP::new(
        HermitianMatrix::hermitize(&q),
        CVector::zeros(n),
        vec![ModulusBounds::fixed(1.0).expect("unit modulus is valid"); n],
        args,
    )
    .expect("generated instance is valid"))
}

/// Builds a beamforming instance: channels `h_j` standard complex Gaussian,
/// `Q = -2 sum_j h_j h_j'`, free arguments, moduli in `[0, sqrt(P_i)]`.
/// Minimizing the solver objective maximizes the received power, which
/// equals the negated objective value.
pub fn gen_vb(spec: &VbSpec) -> Result<ProblemCQP, AppsError> {
    if spec.m < 1 || spec.n < 1 {
        return Err(AppsError::InvalidSpec(
            "need at least one transmitter and one receive antenna".into(),
        ));
    }
    let power = match &spec.power {
        Some(p) => {
            if p.len() != spec.n {
                return Err(AppsError::InvalidSpec(format!(
                    "power list has length {}, expected {}",
                    p.len(),
                    spec.n
                )));
            }
            if p.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(AppsError::InvalidSpec(
                    "power budgets must be finite and nonnegative".into(),
                ));
            }
            p.clone()
        }
        None => vec![1.0; spec.n],
    };

    let n = spec.n;
    let mut rng = rng_stream(spec.seed, 0);
    let mut q = CMatrix::zeros(n, n);
    for _ in 0..spec.m {
        let h = CVector::from_fn(n, |_, _| complex_gaussian(&mut rng));
        q -= (&h * h.adjoint()).scale(2.0);
    }
    let bounds = power
        .iter()
        .map(|&p| ModulusBounds::new(0.0, p.sqrt()).expect("nonnegative budget"))
        .collect();
    Ok(ProblemCQP::new(
        HermitianMatrix::hermitize(&q),
        CVector::zeros(n),
        bounds,
        vec![ArgumentSet::full_circle(); n],
    )
    .expect("generated instance is valid"))
}

const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Exhaustively minimizes the objective of an instance whose arguments are
/// all discrete and whose moduli are all fixed. Returns the exact optimum
/// and the first minimizer in coordinate-digit order (coordinate 0 most
/// significant). The parallel build splits the range across workers; the
/// reduction is a total order on (value, index), so the result is identical
/// either way.
pub fn brute_force(p: &ProblemCQP) -> Result<GroundTruth, AppsError> {
    let space = enumeration_space(p)?;
    #[cfg(feature = "parallel")]
    let best = {
        use rayon::prelude::*;
        (0..space.total)
            .into_par_iter()
            .map(|idx| (p.objective(&space.point(idx)), idx))
            .reduce(|| (f64::INFINITY, u64::MAX), better)
    };
    #[cfg(not(feature = "parallel"))]
    let best = scan(p, &space);
    Ok(space.truth(p, best))
}

/// Single-threaded [`brute_force`], kept available in every build so the two
/// paths can be compared and benchmarked against each other.
pub fn brute_force_serial(p: &ProblemCQP) -> Result<GroundTruth, AppsError> {
    let space = enumeration_space(p)?;
    let best = scan(p, &space);
    Ok(space.truth(p, best))
}

fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
    if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
        a
    } else {
        b
    }
}

fn scan(p: &ProblemCQP, space: &Enumeration) -> (f64, u64) {
    let mut best = (f64::INFINITY, u64::MAX);
    for idx in 0..space.total {
        best = better(best, (p.objective(&space.point(idx)), idx));
    }
    best
}

struct Enumeration {
    angles: Vec<Vec<f64>>,
    moduli: Vec<f64>,
    total: u64,
}

impl Enumeration {
    /// Decodes a linear index into the candidate point, coordinate 0 being
    /// the most significant digit.
    fn point(&self, idx: u64) -> CVector {
        let n = self.angles.len();
        let mut digits = vec![0usize; n];
        let mut rem = idx;
        for i in (0..n).rev() {
            let len = self.angles[i].len() as u64;
            digits[i] = (rem % len) as usize;
            rem /= len;
        }
        CVector::from_fn(n, |i, _| {
            Complex64::from_polar(self.moduli[i], self.angles[i][digits[i]])
        })
    }

    fn truth(&self, p: &ProblemCQP, best: (f64, u64)) -> GroundTruth {
        let x = self.point(best.1);
        debug_assert!(p.is_feasible(&x, 1e-9));
        GroundTruth {
            planted: None,
            offset: 0.0,
            sigma: None,
            value: Some(best.0),
            minimizer: Some(x),
        }
    }
}

fn enumeration_space(p: &ProblemCQP) -> Result<Enumeration, AppsError> {
    let mut angles = Vec::with_capacity(p.n());
    let mut moduli = Vec::with_capacity(p.n());
    let mut total: u128 = 1;
    for i in 0..p.n() {
        let ArgumentSet::Discrete(list) = &p.args()[i] else {
            return Err(AppsError::NotEnumerable);
        };
        if !p.bounds()[i].is_fixed() {
            return Err(AppsError::NotEnumerable);
        }
        total = total.saturating_mul(list.len() as u128);
        angles.push(list.clone());
        moduli.push(p.bounds()[i].lo);
    }
    if total > ENUMERATION_LIMIT {
        return Err(AppsError::TooLarge { size: total });
    }
    Ok(Enumeration { angles, moduli, total: total as u64 })
}
