//! End-to-end acceptance gate. Each test is one criterion and prints one
//! pass/fail line in the harness output; expensive run corpora are built
//! once and shared.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cqp_core::apps::{self, MimoSpec, RadarSpec, VbSpec};
use cqp_core::bb::{self, BBLimits, RunReport, RunStatus};
use cqp_core::envelope::{
    argument_membership, build_argument_envelope, build_modulus_envelope, modulus_membership,
    tightness_bounds,
};
use cqp_core::model::{ArgumentSet, CMatrix, CVector, HermitianMatrix, ModulusBounds, ProblemCQP};

struct Corpus {
    /// Enumerable detection instances: exact optimum and a verified run.
    detection: Vec<(f64, RunReport)>,
    detection_elapsed: Duration,
    /// Root-level records across all three generators.
    roots: Vec<RunReport>,
    /// Beamforming runs where both relaxations coincide.
    beamforming: Vec<RunReport>,
    /// Large high-SNR detection runs.
    high_snr: Vec<RunReport>,
    /// Radar design runs.
    radar: Vec<RunReport>,
    /// The two-variable QPSK instance with a hand-computable bound.
    toy: RunReport,
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(build_corpus)
}

fn run_all<T: Send>(items: Vec<T>, f: impl Fn(T) -> RunReport + Send + Sync) -> Vec<RunReport> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

fn build_corpus() -> Corpus {
    let eps = 1e-4;

    // Kept sequential: the wall-clock budget below is part of criterion 1.
    let started = Instant::now();
    let mut detection = Vec::new();
    for seed in 0..10 {
        for snr_db in [5.0, 15.0] {
            let spec = MimoSpec { m: 8, n: 6, constellation: 4, snr_db, seed };
            let (p, _) = apps::gen_mimo(&spec).unwrap();
            let truth = apps::brute_force(&p).unwrap();
            let limits = BBLimits { verify: true, ..BBLimits::default() };
            let report = bb::run(&p, eps, &limits);
            detection.push((truth.value.unwrap(), report));
        }
    }
    let detection_elapsed = started.elapsed();

    let roots = run_all(root_level_instances(), |p| {
        let limits = BBLimits { max_iterations: Some(1), ..BBLimits::default() };
        bb::run(&p, eps, &limits)
    });

    let beamforming = run_all(
        (0..20u64)
            .map(|seed| VbSpec { m: if seed < 10 { 5 } else { 10 }, n: 5, power: None, seed })
            .collect(),
        |spec| bb::run(&apps::gen_vb(&spec).unwrap(), eps, &BBLimits::default()),
    );

    let high_snr = run_all(
        (0..20u64)
            .map(|seed| MimoSpec { m: 15, n: 10, constellation: 4, snr_db: 25.0, seed })
            .collect(),
        |spec| bb::run(&apps::gen_mimo(&spec).unwrap().0, eps, &BBLimits::default()),
    );

    let radar = run_all(
        (0..5u64)
            .map(|seed| RadarSpec { seed, ..RadarSpec::default() })
            .collect(),
        |spec| bb::run(&apps::gen_radar(&spec).unwrap(), eps, &BBLimits::default()),
    );

    let toy = bb::run(&toy_problem(), eps, &BBLimits::default());

    Corpus { detection, detection_elapsed, roots, beamforming, high_snr, radar, toy }
}

/// A spread of small instances from every generator, solved only at the
/// root.
fn root_level_instances() -> Vec<ProblemCQP> {
    let mut out = Vec::new();
    for seed in 0..34u64 {
        let spec = MimoSpec {
            m: 5,
            n: 3,
            constellation: [2, 4, 8][(seed % 3) as usize],
            snr_db: [5.0, 15.0, 25.0][((seed / 3) % 3) as usize],
            seed,
        };
        out.push(apps::gen_mimo(&spec).unwrap().0);
    }
    for seed in 0..33u64 {
        let spec = RadarSpec {
            delta_angle: if seed % 2 == 0 { PI / 6.0 } else { PI / 3.0 },
            seed,
            ..RadarSpec::default()
        };
        out.push(apps::gen_radar(&spec).unwrap());
    }
    for seed in 0..33u64 {
        let spec = VbSpec {
            m: 1 + (seed % 3) as usize,
            n: 2 + ((seed / 3) % 3) as usize,
            power: None,
            seed,
        };
        out.push(apps::gen_vb(&spec).unwrap());
    }
    out
}

fn toy_problem() -> ProblemCQP {
    let q = HermitianMatrix::new(CMatrix::identity(2, 2)).unwrap();
    let c =
        CVector::from_row_slice(&[Complex64::new(-1.0, 0.0), Complex64::new(0.0, 0.0)]);
    ProblemCQP::new(
        q,
        c,
        vec![ModulusBounds::fixed(1.0).unwrap(); 2],
        vec![ArgumentSet::psk(4).unwrap(); 2],
    )
    .unwrap()
}

fn all_reports(c: &Corpus) -> impl Iterator<Item = &RunReport> {
    c.detection
        .iter()
        .map(|(_, r)| r)
        .chain(&c.roots)
        .chain(&c.beamforming)
        .chain(&c.high_snr)
        .chain(&c.radar)
        .chain(std::iter::once(&c.toy))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    assert!(k > 0);
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

#[test]
fn criterion_1_oracle_equivalence_on_enumerable_detection() {
    let c = corpus();
    assert_eq!(c.detection.len(), 20);
    for (i, (best, report)) in c.detection.iter().enumerate() {
        assert!(
            (report.objective - best).abs() <= 1e-4,
            "instance {i}: objective {} vs exact optimum {best}",
            report.objective
        );
        assert_eq!(report.status, RunStatus::EpsilonOptimal, "instance {i}");
    }
    println!(
        "20 enumerable detection instances matched the exhaustive optimum in {:.1?}",
        c.detection_elapsed
    );
    assert!(
        c.detection_elapsed < Duration::from_secs(120),
        "corpus took {:?}",
        c.detection_elapsed
    );
}

#[test]
fn criterion_2_relaxation_ordering_and_gap_range() {
    let c = corpus();
    assert_eq!(c.roots.len(), 100);
    for (i, report) in c.roots.iter().enumerate() {
        assert!(
            report.lbde >= report.lbdc - 1e-7,
            "instance {i}: enhanced bound {} below conventional {}",
            report.lbde,
            report.lbdc
        );
        assert!(
            report.closed_gap.is_finite() && (0.0..=100.0).contains(&report.closed_gap),
            "instance {i}: closed gap {}",
            report.closed_gap
        );
    }
}

#[test]
fn criterion_3_beamforming_relaxations_coincide() {
    let c = corpus();
    assert_eq!(c.beamforming.len(), 20);
    for (i, report) in c.beamforming.iter().enumerate() {
        let rel = (report.lbde - report.lbdc).abs() / (1.0 + report.lbdc.abs());
        assert!(rel <= 1e-6, "instance {i}: relative bound split {rel}");
    }
    let med = median(c.beamforming.iter().map(|r| r.iterations as f64).collect());
    println!("beamforming median iterations: {med}");
    assert!(med <= 20.0, "median iterations {med}");
}

#[test]
fn criterion_4_high_snr_detection_is_tight() {
    let c = corpus();
    assert_eq!(c.high_snr.len(), 20);
    let tight = c
        .high_snr
        .iter()
        .filter(|r| r.objective - r.lbde <= 1e-3 * (1.0 + r.objective.abs()))
        .count();
    println!("tight high-SNR instances: {tight} of 20");
    assert!(tight >= 16, "only {tight} of 20 instances had a tight enhanced bound");
}

#[test]
fn criterion_5_radar_gap_closure() {
    let c = corpus();
    assert_eq!(c.radar.len(), 5);
    for (i, report) in c.radar.iter().enumerate() {
        assert_eq!(report.status, RunStatus::EpsilonOptimal, "instance {i}");
        assert!(report.iterations <= 100, "instance {i} used {} iterations", report.iterations);
        assert!(
            report.objective - report.final_lower <= 1e-4 + 1e-9,
            "instance {i}: certified gap {}",
            report.objective - report.final_lower
        );
    }
    let med = median(c.radar.iter().map(|r| r.closed_gap).collect());
    println!("radar median closed gap: {med:.1}%");
    assert!(med >= 85.0, "median closed gap {med}");
}

#[test]
fn criterion_6_per_iteration_rounding_audit() {
    let c = corpus();
    let mut audited = 0u64;
    for (i, (_, report)) in c.detection.iter().enumerate() {
        let rounding: Vec<_> =
            report.checks.iter().filter(|ch| ch.name == "rounding-gap-bound").collect();
        assert!(
            rounding.len() as u64 >= report.iterations,
            "instance {i}: {} rounding checks for {} iterations",
            rounding.len(),
            report.iterations
        );
        for ch in &rounding {
            assert!(ch.passed, "instance {i}, iteration {}: {}", ch.iteration, ch.detail);
        }
        audited += rounding.len() as u64;
    }
    println!("rounding-gap audits with zero violations: {audited}");
    assert!(audited >= 20);
}

#[test]
fn criterion_7_iteration_counts_respect_the_bound() {
    let c = corpus();
    for (i, report) in all_reports(c).enumerate() {
        assert!(
            report.iterations as f64 <= report.theoretical_k,
            "run {i}: {} iterations above the worst-case bound {}",
            report.iterations,
            report.theoretical_k
        );
    }
    assert_eq!(c.toy.theoretical_k, 16.0);
    assert!(c.toy.objective.abs() <= 1e-4);
}

#[test]
fn criterion_8_envelope_property_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(88);

    let arg_sets = vec![
        ArgumentSet::interval(0.2, 0.9).unwrap(),
        ArgumentSet::interval(-0.4, 0.4).unwrap(),
        ArgumentSet::interval(2.0, 2.0 + PI).unwrap(),
        ArgumentSet::full_circle(),
        ArgumentSet::singleton(1.2),
        ArgumentSet::psk(4).unwrap(),
        ArgumentSet::psk(8).unwrap(),
        ArgumentSet::discrete(&[0.1, 2.0, 3.4]).unwrap(),
    ];
    let bound_sets = vec![
        ModulusBounds::fixed(1.0).unwrap(),
        ModulusBounds::new(0.2, 1.0).unwrap(),
        ModulusBounds::new(0.0, 1.0).unwrap(),
        ModulusBounds::new(0.5, 2.0).unwrap(),
    ];

    let admissible_angle = |a: &ArgumentSet, rng: &mut ChaCha8Rng| match a {
        ArgumentSet::Interval { lo, hi } => rng.random_range(*lo..=*hi),
        ArgumentSet::Discrete(v) => v[rng.random_range(0..v.len())],
    };

    // Soundness: admissible polar points satisfy both envelopes.
    for _ in 0..10_000 {
        let a = &arg_sets[rng.random_range(0..arg_sets.len())];
        let b = &bound_sets[rng.random_range(0..bound_sets.len())];
        let env = build_argument_envelope(a);
        let menv = build_modulus_envelope(b);
        let theta = admissible_angle(a, &mut rng);
        let r = rng.random_range(b.lo..=b.hi);
        let x = Complex64::from_polar(r, theta);
        assert!(argument_membership(&env, x, r, 1e-9), "set {a:?}, theta {theta}, r {r}");
        assert!(modulus_membership(&menv, r * r, r, 1e-9), "bounds {b:?}, r {r}");
    }

    // Mixtures of admissible points keep the a-priori modulus ratio and the
    // lifted square stays within the a-priori gap.
    for _ in 0..5_000 {
        let a = &arg_sets[rng.random_range(0..arg_sets.len())];
        let b = &bound_sets[rng.random_range(0..bound_sets.len())];
        let (ratio, square_gap) = tightness_bounds(a, b);
        let (t1, t2) = (admissible_angle(a, &mut rng), admissible_angle(a, &mut rng));
        let (r1, r2) = (rng.random_range(b.lo..=b.hi), rng.random_range(b.lo..=b.hi));
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let x = Complex64::from_polar(r1, t1).scale(lambda)
            + Complex64::from_polar(r2, t2).scale(1.0 - lambda);
        let r = lambda * r1 + (1.0 - lambda) * r2;
        assert!(x.norm() >= ratio * r - 1e-9, "set {a:?}: |x| {} ratio {ratio} r {r}", x.norm());

        let r3 = rng.random_range(b.lo..=b.hi);
        let upper = (b.lo + b.hi) * r3 - b.lo * b.hi;
        let x_lift = r3 * r3 + rng.random_range(0.0..=1.0) * (upper - r3 * r3);
        let menv = build_modulus_envelope(b);
        assert!(modulus_membership(&menv, x_lift, r3, 1e-9));
        assert!(x_lift - r3 * r3 <= square_gap + 1e-9, "gap {} above {square_gap}", x_lift - r3 * r3);
    }

    // Recovery: on the circle |x| = r the argument envelope keeps exactly
    // the admissible angles, and the lifted square collapses to r^2.
    let recoverable: Vec<&ArgumentSet> = arg_sets
        .iter()
        .filter(|a| matches!(a, ArgumentSet::Discrete(_)) || a.width() <= PI)
        .collect();
    for _ in 0..5_000 {
        let a = recoverable[rng.random_range(0..recoverable.len())];
        let env = build_argument_envelope(a);
        let r = rng.random_range(0.5..=2.0);

        let theta = admissible_angle(a, &mut rng);
        assert!(argument_membership(&env, Complex64::from_polar(r, theta), r, 1e-9));

        let off = off_set_angle(a, &mut rng);
        assert!(
            !argument_membership(&env, Complex64::from_polar(r, off), r, 1e-9),
            "set {a:?} accepted off-set angle {off}"
        );

        let b = &bound_sets[rng.random_range(0..bound_sets.len())];
        let menv = build_modulus_envelope(b);
        let rr = rng.random_range((b.lo + 1e-3).min(b.hi)..=b.hi);
        assert!(!modulus_membership(&menv, rr * rr - 1e-6, rr, 1e-9));
    }

    let elapsed = started.elapsed();
    println!("envelope property suite finished in {elapsed:.1?}");
    assert!(elapsed < Duration::from_secs(10));
}

/// An angle at circular distance at least 1e-3 from every member of the
/// set; callers only pass sets whose complement is wide enough.
fn off_set_angle(a: &ArgumentSet, rng: &mut ChaCha8Rng) -> f64 {
    match a {
        ArgumentSet::Interval { lo, hi } => {
            let complement = 2.0 * PI - (hi - lo);
            assert!(complement > 2.5e-3);
            hi + rng.random_range(1e-3..=complement - 1e-3)
        }
        ArgumentSet::Discrete(v) => {
            let k = rng.random_range(0..v.len());
            let next = if k + 1 < v.len() { v[k + 1] } else { v[0] + 2.0 * PI };
            let gap = next - v[k];
            assert!(gap > 2.5e-3);
            v[k] + rng.random_range(1e-3..=gap - 1e-3)
        }
    }
}

#[test]
fn criterion_9_solver_certification() {
    let c = corpus();
    let mut solves = 0usize;
    for (i, report) in all_reports(c).enumerate() {
        let a = &report.audit;
        assert!(a.solves > 0, "run {i} recorded no solves");
        assert!(a.max_primal_residual <= 1e-7, "run {i}: primal residual {}", a.max_primal_residual);
        assert!(a.max_dual_residual <= 1e-7, "run {i}: dual residual {}", a.max_dual_residual);
        assert!(a.max_gap <= 1e-7, "run {i}: duality gap {}", a.max_gap);
        assert!(
            a.min_eigenvalue_floor >= -1e-7,
            "run {i}: eigenvalue floor {}",
            a.min_eigenvalue_floor
        );
        solves += a.solves;
    }
    println!("certified conic solves: {solves}");
}
