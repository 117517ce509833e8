//! On-disk JSON formats: instance files, solve records, oracle records,
//! and benchmark reports.
//!
//! Conventions, fixed for every file this tool reads or writes:
//!
//! * complex numbers are two-element `[re, im]` arrays,
//! * angles are radians as decimal literals,
//! * modulus bounds are `[lo, hi]` arrays,
//! * field order is the declaration order of the structs below,
//! * the instance fingerprint is the 64-bit FNV-1a hash of the canonical
//!   (compact) serialization, printed as 16 hex digits.
//!
//! Generated kinds store only their spec; the instance itself is rebuilt
//! deterministically from the seed (ChaCha8, one substream per tensor, as
//! documented in the library), so a spec file identifies an instance
//! exactly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use cqp_core::apps::{self, MimoSpec, RadarSpec, VbSpec};
use cqp_core::conic::SolveAudit;
use cqp_core::model::{ArgumentSet, CMatrix, CVector, HermitianMatrix, ModulusBounds, ProblemCQP};

pub const FORMAT_VERSION: u32 = 1;

/// 64-bit FNV-1a over the given bytes, as a fixed-width hex string.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: u32,
    #[serde(flatten)]
    pub payload: InstancePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstancePayload {
    Mimo {
        m: usize,
        n: usize,
        constellation: usize,
        #[serde(with = "maybe_infinite")]
        snr_db: f64,
        seed: u64,
    },
    Radar {
        n: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        rho: Option<f64>,
        fd_tr: f64,
        delta_angle: f64,
        seed: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        reference: Option<Vec<[f64; 2]>>,
    },
    Vb {
        m: usize,
        n: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        power: Option<Vec<f64>>,
        seed: u64,
    },
    RawCqp {
        problem: ProblemJson,
    },
}

/// An instance made concrete: the problem plus the bookkeeping needed to
/// report values on the application's scale.
pub struct Realized {
    pub problem: ProblemCQP,
    pub kind: &'static str,
    /// Constant to add to solver-scale values (detection reports the
    /// residual `|Hx - r|^2 / 2`, which drops this constant).
    pub offset: f64,
    /// True when the application maximizes the negated solver objective
    /// (radar SNR, beamforming received power).
    pub maximize: bool,
}

impl InstanceFile {
    pub fn realize(&self) -> Result<Realized, String> {
        match &self.payload {
            InstancePayload::Mimo { m, n, constellation, snr_db, seed } => {
                let spec = MimoSpec {
                    m: *m,
                    n: *n,
                    constellation: *constellation,
                    snr_db: *snr_db,
                    seed: *seed,
                };
                let (problem, truth) = apps::gen_mimo(&spec).map_err(|e| e.to_string())?;
                Ok(Realized { problem, kind: "mimo", offset: truth.offset, maximize: false })
            }
            InstancePayload::Radar { n, rho, fd_tr, delta_angle, seed, reference } => {
                let spec = RadarSpec {
                    n: *n,
                    rho: *rho,
                    fd_tr: *fd_tr,
                    delta_angle: *delta_angle,
                    seed: *seed,
                    reference: reference
                        .as_ref()
                        .map(|v| v.iter().map(|&[re, im]| Complex64::new(re, im)).collect()),
                };
                let problem = apps::gen_radar(&spec).map_err(|e| e.to_string())?;
                Ok(Realized { problem, kind: "radar", offset: 0.0, maximize: true })
            }
            InstancePayload::Vb { m, n, power, seed } => {
                let spec = VbSpec { m: *m, n: *n, power: power.clone(), seed: *seed };
                let problem = apps::gen_vb(&spec).map_err(|e| e.to_string())?;
                Ok(Realized { problem, kind: "vb", offset: 0.0, maximize: true })
            }
            InstancePayload::RawCqp { problem } => Ok(Realized {
                problem: problem.to_problem()?,
                kind: "raw-cqp",
                offset: 0.0,
                maximize: false,
            }),
        }
    }

    /// Fingerprint of the canonical serialization, independent of the
    /// whitespace of the file the instance was read from.
    pub fn canonical_hash(&self) -> String {
        fingerprint(serde_json::to_string(self).expect("instance serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemJson {
    pub n: usize,
    /// Row-major Hermitian matrix, every entry as `[re, im]`.
    pub q: Vec<Vec<[f64; 2]>>,
    pub c: Vec<[f64; 2]>,
    pub bounds: Vec<[f64; 2]>,
    pub args: Vec<ArgJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ArgJson {
    Interval { lo: f64, hi: f64 },
    Discrete { angles: Vec<f64> },
}

impl ProblemJson {
    pub fn from_problem(p: &ProblemCQP) -> Self {
        let n = p.n();
        let qm = p.q().as_matrix();
        ProblemJson {
            n,
            q: (0..n)
                .map(|i| (0..n).map(|j| [qm[(i, j)].re, qm[(i, j)].im]).collect())
                .collect(),
            c: complex_pairs(p.c()),
            bounds: p.bounds().iter().map(|b| [b.lo, b.hi]).collect(),
            args: p
                .args()
                .iter()
                .map(|a| match a {
                    ArgumentSet::Interval { lo, hi } => ArgJson::Interval { lo: *lo, hi: *hi },
                    ArgumentSet::Discrete(v) => ArgJson::Discrete { angles: v.clone() },
                })
                .collect(),
        }
    }

    pub fn to_problem(&self) -> Result<ProblemCQP, String> {
        let n = self.n;
        if self.q.len() != n || self.q.iter().any(|row| row.len() != n) {
            return Err(format!("quadratic term must be {n} by {n}"));
        }
        if self.c.len() != n || self.bounds.len() != n || self.args.len() != n {
            return Err(format!("linear term, bounds, and args must all have length {n}"));
        }
        let q = CMatrix::from_fn(n, n, |i, j| Complex64::new(self.q[i][j][0], self.q[i][j][1]));
        let q = HermitianMatrix::new(q).map_err(|e| e.to_string())?;
        let c = CVector::from_fn(n, |i, _| Complex64::new(self.c[i][0], self.c[i][1]));
        let bounds = self
            .bounds
            .iter()
            .map(|&[lo, hi]| ModulusBounds::new(lo, hi).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let args = self
            .args
            .iter()
            .map(|a| {
                match a {
                    ArgJson::Interval { lo, hi } => ArgumentSet::interval(*lo, *hi),
                    ArgJson::Discrete { angles } => ArgumentSet::discrete(angles),
                }
                .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        ProblemCQP::new(q, c, bounds, args).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceIdentity {
    pub hash: String,
    pub kind: String,
}

/// One solve outcome. Numeric fields are on the solver's minimization
/// scale; apply `offset` (add) or `maximize` (negate) to recover the
/// application scale. Non-finite values serialize as missing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub format: u32,
    pub instance: InstanceIdentity,
    pub mode: String,
    pub epsilon: f64,
    pub status: String,
    pub obj_val: Option<f64>,
    /// Certified lower bound at exit.
    pub lower: Option<f64>,
    pub lbd_e: Option<f64>,
    pub lbd_c: Option<f64>,
    pub cld_gap: Option<f64>,
    pub iterations: Option<u64>,
    pub nodes: Option<u64>,
    pub theoretical_k: Option<f64>,
    pub offset: f64,
    pub maximize: bool,
    pub time_total_s: f64,
    pub time_e_s: Option<f64>,
    pub time_c_s: Option<f64>,
    pub solver: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solution: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checks_passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checks: Option<Vec<CheckJson>>,
    pub audit: AuditJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckJson {
    pub iteration: u64,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditJson {
    pub solves: u64,
    pub max_primal_residual: f64,
    pub max_dual_residual: f64,
    pub max_gap: f64,
    pub min_eigenvalue_floor: f64,
}

impl From<&SolveAudit> for AuditJson {
    fn from(a: &SolveAudit) -> Self {
        AuditJson {
            solves: a.solves as u64,
            max_primal_residual: a.max_primal_residual,
            max_dual_residual: a.max_dual_residual,
            max_gap: a.max_gap,
            min_eigenvalue_floor: a.min_eigenvalue_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub format: u32,
    pub instance: InstanceIdentity,
    pub points: u64,
    pub value: f64,
    pub minimizer: Vec<[f64; 2]>,
}

/// Aggregated benchmark output. Cell means are on the application scale
/// (offset added, maximized quantities negated) and cover only the reps
/// that terminated with a certified gap; other reps count as failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: u32,
    pub suite: String,
    pub epsilon: f64,
    pub reps: u64,
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub label: String,
    pub reps: u64,
    pub failures: u64,
    pub obj_val: Option<f64>,
    pub bound_e: Option<f64>,
    pub bound_c: Option<f64>,
    pub cld_gap: Option<f64>,
    pub iterations: Option<f64>,
    pub time_s: Option<f64>,
    pub time_e_s: Option<f64>,
    pub time_c_s: Option<f64>,
}

/// Drops non-finite values, which JSON cannot represent.
pub fn json_f64(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn complex_pairs(x: &CVector) -> Vec<[f64; 2]> {
    x.iter().map(|z| [z.re, z.im]).collect()
}

/// Serializes an SNR that may be infinite (the noiseless case) as either a
/// number or the strings `"inf"` / `"-inf"`.
mod maybe_infinite {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    _ => Err(E::custom("expected \"inf\" or \"-inf\"")),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn roundtrip(file: &InstanceFile) {
        let text = serde_json::to_string_pretty(file).unwrap();
        let back: InstanceFile = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, file, "round trip changed the file:\n{text}");
    }

    #[test]
    fn instance_files_round_trip_exactly() {
        roundtrip(&InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Mimo {
                m: 8,
                n: 6,
                constellation: 4,
                snr_db: 15.0,
                seed: 1,
            },
        });
        roundtrip(&InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Mimo {
                m: 4,
                n: 4,
                constellation: 2,
                snr_db: f64::INFINITY,
                seed: 3,
            },
        });
        roundtrip(&InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Radar {
                n: 7,
                rho: Some(0.35),
                fd_tr: 0.15,
                delta_angle: PI / 6.0,
                seed: 3,
                reference: None,
            },
        });
        roundtrip(&InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Vb { m: 5, n: 5, power: Some(vec![1.0, 2.0, 3.0, 4.0, 5.0]), seed: 7 },
        });
    }

    #[test]
    fn raw_problems_round_trip_through_the_model() {
        let json = ProblemJson {
            n: 2,
            q: vec![
                vec![[1.0, 0.0], [0.25, -0.5]],
                vec![[0.25, 0.5], [2.0, 0.0]],
            ],
            c: vec![[-1.0, 0.0], [0.0, 0.5]],
            bounds: vec![[1.0, 1.0], [0.25, 2.0]],
            args: vec![
                ArgJson::Discrete { angles: vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0] },
                ArgJson::Interval { lo: 0.5, hi: 1.75 },
            ],
        };
        let p = json.to_problem().unwrap();
        assert_eq!(ProblemJson::from_problem(&p), json);
        roundtrip(&InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::RawCqp { problem: json },
        });
    }

    #[test]
    fn raw_problems_reject_mismatched_dimensions() {
        let json = ProblemJson {
            n: 2,
            q: vec![vec![[1.0, 0.0]]],
            c: vec![[0.0, 0.0], [0.0, 0.0]],
            bounds: vec![[1.0, 1.0], [1.0, 1.0]],
            args: vec![
                ArgJson::Interval { lo: 0.0, hi: 1.0 },
                ArgJson::Interval { lo: 0.0, hi: 1.0 },
            ],
        };
        assert!(json.to_problem().is_err());
    }

    #[test]
    fn generated_detection_instances_use_psk_sets() {
        let file = InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Mimo {
                m: 8,
                n: 6,
                constellation: 4,
                snr_db: 15.0,
                seed: 1,
            },
        };
        let real = file.realize().unwrap();
        assert_eq!(real.kind, "mimo");
        assert!(!real.maximize);
        assert!(real.offset > 0.0);
        for a in real.problem.args() {
            assert_eq!(*a, ArgumentSet::psk(4).unwrap());
        }
    }

    #[test]
    fn radar_files_record_the_halfwidth_and_widen_it() {
        let file = InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Radar {
                n: 7,
                rho: None,
                fd_tr: 0.15,
                delta_angle: PI / 6.0,
                seed: 3,
                reference: None,
            },
        };
        let real = file.realize().unwrap();
        assert_eq!(real.kind, "radar");
        assert!(real.maximize);
        for a in real.problem.args() {
            assert!((a.width() - PI / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beamforming_files_use_full_circles() {
        let file = InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Vb { m: 5, n: 5, power: None, seed: 7 },
        };
        let real = file.realize().unwrap();
        assert!(real.maximize);
        for a in real.problem.args() {
            assert!(a.is_full_circle());
        }
    }

    #[test]
    fn fingerprint_matches_known_vectors() {
        assert_eq!(fingerprint(b""), "cbf29ce484222325");
        assert_eq!(fingerprint(b"a"), "af63dc4c8601ec8c");
        let file = InstanceFile {
            format: FORMAT_VERSION,
            payload: InstancePayload::Vb { m: 1, n: 1, power: None, seed: 0 },
        };
        assert_eq!(file.canonical_hash(), file.canonical_hash());
    }
}
