//! Declarative choice of covariance estimator.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::baselines::{cv_eigenvalue_shrinkage, sample_estimator, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::kbahc::{kbahc_covariance_orders, BootstrapPlan, DEFAULT_REPLICAS};
use crate::matrix::SymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorSpec {
    Sample,
    Cv { folds: usize },
    KBahc { k: usize, m: usize, seed: u64 },
}

impl EstimatorSpec {
    pub fn kbahc(k: usize) -> Self {
        EstimatorSpec::KBahc {
            k,
            m: DEFAULT_REPLICAS,
            seed: 0,
        }
    }

    pub fn cv() -> Self {
        EstimatorSpec::Cv { folds: DEFAULT_FOLDS }
    }

    /// Column label used in reports: `Sample`, `CV`, `{k}-BAHC`.
    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn order(&self) -> Option<usize> {
        match self {
            EstimatorSpec::KBahc { k, .. } => Some(*k),
            _ => None,
        }
    }

    /// Same estimator with its bootstrap seed replaced.
    pub fn with_seed(self, new_seed: u64) -> Self {
        match self {
            EstimatorSpec::KBahc { k, m, .. } => EstimatorSpec::KBahc { k, m, seed: new_seed },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorSpec::Cv { folds } if folds < 2 => {
                Err(Error::InvalidInput(format!("CV needs at least 2 folds, got {folds}")))
            }
            EstimatorSpec::KBahc { k, .. } if k < 1 => {
                Err(Error::InvalidInput(format!("k-BAHC order must be >= 1, got {k}")))
            }
            EstimatorSpec::KBahc { m, .. } if m < 1 => {
                Err(Error::InvalidInput("k-BAHC needs at least one replica".into()))
            }
            _ => Ok(()),
        }
    }

    /// Covariance estimate from an `n × t` return matrix.
    pub fn estimate(&self, r: &DMatrix<f64>) -> Result<SymmetricMatrix> {
        estimate_all(std::slice::from_ref(self), r).remove(0)
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Sample => write!(f, "Sample"),
            EstimatorSpec::Cv { .. } => write!(f, "CV"),
            EstimatorSpec::KBahc { k, .. } => write!(f, "{k}-BAHC"),
        }
    }
}

/// Parses `sample`, `cv`, `cv:<folds>`, `kbahc:<k>` or `kbahc:<k>:<m>:<seed>`.
impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| -> Result<u64> {
            p.parse()
                .map_err(|_| Error::InvalidInput(format!("bad number {p:?} in estimator {s:?}")))
        };
        let spec = match parts.as_slice() {
            [name] if name.eq_ignore_ascii_case("sample") => EstimatorSpec::Sample,
            [name] if name.eq_ignore_ascii_case("cv") => EstimatorSpec::cv(),
            [name, folds] if name.eq_ignore_ascii_case("cv") => EstimatorSpec::Cv {
                folds: num(folds)? as usize,
            },
            [name, k] if name.eq_ignore_ascii_case("kbahc") => EstimatorSpec::kbahc(num(k)? as usize),
            [name, k, m, seed] if name.eq_ignore_ascii_case("kbahc") => EstimatorSpec::KBahc {
                k: num(k)? as usize,
                m: num(m)? as usize,
                seed: num(seed)?,
            },
            _ => return Err(Error::InvalidInput(format!("unknown estimator {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Estimates for several specs on the same data. k-BAHC specs sharing
/// `(m, seed)` reuse one set of bootstrap replicas.
pub fn estimate_all(specs: &[EstimatorSpec], r: &DMatrix<f64>) -> Vec<Result<SymmetricMatrix>> {
    let mut out: Vec<Option<Result<SymmetricMatrix>>> = (0..specs.len()).map(|_| None).collect();
    let mut groups: Vec<((usize, u64), Vec<usize>)> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if let Err(e) = spec.validate() {
            out[i] = Some(Err(e));
            continue;
        }
        match *spec {
            EstimatorSpec::Sample => out[i] = Some(sample_estimator(r)),
            EstimatorSpec::Cv { folds } => out[i] = Some(cv_eigenvalue_shrinkage(r, folds)),
            EstimatorSpec::KBahc { m, seed, .. } => match groups.iter_mut().find(|(key, _)| *key == (m, seed)) {
                Some((_, members)) => members.push(i),
                None => groups.push(((m, seed), vec![i])),
            },
        }
    }
    for ((m, seed), members) in groups {
        let orders: Vec<usize> = members.iter().map(|&i| specs[i].order().expect("k-BAHC")).collect();
        match kbahc_covariance_orders(r, &orders, &BootstrapPlan::new(m, seed)) {
            Ok(mats) => {
                for (i, mat) in members.into_iter().zip(mats) {
                    out[i] = Some(Ok(mat));
                }
            }
            Err(e) => {
                for i in members {
                    out[i] = Some(Err(e.replicate()));
                }
            }
        }
    }
    out.into_iter().map(|o| o.expect("every spec handled")).collect()
}
