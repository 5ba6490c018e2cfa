//! Structured generator matrices: Cauchy-Vandermonde (CSA), generalized
//! Reed-Solomon (GRS), row-scaled CSA (QCSA), the dual GRS multipliers,
//! and the erasure-MDS check used to validate them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gf::{Fe, FieldSpec};
use crate::linalg::{LinalgError, Mat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodesError {
    #[error("evaluation points and poles must be pairwise distinct; {0} repeats")]
    PointsNotDistinct(u64),
    #[error("need {need} distinct field elements but q = {q}")]
    InsufficientPoints { need: usize, q: u64 },
    #[error("multiplier {index} is zero")]
    ZeroMultiplier { index: usize },
    #[error("multiplier list has length {got}, expected {expected}")]
    MultiplierLength { got: usize, expected: usize },
    #[error("GRS block with {k} columns exceeds length {n}")]
    TooManyColumns { k: usize, n: usize },
    #[error("dual multipliers do not match the evaluation points")]
    DualMismatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Evaluation points `alpha` (one per server) and Cauchy poles `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodePoints {
    alpha: Vec<Fe>,
    f: Vec<Fe>,
}

impl CodePoints {
    pub fn new(field: FieldSpec, alpha: Vec<Fe>, f: Vec<Fe>) -> Result<Self, CodesError> {
        let need = alpha.len() + f.len();
        if (need as u64) > field.modulus() {
            return Err(CodesError::InsufficientPoints { need, q: field.modulus() });
        }
        let mut seen = std::collections::HashSet::new();
        for x in alpha.iter().chain(&f) {
            if x.modulus() != field.modulus() {
                return Err(LinalgError::ModulusMismatch(field.modulus(), x.modulus()).into());
            }
            if !seen.insert(x.value()) {
                return Err(CodesError::PointsNotDistinct(x.value()));
            }
        }
        Ok(Self { alpha, f })
    }

    /// `alpha_n = n - 1`, `f_l = N + l - 1` (one-based `n`, `l`).
    pub fn default_layout(field: FieldSpec, n: usize, l: usize) -> Result<Self, CodesError> {
        let alpha = (0..n as u64).map(|v| field.elem(v)).collect();
        let f = (n as u64..(n + l) as u64).map(|v| field.elem(v)).collect();
        if ((n + l) as u64) > field.modulus() {
            return Err(CodesError::InsufficientPoints { need: n + l, q: field.modulus() });
        }
        Self::new(field, alpha, f)
    }

    pub fn alpha(&self) -> &[Fe] {
        &self.alpha
    }

    pub fn f(&self) -> &[Fe] {
        &self.f
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn field(&self) -> FieldSpec {
        self.alpha[0].field()
    }

    /// The same points restricted to the first `l` poles.
    pub fn with_poles(&self, l: usize) -> CodePoints {
        CodePoints { alpha: self.alpha.clone(), f: self.f[..l.min(self.f.len())].to_vec() }
    }
}

/// Row multipliers for the two instances: `u` and its GRS dual `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Multipliers {
    u: Vec<Fe>,
    v: Vec<Fe>,
}

impl Multipliers {
    pub fn new(alpha: &[Fe], u: Vec<Fe>) -> Result<Self, CodesError> {
        let v = dual_multipliers(alpha, &u)?;
        Ok(Self { u, v })
    }

    /// Accepts an explicit pair after recomputing `v` from `u`.
    pub fn from_pair(alpha: &[Fe], u: Vec<Fe>, v: Vec<Fe>) -> Result<Self, CodesError> {
        if dual_multipliers(alpha, &u)? != v {
            return Err(CodesError::DualMismatch);
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &[Fe] {
        &self.u
    }

    pub fn v(&self) -> &[Fe] {
        &self.v
    }
}

/// `v_n = (u_n * prod_{i != n} (alpha_n - alpha_i))^{-1}`.
pub fn dual_multipliers(alpha: &[Fe], u: &[Fe]) -> Result<Vec<Fe>, CodesError> {
    if u.len() != alpha.len() {
        return Err(CodesError::MultiplierLength { got: u.len(), expected: alpha.len() });
    }
    alpha
        .iter()
        .zip(u)
        .enumerate()
        .map(|(n, (&an, &un))| {
            if un.is_zero() {
                return Err(CodesError::ZeroMultiplier { index: n });
            }
            let prod = alpha
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != n)
                .fold(un, |acc, (_, &ai)| acc * (an - ai));
            prod.inv().map_err(|_| CodesError::PointsNotDistinct(an.value()))
        })
        .collect()
}

/// `N x (L + vdm_cols)`: entries `1/(f_l - alpha_n)` followed by `alpha_n^j`, `j < vdm_cols`.
pub fn csa_matrix(points: &CodePoints, vdm_cols: usize) -> Mat {
    let field = points.field();
    let n = points.n();
    let l = points.f.len();
    let mut m = Mat::zeros(field, n, l + vdm_cols);
    for (i, &a) in points.alpha.iter().enumerate() {
        for (j, &fl) in points.f.iter().enumerate() {
            m.set(i, j, (fl - a).inv().expect("poles and points are distinct"));
        }
        for j in 0..vdm_cols {
            m.set(i, l + j, a.pow(j as u64));
        }
    }
    m
}

/// `N x k` GRS generator: entry `(n, j) = beta_n * alpha_n^j`.
pub fn grs_matrix(alpha: &[Fe], beta: &[Fe], k: usize) -> Result<Mat, CodesError> {
    let n = alpha.len();
    if beta.len() != n {
        return Err(CodesError::MultiplierLength { got: beta.len(), expected: n });
    }
    if k > n {
        return Err(CodesError::TooManyColumns { k, n });
    }
    if let Some(index) = beta.iter().position(|b| b.is_zero()) {
        return Err(CodesError::ZeroMultiplier { index });
    }
    let field = alpha.first().map(|a| a.field()).ok_or(CodesError::InsufficientPoints { need: 1, q: 0 })?;
    let mut m = Mat::zeros(field, n, k);
    for i in 0..n {
        for j in 0..k {
            m.set(i, j, beta[i] * alpha[i].pow(j as u64));
        }
    }
    Ok(m)
}

/// `Diag(beta) * CSA`.
pub fn qcsa_matrix(points: &CodePoints, beta: &[Fe], vdm_cols: usize) -> Result<Mat, CodesError> {
    if beta.len() != points.n() {
        return Err(CodesError::MultiplierLength { got: beta.len(), expected: points.n() });
    }
    if let Some(index) = beta.iter().position(|b| b.is_zero()) {
        return Err(CodesError::ZeroMultiplier { index });
    }
    Ok(csa_matrix(points, vdm_cols).scale_rows(beta)?)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MdsMode {
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, Copy)]
pub struct MdsOptions {
    /// Largest `N` checked exhaustively.
    pub exhaustive_max_n: usize,
    /// Subsets drawn per check above that bound.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        Self { exhaustive_max_n: 16, samples: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MdsReport {
    pub holds: bool,
    /// Offending row set, when one was found.
    pub witness: Option<Vec<usize>>,
    pub mode: MdsMode,
    pub subsets_checked: usize,
}

/// True iff every `(N - e)`-row submatrix of the `N x (N - e)` matrix `m` is invertible.
pub fn check_mds_erasure(m: &Mat, e: usize, opts: &MdsOptions) -> Result<MdsReport, CodesError> {
    let n = m.rows();
    if e > n || m.cols() != n - e {
        return Err(LinalgError::DimensionMismatch { op: "check_mds_erasure", left: m.shape(), right: (n, n.saturating_sub(e)) }.into());
    }
    let k = n - e;
    let singular = |rows: &Vec<usize>| !m.select_rows(rows).map(|s| s.is_invertible()).unwrap_or(false);
    if n <= opts.exhaustive_max_n {
        let subsets = k_subsets(n, k);
        let witness = subsets.par_iter().find_first(|s| singular(s)).cloned();
        Ok(MdsReport { holds: witness.is_none(), witness, mode: MdsMode::Exhaustive, subsets_checked: subsets.len() })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let subsets: Vec<Vec<usize>> = (0..opts.samples)
            .map(|_| {
                let mut s = sample(&mut rng, n, k).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
        let witness = subsets.par_iter().find_first(|s| singular(s)).cloned();
        Ok(MdsReport { holds: witness.is_none(), witness, mode: MdsMode::Sampled, subsets_checked: subsets.len() })
    }
}
