//! Verification suites.
//!
//! Each suite returns a [`VerifyReport`] that serializes to JSON and carries
//! enough data (parameters, seed, witnesses) to replay a failure. Security
//! and privacy come in two tiers: exact histogram equality by enumerating
//! every noise realization at tiny scale, and the invertibility of the
//! noise-coefficient matrices at any scale.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::codes::{check_mds_erasure, dual_multipliers, grs_matrix, k_subsets, CodesError, MdsOptions};
use crate::gf::{Fe, FieldSpec};
use crate::linalg::Mat;
use crate::nsumbox::{colspan_swt_bounds, colspan_swt_bounds_sampled, sso_violation, BoxError, NSumBoxSpec, DEFAULT_ENUM_CAP};
use crate::protocol::{
    build_gh, classical_decode, collect_answers, declared_erasures, encode_storage, encode_storage_with_noise,
    inject_erasures, make_queries, make_queries_with_noise, plan_shape, query_noise_coefficients, rate,
    split_output, storage_noise_coefficients, MessageStore, Noise, ProtocolError, SchemeParams, ServerDelta,
};

/// Environment variable overriding [`VerifyConfig::enum_cap`].
pub const ENUM_CAP_ENV: &str = "QECSA_ENUM_CAP";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("enumeration of {states} states exceeds cap {cap}")]
    EnumerationCap { states: u128, cap: u64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Box(#[from] BoxError),
    #[error(transparent)]
    Codes(#[from] CodesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    Exhaustive,
    Sampled,
    RankCondition,
}

/// Deliberate breakage used to check that suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Builds the erasure columns of `H` for the wrong servers.
    WrongErasureColumn,
    /// Forces the highest-order storage noise term to zero.
    DropStorageNoise,
    /// Forces the highest-order query noise term to zero.
    DropQueryNoise,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub enum_cap: u64,
    /// Bound on `q^(2|erased|)` for exhaustive delta sweeps.
    pub delta_cap: u64,
    pub delta_samples: usize,
    /// Noise seeds per correctness cell.
    pub seeds: usize,
    /// Trials in sampled mode.
    pub samples: usize,
    pub seed: u64,
    pub max_witnesses: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            enum_cap: DEFAULT_ENUM_CAP,
            delta_cap: 10_000,
            delta_samples: 100,
            seeds: 20,
            samples: 500,
            seed: 0,
            max_witnesses: 16,
        }
    }
}

impl VerifyConfig {
    /// Defaults, with `QECSA_ENUM_CAP` applied when set to an integer.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Some(cap) = std::env::var(ENUM_CAP_ENV).ok().and_then(|v| v.trim().parse().ok()) {
            cfg.enum_cap = cap;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub kind: String,
    pub detail: Value,
}

impl Witness {
    fn new(kind: &str, detail: Value) -> Self {
        Self { kind: kind.to_string(), detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub params: Value,
    pub mode: VerifyMode,
    pub seed: u64,
    /// Decodes, enumerated states or checked matrices, depending on the suite.
    pub trials: u64,
    pub pass: bool,
    pub failures: u64,
    pub witnesses: Vec<Witness>,
    pub metrics: Value,
}

struct ReportBuilder {
    suite: &'static str,
    params: Value,
    mode: VerifyMode,
    seed: u64,
    trials: u64,
    failures: u64,
    witnesses: Vec<Witness>,
    max_witnesses: usize,
    metrics: Value,
}

impl ReportBuilder {
    fn new(suite: &'static str, params: Value, mode: VerifyMode, cfg: &VerifyConfig) -> Self {
        Self {
            suite,
            params,
            mode,
            seed: cfg.seed,
            trials: 0,
            failures: 0,
            witnesses: Vec::new(),
            max_witnesses: cfg.max_witnesses.max(1),
            metrics: json!({}),
        }
    }

    fn fail(&mut self, w: Witness) {
        self.failures += 1;
        if self.witnesses.len() < self.max_witnesses {
            self.witnesses.push(w);
        }
    }

    fn finish(self) -> VerifyReport {
        VerifyReport {
            suite: self.suite.to_string(),
            params: self.params,
            mode: self.mode,
            seed: self.seed,
            trials: self.trials,
            pass: self.witnesses.is_empty(),
            failures: self.failures,
            witnesses: self.witnesses,
            metrics: self.metrics,
        }
    }
}

fn params_json(params: &SchemeParams) -> Value {
    serde_json::to_value(params).unwrap_or(Value::Null)
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

fn cell_seed(base: u64, cell: usize, run: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((cell as u64) << 32) ^ run as u64
}

fn pow_states(q: u64, dims: usize) -> u128 {
    (0..dims).try_fold(1u128, |acc, _| acc.checked_mul(q as u128)).unwrap_or(u128::MAX)
}

/// All erasure sets of size `0..=e`, smallest first.
fn erasure_sets(n: usize, e: usize) -> Vec<Vec<usize>> {
    (0..=e).flat_map(|s| k_subsets(n, s)).collect()
}

/// The same set rotated by one server, used for the wrong-column fault.
fn rotated(set: &[usize], n: usize) -> Vec<usize> {
    let mut r: Vec<usize> = set.iter().map(|&s| (s + 1) % n).collect();
    r.sort_unstable();
    r
}

struct CellOutcome {
    trials: u64,
    failures: Vec<Witness>,
}

/// Exact decoding over `theta`, erasure sets of size `<= E`, noise seeds
/// and erasure offsets. Exhaustive mode sweeps every offset when
/// `q^(2|erased|) <= delta_cap` and samples `delta_samples` otherwise;
/// sampled mode draws `samples` random cells.
pub fn verify_correctness(params: &SchemeParams, mode: VerifyMode, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    verify_correctness_with(params, mode, cfg, Fault::None)
}

pub fn verify_correctness_with(
    params: &SchemeParams,
    mode: VerifyMode,
    cfg: &VerifyConfig,
    fault: Fault,
) -> Result<VerifyReport, VerifyError> {
    let mode = if mode == VerifyMode::RankCondition { VerifyMode::Exhaustive } else { mode };
    let mut report = ReportBuilder::new("correctness", params_json(params), mode, cfg);
    let field = params.field;
    let q = field.modulus();

    let cells: Vec<(usize, Vec<usize>, usize)> = match mode {
        VerifyMode::Exhaustive => {
            let sets = erasure_sets(params.n, params.e);
            (0..params.k)
                .flat_map(|theta| sets.iter().cloned().map(move |s| (theta, s)))
                .flat_map(|(theta, s)| (0..cfg.seeds).map(move |r| (theta, s.clone(), r)))
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..cfg.samples)
                .map(|r| {
                    let theta = rng.gen_range(0..params.k);
                    let size = rng.gen_range(0..=params.e);
                    let mut set = rand::seq::index::sample(&mut rng, params.n, size).into_vec();
                    set.sort_unstable();
                    (theta, set, r)
                })
                .collect()
        }
    };

    let outcomes: Vec<Result<CellOutcome, VerifyError>> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, (theta, set, run))| correctness_cell(params, mode, cfg, fault, *theta, set, cell_seed(cfg.seed, idx, *run), q))
        .collect();
    for o in outcomes {
        let o = o?;
        report.trials += o.trials;
        for w in o.failures {
            report.fail(w);
        }
    }
    report.metrics = json!({
        "cells": cells.len(),
        "delivered_symbols": params.delivered_symbols(),
        "rate": params.achieved_rate().to_string(),
    });
    Ok(report.finish())
}

#[allow(clippy::too_many_arguments)]
fn correctness_cell(
    params: &SchemeParams,
    mode: VerifyMode,
    cfg: &VerifyConfig,
    fault: Fault,
    theta: usize,
    set: &[usize],
    seed: u64,
    q: u64,
) -> Result<CellOutcome, VerifyError> {
    let field = params.field;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = MessageStore::random(params, &mut rng);
    let shares = encode_storage(&store, params, &mut rng);
    let queries = make_queries(theta, params, &mut rng)?;
    let answers = collect_answers(params, &shares, &queries);
    let expected = store.desired(theta);
    let mut out = CellOutcome { trials: 0, failures: Vec::new() };

    if !params.regime.is_quantum() {
        let responsive: Vec<usize> = (0..params.n).filter(|s| !set.contains(s)).collect();
        let dec = classical_decode(params, 0, &answers.per_instance[0], &responsive)?;
        out.trials += 1;
        if dec.w != expected[0] {
            out.failures.push(Witness::new(
                "decode_mismatch",
                json!({"theta": theta + 1, "erasure_set": one_based(set), "seed": seed, "expected": expected, "got": [dec.w]}),
            ));
        }
        return Ok(out);
    }

    let declared = declared_erasures(params, set)?;
    let box_set = if fault == Fault::WrongErasureColumn { rotated(&declared, params.n) } else { declared.clone() };
    let (g, h) = build_gh(params, &box_set)?;
    let nbox = match NSumBoxSpec::build(g, h) {
        Ok(b) => b,
        Err(e) => {
            out.failures.push(Witness::new(
                "invalid_box",
                json!({"erasure_set": one_based(set), "box_set": one_based(&box_set), "error": e.to_string()}),
            ));
            return Ok(out);
        }
    };

    let s = set.len();
    let delta_states = pow_states(q, 2 * s);
    let deltas: Vec<Vec<(Fe, Fe)>> = if mode == VerifyMode::Exhaustive && delta_states <= cfg.delta_cap as u128 {
        (0..delta_states as u64)
            .map(|mut idx| {
                let mut digits = Vec::with_capacity(2 * s);
                for _ in 0..2 * s {
                    digits.push(field.elem(idx % q));
                    idx /= q;
                }
                (0..s).map(|j| (digits[j], digits[s + j])).collect()
            })
            .collect()
    } else {
        let count = if mode == VerifyMode::Exhaustive { cfg.delta_samples } else { 1 };
        (0..count)
            .map(|_| (0..s).map(|_| (field.elem(rng.gen_range(0..q)), field.elem(rng.gen_range(0..q)))).collect())
            .collect()
    };

    for d in deltas {
        let applied: Vec<ServerDelta> =
            set.iter().zip(&d).map(|(&server, &(first, second))| ServerDelta { server, first, second }).collect();
        let x = inject_erasures(&answers, &applied)?;
        let y = nbox.apply(&x)?;
        let dec = split_output(&y, params, &box_set)?;
        out.trials += 1;
        let want_delta: Vec<(Fe, Fe)> = declared
            .iter()
            .map(|srv| {
                applied.iter().find(|a| a.server == *srv).map_or((field.zero(), field.zero()), |a| (a.first, a.second))
            })
            .collect();
        let got_delta: Vec<(Fe, Fe)> = dec.deltas.iter().map(|a| (a.first, a.second)).collect();
        if dec.w1 != expected[0] || dec.w2 != expected[1] || got_delta != want_delta {
            out.failures.push(Witness::new(
                "decode_mismatch",
                json!({
                    "theta": theta + 1,
                    "erasure_set": one_based(set),
                    "declared": one_based(&declared),
                    "seed": seed,
                    "deltas": applied,
                    "expected": expected,
                    "got": [dec.w1, dec.w2],
                    "recovered_deltas": got_delta,
                }),
            ));
            if out.failures.len() >= cfg.max_witnesses {
                break;
            }
        }
    }
    Ok(out)
}

/// Noise rows that vary during enumeration; dropped rows stay zero.
struct NoiseLayout {
    shape: Vec<Vec<usize>>,
    free: Vec<(usize, usize, usize)>,
    k: usize,
}

impl NoiseLayout {
    fn new(shape: Vec<Vec<usize>>, k: usize, drop_top: bool) -> Self {
        let mut free = Vec::new();
        for (i, ls) in shape.iter().enumerate() {
            for (l, &count) in ls.iter().enumerate() {
                let kept = if drop_top { count.saturating_sub(1) } else { count };
                free.extend((0..kept).map(|j| (i, l, j)));
            }
        }
        Self { shape, free, k }
    }

    fn dims(&self) -> usize {
        self.free.len() * self.k
    }

    fn realize(&self, field: FieldSpec, mut idx: u64) -> Noise {
        let q = field.modulus();
        let mut vals: BTreeMap<(usize, usize, usize), Vec<Fe>> = BTreeMap::new();
        for &slot in &self.free {
            let row = (0..self.k)
                .map(|_| {
                    let v = field.elem(idx % q);
                    idx /= q;
                    v
                })
                .collect();
            vals.insert(slot, row);
        }
        Noise::from_fn(&self.shape, self.k, |i, l, j, kk| vals.get(&(i, l, j)).map_or(field.zero(), |r| r[kk]))
    }
}

type Histogram = BTreeMap<Vec<u64>, u64>;

fn check_cap(states: u128, cfg: &VerifyConfig) -> Result<u64, VerifyError> {
    if states > cfg.enum_cap as u128 {
        Err(VerifyError::EnumerationCap { states, cap: cfg.enum_cap })
    } else {
        Ok(states as u64)
    }
}

/// Two distinct message stores derived from the seed.
fn distinct_stores(params: &SchemeParams, seed: u64) -> (MessageStore, MessageStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = MessageStore::random(params, &mut rng);
    let mut b = MessageStore::random(params, &mut rng);
    if a == b {
        let first = &mut b.blocks[0][0][0];
        *first += params.field.one();
    }
    (a, b)
}

/// Any `X` colluding servers see the same share distribution whatever is stored.
///
/// Exhaustive mode compares integer histograms of the joint shares over
/// every storage-noise realization for two distinct message stores.
/// Rank-condition mode checks that `[(f_l - alpha_n)^x]` is invertible for
/// every `X`-subset and every block. Sampled mode falls back to the rank
/// condition.
pub fn verify_x_security(params: &SchemeParams, mode: VerifyMode, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    verify_x_security_with(params, mode, cfg, Fault::None)
}

pub fn verify_x_security_with(
    params: &SchemeParams,
    mode: VerifyMode,
    cfg: &VerifyConfig,
    fault: Fault,
) -> Result<VerifyReport, VerifyError> {
    let drop = fault == Fault::DropStorageNoise;
    let subsets = k_subsets(params.n, params.x);
    if mode != VerifyMode::Exhaustive {
        let mut report = ReportBuilder::new("x_security", params_json(params), VerifyMode::RankCondition, cfg);
        for s in &subsets {
            for (i, plan) in params.instances.iter().enumerate() {
                for l in 0..plan.l_symbols {
                    let mut c = storage_noise_coefficients(params, l, s);
                    if drop && params.x > 0 {
                        for r in 0..c.rows() {
                            c.set(r, params.x - 1, params.field.zero());
                        }
                    }
                    report.trials += 1;
                    let rank = c.rank();
                    if rank < params.x {
                        report.fail(Witness::new(
                            "singular_noise_coefficients",
                            json!({"servers": one_based(s), "instance": i + 1, "block": l + 1, "rank": rank, "matrix": c}),
                        ));
                    }
                }
            }
        }
        return Ok(report.finish());
    }

    let mut report = ReportBuilder::new("x_security", params_json(params), VerifyMode::Exhaustive, cfg);
    let layout = NoiseLayout::new(Noise::storage_shape(params), params.k, drop);
    let states = check_cap(pow_states(params.field.modulus(), layout.dims()), cfg)?;
    let (w_a, w_b) = distinct_stores(params, cfg.seed);
    let histograms = |store: &MessageStore| -> Vec<Histogram> {
        let mut hs = vec![Histogram::new(); subsets.len()];
        for idx in 0..states {
            let shares = encode_storage_with_noise(store, params, &layout.realize(params.field, idx));
            for (h, s) in hs.iter_mut().zip(&subsets) {
                let key: Vec<u64> =
                    s.iter().flat_map(|&n| shares[n].vectors.iter().flatten().flatten().map(|v| v.value())).collect();
                *h.entry(key).or_default() += 1;
            }
        }
        hs
    };
    let (ha, hb) = rayon::join(|| histograms(&w_a), || histograms(&w_b));
    report.trials = 2 * states;
    for ((s, a), b) in subsets.iter().zip(&ha).zip(&hb) {
        if a != b {
            let diff = a.iter().find(|(key, c)| b.get(*key) != Some(c)).map(|(key, c)| (key.clone(), *c));
            report.fail(Witness::new(
                "share_distribution_differs",
                json!({"servers": one_based(s), "first_difference": diff, "support": [a.len(), b.len()]}),
            ));
        }
    }
    report.metrics = json!({"noise_dims": layout.dims(), "states": states, "subsets": subsets.len()});
    Ok(report.finish())
}

/// Any `T` colluding servers see the same query distribution for every `theta`.
///
/// Exhaustive mode compares integer histograms across all `theta`.
/// Rank-condition mode checks that `[(f_l - alpha_n)^(t+1)]` is invertible
/// for every `T_i`-subset of every instance. Sampled mode falls back to the
/// rank condition.
pub fn verify_t_privacy(params: &SchemeParams, mode: VerifyMode, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    verify_t_privacy_with(params, mode, cfg, Fault::None)
}

pub fn verify_t_privacy_with(
    params: &SchemeParams,
    mode: VerifyMode,
    cfg: &VerifyConfig,
    fault: Fault,
) -> Result<VerifyReport, VerifyError> {
    let drop = fault == Fault::DropQueryNoise;
    if mode != VerifyMode::Exhaustive {
        let mut report = ReportBuilder::new("t_privacy", params_json(params), VerifyMode::RankCondition, cfg);
        for (i, plan) in params.instances.iter().enumerate() {
            let ti = plan.t_private;
            for s in k_subsets(params.n, ti) {
                for l in 0..plan.l_symbols {
                    let mut c = query_noise_coefficients(params, i, l, &s);
                    if drop && ti > 0 {
                        for r in 0..c.rows() {
                            c.set(r, ti - 1, params.field.zero());
                        }
                    }
                    report.trials += 1;
                    let rank = c.rank();
                    if rank < ti {
                        report.fail(Witness::new(
                            "singular_noise_coefficients",
                            json!({"servers": one_based(&s), "instance": i + 1, "block": l + 1, "rank": rank, "matrix": c}),
                        ));
                    }
                }
            }
        }
        return Ok(report.finish());
    }

    let mut report = ReportBuilder::new("t_privacy", params_json(params), VerifyMode::Exhaustive, cfg);
    let subsets = k_subsets(params.n, params.t);
    let layout = NoiseLayout::new(Noise::query_shape(params), params.k, drop);
    let states = check_cap(pow_states(params.field.modulus(), layout.dims()), cfg)?;
    let per_theta: Vec<Result<Vec<Histogram>, VerifyError>> = (0..params.k)
        .into_par_iter()
        .map(|theta| {
            let mut hs = vec![Histogram::new(); subsets.len()];
            for idx in 0..states {
                let queries = make_queries_with_noise(theta, params, &layout.realize(params.field, idx))?;
                for (h, s) in hs.iter_mut().zip(&subsets) {
                    let key: Vec<u64> =
                        s.iter().flat_map(|&n| queries[n].vectors.iter().flatten().flatten().map(|v| v.value())).collect();
                    *h.entry(key).or_default() += 1;
                }
            }
            Ok(hs)
        })
        .collect();
    let per_theta: Vec<Vec<Histogram>> = per_theta.into_iter().collect::<Result<_, _>>()?;
    report.trials = states * params.k as u64;
    for theta in 1..params.k {
        for (si, s) in subsets.iter().enumerate() {
            if per_theta[theta][si] != per_theta[0][si] {
                report.fail(Witness::new(
                    "query_distribution_differs",
                    json!({"servers": one_based(s), "theta": [1, theta + 1],
                           "support": [per_theta[0][si].len(), per_theta[theta][si].len()]}),
                ));
            }
        }
    }
    report.metrics = json!({"noise_dims": layout.dims(), "states": states, "subsets": subsets.len()});
    Ok(report.finish())
}

/// The three facts behind full rank of `[G H]`, each checked on its own:
/// (a) every nonzero vector of `colspan([G H_left])` has symplectic weight
/// at least `E + 1`, (b) every nonzero vector of `colspan(H_right)` has
/// weight at most `E`, (c) `rank([G H]) = 2N`.
pub fn verify_lemma1(params: &SchemeParams, erasure_set: &[usize], cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    verify_lemma1_mode(params, erasure_set, VerifyMode::Exhaustive, cfg)
}

/// [`verify_lemma1`] with a choice of mode. Sampled mode draws `samples`
/// random span vectors, so it can find violations but not rule them out.
pub fn verify_lemma1_mode(
    params: &SchemeParams,
    erasure_set: &[usize],
    mode: VerifyMode,
    cfg: &VerifyConfig,
) -> Result<VerifyReport, VerifyError> {
    let declared = declared_erasures(params, erasure_set)?;
    let (g, h) = build_gh(params, &declared)?;
    let mut report = lemma1_impl(&g, &h, params.e, mode, cfg)?;
    report.params = json!({"scheme": params_json(params), "erasure_set": one_based(&declared)});
    Ok(report)
}

/// [`verify_lemma1`] on explicit matrices; the last `2e` columns of `h` are the erasure block.
pub fn verify_lemma1_on(g: &Mat, h: &Mat, e: usize, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    lemma1_impl(g, h, e, VerifyMode::Exhaustive, cfg)
}

fn lemma1_impl(g: &Mat, h: &Mat, e: usize, mode: VerifyMode, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let n = g.cols();
    let mode = if mode == VerifyMode::Sampled { mode } else { VerifyMode::Exhaustive };
    let mut report = ReportBuilder::new("lemma1", Value::Null, mode, cfg);
    let split = h.cols().saturating_sub(2 * e);
    let code = Mat::hstack(&[g, &h.col_range(0, split).map_err(BoxError::from)?]).map_err(BoxError::from)?;
    let basis = h.col_range(split, h.cols()).map_err(BoxError::from)?;
    let (code_bounds, basis_bounds) = if mode == VerifyMode::Sampled {
        (
            colspan_swt_bounds_sampled(&code, cfg.samples, cfg.seed)?,
            colspan_swt_bounds_sampled(&basis, cfg.samples, cfg.seed.wrapping_add(1))?,
        )
    } else {
        (colspan_swt_bounds(&code, cfg.enum_cap)?, colspan_swt_bounds(&basis, cfg.enum_cap)?)
    };
    let rank = Mat::hstack(&[g, h]).map_err(BoxError::from)?.rank();
    report.trials = (code_bounds.combinations + basis_bounds.combinations) as u64;
    if code_bounds.min.is_some_and(|w| w < e + 1) {
        report.fail(Witness::new("code_weight_too_small", json!({"min_swt": code_bounds.min, "required": e + 1})));
    }
    if basis_bounds.max.is_some_and(|w| w > e) {
        report.fail(Witness::new("basis_weight_too_large", json!({"max_swt": basis_bounds.max, "allowed": e})));
    }
    if rank != 2 * n {
        report.fail(Witness::new("rank_deficient", json!({"rank": rank, "required": 2 * n})));
    }
    report.metrics = json!({
        "min_swt_code": code_bounds.min,
        "max_swt_basis": basis_bounds.max,
        "rank": rank,
        "e": e,
    });
    Ok(report.finish())
}

/// `sum_n u_n v_n alpha_n^m = 0` for `m <= N-2` (and `= 1` at `m = N-1`),
/// and `Gamma_top^T Gamma_bottom = 0`.
pub fn verify_duality(field: FieldSpec, alpha: &[Fe], u: &[Fe], cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let n = alpha.len();
    let mut report = ReportBuilder::new(
        "duality",
        json!({"q": field.modulus(), "alpha": alpha, "u": u}),
        VerifyMode::Exhaustive,
        cfg,
    );
    let v = dual_multipliers(alpha, u)?;
    let sums: Vec<Fe> = (0..n)
        .map(|m| {
            alpha.iter().zip(u).zip(&v).fold(field.zero(), |acc, ((&a, &un), &vn)| acc + un * vn * a.pow(m as u64))
        })
        .collect();
    for (m, s) in sums.iter().enumerate() {
        report.trials += 1;
        let want = if m + 1 == n { field.one() } else { field.zero() };
        if *s != want {
            report.fail(Witness::new("duality_sum", json!({"m": m, "sum": s, "expected": want})));
        }
    }
    let top = grs_matrix(alpha, u, n.div_ceil(2))?;
    let bottom = grs_matrix(alpha, &v, n / 2)?;
    let cross = top.transpose().matmul(&bottom).map_err(CodesError::from)?;
    report.trials += 1;
    if !cross.is_zero() {
        report.fail(Witness::new("grs_not_orthogonal", json!({"product": cross})));
    }
    report.metrics = json!({"v": v, "sums": sums});
    Ok(report.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RateCase {
    pub n: usize,
    pub x: usize,
    pub t: usize,
    pub e: usize,
    /// Hand-derived value, when known.
    #[serde(skip)]
    pub expected: Option<Ratio<u64>>,
}

/// Delivered symbols per server of the planned scheme against the rate formula.
pub fn verify_rate_table(cases: &[RateCase], cfg: &VerifyConfig) -> VerifyReport {
    let mut report = ReportBuilder::new("rate_table", json!(cases), VerifyMode::Exhaustive, cfg);
    let mut rows = Vec::new();
    for c in cases {
        report.trials += 1;
        let formula = rate(c.n, c.x, c.t, c.e);
        let planned = plan_shape(c.n, c.x, c.t, c.e);
        match (formula, planned) {
            (Ok(r), Ok((regime, shape))) => {
                let delivered: usize = shape.iter().map(|s| s.1).sum();
                let achieved = Ratio::new(delivered as u64, c.n as u64);
                rows.push(json!({"case": [c.n, c.x, c.t, c.e], "regime": regime.to_string(), "rate": r.to_string()}));
                if achieved != r || c.expected.is_some_and(|want| want != r) {
                    report.fail(Witness::new(
                        "rate_mismatch",
                        json!({"case": [c.n, c.x, c.t, c.e], "formula": r.to_string(), "planned": achieved.to_string(),
                               "expected": c.expected.map(|x| x.to_string())}),
                    ));
                }
            }
            (f, p) => report.fail(Witness::new(
                "rate_error",
                json!({"case": [c.n, c.x, c.t, c.e], "formula": f.err().map(|e| e.to_string()),
                       "planner": p.err().map(|e| e.to_string())}),
            )),
        }
    }
    report.metrics = json!({"rows": rows});
    report.finish()
}

/// `G^T J G = 0`, `rank [G H] = 2N`, `M G = 0`, `M H = I` for every erasure set of size `E`.
pub fn verify_box_algebra(params: &SchemeParams, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let mut report = ReportBuilder::new("box_algebra", params_json(params), VerifyMode::Exhaustive, cfg);
    let sets = k_subsets(params.n, params.e);
    let results: Vec<Result<Vec<Witness>, VerifyError>> = sets
        .par_iter()
        .map(|set| {
            let mut ws = Vec::new();
            let (g, h) = build_gh(params, set)?;
            if let Some((r, c, v)) = sso_violation(&g)? {
                ws.push(Witness::new("not_sso", json!({"erasure_set": one_based(set), "entry": [r, c], "value": v})));
                return Ok(ws);
            }
            match NSumBoxSpec::build(g, h) {
                Ok(b) => {
                    let id = Mat::identity(params.field, params.n);
                    let mg = b.transfer().matmul(b.g()).map_err(BoxError::from)?;
                    let mh = b.transfer().matmul(b.h()).map_err(BoxError::from)?;
                    if !mg.is_zero() || mh != id {
                        ws.push(Witness::new("transfer_identity", json!({"erasure_set": one_based(set), "mg": mg, "mh": mh})));
                    }
                }
                Err(e) => ws.push(Witness::new("invalid_box", json!({"erasure_set": one_based(set), "error": e.to_string()}))),
            }
            Ok(ws)
        })
        .collect();
    for r in results {
        report.trials += 1;
        for w in r? {
            report.fail(w);
        }
    }
    Ok(report.finish())
}

/// Every `(N - E)`-row submatrix of each instance code is invertible.
pub fn verify_mds(params: &SchemeParams, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let mut report = ReportBuilder::new("mds", params_json(params), VerifyMode::Exhaustive, cfg);
    let opts = MdsOptions { seed: cfg.seed, ..MdsOptions::default() };
    let mut modes = Vec::new();
    for i in 0..params.instances.len() {
        let code = params.instance_code(i)?;
        let r = check_mds_erasure(&code, params.e, &opts)?;
        report.trials += r.subsets_checked as u64;
        modes.push(r.mode);
        if let Some(rows) = r.witness {
            report.fail(Witness::new("singular_submatrix", json!({"instance": i + 1, "rows": one_based(&rows)})));
        }
    }
    if modes.contains(&crate::codes::MdsMode::Sampled) {
        report.mode = VerifyMode::Sampled;
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::plan_scheme;

    fn example() -> SchemeParams {
        plan_scheme(4, 2, 1, 1, 1, 5).unwrap()
    }

    fn small_cfg() -> VerifyConfig {
        VerifyConfig { seeds: 2, ..VerifyConfig::default() }
    }

    #[test]
    fn correctness_passes_on_worked_example() {
        let r = verify_correctness(&example(), VerifyMode::Exhaustive, &small_cfg()).unwrap();
        assert!(r.pass, "{:?}", r.witnesses);
        // 2 theta x (1 empty + 4 single) sets x 2 seeds; 25 deltas per single erasure, 1 otherwise
        assert_eq!(r.trials, 2 * 2 * (1 + 4 * 25));
        assert_eq!(r.failures, 0);
    }

    #[test]
    fn correctness_detects_wrong_erasure_column() {
        let r = verify_correctness_with(&example(), VerifyMode::Exhaustive, &small_cfg(), Fault::WrongErasureColumn).unwrap();
        assert!(!r.pass);
        assert!(r.failures > 0);
        assert_eq!(r.witnesses[0].kind, "decode_mismatch");
        assert!(r.witnesses.len() <= small_cfg().max_witnesses);
    }

    #[test]
    fn correctness_sampled_and_degenerate() {
        let cfg = VerifyConfig { samples: 30, ..small_cfg() };
        let r = verify_correctness(&example(), VerifyMode::Sampled, &cfg).unwrap();
        assert!(r.pass);
        assert_eq!((r.mode, r.trials), (VerifyMode::Sampled, 30));
        let p = plan_scheme(4, 2, 1, 1, 0, 7).unwrap();
        assert!(verify_correctness(&p, VerifyMode::Exhaustive, &small_cfg()).unwrap().pass);
        let classical = plan_scheme(10, 2, 1, 1, 3, 17).unwrap();
        assert!(verify_correctness(&classical, VerifyMode::Sampled, &cfg).unwrap().pass);
    }

    #[test]
    fn single_server_share_is_uniform() {
        // K=1, X=1, L=1: each share is W/(f-alpha) + Z, a shift of uniform Z
        let p = plan_scheme(4, 1, 1, 1, 1, 5).unwrap();
        let r = verify_x_security(&p, VerifyMode::Exhaustive, &VerifyConfig::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.metrics["states"], 25);
        let layout = NoiseLayout::new(Noise::storage_shape(&p), 1, false);
        let store = MessageStore::from_fn(&p, |_, _, _| p.field.elem(3));
        let mut hist = [0u32; 5];
        for idx in 0..25 {
            let s = encode_storage_with_noise(&store, &p, &layout.realize(p.field, idx));
            hist[s[0].vectors[0][0][0].value() as usize] += 1;
        }
        assert_eq!(hist, [5; 5]);
    }

    #[test]
    fn security_negative_controls_fail() {
        let p = example();
        let cfg = VerifyConfig::default();
        let r = verify_x_security_with(&p, VerifyMode::Exhaustive, &cfg, Fault::DropStorageNoise).unwrap();
        assert!(!r.pass);
        let r = verify_x_security_with(&p, VerifyMode::RankCondition, &cfg, Fault::DropStorageNoise).unwrap();
        assert!(!r.pass);
        let r = verify_t_privacy_with(&p, VerifyMode::Exhaustive, &cfg, Fault::DropQueryNoise).unwrap();
        assert!(!r.pass);
        let r = verify_t_privacy_with(&p, VerifyMode::RankCondition, &cfg, Fault::DropQueryNoise).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn privacy_exhaustive_and_rank_condition() {
        let p = example();
        let cfg = VerifyConfig::default();
        let r = verify_t_privacy(&p, VerifyMode::Exhaustive, &cfg).unwrap();
        assert!(r.pass);
        assert_eq!(r.trials, 625 * 2);
        assert!(verify_t_privacy(&p, VerifyMode::RankCondition, &cfg).unwrap().pass);
        // X = 2 with T adjusted
        let p2 = plan_scheme(4, 2, 2, 0, 1, 5).unwrap();
        let r = verify_x_security(&p2, VerifyMode::RankCondition, &cfg).unwrap();
        assert!(r.pass);
        assert_eq!(r.mode, VerifyMode::RankCondition);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let p = plan_scheme(8, 3, 2, 2, 1, 11).unwrap();
        let cfg = VerifyConfig { enum_cap: 1000, ..VerifyConfig::default() };
        assert!(matches!(verify_x_security(&p, VerifyMode::Exhaustive, &cfg), Err(VerifyError::EnumerationCap { .. })));
    }

    #[test]
    fn lemma1_on_worked_example() {
        let p = example();
        let r = verify_lemma1(&p, &[2], &VerifyConfig::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.metrics["min_swt_code"], 2);
        assert_eq!(r.metrics["max_swt_basis"], 1);
        assert_eq!(r.metrics["rank"], 8);
    }

    #[test]
    fn lemma1_detects_duplicate_erasure_column() {
        let p = example();
        let (g, h) = build_gh(&p, &[2]).unwrap();
        // replace the second erasure column by a copy of the first
        let mut bad = h.clone();
        for r in 0..8 {
            bad.set(r, 3, h.get(r, 2));
        }
        let r = verify_lemma1_on(&g, &bad, 1, &VerifyConfig::default()).unwrap();
        assert!(!r.pass);
        assert!(r.witnesses.iter().any(|w| w.kind == "rank_deficient"));
    }

    #[test]
    fn lemma1_sampled_mode() {
        let p = plan_scheme(8, 2, 2, 2, 2, 11).unwrap();
        let cfg = VerifyConfig { samples: 300, ..VerifyConfig::default() };
        assert!(matches!(verify_lemma1(&p, &[1, 4], &cfg), Err(VerifyError::Box(BoxError::EnumerationCap { .. }))));
        let r = verify_lemma1_mode(&p, &[1, 4], VerifyMode::Sampled, &cfg).unwrap();
        assert!(r.pass, "{:?}", r.witnesses);
        assert_eq!(r.mode, VerifyMode::Sampled);
        assert_eq!(r.metrics["rank"], 16);
    }

    #[test]
    fn lemma1_without_erasures() {
        let p = plan_scheme(4, 2, 1, 1, 0, 7).unwrap();
        let r = verify_lemma1(&p, &[], &VerifyConfig::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.metrics["max_swt_basis"], Value::Null);
    }

    #[test]
    fn duality_suite() {
        let f = FieldSpec::new(5).unwrap();
        let r = verify_duality(f, &f.elems(&[0, 1, 2, 3]), &[f.one(); 4], &VerifyConfig::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.metrics["sums"], json!([0, 0, 0, 1]));
        assert_eq!(r.metrics["v"], json!([4, 3, 2, 1]));
    }

    #[test]
    fn rate_table_suite() {
        let cases = [
            RateCase { n: 4, x: 1, t: 1, e: 1, expected: Some(Ratio::new(1, 2)) },
            RateCase { n: 10, x: 2, t: 2, e: 1, expected: Some(Ratio::new(4, 5)) },
            RateCase { n: 10, x: 2, t: 1, e: 6, expected: Some(Ratio::new(1, 10)) },
            RateCase { n: 5, x: 1, t: 1, e: 1, expected: Some(Ratio::new(3, 5)) },
        ];
        assert!(verify_rate_table(&cases, &VerifyConfig::default()).pass);
        let wrong = [RateCase { n: 4, x: 1, t: 1, e: 1, expected: Some(Ratio::new(1, 4)) }];
        assert!(!verify_rate_table(&wrong, &VerifyConfig::default()).pass);
        let infeasible = [RateCase { n: 4, x: 2, t: 1, e: 1, expected: None }];
        assert!(!verify_rate_table(&infeasible, &VerifyConfig::default()).pass);
    }

    #[test]
    fn box_algebra_and_mds_suites() {
        let p = plan_scheme(7, 2, 2, 2, 2, 11).unwrap();
        let cfg = VerifyConfig::default();
        let r = verify_box_algebra(&p, &cfg).unwrap();
        assert!(r.pass, "{:?}", r.witnesses);
        assert_eq!(r.trials, 21);
        assert!(verify_mds(&p, &cfg).unwrap().pass);
    }

    #[test]
    fn report_serializes() {
        let r = verify_lemma1(&example(), &[0], &VerifyConfig::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["suite"], "lemma1");
        assert_eq!(v["mode"], "exhaustive");
        assert_eq!(v["pass"], true);
        assert_eq!(v["witnesses"], json!([]));
    }
}
