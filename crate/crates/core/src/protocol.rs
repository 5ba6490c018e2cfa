//! End-to-end retrieval: rate planning, X-secure storage, T-private
//! queries, per-server answers for two row-scaled instances, erasure
//! injection and over-the-air decoding through the N-sum box. The purely
//! classical path (one instance, answers decoded from any `N - E`
//! responses) is used when it delivers more, or when the quantum
//! construction does not apply.
//!
//! Server indices and the desired message index `theta` are zero-based in
//! this API; the JSON views shift them to one-based.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::codes::{grs_matrix, qcsa_matrix, CodePoints, CodesError, Multipliers};
use crate::gf::{Fe, FieldSpec, GfError};
use crate::linalg::{LinalgError, Mat};
use crate::nsumbox::{BoxError, NSumBoxSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("zero/negative rate: N = {n} must exceed X + T + E = {sum}")]
    ZeroRate { n: usize, sum: usize },
    #[error("insufficient distinct points: need {need} field elements, q = {q}")]
    InsufficientPoints { need: usize, q: u64 },
    #[error("at least one message is required")]
    NoMessages,
    #[error("theta {theta} out of range for K = {k}")]
    ThetaOutOfRange { theta: usize, k: usize },
    #[error("invalid erasure set {set:?}: {reason}")]
    BadErasureSet { set: Vec<usize>, reason: &'static str },
    #[error("{got} deltas supplied for {expected} erased servers")]
    DeltaCount { got: usize, expected: usize },
    #[error("too few responses: {got} < {need}")]
    TooFewResponses { got: usize, need: usize },
    #[error("plan {0} has no N-sum box stage")]
    NotQuantum(Regime),
    #[error("override for {what} has length {got}, expected {expected}")]
    OverrideLength { what: &'static str, got: usize, expected: usize },
    #[error(transparent)]
    Gf(#[from] GfError),
    #[error(transparent)]
    Codes(#[from] CodesError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Box(#[from] BoxError),
}

/// Which case of the three-regime rate applies, and which construction the planner chose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Regime {
    /// `N - E > X + T >= N/2`: two instances at privacy `T`.
    R1,
    /// `N - E >= N/2 > X + T`, `N` even: two instances at `T' = N/2 - X`.
    #[serde(rename = "R2_even")]
    R2Even,
    /// `N - E >= N/2 > X + T`, `N` odd: instances at `T1 = ceil(N/2) - X` and `T2 = T1 - 1`.
    #[serde(rename = "R2_odd")]
    R2Odd,
    /// `N/2 > N - E > X + T`: classical scheme only.
    R3,
    /// Middle regime where the classical rate strictly exceeds `(N - 2E)/N`.
    #[serde(rename = "classical_only")]
    ClassicalOnly,
}

impl Regime {
    pub fn is_quantum(self) -> bool {
        matches!(self, Regime::R1 | Regime::R2Even | Regime::R2Odd)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::R1 => "R1",
            Regime::R2Even => "R2_even",
            Regime::R2Odd => "R2_odd",
            Regime::R3 => "R3",
            Regime::ClassicalOnly => "classical_only",
        };
        f.write_str(s)
    }
}

fn check_positive_rate(n: usize, x: usize, t: usize, e: usize) -> Result<(), ProtocolError> {
    if n > x + t + e {
        Ok(())
    } else {
        Err(ProtocolError::ZeroRate { n, sum: x + t + e })
    }
}

/// The achievable rate for `N` servers, `X`-secure storage, `T`-private
/// queries and up to `E` erasures, as an exact fraction.
pub fn rate(n: usize, x: usize, t: usize, e: usize) -> Result<Ratio<u64>, ProtocolError> {
    check_positive_rate(n, x, t, e)?;
    let nn = n as u64;
    let classical = (n - x - t - e) as u64;
    let r = if 2 * (x + t) >= n {
        Ratio::new(2 * classical, nn)
    } else if 2 * (n - e) >= n {
        Ratio::new(((n - 2 * e) as u64).max(classical), nn)
    } else {
        Ratio::new(classical, nn)
    };
    Ok(r)
}

/// One coded instance: privacy level, number of desired symbols, row multipliers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstancePlan {
    pub t_private: usize,
    pub l_symbols: usize,
    /// Vandermonde (interference) columns, `X + t_private`.
    pub vdm_cols: usize,
    pub beta: Vec<Fe>,
}

/// Optional overrides for the default point layout and `u`.
#[derive(Debug, Clone, Default)]
pub struct PlanOptions {
    pub alpha: Option<Vec<u64>>,
    pub f: Option<Vec<u64>>,
    pub u: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeParams {
    pub n: usize,
    pub k: usize,
    pub x: usize,
    pub t: usize,
    pub e: usize,
    pub field: FieldSpec,
    pub points: CodePoints,
    pub mult: Multipliers,
    pub regime: Regime,
    pub instances: Vec<InstancePlan>,
}

impl SchemeParams {
    pub fn delivered_symbols(&self) -> usize {
        self.instances.iter().map(|i| i.l_symbols).sum()
    }

    /// Delivered symbols per downloaded qudit (or dit).
    pub fn achieved_rate(&self) -> Ratio<u64> {
        Ratio::new(self.delivered_symbols() as u64, self.n as u64)
    }

    /// The instance's answer generator `Diag(beta) CSA` with its own `L_i` poles.
    pub fn instance_code(&self, instance: usize) -> Result<Mat, ProtocolError> {
        let plan = &self.instances[instance];
        let pts = self.points.with_poles(plan.l_symbols);
        Ok(qcsa_matrix(&pts, &plan.beta, plan.vdm_cols)?)
    }

    fn pole(&self, l: usize) -> Fe {
        self.points.f()[l]
    }

    fn alpha(&self, n: usize) -> Fe {
        self.points.alpha()[n]
    }
}

impl Serialize for SchemeParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a> {
            n: usize,
            k: usize,
            x: usize,
            t: usize,
            e: usize,
            q: u64,
            regime: String,
            alpha: &'a [Fe],
            f: &'a [Fe],
            u: &'a [Fe],
            v: &'a [Fe],
            instances: &'a [InstancePlan],
            rate: String,
        }
        View {
            n: self.n,
            k: self.k,
            x: self.x,
            t: self.t,
            e: self.e,
            q: self.field.modulus(),
            regime: self.regime.to_string(),
            alpha: self.points.alpha(),
            f: self.points.f(),
            u: self.mult.u(),
            v: self.mult.v(),
            instances: &self.instances,
            rate: self.achieved_rate().to_string(),
        }
        .serialize(serializer)
    }
}

/// Regime and per-instance `(T_i, L_i)` without touching field elements.
pub fn plan_shape(n: usize, x: usize, t: usize, e: usize) -> Result<(Regime, Vec<(usize, usize)>), ProtocolError> {
    check_positive_rate(n, x, t, e)?;
    let classical_l = n - x - t - e;
    let classical = (Regime::ClassicalOnly, vec![(t, classical_l)]);
    if 2 * (x + t) >= n {
        return Ok((Regime::R1, vec![(t, classical_l), (t, classical_l)]));
    }
    if 2 * (n - e) < n {
        return Ok((Regime::R3, vec![(t, classical_l)]));
    }
    // middle regime: pick the larger of (N - 2E) and the classical count; ties go to the box
    if n - 2 * e < classical_l {
        return Ok(classical);
    }
    let (hi, lo) = (n.div_ceil(2), n / 2);
    if n.is_multiple_of(2) {
        let t_prime = lo - x;
        Ok((Regime::R2Even, vec![(t_prime, n - e - lo), (t_prime, n - e - lo)]))
    } else {
        Ok((Regime::R2Odd, vec![(hi - x, n - e - hi), (lo - x, n - e - lo)]))
    }
}

/// Plans with the default layout: `alpha_n = n - 1`, `f_l = N + l - 1`, `u = 1`.
pub fn plan_scheme(n: usize, k: usize, x: usize, t: usize, e: usize, q: u64) -> Result<SchemeParams, ProtocolError> {
    let field = FieldSpec::new(q)?;
    plan_scheme_with(n, k, x, t, e, field, &PlanOptions::default())
}

pub fn plan_scheme_with(
    n: usize,
    k: usize,
    x: usize,
    t: usize,
    e: usize,
    field: FieldSpec,
    opts: &PlanOptions,
) -> Result<SchemeParams, ProtocolError> {
    if k == 0 {
        return Err(ProtocolError::NoMessages);
    }
    let (regime, shape) = plan_shape(n, x, t, e)?;
    let max_l = shape.iter().map(|&(_, l)| l).max().unwrap_or(0);
    if ((n + max_l) as u64) > field.modulus() {
        return Err(ProtocolError::InsufficientPoints { need: n + max_l, q: field.modulus() });
    }
    let alpha = match &opts.alpha {
        Some(a) if a.len() != n => return Err(ProtocolError::OverrideLength { what: "alpha", got: a.len(), expected: n }),
        Some(a) => field.elems(a),
        None => (0..n as u64).map(|v| field.elem(v)).collect(),
    };
    let poles = match &opts.f {
        Some(f) if f.len() < max_l => return Err(ProtocolError::OverrideLength { what: "f", got: f.len(), expected: max_l }),
        Some(f) => field.elems(&f[..max_l]),
        None => (n as u64..(n + max_l) as u64).map(|v| field.elem(v)).collect(),
    };
    let points = CodePoints::new(field, alpha, poles)?;
    let u = match &opts.u {
        Some(u) if u.len() != n => return Err(ProtocolError::OverrideLength { what: "u", got: u.len(), expected: n }),
        Some(u) => field.elems(u),
        None => vec![field.one(); n],
    };
    let mult = Multipliers::new(points.alpha(), u)?;
    let instances = if regime.is_quantum() {
        shape
            .iter()
            .zip([mult.u().to_vec(), mult.v().to_vec()])
            .map(|(&(ti, li), beta)| InstancePlan { t_private: ti, l_symbols: li, vdm_cols: x + ti, beta })
            .collect()
    } else {
        let (ti, li) = shape[0];
        vec![InstancePlan { t_private: ti, l_symbols: li, vdm_cols: x + ti, beta: vec![field.one(); n] }]
    };
    Ok(SchemeParams { n, k, x, t, e, field, points, mult, regime, instances })
}

fn random_fe<R: RngCore>(field: FieldSpec, rng: &mut R) -> Fe {
    field.elem(rng.gen_range(0..field.modulus()))
}

/// Messages split into per-instance blocks: `blocks[i][l][k]` is symbol `l`
/// of message `k` carried by instance `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageStore {
    pub blocks: Vec<Vec<Vec<Fe>>>,
}

impl MessageStore {
    pub fn random<R: RngCore>(params: &SchemeParams, rng: &mut R) -> Self {
        Self::from_fn(params, |_, _, _| random_fe(params.field, rng))
    }

    pub fn from_fn(params: &SchemeParams, mut f: impl FnMut(usize, usize, usize) -> Fe) -> Self {
        let blocks = params
            .instances
            .iter()
            .enumerate()
            .map(|(i, plan)| (0..plan.l_symbols).map(|l| (0..params.k).map(|k| f(i, l, k)).collect()).collect())
            .collect();
        Self { blocks }
    }

    /// Symbols of message `theta`, per instance.
    pub fn desired(&self, theta: usize) -> Vec<Vec<Fe>> {
        self.blocks.iter().map(|inst| inst.iter().map(|row| row[theta]).collect()).collect()
    }
}

/// Noise rows: `rows[i][l][j]` is a length-`K` vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Noise {
    pub rows: Vec<Vec<Vec<Vec<Fe>>>>,
}

impl Noise {
    /// Shape for storage noise: `X` rows per `(i, l)`.
    pub fn storage_shape(params: &SchemeParams) -> Vec<Vec<usize>> {
        params.instances.iter().map(|p| vec![params.x; p.l_symbols]).collect()
    }

    /// Shape for query noise: `T_i` rows per `(i, l)`.
    pub fn query_shape(params: &SchemeParams) -> Vec<Vec<usize>> {
        params.instances.iter().map(|p| vec![p.t_private; p.l_symbols]).collect()
    }

    pub fn random<R: RngCore>(shape: &[Vec<usize>], k: usize, field: FieldSpec, rng: &mut R) -> Self {
        Self::from_fn(shape, k, |_, _, _, _| random_fe(field, rng))
    }

    pub fn zero(shape: &[Vec<usize>], k: usize, field: FieldSpec) -> Self {
        Self::from_fn(shape, k, |_, _, _, _| field.zero())
    }

    pub fn from_fn(shape: &[Vec<usize>], k: usize, mut f: impl FnMut(usize, usize, usize, usize) -> Fe) -> Self {
        let rows = shape
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                ls.iter()
                    .enumerate()
                    .map(|(l, &count)| (0..count).map(|j| (0..k).map(|kk| f(i, l, j, kk)).collect()).collect())
                    .collect()
            })
            .collect();
        Self { rows }
    }
}

/// `S_n^{(i,l)}` as length-`K` rows: `vectors[i][l]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerShare {
    pub vectors: Vec<Vec<Vec<Fe>>>,
}

/// `Q_n^{(i,l)}` as length-`K` columns: `vectors[i][l]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryShare {
    pub vectors: Vec<Vec<Vec<Fe>>>,
}

/// `[(f_l - alpha_n)^x]` for `x < X`, rows indexed by `servers`.
pub fn storage_noise_coefficients(params: &SchemeParams, l: usize, servers: &[usize]) -> Mat {
    let mut m = Mat::zeros(params.field, servers.len(), params.x);
    for (r, &n) in servers.iter().enumerate() {
        let d = params.pole(l) - params.alpha(n);
        for c in 0..params.x {
            m.set(r, c, d.pow(c as u64));
        }
    }
    m
}

/// `[(f_l - alpha_n)^(t+1)]` for `t < T_i`, rows indexed by `servers`.
pub fn query_noise_coefficients(params: &SchemeParams, instance: usize, l: usize, servers: &[usize]) -> Mat {
    let ti = params.instances[instance].t_private;
    let mut m = Mat::zeros(params.field, servers.len(), ti);
    for (r, &n) in servers.iter().enumerate() {
        let d = params.pole(l) - params.alpha(n);
        for c in 0..ti {
            m.set(r, c, d.pow(c as u64 + 1));
        }
    }
    m
}

/// `S_n^{(i,l)} = W^{(i,l)} / (f_l - alpha_n) + sum_x (f_l - alpha_n)^x Z_x^{(i,l)}`.
pub fn encode_storage_with_noise(store: &MessageStore, params: &SchemeParams, noise: &Noise) -> Vec<ServerShare> {
    (0..params.n)
        .map(|n| {
            let vectors = params
                .instances
                .iter()
                .enumerate()
                .map(|(i, plan)| {
                    (0..plan.l_symbols)
                        .map(|l| {
                            let d = params.pole(l) - params.alpha(n);
                            let cauchy = d.inv().expect("poles and points are distinct");
                            (0..params.k)
                                .map(|kk| {
                                    let mut s = store.blocks[i][l][kk] * cauchy;
                                    let mut pw = params.field.one();
                                    for z in &noise.rows[i][l] {
                                        s += pw * z[kk];
                                        pw *= d;
                                    }
                                    s
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            ServerShare { vectors }
        })
        .collect()
}

pub fn encode_storage<R: RngCore>(store: &MessageStore, params: &SchemeParams, rng: &mut R) -> Vec<ServerShare> {
    let noise = Noise::random(&Noise::storage_shape(params), params.k, params.field, rng);
    encode_storage_with_noise(store, params, &noise)
}

/// `Q_n^{(i,l)} = e_theta + sum_t (f_l - alpha_n)^(t+1) Z'_t^{(i,l)}`.
pub fn make_queries_with_noise(theta: usize, params: &SchemeParams, noise: &Noise) -> Result<Vec<QueryShare>, ProtocolError> {
    if theta >= params.k {
        return Err(ProtocolError::ThetaOutOfRange { theta, k: params.k });
    }
    Ok((0..params.n)
        .map(|n| {
            let vectors = params
                .instances
                .iter()
                .enumerate()
                .map(|(i, plan)| {
                    (0..plan.l_symbols)
                        .map(|l| {
                            let d = params.pole(l) - params.alpha(n);
                            (0..params.k)
                                .map(|kk| {
                                    let mut s = if kk == theta { params.field.one() } else { params.field.zero() };
                                    let mut pw = d;
                                    for z in &noise.rows[i][l] {
                                        s += pw * z[kk];
                                        pw *= d;
                                    }
                                    s
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            QueryShare { vectors }
        })
        .collect())
}

pub fn make_queries<R: RngCore>(theta: usize, params: &SchemeParams, rng: &mut R) -> Result<Vec<QueryShare>, ProtocolError> {
    let noise = Noise::random(&Noise::query_shape(params), params.k, params.field, rng);
    make_queries_with_noise(theta, params, &noise)
}

/// Per-instance answers of one server: `A^i = beta^i * sum_l S^{(i,l)} . Q^{(i,l)}`.
pub fn server_answer(share: &ServerShare, query: &QueryShare, betas: &[Fe]) -> Vec<Fe> {
    share
        .vectors
        .iter()
        .zip(&query.vectors)
        .zip(betas)
        .map(|((s_blocks, q_blocks), &beta)| {
            let field = beta.field();
            let dot = s_blocks.iter().zip(q_blocks).fold(field.zero(), |acc, (s, q)| {
                s.iter().zip(q).fold(acc, |a, (&x, &y)| a + x * y)
            });
            beta * dot
        })
        .collect()
}

/// Answers of all servers: `per_instance[i][n]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Answers {
    pub per_instance: Vec<Vec<Fe>>,
}

pub fn collect_answers(params: &SchemeParams, shares: &[ServerShare], queries: &[QueryShare]) -> Answers {
    let mut per_instance = vec![Vec::with_capacity(params.n); params.instances.len()];
    for n in 0..params.n {
        let betas: Vec<Fe> = params.instances.iter().map(|p| p.beta[n]).collect();
        for (i, a) in server_answer(&shares[n], &queries[n], &betas).into_iter().enumerate() {
            per_instance[i].push(a);
        }
    }
    Answers { per_instance }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassicalDecoded {
    /// Desired symbols `W_{theta,1..L}`.
    pub w: Vec<Fe>,
    /// Interference symbols `nu_1..nu_{X+T}`.
    pub nu: Vec<Fe>,
    /// Servers whose answers were used.
    pub rows_used: Vec<usize>,
}

/// Inverts the `(N - E)`-row submatrix of the instance code on the first
/// `N - E` responsive servers.
pub fn classical_decode(
    params: &SchemeParams,
    instance: usize,
    answers: &[Fe],
    responsive: &[usize],
) -> Result<ClassicalDecoded, ProtocolError> {
    let need = params.n - params.e;
    let set: BTreeSet<usize> = responsive.iter().copied().collect();
    if set.iter().any(|&r| r >= params.n) {
        return Err(ProtocolError::BadErasureSet { set: responsive.to_vec(), reason: "responsive index out of range" });
    }
    if set.len() < need {
        return Err(ProtocolError::TooFewResponses { got: set.len(), need });
    }
    let rows: Vec<usize> = set.into_iter().take(need).collect();
    let code = params.instance_code(instance)?;
    let sub = code.select_rows(&rows)?;
    let rhs = Mat::column(params.field, &rows.iter().map(|&r| answers[r]).collect::<Vec<_>>())?;
    let sol = sub.solve(&rhs)?.col(0);
    let l = params.instances[instance].l_symbols;
    Ok(ClassicalDecoded { w: sol[..l].to_vec(), nu: sol[l..].to_vec(), rows_used: rows })
}

fn validate_erasure_set(params: &SchemeParams, set: &[usize], exact: bool) -> Result<Vec<usize>, ProtocolError> {
    let sorted: BTreeSet<usize> = set.iter().copied().collect();
    if sorted.len() != set.len() {
        return Err(ProtocolError::BadErasureSet { set: set.to_vec(), reason: "duplicate server" });
    }
    if sorted.iter().any(|&s| s >= params.n) {
        return Err(ProtocolError::BadErasureSet { set: set.to_vec(), reason: "server index out of range" });
    }
    if sorted.len() > params.e || (exact && sorted.len() != params.e) {
        return Err(ProtocolError::BadErasureSet {
            set: set.to_vec(),
            reason: if exact { "declared set must have exactly E servers" } else { "more than E erasures" },
        });
    }
    Ok(sorted.into_iter().collect())
}

/// Pads an actual erasure set to exactly `E` declared positions with the
/// lowest-indexed responsive servers; their recovered deltas are zero.
pub fn declared_erasures(params: &SchemeParams, actual: &[usize]) -> Result<Vec<usize>, ProtocolError> {
    let mut set: BTreeSet<usize> = validate_erasure_set(params, actual, false)?.into_iter().collect();
    let mut next = 0;
    while set.len() < params.e {
        set.insert(next);
        next += 1;
    }
    Ok(set.into_iter().collect())
}

/// `(G, H)` for the two instances and a declared erasure set of size `E`.
///
/// `G = blockdiag(Gamma_top, Gamma_bottom)` holds the first `ceil(N/2)` GRS
/// columns of the `u`-instance and the first `floor(N/2)` of the
/// `v`-instance. `H` is `[GC_u 0 Lambda_u 0; 0 GC_v 0 Lambda_v]` followed by
/// paired unit columns for each erased server.
pub fn build_gh(params: &SchemeParams, erasure_set: &[usize]) -> Result<(Mat, Mat), ProtocolError> {
    if !params.regime.is_quantum() {
        return Err(ProtocolError::NotQuantum(params.regime));
    }
    let erased = validate_erasure_set(params, erasure_set, true)?;
    let field = params.field;
    let n = params.n;
    let (hi, lo) = (n.div_ceil(2), n / 2);
    let (p1, p2) = (&params.instances[0], &params.instances[1]);
    let alpha = params.points.alpha();

    let grs_u = grs_matrix(alpha, &p1.beta, p1.vdm_cols)?;
    let grs_v = grs_matrix(alpha, &p2.beta, p2.vdm_cols)?;
    let gamma_top = grs_u.col_range(0, hi)?;
    let lambda_u = grs_u.col_range(hi, p1.vdm_cols)?;
    let gamma_bottom = grs_v.col_range(0, lo)?;
    let lambda_v = grs_v.col_range(lo, p2.vdm_cols)?;
    let gc_u = qcsa_matrix(&params.points.with_poles(p1.l_symbols), &p1.beta, 0)?;
    let gc_v = qcsa_matrix(&params.points.with_poles(p2.l_symbols), &p2.beta, 0)?;

    let g = Mat::block_diag(&[&gamma_top, &gamma_bottom])?;

    let z = |cols: usize| Mat::zeros(field, n, cols);
    let top = Mat::hstack(&[&gc_u, &z(gc_v.cols()), &lambda_u, &z(lambda_v.cols())])?;
    let bottom = Mat::hstack(&[&z(gc_u.cols()), &gc_v, &z(lambda_u.cols()), &lambda_v])?;
    let h_left = Mat::vstack(&[&top, &bottom])?;

    let ne = erased.len();
    let mut h_right = Mat::zeros(field, 2 * n, 2 * ne);
    for (j, &s) in erased.iter().enumerate() {
        h_right.set(s, j, field.one());
        h_right.set(n + s, ne + j, field.one());
    }
    let h = Mat::hstack(&[&h_left, &h_right])?;
    Ok((g, h))
}

/// Validated box for `params` and a declared erasure set.
pub fn build_box(params: &SchemeParams, erasure_set: &[usize]) -> Result<NSumBoxSpec, ProtocolError> {
    let (g, h) = build_gh(params, erasure_set)?;
    Ok(NSumBoxSpec::build(g, h)?)
}

/// Additive `X`/`Z` offsets on one erased transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ServerDelta {
    #[serde(serialize_with = "one_based")]
    pub server: usize,
    pub first: Fe,
    pub second: Fe,
}

/// `x_n = A_n^1 (+ delta^1_n)`, `x_{n+N} = A_n^2 (+ delta^2_n)`.
pub fn inject_erasures(answers: &Answers, deltas: &[ServerDelta]) -> Result<Vec<Fe>, ProtocolError> {
    let [a1, a2] = answers.per_instance.as_slice() else {
        return Err(ProtocolError::DeltaCount { got: answers.per_instance.len(), expected: 2 });
    };
    let n = a1.len();
    let mut x: Vec<Fe> = a1.iter().chain(a2).copied().collect();
    for d in deltas {
        if d.server >= n {
            return Err(ProtocolError::BadErasureSet { set: vec![d.server], reason: "server index out of range" });
        }
        x[d.server] += d.first;
        x[d.server + n] += d.second;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuantumDecoded {
    pub w1: Vec<Fe>,
    pub w2: Vec<Fe>,
    /// Trailing interference symbols that fall outside `G`.
    pub nu1: Vec<Fe>,
    pub nu2: Vec<Fe>,
    /// Recovered offsets for every declared erased server.
    pub deltas: Vec<ServerDelta>,
}

/// Reads `y = M x` as `[w1 w2 nu1 nu2 delta1 delta2]` in the column order of `H`.
pub fn quantum_decode(nbox: &NSumBoxSpec, x: &[Fe], params: &SchemeParams, declared: &[usize]) -> Result<QuantumDecoded, ProtocolError> {
    let y = nbox.apply(x)?;
    split_output(&y, params, declared)
}

pub fn split_output(y: &[Fe], params: &SchemeParams, declared: &[usize]) -> Result<QuantumDecoded, ProtocolError> {
    if !params.regime.is_quantum() {
        return Err(ProtocolError::NotQuantum(params.regime));
    }
    let n = params.n;
    let (p1, p2) = (&params.instances[0], &params.instances[1]);
    let lam1 = p1.vdm_cols - n.div_ceil(2);
    let lam2 = p2.vdm_cols - n / 2;
    let ne = declared.len();
    let mut rest = y;
    let mut take = |k: usize| {
        let (head, tail) = rest.split_at(k);
        rest = tail;
        head.to_vec()
    };
    let w1 = take(p1.l_symbols);
    let w2 = take(p2.l_symbols);
    let nu1 = take(lam1);
    let nu2 = take(lam2);
    let d1 = take(ne);
    let d2 = take(ne);
    let deltas = declared
        .iter()
        .zip(d1.into_iter().zip(d2))
        .map(|(&server, (first, second))| ServerDelta { server, first, second })
        .collect();
    Ok(QuantumDecoded { w1, w2, nu1, nu2, deltas })
}

fn one_based<S: Serializer>(v: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*v as u64 + 1)
}

fn one_based_list<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|i| i + 1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum Decoded {
    Quantum(QuantumDecoded),
    Classical(ClassicalDecoded),
}

/// One complete protocol run.
#[derive(Debug, Clone, Serialize)]
pub struct Transcript {
    #[serde(flatten)]
    pub params: SchemeParams,
    #[serde(serialize_with = "one_based")]
    pub theta: usize,
    pub seed: u64,
    pub messages: MessageStore,
    pub shares: Vec<ServerShare>,
    pub queries: Vec<QueryShare>,
    pub answers: Answers,
    #[serde(serialize_with = "one_based_list")]
    pub erasure_set: Vec<usize>,
    /// Erasure positions the decoder was built for (padded to `E`).
    #[serde(serialize_with = "one_based_list")]
    pub declared_erasures: Vec<usize>,
    pub deltas: Vec<ServerDelta>,
    pub box_input: Option<Vec<Fe>>,
    pub box_output: Option<Vec<Fe>>,
    pub transfer: Option<Mat>,
    pub decoded: Decoded,
    /// Desired symbols per instance, straight from the message store.
    pub expected: Vec<Vec<Fe>>,
    pub recovered: Vec<Vec<Fe>>,
    pub success: bool,
    pub download_qudits: usize,
    pub delivered_symbols: usize,
}

/// Runs storage, queries, answers, erasures and decoding from one seed.
///
/// `deltas[j]` is applied to `erasure_set[j]`. Under the classical path the
/// erased answers are simply dropped and `deltas` must be empty or match.
pub fn run_end_to_end(
    params: &SchemeParams,
    theta: usize,
    seed: u64,
    erasure_set: &[usize],
    deltas: &[(Fe, Fe)],
) -> Result<Transcript, ProtocolError> {
    if theta >= params.k {
        return Err(ProtocolError::ThetaOutOfRange { theta, k: params.k });
    }
    let actual = validate_erasure_set(params, erasure_set, false)?;
    if deltas.len() != erasure_set.len() && !(deltas.is_empty() && !params.regime.is_quantum()) {
        return Err(ProtocolError::DeltaCount { got: deltas.len(), expected: erasure_set.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let messages = MessageStore::random(params, &mut rng);
    let shares = encode_storage(&messages, params, &mut rng);
    let queries = make_queries(theta, params, &mut rng)?;
    let answers = collect_answers(params, &shares, &queries);
    let expected = messages.desired(theta);

    let mut applied: Vec<ServerDelta> = erasure_set
        .iter()
        .zip(deltas)
        .map(|(&server, &(first, second))| ServerDelta { server, first, second })
        .collect();
    applied.sort_by_key(|d| d.server);

    let (declared, box_input, box_output, transfer, decoded, recovered) = if params.regime.is_quantum() {
        let declared = declared_erasures(params, &actual)?;
        let nbox = build_box(params, &declared)?;
        let x = inject_erasures(&answers, &applied)?;
        let y = nbox.apply(&x)?;
        let dec = split_output(&y, params, &declared)?;
        let recovered = vec![dec.w1.clone(), dec.w2.clone()];
        (declared, Some(x), Some(y), Some(nbox.transfer().clone()), Decoded::Quantum(dec), recovered)
    } else {
        let responsive: Vec<usize> = (0..params.n).filter(|s| !actual.contains(s)).collect();
        let dec = classical_decode(params, 0, &answers.per_instance[0], &responsive)?;
        let recovered = vec![dec.w.clone()];
        (actual.clone(), None, None, None, Decoded::Classical(dec), recovered)
    };
    let success = recovered == expected;
    Ok(Transcript {
        params: params.clone(),
        theta,
        seed,
        messages,
        shares,
        queries,
        answers,
        erasure_set: actual,
        declared_erasures: declared,
        deltas: applied,
        box_input,
        box_output,
        transfer,
        decoded,
        expected,
        recovered,
        success,
        download_qudits: params.n,
        delivered_symbols: params.delivered_symbols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsumbox::{is_sso, symplectic_form};

    fn example() -> SchemeParams {
        plan_scheme(4, 2, 1, 1, 1, 5).unwrap()
    }

    fn m(q: u64, rows: &[&[u64]]) -> Mat {
        Mat::from_u64_rows(FieldSpec::new(q).unwrap(), &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate(4, 1, 1, 1).unwrap(), Ratio::new(1, 2));
        assert_eq!(rate(10, 2, 2, 1).unwrap(), Ratio::new(4, 5));
        assert_eq!(rate(10, 2, 1, 6).unwrap(), Ratio::new(1, 10));
        assert_eq!(rate(5, 1, 1, 1).unwrap(), Ratio::new(3, 5));
        assert_eq!(rate(10, 2, 2, 6), Err(ProtocolError::ZeroRate { n: 10, sum: 10 }));
    }

    #[test]
    fn plan_examples() {
        let p = example();
        assert_eq!(p.regime, Regime::R1);
        assert_eq!(p.achieved_rate(), Ratio::new(1, 2));
        assert!(p.instances.iter().all(|i| i.l_symbols == 1 && i.t_private == 1));

        let p = plan_scheme(5, 2, 1, 1, 1, 7).unwrap();
        assert_eq!(p.regime, Regime::R2Odd);
        let shape: Vec<(usize, usize)> = p.instances.iter().map(|i| (i.t_private, i.l_symbols)).collect();
        assert_eq!(shape, vec![(2, 1), (1, 2)]);
        assert_eq!(p.achieved_rate(), Ratio::new(3, 5));

        let p = plan_scheme(6, 2, 1, 1, 1, 11).unwrap();
        assert_eq!(p.regime, Regime::R2Even);
        assert!(p.instances.iter().all(|i| i.t_private == 2 && i.l_symbols == 2));

        assert_eq!(plan_scheme(10, 2, 2, 2, 6, 11).unwrap_err(), ProtocolError::ZeroRate { n: 10, sum: 10 });
        assert_eq!(plan_scheme(6, 2, 1, 2, 1, 7).unwrap_err(), ProtocolError::InsufficientPoints { need: 8, q: 7 });
        assert!(matches!(plan_scheme(4, 2, 1, 1, 1, 6), Err(ProtocolError::Gf(GfError::NotPrime(6)))));
        assert_eq!(plan_scheme(4, 0, 1, 1, 1, 5).unwrap_err(), ProtocolError::NoMessages);
    }

    #[test]
    fn plan_picks_classical_when_it_wins() {
        // N=10, X+T=2, E=3: N-2E = 4 < N-X-T-E = 5
        let p = plan_scheme(10, 2, 1, 1, 3, 17).unwrap();
        assert_eq!(p.regime, Regime::ClassicalOnly);
        assert_eq!(p.achieved_rate(), rate(10, 1, 1, 3).unwrap());
        let p = plan_scheme(10, 2, 1, 0, 6, 13).unwrap();
        assert_eq!(p.regime, Regime::R3);
        assert_eq!(p.delivered_symbols(), 3);
    }

    #[test]
    fn planned_rate_matches_formula_everywhere() {
        for n in 1..=16 {
            for x in 0..n {
                for t in 0..n {
                    for e in 0..n {
                        if n <= x + t + e {
                            continue;
                        }
                        let (regime, shape) = plan_shape(n, x, t, e).unwrap();
                        let delivered: usize = shape.iter().map(|s| s.1).sum();
                        assert_eq!(Ratio::new(delivered as u64, n as u64), rate(n, x, t, e).unwrap(), "{n} {x} {t} {e}");
                        for &(ti, li) in &shape {
                            assert!(ti >= t);
                            assert_eq!(li, n - e - x - ti);
                        }
                        if regime.is_quantum() {
                            assert!(x + shape[0].0 >= n.div_ceil(2));
                            assert!(x + shape[1].0 >= n / 2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn worked_example_matrices() {
        let p = example();
        assert_eq!(p.mult.v(), FieldSpec::new(5).unwrap().elems(&[4, 3, 2, 1]).as_slice());
        let (g, h) = build_gh(&p, &[2]).unwrap();
        let g_expected = m(5, &[&[1, 0, 0, 0], &[1, 1, 0, 0], &[1, 2, 0, 0], &[1, 3, 0, 0], &[0, 0, 4, 0], &[0, 0, 3, 3], &[0, 0, 2, 4], &[0, 0, 1, 3]]);
        assert_eq!(g, g_expected);
        let h_left = m(5, &[&[4, 0], &[2, 0], &[3, 0], &[1, 0], &[0, 1], &[0, 1], &[0, 1], &[0, 1]]);
        assert_eq!(h.col_range(0, 2).unwrap(), h_left);
        let h_right = m(5, &[&[0, 0], &[0, 0], &[1, 0], &[0, 0], &[0, 0], &[0, 0], &[0, 1], &[0, 0]]);
        assert_eq!(h.col_range(2, 4).unwrap(), h_right);
        assert!(is_sso(&g));
        assert_eq!(Mat::hstack(&[&g, &h]).unwrap().rank(), 8);
        let _ = symplectic_form(p.field, 4);
    }

    #[test]
    fn every_single_erasure_gives_valid_box() {
        let p = example();
        for s in 0..4 {
            let b = build_box(&p, &[s]).unwrap();
            assert!(b.transfer().matmul(b.g()).unwrap().is_zero());
            assert_eq!(b.transfer().matmul(b.h()).unwrap(), Mat::identity(p.field, 4));
        }
        assert!(matches!(build_box(&p, &[]), Err(ProtocolError::BadErasureSet { .. })));
        assert!(matches!(build_box(&p, &[4]), Err(ProtocolError::BadErasureSet { .. })));
    }

    #[test]
    fn zero_erasure_plan_has_no_basis_columns() {
        let p = plan_scheme(4, 2, 1, 1, 0, 7).unwrap();
        assert_eq!(p.regime, Regime::R1);
        let (_, h) = build_gh(&p, &[]).unwrap();
        assert_eq!(h.cols(), 4);
        let t = run_end_to_end(&p, 1, 9, &[], &[]).unwrap();
        assert!(t.success);
        let Decoded::Quantum(d) = &t.decoded else { panic!() };
        assert!(d.deltas.is_empty());
        assert_eq!(d.w1.len() + d.w2.len() + d.nu1.len() + d.nu2.len(), 4);
    }

    #[test]
    fn storage_and_query_match_single_symbol_form() {
        let p = example();
        let f = p.field;
        let store = MessageStore::from_fn(&p, |i, _, k| f.elem((3 * i + k + 1) as u64));
        let noise = Noise::from_fn(&Noise::storage_shape(&p), p.k, |i, _, _, k| f.elem((i + 2 * k) as u64));
        let shares = encode_storage_with_noise(&store, &p, &noise);
        for n in 0..4 {
            let d = p.pole(0) - p.alpha(n);
            for i in 0..2 {
                for k in 0..2 {
                    let want = store.blocks[i][0][k] * d.inv().unwrap() + noise.rows[i][0][0][k];
                    assert_eq!(shares[n].vectors[i][0][k], want);
                }
            }
        }
        let zero = Noise::zero(&Noise::storage_shape(&p), p.k, f);
        let clean = encode_storage_with_noise(&store, &p, &zero);
        assert_eq!(clean[0].vectors[0][0][0], store.blocks[0][0][0] * f.elem(4));

        let qn = Noise::from_fn(&Noise::query_shape(&p), p.k, |_, _, _, k| f.elem(k as u64 + 2));
        let queries = make_queries_with_noise(1, &p, &qn).unwrap();
        for n in 0..4 {
            let d = p.pole(0) - p.alpha(n);
            assert_eq!(queries[n].vectors[0][0][0], d * f.elem(2));
            assert_eq!(queries[n].vectors[0][0][1], f.one() + d * f.elem(3));
        }
        let plain = make_queries_with_noise(0, &p, &Noise::zero(&Noise::query_shape(&p), p.k, f)).unwrap();
        assert_eq!(plain[2].vectors[1][0], vec![f.one(), f.zero()]);
        assert!(matches!(make_queries_with_noise(2, &p, &qn), Err(ProtocolError::ThetaOutOfRange { theta: 2, k: 2 })));
    }

    #[test]
    fn x_noise_rows_recoverable_from_any_x_servers() {
        // given W, the shares of any X servers pin down the X noise rows
        let p = plan_scheme(7, 1, 2, 2, 1, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = MessageStore::random(&p, &mut rng);
        let noise = Noise::random(&Noise::storage_shape(&p), p.k, p.field, &mut rng);
        let shares = encode_storage_with_noise(&store, &p, &noise);
        for servers in crate::codes::k_subsets(p.n, p.x) {
            for l in 0..p.instances[0].l_symbols {
                let coeff = storage_noise_coefficients(&p, l, &servers);
                let rhs: Vec<Fe> = servers
                    .iter()
                    .map(|&n| shares[n].vectors[0][l][0] - store.blocks[0][l][0] * (p.pole(l) - p.alpha(n)).inv().unwrap())
                    .collect();
                let z = coeff.solve(&Mat::column(p.field, &rhs).unwrap()).unwrap().col(0);
                let want: Vec<Fe> = noise.rows[0][l].iter().map(|row| row[0]).collect();
                assert_eq!(z, want);
            }
        }
    }

    #[test]
    fn answers_fit_the_instance_code() {
        for (n, k, x, t, e, q) in [(4, 2, 1, 1, 1, 5), (6, 3, 1, 2, 1, 11), (5, 2, 1, 1, 1, 7), (7, 2, 2, 2, 0, 11), (10, 2, 1, 1, 3, 17)] {
            let p = plan_scheme(n, k, x, t, e, q).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let store = MessageStore::random(&p, &mut rng);
            let shares = encode_storage(&store, &p, &mut rng);
            let queries = make_queries(k - 1, &p, &mut rng).unwrap();
            let answers = collect_answers(&p, &shares, &queries);
            for (i, a) in answers.per_instance.iter().enumerate() {
                let all: Vec<usize> = (0..n).collect();
                let dec = classical_decode(&p, i, a, &all).unwrap();
                assert_eq!(dec.w, store.desired(k - 1)[i]);
                // the fitted coefficients reproduce every answer, including unused rows
                let coeffs: Vec<Fe> = dec.w.iter().chain(&dec.nu).copied().collect();
                assert_eq!(&p.instance_code(i).unwrap().mul_vec(&coeffs).unwrap(), a);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_answers() {
        let p = example();
        let f = p.field;
        let store = MessageStore::from_fn(&p, |_, _, _| f.zero());
        let shares = encode_storage_with_noise(&store, &p, &Noise::zero(&Noise::storage_shape(&p), p.k, f));
        let queries = make_queries_with_noise(0, &p, &Noise::zero(&Noise::query_shape(&p), p.k, f)).unwrap();
        let a = collect_answers(&p, &shares, &queries);
        assert!(a.per_instance.iter().flatten().all(|v| v.is_zero()));
    }

    #[test]
    fn classical_decode_any_three_of_four() {
        let p = example();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = MessageStore::random(&p, &mut rng);
        let shares = encode_storage(&store, &p, &mut rng);
        let queries = make_queries(0, &p, &mut rng).unwrap();
        let answers = collect_answers(&p, &shares, &queries);
        for rows in crate::codes::k_subsets(4, 3) {
            let d = classical_decode(&p, 0, &answers.per_instance[0], &rows).unwrap();
            assert_eq!(d.w, store.desired(0)[0]);
        }
        assert_eq!(
            classical_decode(&p, 0, &answers.per_instance[0], &[0, 1]),
            Err(ProtocolError::TooFewResponses { got: 2, need: 3 })
        );
    }

    #[test]
    fn worked_example_end_to_end() {
        let p = example();
        let f = p.field;
        for theta in 0..2 {
            for d1 in 0..5 {
                for d2 in 0..5 {
                    let t = run_end_to_end(&p, theta, 42, &[2], &[(f.elem(d1), f.elem(d2))]).unwrap();
                    assert!(t.success);
                    let y = t.box_output.as_ref().unwrap();
                    assert_eq!(y, &vec![t.expected[0][0], t.expected[1][0], f.elem(d1), f.elem(d2)]);
                    let x = t.box_input.as_ref().unwrap();
                    assert_eq!(x[2], t.answers.per_instance[0][2] + f.elem(d1));
                    assert_eq!(x[6], t.answers.per_instance[1][2] + f.elem(d2));
                    assert_eq!(x[0], t.answers.per_instance[0][0]);
                }
            }
        }
    }

    #[test]
    fn fewer_erasures_than_declared_decode_zero_delta() {
        let p = plan_scheme(6, 2, 1, 1, 2, 11).unwrap();
        let f = p.field;
        let t = run_end_to_end(&p, 0, 3, &[4], &[(f.elem(7), f.elem(1))]).unwrap();
        assert!(t.success);
        assert_eq!(t.declared_erasures, vec![0, 4]);
        let Decoded::Quantum(d) = &t.decoded else { panic!() };
        assert_eq!(d.deltas[0], ServerDelta { server: 0, first: f.zero(), second: f.zero() });
        assert_eq!(d.deltas[1], ServerDelta { server: 4, first: f.elem(7), second: f.elem(1) });
    }

    #[test]
    fn classical_path_end_to_end() {
        let p = plan_scheme(10, 2, 1, 1, 3, 17).unwrap();
        let t = run_end_to_end(&p, 1, 8, &[0, 5, 9], &[]).unwrap();
        assert!(t.success);
        assert!(t.box_input.is_none());
        assert_eq!(t.download_qudits, 10);
        assert_eq!(t.delivered_symbols, 5);
    }

    #[test]
    fn quantum_and_classical_decoders_agree() {
        let p = plan_scheme(6, 3, 1, 2, 1, 11).unwrap();
        let f = p.field;
        let t = run_end_to_end(&p, 2, 77, &[3], &[(f.elem(5), f.elem(9))]).unwrap();
        let responsive = [0, 1, 2, 4, 5];
        for i in 0..2 {
            let c = classical_decode(&p, i, &t.answers.per_instance[i], &responsive).unwrap();
            assert_eq!(c.w, t.recovered[i]);
        }
    }

    #[test]
    fn run_validates_inputs() {
        let p = example();
        let f = p.field;
        assert!(matches!(run_end_to_end(&p, 2, 0, &[], &[]), Err(ProtocolError::ThetaOutOfRange { .. })));
        assert!(matches!(run_end_to_end(&p, 0, 0, &[1, 2], &[(f.zero(), f.zero()); 2]), Err(ProtocolError::BadErasureSet { .. })));
        assert!(matches!(run_end_to_end(&p, 0, 0, &[1], &[]), Err(ProtocolError::DeltaCount { got: 0, expected: 1 })));
        assert!(matches!(run_end_to_end(&p, 0, 0, &[1, 1], &[(f.zero(), f.zero()); 2]), Err(ProtocolError::BadErasureSet { .. })));
    }

    #[test]
    fn transcript_json_is_flat_and_one_based() {
        let p = example();
        let f = p.field;
        let t = run_end_to_end(&p, 0, 1, &[2], &[(f.elem(1), f.elem(2))]).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["n"], 4);
        assert_eq!(v["q"], 5);
        assert_eq!(v["regime"], "R1");
        assert_eq!(v["theta"], 1);
        assert_eq!(v["erasure_set"], serde_json::json!([3]));
        assert_eq!(v["v"], serde_json::json!([4, 3, 2, 1]));
        assert_eq!(v["rate"], "1/2");
        assert_eq!(v["decoded"]["path"], "quantum");
        assert_eq!(v["decoded"]["deltas"][0]["server"], 3);
    }
}
