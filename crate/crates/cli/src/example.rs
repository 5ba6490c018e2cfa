//! Reproduction of the N = 4, K = 2, X = T = E = 1, q = 5 worked example
//! against hard-coded golden values.

use anyhow::{ensure, Result};
use qecsa::codes::csa_matrix;
use qecsa::nsumbox::NSumBoxSpec;
use qecsa::protocol::{build_gh, plan_scheme, run_end_to_end, Decoded, SchemeParams};
use qecsa::{Fe, FieldSpec, Mat};
use serde::Serialize;
use serde_json::{json, Value};

const Q: u64 = 5;
const GOLDEN_V: [u64; 4] = [4, 3, 2, 1];
const GOLDEN_CAUCHY: [u64; 4] = [4, 2, 3, 1];
const GOLDEN_G: [[u64; 4]; 8] = [
    [1, 0, 0, 0],
    [1, 1, 0, 0],
    [1, 2, 0, 0],
    [1, 3, 0, 0],
    [0, 0, 4, 0],
    [0, 0, 3, 3],
    [0, 0, 2, 4],
    [0, 0, 1, 3],
];
const GOLDEN_H_LEFT: [[u64; 2]; 8] = [[4, 0], [2, 0], [3, 0], [1, 0], [0, 1], [0, 1], [0, 1], [0, 1]];
/// Erasure columns for server 3.
const GOLDEN_H_RIGHT_3: [[u64; 2]; 8] = [[0, 0], [0, 0], [1, 0], [0, 0], [0, 0], [0, 0], [0, 1], [0, 0]];

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

fn check(checks: &mut Vec<Check>, name: &str, pass: bool, detail: Value) {
    checks.push(Check { name: name.to_string(), pass, detail });
}

fn golden<const C: usize>(rows: &[[u64; C]]) -> Mat {
    let rows: Vec<Vec<u64>> = rows.iter().map(|r| r.to_vec()).collect();
    Mat::from_u64_rows(FieldSpec::new(Q).expect("5 is prime"), &rows).expect("golden rows are rectangular")
}

/// Unit columns at `x_s` and `x_{s+N}` for one erased server.
fn erasure_columns(field: FieldSpec, n: usize, server: usize) -> Mat {
    let mut m = Mat::zeros(field, 2 * n, 2);
    m.set(server, 0, field.one());
    m.set(n + server, 1, field.one());
    m
}

pub fn params() -> Result<SchemeParams> {
    Ok(plan_scheme(4, 2, 1, 1, 1, Q)?)
}

/// `theta` and `erased` are 0-based.
pub fn run(theta: usize, erased: usize, delta: (u64, u64), seed: u64) -> Result<Value> {
    let p = params()?;
    let f = p.field;
    ensure!(theta < p.k, "theta must be 1 or 2");
    ensure!(erased < p.n, "erased server must be in 1..=4");
    let mut checks = Vec::new();

    let v: Vec<u64> = p.mult.v().iter().map(|x| x.value()).collect();
    check(&mut checks, "dual_multipliers", v == GOLDEN_V, json!({"v": v, "golden": GOLDEN_V}));

    let csa = csa_matrix(&p.points.with_poles(p.instances[0].l_symbols), p.instances[0].vdm_cols);
    let cauchy: Vec<u64> = csa.col(0).iter().map(|x| x.value()).collect();
    check(&mut checks, "cauchy_column", cauchy == GOLDEN_CAUCHY, json!({"column": cauchy, "golden": GOLDEN_CAUCHY}));

    let (g, h) = build_gh(&p, &[erased])?;
    check(&mut checks, "g", g == golden(&GOLDEN_G), json!({"g": g}));
    let h_left = h.col_range(0, 2)?;
    check(&mut checks, "h_left", h_left == golden(&GOLDEN_H_LEFT), json!({"h_left": h_left}));
    let h_right = h.col_range(2, 4)?;
    let want_right = if erased == 2 { golden(&GOLDEN_H_RIGHT_3) } else { erasure_columns(f, p.n, erased) };
    check(&mut checks, "h_right", h_right == want_right, json!({"h_right": h_right}));
    let full_rank = Mat::hstack(&[&g, &h])?.rank() == 2 * p.n;
    check(&mut checks, "full_rank", full_rank, json!({"rank": Mat::hstack(&[&g, &h])?.rank()}));

    let d = (f.elem(delta.0), f.elem(delta.1));
    let tr = run_end_to_end(&p, theta, seed, &[erased], &[d])?;
    let y: Vec<Fe> = tr.box_output.clone().unwrap_or_default();
    let want_y: Vec<Fe> = vec![tr.expected[0][0], tr.expected[1][0], d.0, d.1];
    check(&mut checks, "box_output", y == want_y && tr.success, json!({"y": y, "expected": want_y}));
    let rate = p.achieved_rate().to_string();
    check(&mut checks, "rate", rate == "1/2", json!({"rate": rate}));

    let mut sweep = Vec::new();
    for s in 0..p.n {
        let (g, h) = build_gh(&p, &[s])?;
        let valid = NSumBoxSpec::build(g, h).is_ok();
        let tr = run_end_to_end(&p, theta, seed, &[s], &[d])?;
        let ok = match &tr.decoded {
            Decoded::Quantum(q) => valid && tr.success && q.deltas.len() == 1 && (q.deltas[0].first, q.deltas[0].second) == d,
            Decoded::Classical(_) => false,
        };
        sweep.push(json!({"server": s + 1, "pass": ok}));
    }
    let all_single = sweep.iter().all(|v| v["pass"] == true);
    check(&mut checks, "every_single_erasure", all_single, json!(sweep));

    let pass = checks.iter().all(|c| c.pass);
    Ok(json!({
        "pass": pass,
        "theta": theta + 1,
        "seed": seed,
        "erasure_set": [erased + 1],
        "delta": [d.0, d.1],
        "q": Q,
        "alpha": p.points.alpha(),
        "f": p.points.f(),
        "u": p.mult.u(),
        "v": p.mult.v(),
        "g": g,
        "h": h,
        "transfer": tr.transfer,
        "x": tr.box_input,
        "y": y,
        "decoded": tr.decoded,
        "expected": tr.expected,
        "rate": rate,
        "checks": checks,
    }))
}
