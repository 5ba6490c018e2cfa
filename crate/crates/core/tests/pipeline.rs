use qecsa::codes::k_subsets;
use qecsa::protocol::{plan_scheme, plan_scheme_with, run_end_to_end, PlanOptions, Regime};
use qecsa::verify::{verify_correctness, verify_mds, VerifyConfig, VerifyMode};
use qecsa::FieldSpec;

#[test]
fn every_regime_round_trips() {
    let cases = [
        ((4, 2, 1, 1, 1), Regime::R1),
        ((8, 2, 1, 1, 2), Regime::R2Even),
        ((7, 3, 1, 1, 2), Regime::R2Odd),
        ((10, 2, 2, 1, 6), Regime::R3),
        ((8, 2, 1, 0, 3), Regime::ClassicalOnly),
    ];
    for ((n, k, x, t, e), regime) in cases {
        let p = plan_scheme(n, k, x, t, e, 17).unwrap();
        assert_eq!(p.regime, regime, "({n},{k},{x},{t},{e})");
        for theta in 0..k {
            for set in k_subsets(n, e) {
                let deltas: Vec<_> = if regime.is_quantum() {
                    set.iter().map(|&s| (p.field.elem(s as u64 + 1), p.field.elem(2))).collect()
                } else {
                    Vec::new()
                };
                let tr = run_end_to_end(&p, theta, 31 * theta as u64 + set.len() as u64, &set, &deltas).unwrap();
                assert!(tr.success, "({n},{k},{x},{t},{e}) theta={theta} erased={set:?}");
            }
        }
    }
}

#[test]
fn custom_layout_round_trips() {
    let field = FieldSpec::new(13).unwrap();
    let opts = PlanOptions { alpha: Some(vec![3, 7, 1, 12, 5, 9]), f: Some(vec![0, 11]), u: Some(vec![2, 5, 1, 7, 3, 4]) };
    let p = plan_scheme_with(6, 3, 1, 2, 1, field, &opts).unwrap();
    let cfg = VerifyConfig { seeds: 3, ..VerifyConfig::default() };
    let r = verify_correctness(&p, VerifyMode::Exhaustive, &cfg).unwrap();
    assert!(r.pass, "{:?}", r.witnesses);
    assert!(verify_mds(&p, &cfg).unwrap().pass);
}

#[test]
fn transcript_json_schema() {
    let p = plan_scheme(5, 2, 1, 1, 1, 7).unwrap();
    let tr = run_end_to_end(&p, 1, 3, &[4], &[(p.field.elem(6), p.field.elem(0))]).unwrap();
    let j = serde_json::to_value(&tr).unwrap();
    for key in [
        "n", "k", "x", "t", "e", "q", "regime", "alpha", "f", "u", "v", "instances", "rate", "theta", "seed",
        "messages", "shares", "queries", "answers", "erasure_set", "declared_erasures", "deltas", "box_input",
        "box_output", "transfer", "decoded", "expected", "recovered", "success", "download_qudits",
        "delivered_symbols",
    ] {
        assert!(j.get(key).is_some(), "missing {key}");
    }
    assert_eq!(j["theta"], 2);
    assert_eq!(j["erasure_set"], serde_json::json!([5]));
    assert_eq!(j["regime"], "R2_odd");
    assert_eq!(j["rate"], "3/5");
    assert_eq!(j["download_qudits"], 5);
    assert_eq!(j["decoded"]["deltas"][0]["first"], 6);
    assert_eq!(j["transfer"].as_array().unwrap().len(), 5);
    assert_eq!(j["transfer"][0].as_array().unwrap().len(), 10);
    let text = serde_json::to_string(&tr).unwrap();
    assert_eq!(text, serde_json::to_string(&run_end_to_end(&p, 1, 3, &[4], &[(p.field.elem(6), p.field.elem(0))]).unwrap()).unwrap());
}

#[test]
fn fewer_erasures_than_planned() {
    let p = plan_scheme(8, 2, 1, 1, 2, 11).unwrap();
    let tr = run_end_to_end(&p, 0, 8, &[6], &[(p.field.elem(4), p.field.elem(9))]).unwrap();
    assert!(tr.success);
    assert_eq!(tr.declared_erasures, vec![0, 6]);
    let none = run_end_to_end(&p, 1, 8, &[], &[]).unwrap();
    assert!(none.success);
    assert_eq!(none.declared_erasures, vec![0, 1]);
}
