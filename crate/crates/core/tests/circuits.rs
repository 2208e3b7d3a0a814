mod common;

use common::{pairs, toy_model, RefSite, Reference, Splices};
use ndarray::s;
use syllogism_circuits::circuits::*;
use syllogism_circuits::datasets::{Intervention, SyllogismInstance};
use syllogism_circuits::interventions::SweepOptions;
use syllogism_circuits::metrics::{logit_difference, score_instances};
use syllogism_circuits::model::{forward_hooked, Direction, Hook, ModelBundle};
use syllogism_circuits::{Exec, HeadId};

fn instances(n: usize, seed: u64) -> Vec<SyllogismInstance> {
    pairs("AAA-1", Intervention::MiddleTerm, n, seed).into_iter().map(|p| p.clean).collect()
}

fn silence_head(bundle: &mut ModelBundle, head: HeadId) {
    let d = bundle.config.d_head;
    let w = &mut bundle.layers[head.layer];
    w.w_v.slice_mut(s![.., head.head * d..(head.head + 1) * d]).fill(0.0);
    w.b_v.slice_mut(s![head.head * d..(head.head + 1) * d]).fill(0.0);
}

fn heads(list: &[(usize, usize)]) -> Vec<HeadId> {
    list.iter().map(|&(l, h)| HeadId::new(l, h)).collect()
}

#[test]
fn mean_table_of_repeated_prompt_is_that_run() {
    let bundle = toy_model(2, 2, 16, 50);
    let one = instances(1, 3);
    let repeated = vec![one[0].clone(); 5];
    let table = mean_table(&bundle, &repeated, &Exec::default()).unwrap();
    let cache = forward_hooked(&bundle, &one[0].tokens, &[]).unwrap();
    for (m, h) in table.head_out.iter().zip(&cache.head_out) {
        let diff = m.iter().zip(h.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-6);
    }
    assert_eq!(table.batch_size, 5);

    // Averaging a batch concatenated with itself leaves the table unchanged.
    let batch = instances(6, 4);
    let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
    let a = mean_table(&bundle, &batch, &Exec::default()).unwrap();
    let b = mean_table(&bundle, &doubled, &Exec::Sequential).unwrap();
    for (x, y) in a.head_out.iter().zip(&b.head_out) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-6));
    }
}

#[test]
fn single_prompt_table_leaves_its_prompt_unchanged() {
    let bundle = toy_model(2, 2, 16, 51);
    let inst = instances(1, 5);
    let table = mean_table(&bundle, &inst, &Exec::default()).unwrap();
    let plain = forward_hooked(&bundle, &inst[0].tokens, &[]).unwrap();
    let all = CircuitSpec::all_heads(&bundle.config).heads;
    let hooks: Vec<Hook<'_>> = all.iter().map(|&h| Hook::mean(h, &table)).collect();
    let ablated = forward_hooked(&bundle, &inst[0].tokens, &hooks).unwrap();
    let diff = plain.logits.iter().zip(ablated.logits.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(diff < 1e-4, "{diff}");
}

#[test]
fn single_head_ablation_matches_reference() {
    let bundle = toy_model(3, 2, 16, 52);
    let batch = instances(4, 6);
    let table = mean_table(&bundle, &batch, &Exec::default()).unwrap();
    let oracle = Reference::new(&bundle);
    let runs: Vec<_> = batch.iter().map(|i| oracle.run(&i.tokens, &Splices::new())).collect();
    let ref_mean = Reference::mean_head_out(&runs);
    let circuit = CircuitSpec::new("one", heads(&[(1, 0)])).unwrap();
    let curve = necessity_curve(&bundle, &circuit, &batch, &table, &Exec::default()).unwrap();
    let mut want = Vec::new();
    for inst in &batch {
        let splices: Splices = (0..inst.n_tokens())
            .map(|p| ((RefSite::HeadOut(0), 1, p), ref_mean[1][0][p].clone()))
            .collect();
        want.push(oracle.run(&inst.tokens, &splices).delta(inst.answer_token, inst.distractor_token));
    }
    let mean = want.iter().sum::<f64>() / want.len() as f64;
    assert!((curve.steps[1].mean - mean).abs() < 1e-4, "{} vs {mean}", curve.steps[1].mean);
    let base = runs.iter().zip(&batch).map(|(r, i)| r.delta(i.answer_token, i.distractor_token)).sum::<f64>() / 4.0;
    assert!((curve.baseline.mean - base).abs() < 1e-4);
}

#[test]
fn curve_endpoints_reproduce_baseline() {
    let bundle = toy_model(3, 2, 16, 53);
    let batch = instances(5, 7);
    let table = mean_table(&bundle, &batch, &Exec::default()).unwrap();
    let circuit = CircuitSpec::new("c", heads(&[(0, 1), (2, 0), (1, 1), (2, 1)])).unwrap();
    let nec = necessity_curve(&bundle, &circuit, &batch, &table, &Exec::default()).unwrap();
    assert_eq!(nec.steps.len(), 5);
    assert_eq!(nec.steps[0].mean.to_bits(), nec.baseline.mean.to_bits());
    assert_eq!(nec.steps[0].accuracy, nec.baseline_accuracy);
    assert_eq!(nec.steps[2].heads, heads(&[(2, 0), (2, 1)]));
    assert_eq!(nec.steps[4].heads, heads(&[(2, 0), (2, 1), (1, 1), (0, 1)]));

    let full = CircuitSpec::all_heads(&bundle.config);
    let suf = sufficiency_curve(&bundle, &full, &batch, &table, &Exec::default()).unwrap();
    assert_eq!(suf.final_mean().to_bits(), suf.baseline.mean.to_bits());
    assert_eq!(suf.steps[1].heads, heads(&[(0, 0)]));

    let base = score_instances(&bundle, &batch, &Exec::default()).unwrap();
    let report = evaluate_conditions(&nec, &suf, &base, Margins::default()).unwrap();
    assert!(report.sufficiency);
    assert_eq!(report.baseline_mean.to_bits(), nec.baseline.mean.to_bits());
    assert_eq!(report.positive_baseline, report.baseline_mean > 0.0);

    let empty = CircuitSpec::new("empty", vec![]).unwrap();
    let flat = necessity_curve(&bundle, &empty, &batch, &table, &Exec::default()).unwrap();
    assert_eq!(flat.steps.len(), 1);
    assert_eq!(flat.final_mean().to_bits(), flat.baseline.mean.to_bits());
}

#[test]
fn ablating_a_constant_head_changes_nothing() {
    let mut bundle = toy_model(2, 2, 16, 54);
    let dead = HeadId::new(0, 1);
    silence_head(&mut bundle, dead);
    let batch = instances(4, 8);
    let table = mean_table(&bundle, &batch, &Exec::default()).unwrap();
    let circuit = CircuitSpec::new("dead", vec![dead]).unwrap();
    let curve = necessity_curve(&bundle, &circuit, &batch, &table, &Exec::default()).unwrap();
    assert!((curve.final_mean() - curve.baseline.mean).abs() < 1e-6);
    for inst in &batch {
        let cache = forward_hooked(&bundle, &inst.tokens, &[Hook::mean(dead, &table)]).unwrap();
        let plain = forward_hooked(&bundle, &inst.tokens, &[]).unwrap();
        let a = logit_difference(&cache, inst).unwrap().delta;
        let b = logit_difference(&plain, inst).unwrap().delta;
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn ablation_rejects_bad_inputs() {
    let bundle = toy_model(2, 2, 16, 55);
    let batch = instances(3, 9);
    let table = mean_table(&bundle, &batch, &Exec::default()).unwrap();
    let outside = CircuitSpec::new("x", heads(&[(2, 0)])).unwrap();
    assert!(necessity_curve(&bundle, &outside, &batch, &table, &Exec::default()).is_err());
    assert!(CircuitSpec::new("dup", heads(&[(0, 0), (0, 0)])).is_err());
    assert!(CircuitSpec::default().validate(&bundle.config).is_err());
    assert!(mean_table(&bundle, &[], &Exec::default()).is_err());

    let mut mixed = batch.clone();
    mixed.push(pairs("OAO-3", Intervention::MiddleTerm, 1, 1).remove(0).clean);
    assert!(mean_table(&bundle, &mixed, &Exec::default()).is_err());
}

#[test]
fn circuit_spec_json_roundtrip() {
    let spec = CircuitSpec::default();
    assert_eq!(spec.heads.len(), 15);
    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(CircuitSpec::from_json(&json).unwrap(), spec);
    let up = spec.upstream_first();
    assert!(up.windows(2).all(|w| (w[0].layer, w[0].head) < (w[1].layer, w[1].head)));
    let down = spec.downstream_first();
    assert!(down.windows(2).all(|w| w[0].layer > w[1].layer || (w[0].layer == w[1].layer && w[0].head < w[1].head)));
}

#[test]
fn mover_scores_are_consistent() {
    let bundle = toy_model(2, 2, 16, 56);
    let batch = pairs("AAA-1", Intervention::MiddleTerm, 6, 10);
    let opts = SweepOptions::new(Direction::Denoise);
    let scores = mover_scores(&bundle, &batch, &opts).unwrap();
    assert_eq!(scores.len(), 4);
    let again = mover_scores(&bundle, &batch, &SweepOptions { exec: Exec::Sequential, ..opts.clone() }).unwrap();
    assert_eq!(scores, again);
    let classes = classify_movers(&scores);
    for (s, c) in scores.iter().zip(&classes) {
        assert_eq!(c.ppd, s.s_p.abs() - (s.s_m1 + s.s_m2).abs());
        assert_eq!(c.quadrant, Quadrant::of(c.s_all, c.ppd));
        assert!([s.s_all, s.s_p, s.s_m1, s.s_m2].iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    let mut bundle = bundle;
    silence_head(&mut bundle, HeadId::new(1, 1));
    let scores = mover_scores(&bundle, &batch, &opts).unwrap();
    let dead = scores.iter().find(|s| s.head == HeadId::new(1, 1)).unwrap();
    assert_eq!((dead.s_all, dead.s_p, dead.s_m1, dead.s_m2), (0.0, 0.0, 0.0, 0.0));
}
