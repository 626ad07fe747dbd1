//! Independent recomputations of values the library derives.

mod common {
    pub mod corpus;
}

use std::collections::BTreeMap;

use common::corpus::{default_splits, split_spec};
use precursor::dataset::{split_dataset, AttributeUniverse, ClassWeights, SplitSpec};
use precursor::eval::{evaluate, random_baseline};
use precursor::forest::{fit_forest, ForestParams};
use precursor::gbm::{fit_gbm, GbmParams, RegNode, RegTree};
use precursor::matrix::FeatureMatrix;
use precursor::stack::fit_meta;
use precursor::svm::{fit_linear_svm, SvmParams};
use precursor::synth::{generate_corpus, GeneratorSpec};
use precursor::tree::{fit_tree, TrainingSet, TreeNode, TreeParams};
use rand::Rng;

fn small_spec(n: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n_cases: n,
        seed,
        ..GeneratorSpec::desk_default()
    }
}

#[test]
fn split_keeps_category_proportions_for_most_seeds() {
    let spec = small_spec(10_000, 5);
    let universe = AttributeUniverse::standard();
    let cases = generate_corpus(&spec, &universe).unwrap();
    let cats = &spec.schema.categories;
    let share = |cs: &[precursor::dataset::LabeledCase], c: &str| {
        cs.iter().filter(|x| x.labels_for("incident_type")[0] == c).count() as f64 / cs.len() as f64
    };
    let full: Vec<f64> = cats.iter().map(|c| share(&cases, c)).collect();
    let mut within = vec![0usize; cats.len()];
    for seed in 0..100 {
        let p = split_dataset(
            &cases,
            &SplitSpec {
                seed,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        for (k, c) in cats.iter().enumerate() {
            if (share(&p.test, c) - full[k]).abs() <= 0.03 {
                within[k] += 1;
            }
        }
    }
    for (c, w) in cats.iter().zip(&within) {
        assert!(*w >= 95, "{c}: {w}/100 seeds within 3 points");
    }
}

#[test]
fn leaf_distribution_matches_rerouted_training_weights() {
    let s = default_splits(&small_spec(2000, 9), 0);
    let data = s.train.view().unwrap();
    let counts: Vec<u64> = (0..6)
        .map(|k| s.train.y.iter().filter(|&&y| y == k).count() as u64)
        .collect();
    let cats: Vec<String> = (0..6).map(|k| k.to_string()).collect();
    let cw = ClassWeights::from_counts(&cats, &counts).unwrap();
    let params = TreeParams {
        min_leaf: 4,
        class_weights: Some(cw.clone()),
        ..TreeParams::default()
    };
    let tree = fit_tree(&data, &params, &mut precursor::rng::seeded(0)).unwrap();
    let mut per_leaf: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for i in 0..s.train.len() {
        let leaf = tree.leaf_index(s.train.x.row(i));
        per_leaf.entry(leaf).or_insert_with(|| vec![0.0; 6])[s.train.y[i]] += cw.weights[s.train.y[i]];
    }
    for (leaf, w) in per_leaf {
        let total: f64 = w.iter().sum();
        let TreeNode::Leaf { distribution, .. } = &tree.nodes[leaf] else {
            panic!("routed to a split node");
        };
        for (d, wk) in distribution.iter().zip(&w) {
            assert!((d - wk / total).abs() < 1e-12);
        }
    }
}

#[test]
fn oob_accuracy_tracks_held_out_accuracy() {
    let s = split_spec(
        &small_spec(5000, 20240611),
        &SplitSpec {
            test_fraction: 0.3,
            seed: 3,
            ..SplitSpec::default()
        },
    );
    let data = s.train.view().unwrap();
    let params = ForestParams {
        ntree: 200,
        nodesize: 5,
        seed: 1,
        ..ForestParams::default()
    };
    let f = fit_forest(&data, &params).unwrap();
    let oob = f.oob_accuracy(&data).unwrap();
    let hits = (0..s.test.len())
        .filter(|&i| f.predict(s.test.x.row(i)) == s.test.y[i])
        .count();
    let held_out = hits as f64 / s.test.len() as f64;
    assert!((oob - held_out).abs() <= 0.03, "oob {oob:.4} vs held-out {held_out:.4}");
}

fn constant_loss(train_y: &[usize], val_y: &[usize], k: usize) -> f64 {
    let n = train_y.len() as f64;
    let freq: Vec<f64> = (0..k)
        .map(|c| train_y.iter().filter(|&&y| y == c).count() as f64 / n)
        .collect();
    val_y.iter().map(|&y| -freq[y].ln()).sum::<f64>() / val_y.len() as f64
}

#[test]
fn boosting_improves_on_base_rates_and_reads_only_the_prefix() {
    let s = default_splits(&small_spec(3000, 4), 2);
    let params = GbmParams {
        ntrees_cap: 400,
        patience: 40,
        ..GbmParams::default()
    };
    let m = fit_gbm(&s.train.view().unwrap(), Some(&s.val.view().unwrap()), &params).unwrap();
    let base = constant_loss(&s.train.y, &s.val.y, 6);
    assert!((m.log[0].val_loss - base).abs() < 1e-9, "round 0 is the prior");
    let best = m.log[m.best_round].val_loss;
    assert!(best < base);
    let mut running = f64::INFINITY;
    for r in &m.log[..=m.best_round] {
        assert!(r.val_loss <= running + 0.01, "round {} rose to {}", r.round, r.val_loss);
        running = running.min(r.val_loss);
    }

    // Slow path: walk every stored tree by hand over the used prefix.
    fn walk(t: &RegTree, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &t.nodes[i] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left
                    } else {
                        *right
                    } as usize
                }
                RegNode::Leaf { value } => return *value,
            }
        }
    }
    for i in 0..s.test.len() {
        let x = s.test.x.row(i);
        let mut scores = m.base_scores.clone();
        for round in &m.rounds[..m.best_round] {
            for (acc, t) in scores.iter_mut().zip(round) {
                *acc += walk(t, x);
            }
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / z).collect();
        assert_eq!(p, m.predict_proba(x));
    }

    let mut extended = m.clone();
    let extra = extended.rounds[0].clone();
    extended.rounds.push(extra);
    for i in 0..s.test.len() {
        assert_eq!(
            extended.predict_proba(s.test.x.row(i)),
            m.predict_proba(s.test.x.row(i))
        );
    }
}

#[test]
fn tiny_c_shrinks_the_hyperplane_to_nothing() {
    let x = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let y = [0usize, 1];
    let data = TrainingSet::new(&x, &y, 2).unwrap();
    let cats = vec!["neg".to_string(), "pos".to_string()];
    let mut last = 0.0;
    for e in [-7.0, -5.0, -3.0, -1.0, 1.0, 3.0] {
        let p = SvmParams {
            c: 10f64.powf(e),
            ..SvmParams::default()
        };
        let m = fit_linear_svm(&data, &p, &cats).unwrap();
        let norm = m.weights[1].iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm >= last - 1e-12, "norm fell at C=1e{e}");
        last = norm;
        if e == -7.0 {
            assert!(norm < 1e-6);
            for r in [[0.0, 0.0], [2.0, 0.0]] {
                assert!(m.decision_values(&r).iter().all(|v| v.abs() < 1e-6));
            }
        }
    }
}

#[test]
fn meta_probabilities_recompute_from_serialized_weights() {
    let mut rng = precursor::rng::seeded(8);
    let k = 4;
    let inputs: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let mut a: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v = 2.0 * *v / s);
            a
        })
        .collect();
    let labels: Vec<usize> = inputs.iter().map(|z| precursor::tree::argmax(z)).collect();
    let meta = fit_meta(&inputs, &labels, k, 0.2).unwrap();
    let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&meta).unwrap()).unwrap();
    let w: Vec<Vec<f64>> = serde_json::from_value(v["weights"].clone()).unwrap();
    let b: Vec<f64> = serde_json::from_value(v["bias"].clone()).unwrap();
    for z in &inputs {
        let s: Vec<f64> = (0..k)
            .map(|c| w[c].iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b[c])
            .collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let t: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / t).collect();
        assert_eq!(p, meta.predict_proba(z));
    }
}

#[test]
fn balanced_random_baseline_scores_one_half() {
    let test: Vec<usize> = (0..1000).map(|i| i % 2).collect();
    let s = random_baseline(&[500, 500], &test, 4, 10_000).unwrap();
    for k in 0..2 {
        assert!((s.precision[k] - 0.5).abs() <= 0.02);
        assert!((s.recall[k] - 0.5).abs() <= 0.02);
    }
}

#[test]
fn random_recall_follows_training_frequency_not_test_mix() {
    let train = [600u64, 300, 100];
    let test: Vec<usize> = (0..300)
        .map(|i| {
            if i < 30 {
                0
            } else if i < 150 {
                1
            } else {
                2
            }
        })
        .collect();
    let s = random_baseline(&train, &test, 6, 2000).unwrap();
    for (k, &c) in train.iter().enumerate() {
        let expected = c as f64 / 1000.0;
        assert!(
            (s.recall[k] - expected).abs() < 0.01,
            "class {k}: {} vs {expected}",
            s.recall[k]
        );
    }
}

/// Marginals of the fall-through label model, enumerating the rule
/// attributes directly from the spec.
fn enumerate_marginals(spec: &GeneratorSpec) -> Vec<f64> {
    let u = AttributeUniverse::standard();
    let rate = |a: &str| {
        spec.attribute_rates
            .get(a)
            .copied()
            .unwrap_or(spec.attribute_density / u.len() as f64)
    };
    let mut attrs: Vec<&str> = spec
        .signal
        .iter()
        .flat_map(|r| r.attributes.iter().map(String::as_str))
        .collect();
    attrs.sort();
    attrs.dedup();
    let k = spec.schema.categories.len();
    let mut out = vec![0.0; k];
    for mask in 0u32..1 << attrs.len() {
        let on = |a: &str| mask >> attrs.iter().position(|x| *x == a).unwrap() & 1 == 1;
        let mut weight = 1.0;
        for a in &attrs {
            weight *= if on(a) { rate(a) } else { 1.0 - rate(a) };
        }
        let mut rest = 1.0;
        for r in &spec.signal {
            if r.attributes.iter().all(|a| on(a)) {
                let c = spec.schema.categories.iter().position(|c| *c == r.category).unwrap();
                out[c] += weight * rest * r.strength;
                rest *= 1.0 - r.strength;
            }
        }
        for (o, prior) in out.iter_mut().zip(&spec.base_rates) {
            *o += weight * rest * prior;
        }
    }
    out
}

#[test]
fn synthetic_label_marginals_match_enumeration() {
    let spec = small_spec(50_000, 31);
    let analytic = enumerate_marginals(&spec);
    let lib = spec.analytic_marginals(&AttributeUniverse::standard()).unwrap();
    for (a, b) in analytic.iter().zip(&lib) {
        assert!((a - b).abs() < 1e-12);
    }
    let cases = generate_corpus(&spec, &AttributeUniverse::standard()).unwrap();
    for (k, c) in spec.schema.categories.iter().enumerate() {
        let share = cases.iter().filter(|x| x.labels_for("incident_type")[0] == *c).count() as f64 / cases.len() as f64;
        assert!(
            (share - analytic[k]).abs() <= 0.02,
            "{c}: {share:.4} vs {:.4}",
            analytic[k]
        );
    }
}

#[test]
fn bayes_oracle_beats_trained_models_up_to_noise() {
    let spec = small_spec(3000, 12);
    let s = default_splits(&spec, 1);
    let oracle = precursor::synth::bayes_oracle(&spec, &AttributeUniverse::standard(), &s.test_cases).unwrap();
    let f = fit_forest(
        &s.train.view().unwrap(),
        &ForestParams {
            ntree: 150,
            nodesize: 5,
            ..ForestParams::default()
        },
    )
    .unwrap();
    let pred: Vec<usize> = (0..s.test.len()).map(|i| f.predict(s.test.x.row(i))).collect();
    let model = evaluate(&s.test.y, &pred, 6).unwrap().macro_f1;
    assert!(
        model <= oracle.bayes_macro_f1 + 0.02,
        "forest {model:.4} oracle {:.4}",
        oracle.bayes_macro_f1
    );
}
