mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcpcfg::chart::{
    all_spans, bracketings, enumerate_trees, expected_span_loss, inside, log_likelihood, map_parse,
    span_marginals,
};
use vcpcfg::grammar::RuleTables;
use vcpcfg::Error;
use vcpcfg_autodiff::{grad_check, GradCheckOptions, Tape};

// One nonterminal A (id 0), one preterminal T (id 1), one word.
// Binary columns: AA = 0, AT = 1, TA = 2, TT = 3.
fn one_symbol(aa: f64, at: f64, ta: f64, tt: f64) -> RuleTables {
    RuleTables::from_probs(1, 1, 1, &[1.0], &[aa, at, ta, tt], &[1.0])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn forced_parse_has_log_likelihood_zero() {
    let g = one_symbol(0.0, 0.0, 0.0, 1.0);
    assert_eq!(log_likelihood(&g, &[0, 0]).unwrap(), 0.0);
}

#[test]
fn three_word_likelihood_by_hand() {
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    let ll = log_likelihood(&g, &[0, 0, 0]).unwrap();
    assert!(close(ll.exp(), 0.24, 1e-15));
    assert!(close(ll, -1.4271, 1e-4));
}

#[test]
fn three_word_marginals_by_hand() {
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    let m = span_marginals(&g, &[0, 0, 0]).unwrap();
    assert!(close(m.mu(0, 2).unwrap(), 0.5, 1e-12));
    assert!(close(m.mu(1, 3).unwrap(), 0.5, 1e-12));
    assert!(close(m.mu(0, 3).unwrap(), 1.0, 1e-12));
    assert!(close(m.total(), 2.0, 1e-12));
    assert_eq!(m.label_posterior(0, 2).unwrap(), vec![1.0]);
}

#[test]
fn invalid_spans_are_rejected() {
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    let m = span_marginals(&g, &[0, 0, 0]).unwrap();
    assert!(matches!(m.label_posterior(1, 2), Err(Error::InvalidSpan { .. })));
    assert!(matches!(m.label_posterior(0, 4), Err(Error::InvalidSpan { .. })));
}

#[test]
fn single_word_has_no_parse() {
    let g = one_symbol(0.0, 0.0, 0.0, 1.0);
    assert!(matches!(log_likelihood(&g, &[0]), Err(Error::NoParse { n: 1 })));
    assert!(matches!(map_parse(&g, &[0]), Err(Error::NoParse { n: 1 })));
}

#[test]
fn root_label_posterior_is_root_times_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = support::random_tables(&mut rng, 3, 2, 3, 2.0);
    let sentence = [2, 0, 1, 1];
    let mut tape = Tape::new();
    let r = g.record(&mut tape);
    let chart = inside(&mut tape, &r, &sentence).unwrap();
    let beta = tape.value(chart.cell(0, 4)).to_vec();
    let weights: Vec<f64> = (0..3).map(|k| (g.root[k] + beta[k]).exp()).collect();
    let total: f64 = weights.iter().sum();
    let post = chart.marginals(&tape).unwrap().label_posterior(0, 4).unwrap();
    for k in 0..3 {
        assert!(close(post[k], weights[k] / total, 1e-12));
    }
}

#[test]
fn two_word_map_is_the_only_bracketing() {
    let g = one_symbol(0.0, 0.0, 0.0, 1.0);
    assert_eq!(map_parse(&g, &[0, 0]).unwrap().spans(), vec![(0, 2)]);
}

#[test]
fn three_word_map_prefers_left_branching() {
    let g = one_symbol(0.0, 0.5, 0.1, 0.4);
    let t = map_parse(&g, &[0, 0, 0]).unwrap();
    assert_eq!(t.spans(), vec![(0, 2), (0, 3)]);
    assert!(close(t.log_prob, (0.5f64 * 0.4).ln(), 1e-12));
    assert_eq!(t.to_tree(&["a", "b", "c"]).to_string(), "(NT0 (NT0 a b) c)");
}

#[test]
fn map_ties_take_the_smallest_split() {
    // Both bracketings score 0.3 * 0.4; split 1 is right-branching.
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    assert_eq!(map_parse(&g, &[0, 0, 0]).unwrap().spans(), vec![(0, 3), (1, 3)]);
}

#[test]
fn expected_span_loss_examples() {
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    let m = span_marginals(&g, &[0, 0, 0]).unwrap();
    let zero: Vec<_> = all_spans(3).into_iter().map(|s| (s, 0.0)).collect();
    assert_eq!(expected_span_loss(&m, &zero).unwrap(), 0.0);
    let ones: Vec<_> = all_spans(3).into_iter().map(|s| (s, 1.0)).collect();
    assert!(close(expected_span_loss(&m, &ones).unwrap(), 2.0, 1e-12));
    let h = [((0, 2), 2.0), ((1, 3), 4.0), ((0, 3), 1.0)];
    assert!(close(expected_span_loss(&m, &h).unwrap(), 4.0, 1e-12));
}

#[test]
fn directional_gradient_on_hand_grammar() {
    let g = one_symbol(0.1, 0.3, 0.2, 0.4);
    let sentence = [0, 0, 0];
    let ones: Vec<_> = all_spans(3).into_iter().map(|s| (s, 1.0)).collect();
    let mut tape = Tape::new();
    let r = g.record_params(&mut tape);
    let chart = inside(&mut tape, &r, &sentence).unwrap();
    let (scalar, _) = chart.expected_loss_gradient(&mut tape, &ones).unwrap();
    assert!(close(scalar, 2.0, 1e-12));

    // Weighted directions exercise the gradient through the marginals.
    let h = [((0, 2), 2.0), ((1, 3), -1.0), ((0, 3), 0.5)];
    let mut tape = Tape::new();
    let r = g.record_params(&mut tape);
    let chart = inside(&mut tape, &r, &sentence).unwrap();
    let (_, grads) = chart.expected_loss_gradient(&mut tape, &h).unwrap();
    let analytic = grads.get("rules.binary").unwrap().to_vec();
    let report = grad_check(
        |p| {
            let mut t = g.clone();
            t.binary = p.to_vec();
            expected_span_loss(&span_marginals(&t, &sentence).unwrap(), &h).unwrap()
        },
        &g.binary,
        &analytic,
        &[],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{:?}", report);
}

#[test]
fn directional_needs_instrumented_spans() {
    let g = one_symbol(0.0, 0.3, 0.3, 0.4);
    let mut tape = Tape::new();
    let r = g.record(&mut tape);
    let chart = inside(&mut tape, &r, &[0, 0, 0]).unwrap();
    assert!(chart.expected_loss_gradient(&mut tape, &[((0, 1), 1.0)]).is_err());
}

#[test]
fn enumeration_counts_follow_catalan() {
    let g = one_symbol(0.25, 0.25, 0.25, 0.25);
    assert_eq!(enumerate_trees(&g, &[0; 3]).unwrap().len(), 2);
    assert_eq!(enumerate_trees(&g, &[0; 5]).unwrap().len(), 14);
    assert_eq!(bracketings(6).len(), 42);
    let mass: f64 = enumerate_trees(&g, &[0; 5]).unwrap().iter().map(|t| t.log_prob.exp()).sum();
    assert!(close(mass, log_likelihood(&g, &[0; 5]).unwrap().exp(), 1e-12));
}

#[test]
fn enumeration_refuses_long_sentences() {
    let g = one_symbol(0.25, 0.25, 0.25, 0.25);
    assert!(matches!(enumerate_trees(&g, &[0; 9]), Err(Error::TooLong { n: 9, .. })));
}

#[test]
fn inside_op_counts_are_cubic() {
    let g = one_symbol(0.25, 0.25, 0.25, 0.25);
    for n in [4usize, 7, 10] {
        let mut tape = Tape::new();
        let r = g.record(&mut tape);
        inside(&mut tape, &r, &vec![0; n]).unwrap();
        let counts = tape.op_counts();
        let splits = (n + 1) * n * (n - 1) / 6;
        let multi_split_spans = (n - 1) * (n - 2) / 2;
        assert_eq!(counts["logsumexp"], splits + multi_split_spans + 1, "n = {}", n);
        assert_eq!(counts["gather"], 4 + n);
        assert_eq!(counts["repeat"], 3 * splits);
    }
}

fn sentence_strategy() -> impl Strategy<Value = (u64, usize, usize, usize, Vec<usize>)> {
    (any::<u64>(), 1..=2usize, 1..=2usize, 1..=3usize, 2..=5usize).prop_flat_map(|(seed, n, p, v, len)| {
        (Just(seed), Just(n), Just(p), Just(v), prop::collection::vec(0..v, len))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inside_marginals_and_map_match_enumeration((seed, n, p, v, sentence) in sentence_strategy()) {
        let g = support::random_tables(&mut ChaCha8Rng::seed_from_u64(seed), n, p, v, 2.0);
        let trees = enumerate_trees(&g, &sentence).unwrap();
        let z: f64 = trees.iter().map(|t| t.log_prob.exp()).sum();
        let ll = log_likelihood(&g, &sentence).unwrap();
        prop_assert!((ll.exp() - z).abs() <= 1e-9 * z.max(1e-300) + 1e-15);

        let m = span_marginals(&g, &sentence).unwrap();
        prop_assert!((m.total() - (sentence.len() - 1) as f64).abs() < 1e-9);
        for (i, j) in all_spans(sentence.len()) {
            let mut lab = vec![0.0; n];
            for t in &trees {
                if let Some(c) = t.nodes.iter().find(|c| (c.start, c.end) == (i, j)) {
                    lab[c.label] += t.log_prob.exp() / z;
                }
            }
            let got = m.labeled(i, j).unwrap();
            for k in 0..n {
                prop_assert!((got[k] - lab[k]).abs() < 1e-9, "span ({}, {}) label {}", i, j, k);
            }
            let mu: f64 = lab.iter().sum();
            prop_assert!(m.mu(i, j).unwrap() <= 1.0 + 1e-9);
            if mu > 1e-12 {
                let post = m.label_posterior(i, j).unwrap();
                for k in 0..n {
                    prop_assert!((post[k] - lab[k] / mu).abs() < 1e-9);
                }
            }
        }

        let best = map_parse(&g, &sentence).unwrap();
        let top = trees.iter().map(|t| t.log_prob).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best.log_prob - top).abs() < 1e-9);
        prop_assert!(best.is_binary_bracketing());
        let found = trees.iter().find(|t| t.nodes == best.nodes && t.tags == best.tags);
        prop_assert!(found.is_some_and(|t| (t.log_prob - best.log_prob).abs() < 1e-9));
    }

    #[test]
    fn tree_oracle_agrees_with_labelled_enumeration((seed, n, p, v, sentence) in sentence_strategy()) {
        let g = support::random_tables(&mut ChaCha8Rng::seed_from_u64(seed), n, p, v, 2.0);
        let trees = enumerate_trees(&g, &sentence).unwrap();
        let z: f64 = trees.iter().map(|t| t.log_prob.exp()).sum();
        let o = support::oracle(&g, &sentence);
        prop_assert!((o.likelihood - z).abs() <= 1e-12 * z);
        let top = trees.iter().map(|t| t.log_prob).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((o.best_log_prob - top).abs() < 1e-9);
    }
}
