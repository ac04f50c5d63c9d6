mod common;

use proptest::prelude::*;

use common::brute_edit_distance;
use dgst_core::editops::{neighbourhood_draw, neighbourhood_with_fraction};
use dgst_core::eval::bleu;
use dgst_core::neural::{load_params, save_params, ParamStore, Tensor};
use dgst_core::{edit_distance, NoiseSpec, RngState, Sentence, Vocab};

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(4u32..10, 0..=max_len)
}

fn vocab() -> Vocab {
    Vocab::from_tokens((0..6).map(|i| format!("t{i}")))
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in tokens(10), b in tokens(10), c in tokens(10)) {
        let (ab, ba) = (edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(ab <= a.len().max(b.len()));
    }

    #[test]
    fn edit_distance_matches_recursion(a in tokens(6), b in tokens(6)) {
        prop_assert_eq!(edit_distance(&a, &b), brute_edit_distance(&a, &b));
    }

    #[test]
    fn noisifier_stays_in_its_neighbourhood(s in tokens(20), fraction in 0.0f64..1.0, seed in any::<u64>()) {
        let v = vocab();
        let s = Sentence(s);
        let mut rng = RngState::new(seed);
        let n = neighbourhood_with_fraction(&s, fraction, &NoiseSpec::new(0.3), &v, &mut rng).unwrap();
        let bound = (fraction * s.len() as f64).round() as usize;
        prop_assert_eq!(n.edits, bound);
        prop_assert!(edit_distance(s.ids(), n.sentence.ids()) <= bound);
        prop_assert!(n.sentence.ids().iter().all(|&t| !Vocab::is_special(t)));
    }

    #[test]
    fn noisifier_is_reproducible(s in prop::collection::vec(4u32..10, 1..15), seed in any::<u64>()) {
        let v = vocab();
        let s = Sentence(s);
        let spec = NoiseSpec::new(0.3);
        let a = neighbourhood_draw(&s, &spec, &v, &mut RngState::new(seed)).unwrap();
        let b = neighbourhood_draw(&s, &spec, &v, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bleu_is_bounded(c in prop::collection::vec(tokens(12), 1..6), seed in any::<u64>()) {
        let cands: Vec<Sentence> = c.into_iter().map(Sentence).collect();
        let mut rng = RngState::new(seed);
        let v = vocab();
        let refs: Vec<Sentence> = cands
            .iter()
            .map(|s| if s.is_empty() { s.clone() } else { neighbourhood_draw(s, &NoiseSpec::new(0.5), &v, &mut rng).unwrap().sentence })
            .collect();
        let score = bleu(&cands, &refs, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
    }

    #[test]
    fn vocab_round_trip(words in prop::collection::vec(0usize..6, 1..12)) {
        let v = vocab();
        let line = words.iter().map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        prop_assert_eq!(v.decode(&v.encode(&line)).unwrap(), line);
    }

    #[test]
    fn checkpoint_round_trip(shapes in prop::collection::vec((1usize..4, 1usize..5), 1..5), seed in any::<u64>()) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        for (i, (r, c)) in shapes.iter().enumerate() {
            store.add_uniform(format!("p{i}"), &[*r, *c], 2.0, &mut rng).unwrap();
        }
        store.add(format!("v{}", shapes.len()), Tensor::zeros(&[3])).unwrap();
        let bytes = save_params(&store);
        let back = load_params(&bytes).unwrap();
        prop_assert_eq!(save_params(&back), bytes);
    }
}

#[test]
fn bleu_falls_as_noise_grows() {
    let v = Vocab::from_tokens((0..50).map(|i| format!("t{i}")));
    let mut rng = RngState::new(17);
    let refs: Vec<Sentence> = (0..300)
        .map(|_| Sentence((0..12).map(|_| 4 + rng.below(50) as u32).collect()))
        .collect();
    let mut last = f64::INFINITY;
    for gamma in [0.0, 0.1, 0.3, 0.6] {
        let spec = NoiseSpec::new(gamma);
        let cands: Vec<Sentence> = refs
            .iter()
            .map(|s| neighbourhood_draw(s, &spec, &v, &mut rng).unwrap().sentence)
            .collect();
        let score = bleu(&cands, &refs, 4).unwrap();
        assert!(score <= last, "gamma {gamma}: {score} > {last}");
        last = score;
    }
    assert!(last < 0.5);
}
