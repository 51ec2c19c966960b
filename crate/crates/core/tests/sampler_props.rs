mod common;

use dagvi::dag_sampler::{
    construct_from_dag, dag_from_parts, grad_matrix, is_acyclic, sample_dag, sample_dag_with_noise,
    sample_edges, topological_matrix, GumbelNoise, HardDagSampler, PosteriorNoise, PriorityScores,
};
use dagvi::diffcore::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 2..25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grad_is_antisymmetric(p in scores()) {
        let g = grad_matrix(&PriorityScores(p.clone()));
        let d = p.len();
        for i in 0..d {
            prop_assert_eq!(g.get(i, i), 0.0);
            for j in 0..d {
                prop_assert_eq!(g.get(i, j), p[j] - p[i]);
                prop_assert_eq!(g.get(i, j), -g.get(j, i));
            }
        }
    }

    #[test]
    fn topo_matrix_is_a_complete_order(p in scores(), t in 0.01f64..5.0) {
        let topo = topological_matrix(&PriorityScores(p.clone()), t).unwrap();
        let d = p.len();
        prop_assert!(is_acyclic(&topo.hard));
        for i in 0..d {
            prop_assert_eq!(topo.hard.get(i, i), 0.0);
            for j in 0..d {
                if i == j { continue; }
                prop_assert!((topo.soft.get(i, j) + topo.soft.get(j, i) - 1.0).abs() < 1e-12);
                prop_assert_eq!(topo.hard.get(i, j) + topo.hard.get(j, i), 1.0);
                if p[j] != p[i] {
                    prop_assert_eq!(topo.hard.get(i, j) == 1.0, p[j] > p[i]);
                }
            }
        }
    }

    #[test]
    fn sampled_graphs_are_dags_inside_w(d in 2usize..30, seed in any::<u64>(), t in 0.05f64..2.0, tau in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = common::random_posterior(d, &mut rng);
        let noise = PosteriorNoise::draw(d, &mut rng);
        let a = sample_dag_with_noise(&params, t, tau, &noise).unwrap();
        prop_assert!(is_acyclic(&a.hard));
        let w = sample_edges(&params, tau, &noise.gumbel).unwrap();
        for i in 0..d {
            prop_assert_eq!(a.hard.get(i, i), 0.0);
            prop_assert_eq!(a.soft.get(i, i), 0.0);
            for j in 0..d {
                prop_assert!(a.hard.get(i, j) <= w.hard.get(i, j));
                prop_assert!((0.0..=1.0).contains(&a.soft.get(i, j)));
            }
        }
        let fused = sample_dag(&params, t, tau, &mut rng).unwrap();
        prop_assert!(is_acyclic(&fused.hard));
    }

    #[test]
    fn hard_sampler_matches_fused_draw(d in 2usize..12, seed in any::<u64>(), t in 0.05f64..2.0, tau in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = common::random_posterior(d, &mut rng);
        let sampler = HardDagSampler::new(&params);
        for _ in 0..5 {
            let mut a = rng.clone();
            let mut b = rng.clone();
            prop_assert_eq!(sampler.sample(&mut a).unwrap(), sample_dag(&params, t, tau, &mut b).unwrap().hard);
            prop_assert_eq!(a.get_word_pos(), b.get_word_pos());
            rng = a;
        }
    }

    #[test]
    fn edge_hardening_is_the_soft_argmax(d in 2usize..10, seed in any::<u64>(), tau in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = common::random_posterior(d, &mut rng);
        let e = sample_edges(&params, tau, &GumbelNoise::draw(d, &mut rng)).unwrap();
        for i in 0..d {
            prop_assert_eq!(e.hard.get(i, i), 0.0);
            for j in 0..d {
                if i != j {
                    prop_assert_eq!(e.hard.get(i, j) == 1.0, e.soft.get(i, j) > 0.5);
                }
            }
        }
    }

    #[test]
    fn every_dag_is_reachable(d in 2usize..25, p in 0.0f64..0.6, seed in any::<u64>(), t in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_dag(d, p, &mut rng);
        let (w, scores) = construct_from_dag(&a).unwrap();
        prop_assert_eq!(dag_from_parts(&w, &scores, t).unwrap(), a);
    }
}

#[test]
fn cyclic_input_is_rejected() {
    let mut a = Tensor::zeros(3, 3);
    a.set(0, 1, 1.0);
    a.set(1, 2, 1.0);
    a.set(2, 0, 1.0);
    assert!(!is_acyclic(&a));
    assert!(construct_from_dag(&a).is_err());
}
