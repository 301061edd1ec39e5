use evseg_core::mrf::{alpha_expansion, min_cut, BinaryEnergy, FlowNetwork, MultiLabelProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, n: usize, k: usize) -> MultiLabelProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MultiLabelProblem::new(n, k);
    for v in p.unary.iter_mut() {
        *v = rng.gen_range(0.0..10.0);
    }
    for i in 1..n {
        for _ in 0..2 {
            p.edges.push((rng.gen_range(0..i), i, rng.gen_range(0.0..3.0)));
        }
    }
    for c in p.label_costs.iter_mut() {
        *c = rng.gen_range(0.0..8.0);
    }
    p
}

fn energy(p: &MultiLabelProblem, l: &[usize]) -> f64 {
    let unary: f64 = l.iter().enumerate().map(|(i, &li)| p.unary[i * p.num_labels + li]).sum();
    let pair: f64 = p.edges.iter().filter(|e| l[e.0] != l[e.1]).map(|e| e.2).sum();
    let mdl: f64 = (0..p.num_labels).filter(|k| l.contains(k)).map(|k| p.label_costs[k]).sum();
    unary + pair + mdl
}

proptest! {
    #[test]
    fn expansion_energy_is_consistent_and_monotone(seed in any::<u64>(), n in 2usize..60, k in 2usize..6) {
        let p = problem(seed, n, k);
        let init: Vec<usize> = (0..n).map(|i| i % k).collect();
        let r = alpha_expansion(&p, &init);
        prop_assert!((r.energy - energy(&p, &r.labels)).abs() <= 1e-9);
        prop_assert!(r.energy <= energy(&p, &init) + 1e-9);
        prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn expansion_is_label_permutation_equivariant(seed in any::<u64>(), n in 2usize..30, perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let k = 4;
        let p = problem(seed, n, k);
        let mut q = p.clone();
        for i in 0..n {
            for l in 0..k {
                q.unary[i * k + perm[l]] = p.unary[i * k + l];
            }
        }
        for l in 0..k {
            q.label_costs[perm[l]] = p.label_costs[l];
        }
        let init: Vec<usize> = vec![0; n];
        let a = alpha_expansion(&p, &init);
        let b = alpha_expansion(&q, &init.iter().map(|&l| perm[l]).collect::<Vec<_>>());
        // Energies match exactly; labelings match whenever the optimum found
        // is unique up to the permutation.
        prop_assert!((a.energy - b.energy).abs() <= 1e-9 || a.labels.iter().map(|&l| perm[l]).collect::<Vec<_>>() != b.labels);
        prop_assert!((a.energy - energy(&p, &a.labels)).abs() <= 1e-9);
    }

    #[test]
    fn min_cut_matches_enumeration(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = FlowNetwork::new(n);
        let mut src = vec![0.0; n];
        let mut snk = vec![0.0; n];
        for i in 0..n {
            src[i] = rng.gen_range(0.0..5.0);
            snk[i] = rng.gen_range(0.0..5.0);
            g.add_terminal(i, src[i], snk[i]);
        }
        let mut arcs = Vec::new();
        for _ in 0..2 * n {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                let c = rng.gen_range(0.0..3.0);
                g.add_arc(a, b, c);
                arcs.push((a, b, c));
            }
        }
        let value = |side: &dyn Fn(usize) -> bool| {
            (0..n).map(|i| if side(i) { snk[i] } else { src[i] }).sum::<f64>()
                + arcs.iter().filter(|a| side(a.0) && !side(a.1)).map(|a| a.2).sum::<f64>()
        };
        let best = (0..1u32 << n).map(|m| value(&|i| m >> i & 1 == 1)).fold(f64::INFINITY, f64::min);
        let cut = min_cut(&g);
        prop_assert!((cut.value - best).abs() <= 1e-9);
        prop_assert!((value(&|i| cut.source_side[i]) - best).abs() <= 1e-9);
    }

    #[test]
    fn binary_minimum_matches_enumeration(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut be = BinaryEnergy::with_variables(n);
        for i in 0..n {
            be.add_unary(i, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        }
        for _ in 0..2 * n {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i != j {
                // Submodular: e00 + e11 <= e01 + e10.
                let (a, d) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
                be.add_pairwise(i, j, a, a + d + rng.gen_range(0.0..2.0), d + rng.gen_range(0.0..2.0), d);
            }
        }
        let (x, e) = be.minimize();
        let best = (0..1u32 << n)
            .map(|m| be.evaluate(&(0..n).map(|i| m >> i & 1 == 1).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((e - best).abs() <= 1e-9);
        prop_assert!((be.evaluate(&x) - e).abs() <= 1e-9);
    }
}
