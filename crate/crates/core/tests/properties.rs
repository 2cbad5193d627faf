use diablo::backbone::{LayerStack, LayerStackConfig};
use diablo::rng::seeded;
use diablo::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        (rows, cols, data) in (1usize..5, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), values(r * c))),
        scale in -20.0f64..20.0,
        axis in 0usize..2,
    ) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = t.softmax(x, axis, scale).unwrap();
        let out = t.value(s);
        prop_assert!(out.data().iter().all(|&p| p >= 0.0));
        let (outer, len) = if axis == 0 { (cols, rows) } else { (rows, cols) };
        for o in 0..outer {
            let total: f64 = (0..len)
                .map(|i| if axis == 0 { out.get(&[i, o]) } else { out.get(&[o, i]) })
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "sum {}", total);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(
        (u, v) in (1usize..8).prop_flat_map(|n| (values(n), values(n))),
        lambda in 0.01f64..100.0,
        mu in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(u.clone()));
        let b = t.constant(Tensor::vector(v.clone()));
        let c = t.cosine_similarity(a, b, 1e-12).unwrap();
        let su = t.constant(Tensor::vector(u.iter().map(|x| x * lambda).collect()));
        let sv = t.constant(Tensor::vector(v.iter().map(|x| x * mu).collect()));
        let cs = t.cosine_similarity(su, sv, 1e-12).unwrap();
        let (c, cs) = (t.value(c).item(), t.value(cs).item());
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
        prop_assert!((c - cs).abs() < 1e-9, "{} vs {}", c, cs);
    }

    #[test]
    fn concat_then_slice_gives_back_the_parts(parts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..6), 1..5)) {
        let mut t = Tape::new();
        let vars: Vec<_> = parts.iter().map(|p| t.constant(Tensor::vector(p.clone()))).collect();
        let joined = t.concat(&vars).unwrap();
        let mut at = 0;
        for p in &parts {
            prop_assert_eq!(&t.value(joined).data()[at..at + p.len()], &p[..]);
            at += p.len();
        }
        prop_assert_eq!(at, t.value(joined).len());
    }

    #[test]
    fn stacks_commute_with_spatial_permutation(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let stack = LayerStack::init(&LayerStackConfig::uniform(5, 4, 2, seed)).unwrap();
        let x = diablo::rng::normal_tensor(&[3, 4, 5], seed ^ 1);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut seeded(shuffle_seed));
        let permute = |t: &Tensor, width: usize| {
            let data = order.iter().flat_map(|&loc| t.data()[loc * width..(loc + 1) * width].to_vec()).collect();
            Tensor::new(vec![3, 4, width], data).unwrap()
        };
        let a = permute(&stack.apply(&x).unwrap(), 4);
        let b = stack.apply(&permute(&x, 5)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn stacks_are_deterministic() {
    let cfg = LayerStackConfig::uniform(8, 8, 3, 42);
    let x = diablo::rng::normal_tensor(&[4, 4, 8], 0);
    let a = LayerStack::init(&cfg).unwrap().apply(&x).unwrap();
    let b = LayerStack::init(&cfg).unwrap().apply(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
