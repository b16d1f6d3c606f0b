use lfgw_core::{classify, EnvPair, EnvPath, EnvSpec, LinearFractional, PathState};
use proptest::prelude::*;

fn lf_params() -> impl Strategy<Value = (f64, f64)> {
    (-3.0f64..3.0, -3.0f64..3.0)
        .prop_map(|(la, lb)| (10f64.powf(la), 10f64.powf(lb)))
        .prop_filter("a + b >= 1", |(a, b)| a + b >= 1.0)
}

fn env_pair() -> impl Strategy<Value = EnvPair> {
    (0.1f64..4.0, 0.0f64..3.0)
        .prop_filter("a + b >= 1", |(a, b)| a + b >= 1.0)
        .prop_map(|(a, b)| EnvPair::new(a, b).unwrap())
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / (1.0 + x.abs().max(y.abs()))
}

proptest! {
    #[test]
    fn mixture_round_trip((a, b) in lf_params()) {
        let lf = LinearFractional::new(a, b).unwrap();
        let m = lf.to_mixture();
        let back = LinearFractional::from_params(m.w0, m.geom.p()).unwrap();
        prop_assert!(rel(back.a(), a) < 1e-12 && rel(back.b(), b) < 1e-12, "{a} {b} -> {back:?}");
    }

    #[test]
    fn series_approaches_gf(a in 0.2f64..5.0, b in 0.8f64..5.0, s in 0.0f64..0.99) {
        let lf = LinearFractional::new(a, b).unwrap();
        let mut sum = 0.0;
        let mut power = 1.0;
        for k in 0..4000u64 {
            sum += lf.pmf(k) * power;
            power *= s;
        }
        prop_assert!((sum - lf.gf(s).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn iteration_is_a_semigroup(a in 0.3f64..3.0, b in 0.7f64..2.0, m in 0u64..40, n in 0u64..40) {
        let lf = LinearFractional::new(a, b).unwrap();
        let whole = lf.iterate(m + n);
        let split = lf.iterate(m).compose(&lf.iterate(n));
        prop_assert!((whole.ln_a() - split.ln_a()).abs() < 1e-12);
        prop_assert!(rel(whole.b(), split.b()) < 1e-12);
        let nested = lf.iterate(m).iterate(n);
        let product = lf.iterate(m * n);
        prop_assert!(nested.ln_b() == product.ln_b() || rel(nested.ln_b(), product.ln_b()) < 1e-10);
        let mean = whole.moments().mean;
        prop_assert!(rel(mean.ln(), -((m + n) as f64) * a.ln()) < 1e-10);
    }

    #[test]
    fn duality_holds_pathwise(pairs in prop::collection::vec(env_pair(), 1..60)) {
        let fw = PathState::from_pairs(&pairs);
        let rev = PathState::from_pairs(pairs.iter().rev());
        prop_assert!(rel(fw.rdual(), rev.r() / rev.pi()) < 1e-12);
        prop_assert!(rel(fw.r(), rev.rdual() * rev.pi()) < 1e-12);
    }

    #[test]
    fn perpetuity_sums_are_monotone(pairs in prop::collection::vec(env_pair(), 1..60)) {
        let path = EnvPath::new(pairs);
        for k in 1..=path.len() {
            let (prev, cur) = (path.state(k - 1).unwrap(), path.state(k).unwrap());
            prop_assert!(cur.r() >= prev.r() && cur.rdual() >= prev.rdual());
        }
    }

    #[test]
    fn classification_ignores_atom_order(
        atoms in prop::collection::vec((env_pair(), 1u32..10), 1..5),
        split in 0usize..5,
    ) {
        let total: u32 = atoms.iter().map(|x| x.1).sum();
        let table: Vec<(f64, f64, f64)> = atoms
            .iter()
            .map(|(p, w)| (p.a(), p.b(), *w as f64 / total as f64))
            .collect();
        let mut reordered = table.clone();
        reordered.reverse();
        // one atom split into two halves
        let i = split % table.len();
        let (a, b, w) = table[i];
        let mut merged = table.clone();
        merged[i].2 = w / 2.0;
        merged.push((a, b, w / 2.0));
        let base = classify(&EnvSpec::table(&table).unwrap()).map(|t| t.sub_case).ok();
        prop_assert_eq!(base, classify(&EnvSpec::table(&reordered).unwrap()).map(|t| t.sub_case).ok());
        prop_assert_eq!(base, classify(&EnvSpec::table(&merged).unwrap()).map(|t| t.sub_case).ok());
    }

    #[test]
    fn tilt_keeps_support_and_mass(atoms in prop::collection::vec((env_pair(), 1u32..10), 1..5)) {
        let total: u32 = atoms.iter().map(|x| x.1).sum();
        let table: Vec<(f64, f64, f64)> = atoms
            .iter()
            .map(|(p, w)| (p.a(), p.b(), *w as f64 / total as f64))
            .collect();
        let env = EnvSpec::table(&table).unwrap();
        let base = env.atoms().unwrap();
        let tilted = env.tilt().unwrap().atoms().unwrap();
        let sum: f64 = tilted.iter().map(|t| t.weight).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(base.len(), tilted.len());
        for (t, u) in tilted.iter().zip(&base) {
            prop_assert!(t.a == u.a && t.b == u.b && t.weight > 0.0);
        }
    }
}
