use barw::lattice::{
    box_average, compute_density, random_walk_kernel, window_counts, Boundary, Configuration, DensityField,
    LatticeShape,
};
use barw::rng::{poisson_sample, StreamRng, UniformField};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn naive_counts(cfg: &Configuration, r: i64) -> Vec<u32> {
    let shape = cfg.shape();
    (0..shape.len())
        .map(|i| {
            let c = shape.coords(i);
            shape.ball_indices(&c, r).into_iter().filter(|&j| cfg.get(j)).count() as u32
        })
        .collect()
}

fn shape_strategy() -> impl Strategy<Value = (LatticeShape, u32)> {
    (1usize..=3, 3usize..=9, any::<bool>(), 0u32..=4).prop_map(|(d, side, periodic, r)| {
        let b = if periodic { Boundary::Periodic } else { Boundary::ZeroPadded };
        // Keep the ball inside one period on tori so multiplicities stay 1.
        let r = if periodic { r.min(((side - 1) / 2) as u32) } else { r };
        (LatticeShape::cube(d, side, b).unwrap(), r)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sliding_window_matches_naive((shape, r) in shape_strategy(), seed in any::<u64>()) {
        let mut rng = StreamRng::new(seed, 0);
        let cfg = Configuration::product_bernoulli(shape, 0.4, &mut rng).unwrap();
        prop_assert_eq!(window_counts(&cfg, r).unwrap(), naive_counts(&cfg, r as i64));
    }

    #[test]
    fn density_is_translation_equivariant(side in 5usize..30, r in 0u32..3, shift in 0i64..30, seed in any::<u64>()) {
        let shape = LatticeShape::cube(1, side, Boundary::Periodic).unwrap();
        let mut rng = StreamRng::new(seed, 0);
        let cfg = Configuration::product_bernoulli(shape.clone(), 0.5, &mut rng).unwrap();
        let moved: Vec<u8> = (0..side).map(|i| cfg.bits()[(i as i64 - shift).rem_euclid(side as i64) as usize]).collect();
        let moved = Configuration::from_bits(shape, moved).unwrap();
        let a = compute_density(&cfg, r).unwrap();
        let b = compute_density(&moved, r).unwrap();
        for i in 0..side {
            prop_assert_eq!(b.get(i), a.get((i as i64 - shift).rem_euclid(side as i64) as usize));
        }
    }

    #[test]
    fn box_average_matches_counts((shape, r) in shape_strategy(), seed in any::<u64>()) {
        let mut rng = StreamRng::new(seed, 0);
        let cfg = Configuration::product_bernoulli(shape.clone(), 0.3, &mut rng).unwrap();
        let vals = cfg.bits().iter().map(|&b| b as f64).collect();
        let avg = box_average(&DensityField::new(shape, vals).unwrap(), r);
        let dens = compute_density(&cfg, r).unwrap();
        for (x, y) in avg.values().iter().zip(dens.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn text_roundtrip((shape, _r) in shape_strategy(), seed in any::<u64>()) {
        let mut rng = StreamRng::new(seed, 0);
        let cfg = Configuration::product_bernoulli(shape, 0.5, &mut rng).unwrap();
        let mut buf = Vec::new();
        cfg.write_text(&mut buf).unwrap();
        prop_assert_eq!(Configuration::read_text(&buf[..]).unwrap(), cfg);
    }
}

#[test]
fn kernel_is_repeated_box_convolution() {
    // Oracle: convolve a point mass by the uniform ball law n times.
    let shape = LatticeShape::cube(2, 21, Boundary::ZeroPadded).unwrap();
    for (r, n) in [(1, 0), (1, 3), (2, 2), (3, 1)] {
        let k = random_walk_kernel(&shape, r, n).unwrap();
        let mut f = DensityField::constant(shape.clone(), 0.0);
        f.values_mut()[shape.origin()] = 1.0;
        for _ in 0..n {
            f = box_average(&f, r);
        }
        let total: f64 = k.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (a, b) in k.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14, "r={r} n={n}");
        }
    }
    assert!(random_walk_kernel(&shape, 4, 3).is_err());
}

#[test]
fn kernel_two_step_closed_form() {
    // R = 1, d = 1: two steps give the triangle 1,2,3,2,1 over 9.
    let shape = LatticeShape::cube(1, 11, Boundary::ZeroPadded).unwrap();
    let k = random_walk_kernel(&shape, 1, 2).unwrap();
    let o = shape.origin();
    let expect = [1.0, 2.0, 3.0, 2.0, 1.0];
    for (j, e) in expect.iter().enumerate() {
        assert!((k.get(o - 2 + j) - e / 9.0).abs() < 1e-15);
    }
}

#[test]
fn uniforms_pass_ks() {
    let field = UniformField::new(12345);
    let n = 1_000_000usize;
    let mut xs: Vec<f64> = (0..n).map(|i| field.uniform_at((i / 1000) as u64, i % 1000)).collect();
    assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    // 1% critical value of the Kolmogorov distribution.
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn uniform_field_is_keyed_and_order_free() {
    let a = UniformField::new(1);
    let b = UniformField::new(2);
    let mut row = vec![0.0; 500];
    a.fill_row(7, &mut row);
    for (i, &v) in row.iter().enumerate().rev() {
        assert_eq!(v.to_bits(), a.uniform_at(7, i).to_bits());
    }
    let same = (0..100_000).filter(|&i| a.uniform_at(i as u64 % 50, i) == b.uniform_at(i as u64 % 50, i)).count();
    assert_eq!(same, 0);
}

#[test]
fn poisson_p_one_matches_phi() {
    let mut rng = StreamRng::new(99, 4);
    let draws = 100_000;
    let mut chi2 = 0.0;
    let mut k = 0;
    for mu in [0.5, 1.0, 2.0, 4.0, 8.0] {
        for w in [0.05, 0.2, 0.5, 1.0] {
            let mean: f64 = mu * w;
            let p = mean * (-mean).exp();
            let ones = (0..draws).filter(|_| poisson_sample(mean, &mut rng).unwrap() == 1).count() as f64;
            let e = draws as f64 * p;
            chi2 += (ones - e).powi(2) / (e * (1.0 - p));
            k += 1;
        }
    }
    let pval = 1.0 - ChiSquared::new(k as f64).unwrap().cdf(chi2);
    assert!(pval > 0.001, "chi-square p = {pval}");
}

#[test]
fn poisson_mean_and_large_means() {
    let mut rng = StreamRng::new(5, 0);
    assert_eq!(poisson_sample(0.0, &mut rng).unwrap(), 0);
    assert!(poisson_sample(-1.0, &mut rng).is_err());
    assert!(poisson_sample(f64::NAN, &mut rng).is_err());
    for mean in [2.0, 25.0] {
        let n = 1_000_000;
        let s: u64 = (0..n).map(|_| poisson_sample(mean, &mut rng).unwrap()).sum();
        let m = s as f64 / n as f64;
        assert!((m - mean).abs() < 3.0 * (mean / n as f64).sqrt(), "mean {mean}: {m}");
    }
}
