use barw::dynamics::{
    coupled_run, particle_step, pca_step, psi_step, step_with, Comparison, CoupledEnsemble, ModelParams, Observers,
    PsiSpec, UpdateRule, ValidatedPsi,
};
use barw::lattice::{compute_density, Boundary, Configuration, LatticeShape};
use barw::rng::{StreamRng, UniformField};
use barw::thresholds::mutilde;
use proptest::prelude::*;

fn phi(mu: f64, w: f64) -> f64 {
    mu * w * (-mu * w).exp()
}

fn ring(side: usize) -> LatticeShape {
    LatticeShape::cube(1, side, Boundary::Periodic).unwrap()
}

#[test]
fn pca_marginals_match_phi() {
    let shape = ring(60);
    let params = ModelParams::new(3.0, 3, shape.clone()).unwrap();
    let mut rng = StreamRng::new(8, 1);
    let cfg = Configuration::product_bernoulli(shape, 0.35, &mut rng).unwrap();
    let dens = compute_density(&cfg, 3).unwrap();
    let reps = 100_000u64;
    let probes: Vec<usize> = (0..10).map(|k| 6 * k).collect();
    let mut hits = vec![0u64; probes.len()];
    for rep in 0..reps {
        let next = pca_step(&cfg, &params, &UniformField::new(rep), 0).unwrap();
        for (h, &x) in hits.iter_mut().zip(&probes) {
            *h += next.get(x) as u64;
        }
    }
    for (h, &x) in hits.iter().zip(&probes) {
        let p = phi(3.0, dens.get(x));
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((*h as f64 / reps as f64 - p).abs() <= 3.0 * se + 1e-12, "site {x}");
    }
}

#[test]
fn single_particle_low_mean_mostly_dies() {
    let shape = ring(41);
    let params = ModelParams::new(0.01, 2, shape.clone()).unwrap();
    let cfg = Configuration::single_site(shape, &[0]).unwrap();
    let mut rng = StreamRng::new(3, 3);
    let empty = (0..10_000).filter(|_| particle_step(&cfg, &params, &mut rng).unwrap().is_extinct()).count();
    assert!(empty as f64 / 10_000.0 >= 0.985, "{empty}");
}

#[test]
fn absorbing_and_deterministic() {
    let shape = ring(50);
    let params = ModelParams::new(2.0, 2, shape.clone()).unwrap();
    let field = UniformField::new(4);
    let empty = Configuration::empty(shape.clone());
    assert!(pca_step(&empty, &params, &field, 0).unwrap().is_extinct());
    let mut rng = StreamRng::new(1, 3);
    assert!(particle_step(&empty, &params, &mut rng).unwrap().is_extinct());
    let psi = ValidatedPsi::new(PsiSpec::Linear { mu_tilde: 0.9 }, Comparison::Above, &params);
    // 0.9 w lies below phi_2 near 0, so the Above check must refuse it.
    assert!(psi.is_err());
    let ones = Configuration::all_ones(shape);
    assert_eq!(pca_step(&ones, &params, &field, 5).unwrap(), pca_step(&ones, &params, &field, 5).unwrap());
}

#[test]
fn extinction_comparison_dominates() {
    // mu = 5, R = 1 is above the band: mu~ < 1 and phi <= mu~ w on the grid.
    let shape = ring(300);
    let params = ModelParams::new(5.0, 1, shape.clone()).unwrap();
    let mt = mutilde(5.0, 1, 1).unwrap();
    assert!(mt < 1.0);
    let psi = ValidatedPsi::new(PsiSpec::Linear { mu_tilde: mt }, Comparison::Above, &params).unwrap();
    for seed in 0..20 {
        let field = UniformField::new(seed);
        let mut a = Configuration::all_ones(shape.clone());
        let mut b = a.clone();
        for n in 0..100 {
            a = pca_step(&a, &params, &field, n).unwrap();
            b = psi_step(&b, &psi, &params, &field, n).unwrap();
            assert!(a.dominated_by(&b), "seed {seed} n {n}");
        }
    }
}

#[test]
fn invalid_cap_linear_rejected() {
    let params = ModelParams::new(2.0, 3, ring(30)).unwrap();
    assert!(ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: 1.9, b: 0.5 }, Comparison::Below, &params).is_err());
    assert!(ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: 1.5, b: 0.14 }, Comparison::Below, &params).is_ok());
}

#[test]
fn identical_members_agree_and_empty_pair_is_coupled() {
    let shape = ring(200);
    let params = ModelParams::new(2.0, 4, shape.clone()).unwrap();
    let mut ens = CoupledEnsemble::new(params.clone(), UniformField::new(11));
    let ones = Configuration::all_ones(shape.clone());
    ens.add_member("a", ones.clone(), UpdateRule::Phi).unwrap();
    ens.add_member("b", ones, UpdateRule::Phi).unwrap();
    ens.add_member("c", Configuration::empty(shape.clone()), UpdateRule::Phi).unwrap();
    ens.add_member("d", Configuration::empty(shape), UpdateRule::Phi).unwrap();
    let obs = Observers { pairs: vec![(0, 1), (2, 3)], windows: vec![10, 50], keep_masks: true, ..Default::default() };
    let rep = coupled_run(&mut ens, 50, &obs).unwrap();
    assert!(rep.masks.iter().all(|t| t.iter().all(|m| m.iter().all(|&x| x))));
    assert_eq!(rep.first_agreement[0], vec![Some(0), Some(0)]);
    assert_eq!(rep.first_agreement[1], vec![Some(0), Some(0)]);
    assert!(rep.records.iter().all(|r| r.members[2].count == 0 && r.members[3].count == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translation_equivariance(side in 10usize..60, r in 0u32..4, shift in 0usize..60, mu in 0.5f64..6.0, seed in any::<u64>()) {
        let shift = shift % side;
        let shape = ring(side);
        let mut rng = StreamRng::new(seed, 0);
        let cfg = Configuration::product_bernoulli(shape.clone(), 0.5, &mut rng).unwrap();
        let params = ModelParams::new(mu, r, shape.clone()).unwrap();
        let table = params.phi_table();
        let mut u = vec![0.0; side];
        UniformField::new(seed).fill_row(1, &mut u);
        let rot = |v: &[u8]| -> Vec<u8> { (0..side).map(|i| v[(i + side - shift) % side]).collect() };
        let u_rot: Vec<f64> = (0..side).map(|i| u[(i + side - shift) % side]).collect();
        let moved = Configuration::from_bits(shape, rot(cfg.bits())).unwrap();
        let a = step_with(&cfg, r, &table, &mut &u[..]).unwrap();
        let b = step_with(&moved, r, &table, &mut &u_rot[..]).unwrap();
        prop_assert_eq!(b.bits(), &rot(a.bits())[..]);
    }

    #[test]
    fn cap_linear_domination_is_sitewise(mu in 1.5f64..4.0, r in 2u32..8, p in 0.05f64..1.0, seed in any::<u64>()) {
        let shape = ring(120);
        let params = ModelParams::new(mu, r, shape.clone()).unwrap();
        // Largest cap with slope 1.2 that stays below phi_mu.
        let a = 1.2f64.min(mu * 0.9);
        let b = (mu / a).ln() / mu * a * 0.9;
        let psi = match ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: a, b }, Comparison::Below, &params) {
            Ok(psi) => psi,
            Err(_) => return Ok(()),
        };
        let mut rng = StreamRng::new(seed, 1);
        let eta0 = Configuration::product_bernoulli(shape.clone(), p, &mut rng).unwrap();
        // Thin the dominating start to get the comparison start.
        let thin: Vec<u8> = eta0.bits().iter().enumerate().map(|(i, &b)| b & (i % 2) as u8).collect();
        let mut small = Configuration::from_bits(shape, thin).unwrap();
        let mut big = eta0;
        let field = UniformField::new(seed);
        for n in 0..60 {
            big = pca_step(&big, &params, &field, n).unwrap();
            small = psi_step(&small, &psi, &params, &field, n).unwrap();
            prop_assert!(small.dominated_by(&big));
        }
    }
}
