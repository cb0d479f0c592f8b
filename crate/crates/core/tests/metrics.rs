mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomomar::metrics::{evaluate, group_scores, grouped_report, psnr, ssim, Scored, CSV_HEADER};
use tomomar::phantom::{gaussian_phantom, GaussianBlob};
use tomomar::simulate::make_instance;
use tomomar::*;

fn random_image(rng: &mut ChaCha8Rng, side: usize) -> ImageGrid<f64> {
    ImageGrid::new(Tensor2D::from_fn(side, side, |_, _| rng.random_range(0.0..1.0)), 1.0).unwrap()
}

#[test]
fn ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a = random_image(&mut rng, 32);
        let noise = random_image(&mut rng, 32);
        let b = a.with_values(a.values().zip_map(noise.values(), |v, n| v + 0.2 * (n - 0.5)).unwrap()).unwrap();
        let fast = ssim(&b, &a, Some(1.0)).unwrap();
        let slow = common::ssim_bruteforce(b.values().as_slice(), a.values().as_slice(), 32, 1.0);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn psnr_matches_reference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_image(&mut rng, 24);
    let b = random_image(&mut rng, 24);
    let mask = BinaryMask::from_fn(24, 24, |r, c| (r + c) % 3 == 0);
    let keep: Vec<bool> = mask.as_slice().iter().map(|m| !m).collect();
    let want = common::psnr_ref(b.values().as_slice(), a.values().as_slice(), &keep, 2.0);
    let got = psnr(&b, &a, Some(2.0), Some(&mask)).unwrap().value();
    assert!((got - want).abs() < 1e-10);
    let report = evaluate(&b, &a, Some(2.0), Some((&mask, "metal"))).unwrap();
    assert_eq!(report.n_pixels, 24 * 24 - mask.count());
    assert_eq!(report.mask.as_deref(), Some("metal"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 16);
        let b = random_image(&mut rng, 16);
        let s_ab = ssim(&a, &b, Some(1.0)).unwrap();
        let s_ba = ssim(&b, &a, Some(1.0)).unwrap();
        prop_assert!((s_ab - s_ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s_ab));
        let p_ab = psnr(&a, &b, Some(1.0), None).unwrap().value();
        let p_ba = psnr(&b, &a, Some(1.0), None).unwrap().value();
        prop_assert!((p_ab - p_ba).abs() < 1e-12);
        prop_assert!(psnr(&a, &a, Some(1.0), None).unwrap().is_identical());
        prop_assert!((ssim(&a, &a, Some(1.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_drops_as_error_grows(seed in any::<u64>(), e in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 16);
        let noise = Tensor2D::from_fn(16, 16, |_, _| rng.random_range(-1.0..1.0));
        let with = |k: f64| a.with_values(a.values().zip_map(&noise, |x, n| x + k * n).unwrap()).unwrap();
        let p1 = psnr(&with(e), &a, Some(1.0), None).unwrap().value();
        let p2 = psnr(&with(2.0 * e), &a, Some(1.0), None).unwrap().value();
        prop_assert!((p1 - p2 - 20.0 * 2f64.log10()).abs() < 1e-9);
    }
}

#[test]
fn grouping_sorts_by_metal_size() {
    let scores: Vec<Scored> = (1..=10).map(|k| Scored { metal_px: k * 10, psnr_db: k as f64, ssim: 0.5 }).collect();
    let r = group_scores(&scores, 2).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!((r.rows[0].metal_px_min, r.rows[0].metal_px_max), (60, 100));
    assert!((r.rows[0].psnr_mean - 8.0).abs() < 1e-12);
    assert!((r.rows[2].psnr_mean - 5.5).abs() < 1e-12);
    assert!(r.to_csv().starts_with(CSV_HEADER));
}

#[test]
fn grouped_report_over_instances() {
    let side = 48;
    let x: ImageGrid<f64> =
        gaussian_phantom(side, 1.0, &[GaussianBlob { center: [0.0, 0.0], sigma: 12.0, amplitude: 0.02 }]).unwrap();
    let fan = FanGeometry::covering(side, 1.0, 120.0, 61, 60).unwrap();
    let plan = RilPlan::new(fan).unwrap();
    let insts: Vec<MarInstance<f64>> = [1.5, 3.0, 5.0]
        .iter()
        .map(|&r| {
            let m = MetalMask::disc(side, 1.0, [6.0, 2.0], r).unwrap();
            make_instance(&x, &m, &Spectrum::default(), None, &plan, 2).unwrap()
        })
        .collect();
    let items: Vec<(&MarInstance<f64>, &ImageGrid<f64>)> = insts.iter().map(|i| (i, &i.x_li)).collect();
    let r = grouped_report(&items, 3).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert_eq!(r.rows[3].n, 3);
    assert!(r.rows[0].metal_px_min > r.rows[2].metal_px_max);
}
