mod support;

use dtaa::geometry::{conic_to_canonical, contains, inflate, min_enclosing_ellipse, ConicEllipse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{conic_residual, khachiyan_mvee, min_enclosing_circle_radius};

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
        .collect()
}

#[test]
fn twenty_points_match_khachiyan_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..40 {
        let pts = random_points(&mut rng, 20);
        let e = conic_to_canonical(&min_enclosing_ellipse(&pts).unwrap()).unwrap();
        let (_, _, oracle_area) = khachiyan_mvee(&pts, 1e-12);
        let rel = (e.area() - oracle_area).abs() / oracle_area;
        assert!(
            rel < 1e-6,
            "area {} vs oracle {} (rel {rel:e})",
            e.area(),
            oracle_area
        );
        for p in &pts {
            let conic = ConicEllipse::from_canonical(&e);
            assert!(conic_residual(conic.0, *p) <= 1e-9, "point {p:?} outside");
        }
    }
}

#[test]
fn small_sets_match_khachiyan_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 3..=8 {
        for _ in 0..20 {
            let pts = random_points(&mut rng, n);
            let e = conic_to_canonical(&min_enclosing_ellipse(&pts).unwrap()).unwrap();
            let (_, _, oracle_area) = khachiyan_mvee(&pts, 1e-12);
            let rel = (e.area() - oracle_area).abs() / oracle_area;
            assert!(
                rel < 1e-6,
                "n={n}: area {} vs oracle {}",
                e.area(),
                oracle_area
            );
        }
    }
}

#[test]
fn never_larger_than_enclosing_circle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for n in 2..=12 {
        for _ in 0..10 {
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0)])
                .collect();
            let e = conic_to_canonical(&min_enclosing_ellipse(&pts).unwrap()).unwrap();
            let r = min_enclosing_circle_radius(&pts);
            assert!(e.area() <= std::f64::consts::PI * r * r * (1.0 + 1e-9));
            for p in &pts {
                assert!(contains(&inflate(&e, 0.0).unwrap(), *p).inside);
            }
        }
    }
}
