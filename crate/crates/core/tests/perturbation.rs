use detcert::model::Image;
use detcert::perturbation::{build_input_set, line_kernel, motion_blur, PerturbationKind, PerturbationSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [PerturbationKind; 3] = [PerturbationKind::Brightness, PerturbationKind::Contrast, PerturbationKind::MotionBlur];

fn random_image(rng: &mut impl Rng) -> Image {
    let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(3..=9), rng.gen_range(3..=9));
    Image::new([c, h, w], (0..c * h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
}

fn spec(rng: &mut impl Rng, kind: PerturbationKind, eps: f64) -> PerturbationSpec {
    match kind {
        PerturbationKind::MotionBlur => {
            PerturbationSpec::motion_blur(eps, [0.0, 45.0, 90.0, 135.0][rng.gen_range(0..4)], [3, 5, 7][rng.gen_range(0..3)])
        }
        k => PerturbationSpec::new(k, eps),
    }
}

/// Direct formula for the perturbed image at parameter `t`.
fn reference(image: &Image, s: &PerturbationSpec, t: f64) -> Vec<f64> {
    match s.kind {
        PerturbationKind::Brightness => image.data().iter().map(|x| x + t).collect(),
        PerturbationKind::Contrast => image.data().iter().map(|x| (1.0 - t) * x + 0.5 * t).collect(),
        PerturbationKind::MotionBlur => {
            let b = motion_blur(image, s.kernel_size, s.angle_deg).unwrap();
            image.data().iter().zip(b.data()).map(|(x, y)| (1.0 - t) * x + t * y).collect()
        }
    }
}

#[test]
fn realized_images_match_the_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..3000 {
        let img = random_image(&mut rng);
        let eps = rng.gen_range(0.0..1.0);
        let s = spec(&mut rng, KINDS[k % 3], eps);
        let set = build_input_set(&img, &s).unwrap();
        let r = s.t_range();
        let t = if r.is_degenerate() { r.lo() } else { rng.gen_range(r.lo()..=r.hi()) };
        for (a, b) in set.realize(t).data().iter().zip(reference(&img, &s, t)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn concretized_box_contains_every_realization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..3000 {
        let img = random_image(&mut rng);
        let eps = rng.gen_range(0.0..1.0);
        let s = spec(&mut rng, KINDS[k % 3], eps);
        let set = build_input_set(&img, &s).unwrap();
        let b = set.concretize();
        let r = set.t();
        for t in [r.lo(), r.hi(), r.mid()] {
            for (i, v) in set.realize(t).data().iter().enumerate() {
                assert!(b.get(i).contains(*v));
            }
        }
    }
}

#[test]
fn parameter_ranges() {
    assert_eq!(PerturbationSpec::new(PerturbationKind::Brightness, 0.3).t_range().lo(), -0.3);
    assert_eq!(PerturbationSpec::new(PerturbationKind::Contrast, 0.3).t_range().lo(), 0.0);
    assert_eq!(PerturbationSpec::motion_blur(0.3, 0.0, 5).t_range().hi(), 0.3);
}

#[test]
fn full_contrast_is_uniform_grey() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(&mut rng);
    let set = build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Contrast, 1.0)).unwrap();
    assert!(set.realize(1.0).data().iter().all(|v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn blur_kernel_is_normalized_and_preserves_constants_inside() {
    for angle in [0.0, 45.0, 90.0, 135.0] {
        for k in [1, 3, 5, 7] {
            let taps = line_kernel(k, angle).unwrap();
            assert_eq!(taps.len(), k);
            let r = (k / 2) as isize;
            let img = Image::new([2, 11, 11], vec![0.7; 242]).unwrap();
            let out = motion_blur(&img, k, angle).unwrap();
            // Zero padding darkens the border, so only pixels whose taps
            // stay inside the image are checked.
            for c in 0..2 {
                for y in r..11 - r {
                    for x in r..11 - r {
                        let v = out.data()[(c * 11 + y as usize) * 11 + x as usize];
                        assert!((v - 0.7).abs() < 1e-12, "angle {angle} k {k}");
                    }
                }
            }
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let img = Image::new([1, 3, 3], vec![0.5; 9]).unwrap();
    assert!(build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Brightness, -0.1)).is_err());
    assert!(build_input_set(&img, &PerturbationSpec::motion_blur(0.1, 30.0, 5)).is_err());
    assert!(build_input_set(&img, &PerturbationSpec::motion_blur(0.1, 0.0, 4)).is_err());
    let bright = Image::new([1, 3, 3], vec![1.5; 9]).unwrap();
    assert!(build_input_set(&bright, &PerturbationSpec::new(PerturbationKind::Brightness, 0.1)).is_err());
}

#[test]
fn perturbation_kind_names() {
    let k: PerturbationKind = serde_json::from_str("\"motionblur\"").unwrap();
    assert_eq!(k, PerturbationKind::MotionBlur);
    let k: PerturbationKind = serde_json::from_str("\"motion_blur\"").unwrap();
    assert_eq!(k, PerturbationKind::MotionBlur);
    assert!(serde_json::from_str::<PerturbationKind>("\"rotation\"").is_err());
}
