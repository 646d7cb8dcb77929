use detcert::interval::{Interval, IntervalTensor};
use detcert::model::{leaky_relu, Network};
use detcert::oracle::random_network;
use detcert::propagation::{backsubstitute, ibp_forward, relax_leakyrelu, relaxation_area, symbolic_bounds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut impl Rng, n: usize, max_radius: f64) -> IntervalTensor {
    let items: Vec<Interval> = (0..n)
        .map(|_| {
            let c = rng.gen_range(0.0..1.0);
            let r = rng.gen_range(0.0..max_radius);
            Interval::hull(c - r, c + r)
        })
        .collect();
    IntervalTensor::from_intervals(vec![n], &items).unwrap()
}

fn sample_point(rng: &mut impl Rng, b: &IntervalTensor) -> Vec<f64> {
    b.iter()
        .map(|i| if i.is_degenerate() { i.lo() } else { rng.gen_range(i.lo()..=i.hi()) })
        .collect()
}

fn output_box(net: &Network, b: &IntervalTensor) -> IntervalTensor {
    ibp_forward(net, b).unwrap().pop().unwrap()
}

#[test]
fn relaxation_area_examples() {
    assert!((relaxation_area(-2.0, 5.0, 0.1, 0.1).unwrap() - 15.75).abs() < 1e-9);
    assert!((relaxation_area(-2.0, 5.0, 0.1, 1.0).unwrap() - 6.3).abs() < 1e-9);
}

#[test]
fn relaxation_lines_are_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let l = rng.gen_range(-10.0..10.0);
        let u = l + rng.gen_range(0.0..10.0);
        let alpha = rng.gen_range(0.0..=1.0);
        let r = relax_leakyrelu(l, u, alpha).unwrap();
        let x = rng.gen_range(l..=u);
        let y = leaky_relu(x, alpha);
        let tol = 1e-9 * (1.0 + l.abs() + u.abs());
        assert!(r.lower(x) <= y + tol, "lower {l} {u} {alpha} at {x}");
        assert!(r.upper(x) >= y - tol, "upper {l} {u} {alpha} at {x}");
    }
}

#[test]
fn chosen_lower_slope_minimizes_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let l = -rng.gen_range(0.01..10.0);
        let u = rng.gen_range(0.01..10.0);
        let alpha = rng.gen_range(0.0..1.0);
        let r = relax_leakyrelu(l, u, alpha).unwrap();
        let chosen = relaxation_area(l, u, alpha, r.lower_slope).unwrap();
        let naive = relaxation_area(l, u, alpha, alpha).unwrap();
        assert!(chosen <= naive + 1e-12);
        for _ in 0..10 {
            let s = rng.gen_range(alpha..=1.0);
            assert!(chosen <= relaxation_area(l, u, alpha, s).unwrap() + 1e-12);
        }
    }
}

#[test]
fn bad_relaxation_inputs_are_rejected() {
    assert!(relax_leakyrelu(1.0, 0.0, 0.1).is_err());
    assert!(relax_leakyrelu(-1.0, 1.0, 1.5).is_err());
    assert!(relaxation_area(0.5, 1.0, 0.1, 0.1).is_err());
    assert!(relaxation_area(-1.0, 1.0, 0.5, 0.2).is_err());
}

#[test]
fn ibp_and_backsub_enclose_sampled_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let net = random_network(&mut rng, 4, 64, true);
        let b = random_box(&mut rng, net.input_len(), 0.3);
        let ibp = output_box(&net, &b);
        let bs = backsubstitute(&net, &b).unwrap();
        for _ in 0..100 {
            let y = net.forward(&sample_point(&mut rng, &b)).unwrap();
            for (k, v) in y.iter().enumerate() {
                let tol = 1e-9 * (1.0 + v.abs());
                let (i, s) = (ibp.get(k), bs.get(k));
                assert!(i.lo() - tol <= *v && *v <= i.hi() + tol, "ibp output {k}: {v} not in {i:?}");
                assert!(s.lo() - tol <= *v && *v <= s.hi() + tol, "backsub output {k}: {v} not in {s:?}");
            }
        }
    }
}

#[test]
fn point_inputs_reproduce_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let net = random_network(&mut rng, 4, 64, true);
        let x: Vec<f64> = (0..net.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = IntervalTensor::point(vec![x.len()], x.clone()).unwrap();
        let y = net.forward(&x).unwrap();
        for out in [output_box(&net, &p), backsubstitute(&net, &p).unwrap()] {
            for (k, v) in y.iter().enumerate() {
                assert!((out.get(k).lo() - v).abs() < 1e-9 && (out.get(k).hi() - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn widening_the_input_never_shrinks_ibp_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let net = random_network(&mut rng, 4, 32, true);
        let inner = random_box(&mut rng, net.input_len(), 0.2);
        let items: Vec<Interval> = inner
            .iter()
            .map(|i| Interval::hull(i.lo() - rng.gen_range(0.0..0.1), i.hi() + rng.gen_range(0.0..0.1)))
            .collect();
        let outer = IntervalTensor::from_intervals(vec![items.len()], &items).unwrap();
        let (a, b) = (output_box(&net, &inner), output_box(&net, &outer));
        for k in 0..a.len() {
            assert!(b.get(k).lo() <= a.get(k).lo() + 1e-12 && a.get(k).hi() <= b.get(k).hi() + 1e-12);
        }
    }
}

#[test]
fn backsub_is_usually_tighter_than_ibp() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tighter, mut total) = (0usize, 0usize);
    for _ in 0..100 {
        let net = random_network(&mut rng, 4, 32, true);
        let b = random_box(&mut rng, net.input_len(), 0.1);
        let ibp = output_box(&net, &b);
        let bs = backsubstitute(&net, &b).unwrap();
        for k in 0..ibp.len() {
            total += 1;
            if bs.get(k).width() <= ibp.get(k).width() + 1e-9 {
                tighter += 1;
            }
        }
    }
    assert!(tighter as f64 >= 0.9 * total as f64, "{tighter}/{total}");
}

#[test]
fn affine_family_bounds_enclose_samples_on_the_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let net = random_network(&mut rng, 3, 32, true);
        let n = net.input_len();
        let base: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t = Interval::new(-0.3, 0.3).unwrap();
        let hull: Vec<Interval> = base
            .iter()
            .zip(&dir)
            .map(|(b, d)| Interval::hull(b + t.lo() * d, b + t.hi() * d))
            .collect();
        let input = IntervalTensor::from_intervals(vec![n], &hull).unwrap();
        let sym = symbolic_bounds(&net, &input).unwrap();
        let line = sym.concretize_affine(&base, &dir, t).unwrap();
        let boxed = sym.concretize_box(&input).unwrap();
        for _ in 0..50 {
            let s = rng.gen_range(t.lo()..=t.hi());
            let x: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
            for (k, v) in net.forward(&x).unwrap().iter().enumerate() {
                assert!(line.get(k).contains(*v) || (line.get(k).lo() - v).abs() < 1e-9 || (line.get(k).hi() - v).abs() < 1e-9);
            }
        }
        for k in 0..line.len() {
            assert!(line.get(k).width() <= boxed.get(k).width() + 1e-9);
        }
    }
}
