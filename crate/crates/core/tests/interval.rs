use detcert::interval::{iv_add, iv_affine, iv_monotone, iv_mul, sigmoid, Interval, IntervalTensor, Matrix, Monotonicity};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_interval(rng: &mut impl Rng) -> Interval {
    let a = rng.gen_range(-10.0..10.0);
    let b = rng.gen_range(-10.0..10.0);
    Interval::hull(a, b)
}

fn sample(rng: &mut impl Rng, i: Interval) -> f64 {
    if i.is_degenerate() {
        i.lo()
    } else {
        rng.gen_range(i.lo()..=i.hi())
    }
}

#[test]
fn binary_ops_enclose_sampled_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let (a, b) = (random_interval(&mut rng), random_interval(&mut rng));
        let (x, y) = (sample(&mut rng, a), sample(&mut rng, b));
        assert!(iv_add(a, b).contains(x + y));
        assert!(iv_mul(a, b).contains(x * y), "{a:?} * {b:?} misses {}", x * y);
    }
}

#[test]
fn monotone_maps_enclose_sampled_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let a = random_interval(&mut rng);
        let x = sample(&mut rng, a);
        assert!(iv_monotone(sigmoid, Monotonicity::Increasing, a).contains(sigmoid(x)));
        assert!(iv_monotone(f64::exp, Monotonicity::Increasing, a).contains(x.exp()));
        assert!(iv_monotone(|v| -v, Monotonicity::Decreasing, a).contains(-x));
    }
}

#[test]
fn degenerate_inputs_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (x, y) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let (a, b) = (Interval::point(x), Interval::point(y));
        assert_eq!(iv_add(a, b), Interval::point(x + y));
        assert_eq!(iv_mul(a, b), Interval::point(x * y));
        assert_eq!(iv_monotone(sigmoid, Monotonicity::Increasing, a), Interval::point(sigmoid(x)));
    }
}

#[test]
fn affine_encloses_sampled_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let w = Matrix::new(m, n, (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let bias: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let items: Vec<Interval> = (0..n).map(|_| random_interval(&mut rng)).collect();
        let x = IntervalTensor::from_intervals(vec![n], &items).unwrap();
        let y = iv_affine(&w, &bias, &x).unwrap();
        for _ in 0..20 {
            let p: Vec<f64> = items.iter().map(|&i| sample(&mut rng, i)).collect();
            let v = w.mul_vec(&p);
            for (k, vk) in v.iter().enumerate() {
                assert!(y.get(k).contains(vk + bias[k]));
            }
        }
        let centre: Vec<f64> = items.iter().map(|i| i.mid()).collect();
        let exact = iv_affine(&w, &bias, &IntervalTensor::point(vec![n], centre.clone()).unwrap()).unwrap();
        for (k, v) in w.mul_vec(&centre).iter().enumerate() {
            assert!((exact.get(k).lo() - (v + bias[k])).abs() < 1e-12);
            assert!(exact.get(k).is_degenerate());
        }
    }
}

#[test]
fn inverted_interval_is_rejected() {
    assert!(Interval::new(1.0, 0.0).is_err());
    assert!(Interval::new(f64::NAN, 0.0).is_err());
    assert!(IntervalTensor::new(vec![1], vec![2.0], vec![1.0]).is_err());
}

proptest! {
    #[test]
    fn hull_and_intersection_agree(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, d in -1e3f64..1e3) {
        let (x, y) = (Interval::hull(a, b), Interval::hull(c, d));
        match x.intersect(&y) {
            Some(z) => {
                prop_assert!(x.encloses(&z) && y.encloses(&z));
                prop_assert!(z.lo() == x.lo().max(y.lo()) && z.hi() == x.hi().min(y.hi()));
            }
            None => prop_assert!(x.hi() < y.lo() || y.hi() < x.lo()),
        }
    }

    #[test]
    fn multiplication_is_commutative(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, d in -1e3f64..1e3) {
        let (x, y) = (Interval::hull(a, b), Interval::hull(c, d));
        prop_assert_eq!(iv_mul(x, y), iv_mul(y, x));
    }
}
