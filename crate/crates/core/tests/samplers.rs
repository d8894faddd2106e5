//! Empirical laws of the survival samplers against the closed forms.

use dtesim::dte_model::{
    sample_conditional, sample_control, sample_experimental, survival_control,
    survival_experimental, Arm, ControlParams, ScenarioDraw,
};
use dtesim::rng::{stream, Purpose};

const N: usize = 100_000;

/// Kolmogorov distance between the sample's empirical cdf and `cdf`.
fn sup_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn two_sample_ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

// two-sample critical value at level 0.01 for equal sizes
fn ks_critical(n: usize) -> f64 {
    1.628 * (2.0 / n as f64).sqrt()
}

#[test]
fn control_sampler_matches_weibull_law() {
    for (lambda, gamma) in [(0.08, 1.0), (0.2, 2.0), (0.05, 0.7)] {
        let p = ControlParams::new(lambda, gamma).unwrap();
        let xs = sample_control(N, &p, &mut stream(1, Purpose::General, 0)).unwrap();
        let d = sup_distance(xs, |t| 1.0 - survival_control(t, &p).unwrap());
        assert!(d < 0.01, "lambda {lambda} gamma {gamma}: {d}");
    }
}

#[test]
fn experimental_sampler_matches_piecewise_law() {
    let p = ControlParams::new(0.08, 1.0).unwrap();
    for (delay, hr) in [(4.0, 0.6), (0.0, 0.5), (10.0, 0.3)] {
        let s = ScenarioDraw::new(p, delay, hr).unwrap();
        let xs = sample_experimental(N, &s, &mut stream(2, Purpose::General, 0)).unwrap();
        let d = sup_distance(xs, |t| 1.0 - survival_experimental(t, &s).unwrap());
        assert!(d < 0.01, "delay {delay} hr {hr}: {d}");
    }
    let s = ScenarioDraw::new(ControlParams::new(0.1, 1.6).unwrap(), 3.0, 0.7).unwrap();
    let xs = sample_experimental(N, &s, &mut stream(3, Purpose::General, 0)).unwrap();
    assert!(sup_distance(xs, |t| 1.0 - survival_experimental(t, &s).unwrap()) < 0.01);
}

#[test]
fn unit_hazard_ratio_matches_control_sampler() {
    let p = ControlParams::new(0.08, 1.0).unwrap();
    let s = ScenarioDraw::new(p, 4.0, 1.0).unwrap();
    let a = sample_experimental(N, &s, &mut stream(4, Purpose::General, 0)).unwrap();
    let b = sample_control(N, &p, &mut stream(4, Purpose::General, 1)).unwrap();
    assert!(two_sample_ks(a, b) < ks_critical(N));
}

#[test]
fn conditioning_on_zero_is_unconditional() {
    let s = ScenarioDraw::new(ControlParams::new(0.08, 1.3).unwrap(), 4.0, 0.6).unwrap();
    let mut rng = stream(5, Purpose::General, 0);
    let a: Vec<f64> = (0..N)
        .map(|_| sample_conditional(Arm::Experimental, 0.0, &s, &mut rng).unwrap())
        .collect();
    let b = sample_experimental(N, &s, &mut stream(5, Purpose::General, 1)).unwrap();
    assert!(two_sample_ks(a, b) < ks_critical(N));
}

#[test]
fn exponential_residual_life_is_memoryless() {
    let p = ControlParams::new(0.08, 1.0).unwrap();
    let s = ScenarioDraw::null(p);
    let mut rng = stream(6, Purpose::General, 0);
    let residual: Vec<f64> = (0..N)
        .map(|_| sample_conditional(Arm::Control, 7.5, &s, &mut rng).unwrap() - 7.5)
        .collect();
    let fresh = sample_control(N, &p, &mut stream(6, Purpose::General, 1)).unwrap();
    assert!(two_sample_ks(residual, fresh) < ks_critical(N));
}

#[test]
fn conditional_law_across_the_knot() {
    // elapsed before the knot: P(T > t | T > e) = S(t) / S(e)
    let s = ScenarioDraw::new(ControlParams::new(0.08, 1.2).unwrap(), 6.0, 0.5).unwrap();
    let e = 2.5;
    let se = survival_experimental(e, &s).unwrap();
    let mut rng = stream(7, Purpose::General, 0);
    let xs: Vec<f64> = (0..N)
        .map(|_| sample_conditional(Arm::Experimental, e, &s, &mut rng).unwrap())
        .collect();
    assert!(xs.iter().all(|&t| t > e));
    let d = sup_distance(xs, |t| 1.0 - survival_experimental(t, &s).unwrap() / se);
    assert!(d < 0.01, "{d}");
}
