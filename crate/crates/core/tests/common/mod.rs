#![allow(dead_code)]

use chaosode::integrate::{solve, Ivp, Substeps};
use chaosode::rhs::LotkaVolterra;
use chaosode::ObservationSet;

pub const LV: LotkaVolterra = LotkaVolterra {
    alpha: 1.5,
    beta: 1.0,
    gamma: 1.0,
    delta: 3.0,
};

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Noise-free predator-prey observations from (1, 1).
pub fn lv_data(n: usize, t_end: f64) -> ObservationSet {
    let times = linspace(0.0, t_end, n);
    let ivp = Ivp::new(&LV, vec![], vec![1.0, 1.0], 0.0, t_end).unwrap();
    let traj = solve(&ivp, &times, Substeps::MaxStep(1e-4)).unwrap();
    ObservationSet::new(times, traj.states, vec![1.0, 1.0], 0.0).unwrap()
}

pub fn rel_inf_error(g: &[f64], reference: &[f64]) -> f64 {
    let num = g.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den
}

/// Central differences with step `1e-6 * max(|p|, 1)`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|j| {
            let h = 1e-6 * p[j].abs().max(1.0);
            let (mut a, mut b) = (p.to_vec(), p.to_vec());
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (a[j] - b[j])
        })
        .collect()
}
