//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod grad_suite;

use pathloss_lab::nn::{GradSet, ParamStore};

pub const FD_STEP: f64 = 1e-3;
pub const FD_RTOL: f64 = 1e-3;
pub const FD_ATOL: f64 = 1e-6;

/// Summary of one finite-difference sweep.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

impl FdReport {
    pub fn add(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.skipped += o.skipped;
    }
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ATOL || diff <= FD_RTOL * analytic.abs().max(numeric.abs())
}

/// Central differences over a flat vector. `eval` returns the loss and the
/// ReLU sign pattern of the pass.
pub fn check_vector(
    x: &mut [f64],
    analytic: &[f64],
    eval: &mut dyn FnMut(&[f64]) -> (f64, Vec<bool>),
    label: &str,
) -> Result<FdReport, String> {
    let (_, base_sig) = eval(x);
    let mut rep = FdReport::default();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let (lp, sp) = eval(x);
        x[i] = orig - FD_STEP;
        let (lm, sm) = eval(x);
        x[i] = orig;
        if sp != base_sig || sm != base_sig {
            rep.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        if !close(analytic[i], numeric) {
            return Err(format!("{label}[{i}]: analytic {} vs numeric {numeric}", analytic[i]));
        }
        rep.checked += 1;
    }
    Ok(rep)
}

/// Central differences over every parameter of a store.
pub fn check_store(
    store: &mut ParamStore<f64>,
    analytic: &GradSet<f64>,
    eval: &mut dyn FnMut(&ParamStore<f64>) -> (f64, Vec<bool>),
) -> Result<FdReport, String> {
    let (_, base_sig) = eval(store);
    let mut rep = FdReport::default();
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        for i in 0..len {
            let orig = store.value(id).data[i];
            store.value_mut(id).data[i] = orig + FD_STEP;
            let (lp, sp) = eval(store);
            store.value_mut(id).data[i] = orig - FD_STEP;
            let (lm, sm) = eval(store);
            store.value_mut(id).data[i] = orig;
            if sp != base_sig || sm != base_sig {
                rep.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic.get(id).data[i];
            if !close(a, numeric) {
                return Err(format!("{name}[{i}]: analytic {a} vs numeric {numeric}"));
            }
            rep.checked += 1;
        }
    }
    Ok(rep)
}

/// Golden-section minimiser of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares exponent of `pl = fspl(f, 1 m) + 10 n log10(d)` by direct search.
pub fn golden_ple(samples: &[(f64, f64)], frequency_hz: f64) -> f64 {
    let c = 299_792_458.0;
    let intercept = 20.0 * (4.0 * std::f64::consts::PI * frequency_hz / c).log10();
    let sse = |n: f64| samples.iter().map(|(d, pl)| (pl - intercept - 10.0 * n * d.log10()).powi(2)).sum::<f64>();
    golden_section(sse, 0.0, 10.0, 1e-11)
}

/// Straight-line evaluation of `x W + b` followed by an optional ReLU.
pub fn dense(x: &[f64], w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    let (n_in, n_out) = (x.len(), b.len());
    assert_eq!(w.len(), n_in * n_out);
    (0..n_out)
        .map(|j| {
            let mut s = b[j];
            for i in 0..n_in {
                s += x[i] * w[i * n_out + j];
            }
            if relu { s.max(0.0) } else { s }
        })
        .collect()
}
