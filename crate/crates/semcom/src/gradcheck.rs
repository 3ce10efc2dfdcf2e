//! Central finite-difference gradient verification.
//!
//! Probes a subset of coordinates per parameter — the largest-magnitude
//! analytic entries plus a few seeded random picks — and compares against
//! (f(p+h·e) − f(p−h·e)) / 2h.

use crate::error::Result;
use crate::layers::{GradStore, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `"name[i]"` of the worst coordinate.
    pub worst: String,
    pub coords_checked: usize,
}

pub const DEFAULT_STEP: f64 = 1e-3;

/// `loss` must be a pure function of the parameter values.
pub fn grad_check<F: Scalar>(
    loss: &mut dyn FnMut(&ParamStore<F>) -> Result<f64>,
    params: &ParamStore<F>,
    analytic: &GradStore<F>,
    h: f64,
    probes_per_tensor: usize,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        coords_checked: 0,
    };
    let mut rng = rng::substream(0x6fd2, &[]);

    for (name, grad) in analytic {
        let n = grad.numel();
        // Top-|g| coordinates carry the signal; random extras catch
        // systematically wrong zeros.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            grad.data()[b]
                .abs()
                .partial_cmp(&grad.data()[a].abs())
                .unwrap()
        });
        let mut picks: Vec<usize> = order.iter().copied().take(probes_per_tensor).collect();
        for _ in 0..probes_per_tensor.min(n) {
            picks.push(rng.random_range(0..n));
        }
        picks.sort_unstable();
        picks.dedup();

        for i in picks {
            let base = params.require(name)?.data()[i].to_f64c();
            let mut probe = params.clone();
            probe.get_mut(name).unwrap().data_mut()[i] = F::of(base + h);
            let up = loss(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = F::of(base - h);
            let down = loss(&probe)?;
            let fd = (up - down) / (2.0 * h);
            let an = grad.data()[i].to_f64c();
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
