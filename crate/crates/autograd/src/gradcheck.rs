//! Central finite-difference gradient checking.

use crate::var::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn merge(&mut self, other: &GradCheck) {
        self.checked += other.checked;
        self.passed += other.passed;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }
}

/// Relative error with an absolute floor so that two tiny numbers agree.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Compare `analytic` against central differences of `f` at the flat
/// coordinates `coords` of `x`.
pub fn check<F>(f: F, x: &Tensor, analytic: &Tensor, coords: &[usize], h: f64, tol: f64) -> GradCheck
where
    F: Fn(&Tensor) -> f64,
{
    let flat_a: Vec<f64> = analytic.iter().copied().collect();
    let mut report = GradCheck { checked: 0, passed: 0, worst_rel: 0.0 };
    for &c in coords {
        let mut xp = x.as_standard_layout().into_owned();
        let mut xm = xp.clone();
        xp.as_slice_mut().unwrap()[c] += h;
        xm.as_slice_mut().unwrap()[c] -= h;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * h);
        let err = rel_error(flat_a[c], numeric);
        report.checked += 1;
        if err <= tol {
            report.passed += 1;
        }
        report.worst_rel = report.worst_rel.max(err);
    }
    report
}
