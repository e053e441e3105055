use super::{Parameterized, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_array: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`,
/// so entries whose true gradient is ~0 are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central finite differences of `loss` for every
/// parameter of `model`.
pub fn finite_difference_check<F, P, L>(model: &P, analytic: &P, loss: L, eps: f64) -> GradCheckReport
where
    F: Scalar,
    P: Parameterized<F> + Clone,
    L: Fn(&P) -> F,
{
    let mut probe = model.clone();
    let grads: Vec<Vec<F>> = analytic.params().iter().map(|a| a.to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_array: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let h = F::lit(eps);
    for (a, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params_mut()[a][i];
            probe.params_mut()[a][i] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[a][i] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[a][i] = orig;
            let numeric = ((up - down) / (h + h)).as_f64();
            let exact = grads[a][i].as_f64();
            let denom = exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (exact - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_array = a;
                report.worst_index = i;
                report.analytic = exact;
                report.numeric = numeric;
            }
        }
    }
    report
}
