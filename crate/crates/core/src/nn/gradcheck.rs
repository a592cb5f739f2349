//! Central finite-difference check of analytic gradients.

/// Denominator floor of [`relative_error`]: gradients whose magnitude is
/// below this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a kink.
    pub skipped: usize,
}

/// Checks `analytic` against `(f(θ+h) - f(θ-h)) / 2h` at every coordinate.
pub fn grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len());
    let mut point = theta.to_vec();
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(
        |i, delta| {
            point[i] = theta[i] + delta;
            let v = f(&point);
            point[i] = theta[i];
            (v, 0)
        },
        analytic,
        &coords,
        h,
    )
}

/// General form: `probe(i, δ)` evaluates the function with coordinate `i`
/// shifted by `δ` and returns the value plus a signature of the piecewise
/// region it landed in (e.g. a hash of max-pool winners). Coordinates whose
/// `±h` probes land in different regions from `δ = 0` are skipped.
pub fn grad_check_coords<P>(
    mut probe: P,
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> GradCheckReport
where
    P: FnMut(usize, f64) -> (f64, u64),
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let base_region = coords.first().map(|&i| probe(i, 0.0).1);
    for &i in coords {
        let (plus, r_plus) = probe(i, h);
        let (minus, r_minus) = probe(i, -h);
        if Some(r_plus) != base_region || Some(r_minus) != base_region {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    report
}
