use nalgebra::DVector;

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-8;

/// Reflects `h` about the hyperplane through `center` normal to `w`:
/// `h - 2 <h - center, w> w`.
pub fn householder_reflect(
    h: &DVector<f64>,
    w: &DVector<f64>,
    center: &DVector<f64>,
) -> Result<DVector<f64>> {
    if h.len() != w.len() || h.len() != center.len() {
        return Err(Error::Shape(format!(
            "lengths h={} w={} center={}",
            h.len(),
            w.len(),
            center.len()
        )));
    }
    let norm = w.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit(norm));
    }
    let coef = 2.0 * (h - center).dot(w);
    Ok(h - w * coef)
}
