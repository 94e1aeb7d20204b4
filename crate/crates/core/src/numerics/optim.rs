//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iter: 200,
            grad_tol: 1e-7,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn lbfgs<F>(mut f: F, x0: DVector<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if !fx.is_finite() {
            break;
        }
        if inf_norm(&g) < cfg.grad_tol {
            return Minimum {
                grad_inf_norm: inf_norm(&g),
                x,
                value: fx,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            history.clear();
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let init_step = if history.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let Some((step, f_new, g_new)) = strong_wolfe(&mut f, &x, fx, slope, &dir, init_step, cfg)
        else {
            break;
        };
        let s = &dir * step;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        x += &s;
        let f_old = fx;
        fx = f_new;
        g = g_new;
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == cfg.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if (f_old - fx).abs() <= f64::EPSILON * fx.abs().max(1e-300) && step == 0.0 {
            break;
        }
    }

    Minimum {
        grad_inf_norm: inf_norm(&g),
        converged: inf_norm(&g) < cfg.grad_tol,
        x,
        value: fx,
        iterations,
    }
}

fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> Option<f64> {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    t.is_finite().then_some(t)
}

type Probe = (f64, f64, DVector<f64>);

fn strong_wolfe<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    slope0: f64,
    dir: &DVector<f64>,
    init: f64,
    cfg: &LbfgsConfig,
) -> Option<(f64, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut eval = |t: f64| -> Probe {
        let (v, g) = f(&(x + dir * t));
        (v, g.dot(dir), g)
    };

    let mut prev_t = 0.0;
    let mut prev_f = f0;
    let mut prev_slope = slope0;
    let mut t = init;
    for i in 0..25 {
        let (ft, st, gt) = eval(t);
        if !ft.is_finite() {
            t = 0.5 * (prev_t + t);
            continue;
        }
        if ft > f0 + cfg.c1 * t * slope0 || (i > 0 && ft >= prev_f) {
            return zoom(&mut eval, f0, slope0, (prev_t, prev_f, prev_slope), (t, ft, st), cfg);
        }
        if st.abs() <= -cfg.c2 * slope0 {
            return Some((t, ft, gt));
        }
        if st >= 0.0 {
            return zoom(&mut eval, f0, slope0, (t, ft, st), (prev_t, prev_f, prev_slope), cfg);
        }
        prev_t = t;
        prev_f = ft;
        prev_slope = st;
        t *= 2.0;
    }
    None
}

fn zoom<E>(
    eval: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    cfg: &LbfgsConfig,
) -> Option<(f64, f64, DVector<f64>)>
where
    E: FnMut(f64) -> Probe,
{
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for _ in 0..40 {
        let (a, b) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = b - a;
        let mut t = cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2).unwrap_or(0.5 * (a + b));
        if !(t > a + 0.1 * width && t < b - 0.1 * width) {
            t = 0.5 * (a + b);
        }
        let (ft, st, gt) = eval(t);
        if ft < best.as_ref().map_or(f0, |b| b.1) {
            best = Some((t, ft, gt.clone()));
        }
        if ft > f0 + cfg.c1 * t * slope0 || ft >= lo.1 {
            hi = (t, ft, st);
        } else {
            if st.abs() <= -cfg.c2 * slope0 {
                return Some((t, ft, gt));
            }
            if st * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, ft, st);
        }
        if width < 1e-16 * b.abs().max(1.0) {
            break;
        }
    }
    // fall back to the best decreasing point seen
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |p: &DVector<f64>| {
            let (x, y) = (p[0], p[1]);
            let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                200.0 * (y - x * x),
            ]);
            (v, g)
        };
        let cfg = LbfgsConfig { max_iter: 500, grad_tol: 1e-9, ..Default::default() };
        let m = lbfgs(rosen, DVector::from_vec(vec![-1.2, 1.0]), &cfg);
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic_exactly() {
        let quad = |p: &DVector<f64>| {
            let g = DVector::from_vec(vec![2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)]);
            ((p[0] - 3.0).powi(2) + 10.0 * (p[1] + 1.0).powi(2), g)
        };
        let m = lbfgs(quad, DVector::zeros(2), &LbfgsConfig::default());
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-7 && (m.x[1] + 1.0).abs() < 1e-7);
    }
}
