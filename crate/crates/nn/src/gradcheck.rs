//! Central finite-difference verification of analytic parameter gradients.

use rand::Rng;

use crate::param::Module;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error >= tol).collect()
    }
}

/// Relative error with a small absolute floor so that two vanishing
/// gradients compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares analytic and numeric gradients on `samples` randomly chosen
/// scalar parameters.
///
/// `analytic` must zero and then fill every parameter gradient of the model
/// and return the loss; `loss` evaluates the same loss without touching
/// gradients.
pub fn check_module<M, R>(
    model: &mut M,
    analytic: impl FnMut(&mut M) -> f64,
    loss: impl FnMut(&M) -> f64,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> GradCheckReport
where
    M: Module<f64>,
    R: Rng + ?Sized,
{
    check_module_where(model, analytic, loss, |_| true, samples, step, rng)
}

/// Like [`check_module`] but only samples parameters whose name passes
/// `select`.
pub fn check_module_where<M, R>(
    model: &mut M,
    mut analytic: impl FnMut(&mut M) -> f64,
    mut loss: impl FnMut(&M) -> f64,
    select: impl Fn(&str) -> bool,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> GradCheckReport
where
    M: Module<f64>,
    R: Rng + ?Sized,
{
    analytic(model);
    let grads: Vec<(usize, String, Vec<f64>)> = model
        .params()
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| select(n))
        .map(|(i, (n, p))| (i, n, p.grad.clone()))
        .collect();
    let total: usize = grads.iter().map(|(_, _, g)| g.len()).sum();
    let mut report = GradCheckReport::default();
    if total == 0 {
        return report;
    }
    let mut picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, samples).into_vec()
    };
    picks.sort_unstable();
    for flat in picks {
        let (mut gi, mut off) = (0, flat);
        while off >= grads[gi].2.len() {
            off -= grads[gi].2.len();
            gi += 1;
        }
        let pi = grads[gi].0;
        let nudge = |m: &mut M, delta: f64| {
            let mut params = m.params_mut();
            params[pi].1.value[off] += delta;
        };
        nudge(model, step);
        let up = loss(model);
        nudge(model, -2.0 * step);
        let down = loss(model);
        nudge(model, step);
        let numeric = (up - down) / (2.0 * step);
        let a = grads[gi].2[off];
        report.entries.push(GradCheckEntry {
            param: grads[gi].1.clone(),
            index: off,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    report
}
