//! Central finite-difference gradient checking over any [`ParamSet`].

use std::fmt;

use crate::params::ParamSet;

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupResult>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn entries(&self) -> usize {
        self.groups.iter().map(|g| g.entries).sum()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err() <= tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(f, "  {:<24} {:>6} entries  max rel err {:.3e}", g.name, g.entries, g.max_rel_err)?;
        }
        write!(f, "  overall max rel err {:.3e} over {} entries", self.max_rel_err(), self.entries())
    }
}

/// Denominator floor for [`relative_error`]. Central differences at
/// `eps = 1e-5` carry roughly `1e-10` of rounding noise, so smaller entries
/// are effectively compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against `(loss(p + eps) - loss(p - eps)) / 2 eps` for
/// every parameter entry.
pub fn check_gradients<P: ParamSet>(
    params: &P,
    analytic: &P,
    eps: f64,
    loss: impl Fn(&P) -> f64,
) -> GradCheckReport {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut probe = params.clone();
    let mut groups = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let n = grads[ti].len();
        let mut max_rel_err: f64 = 0.0;
        for j in 0..n {
            let orig = probe.tensors()[ti].as_slice()[j];
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig + eps;
            let up = loss(&probe);
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig - eps;
            let down = loss(&probe);
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            max_rel_err = max_rel_err.max(relative_error(grads[ti][j], fd));
        }
        groups.push(GroupResult {
            name,
            entries: n,
            max_rel_err,
        });
    }
    GradCheckReport { groups }
}
