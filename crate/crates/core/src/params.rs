use crate::linalg::Matrix;

/// A fixed, ordered collection of named weight tensors.
///
/// Gradient containers reuse the parameter type, so the visitation order is
/// what ties a gradient tensor to its parameter (optimizer state, gradient
/// checks, checkpoints).
pub trait ParamSet: Clone {
    fn named_tensors(&self) -> Vec<(String, &Matrix)>;

    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn tensors(&self) -> Vec<&Matrix> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *a += b;
            }
        }
    }

    fn scale_all(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.frobenius_sq())
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    items: Vec<(String, &'a Matrix)>,
) -> impl Iterator<Item = (String, &'a Matrix)> + 'a {
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(n, t)| (format!("{prefix}.{n}"), t))
}
