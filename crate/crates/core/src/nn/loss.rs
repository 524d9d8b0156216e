use super::real::Real;
use crate::types::IGNORE;

/// Per-pixel softmax over channel-major logits (`K×N`).
pub fn softmax_chw<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let n = logits.len() / classes;
    let mut probs = vec![T::zero(); logits.len()];
    for p in 0..n {
        let mut max = T::neg_infinity();
        for k in 0..classes {
            max = max.max(logits[k * n + p]);
        }
        let mut sum = T::zero();
        for k in 0..classes {
            let e = (logits[k * n + p] - max).exp();
            probs[k * n + p] = e;
            sum = sum + e;
        }
        for k in 0..classes {
            probs[k * n + p] = probs[k * n + p] / sum;
        }
    }
    probs
}

/// One cross-entropy term applied to a sample: hard labels and the scale
/// `weight / normalizer` its per-pixel gradient is multiplied by.
#[derive(Debug, Clone, Copy)]
pub struct PixelTargets<'a, T> {
    pub labels: &'a [u8],
    pub scale: T,
}

/// `Σ_terms scale·Σ_pixels −ln softmax(logits)[label]`, via log-sum-exp.
pub fn ce_objective<T: Real>(logits: &[T], classes: usize, terms: &[PixelTargets<'_, T>]) -> T {
    let n = logits.len() / classes;
    let mut total = T::zero();
    for term in terms {
        assert_eq!(term.labels.len(), n, "label count");
        let mut sum = T::zero();
        for (p, &label) in term.labels.iter().enumerate() {
            if label == IGNORE {
                continue;
            }
            let max = (0..classes)
                .map(|k| logits[k * n + p])
                .fold(T::neg_infinity(), T::max);
            let lse = max
                + (0..classes)
                    .map(|k| (logits[k * n + p] - max).exp())
                    .sum::<T>()
                    .ln();
            sum = sum + lse - logits[label as usize * n + p];
        }
        total = total + term.scale * sum;
    }
    total
}

/// Gradient of `Σ_terms scale·Σ_pixels −ln p[label]` with respect to the
/// logits, given the softmax output `probs` (channel-major). IGNORE pixels
/// contribute nothing.
pub fn softmax_ce_grad<T: Real>(
    probs: &[T],
    classes: usize,
    terms: &[PixelTargets<'_, T>],
) -> Vec<T> {
    let n = probs.len() / classes;
    let mut grad = vec![T::zero(); probs.len()];
    for term in terms {
        assert_eq!(term.labels.len(), n, "label count");
        for (p, &label) in term.labels.iter().enumerate() {
            if label == IGNORE {
                continue;
            }
            for k in 0..classes {
                let indicator = if k == label as usize {
                    T::one()
                } else {
                    T::zero()
                };
                grad[k * n + p] = grad[k * n + p] + term.scale * (probs[k * n + p] - indicator);
            }
        }
    }
    grad
}
