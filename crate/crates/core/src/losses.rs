//! Distances and training objectives: the symmetrized Siamese loss, the
//! two-view reconstruction loss, and their convex combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Floor on `‖a‖·‖b‖` in the cosine denominator.
pub const NCS_EPS: f64 = 1e-8;

/// Scalar summary of one loss evaluation.
///
/// `l_si` is absent for pure reconstruction runs and `l_dae` for pure
/// Siamese runs; `w` is the weight on the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_si: Option<f64>,
    pub l_dae: Option<f64>,
    pub w: f64,
}

/// A differentiable loss together with its breakdown.
#[derive(Debug, Clone)]
pub struct Loss<T: Element> {
    pub value: Tensor<T>,
    pub breakdown: LossBreakdown,
}

fn rows<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    let s = a.shape();
    if s != b.shape() || s.len() != 2 {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok((s[0], s[1]))
}

/// Negative cosine similarity, averaged over rows of two `(B, d)` tensors.
pub fn ncs_distance<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, d) = rows(a, b, "ncs_distance")?;
    let eps = T::cast(NCS_EPS);
    let av = a.to_vec();
    let bv = b.to_vec();
    // Per row: (cos, denominator, ‖a‖², ‖b‖², clamped).
    let stats: Vec<(T, T, T, T, bool)> = av
        .chunks(d)
        .zip(bv.chunks(d))
        .map(|(ar, br)| {
            let dot: T = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            let na2: T = ar.iter().map(|&x| x * x).sum();
            let nb2: T = br.iter().map(|&x| x * x).sum();
            let prod = na2.sqrt() * nb2.sqrt();
            let clamped = prod < eps;
            let den = if clamped { eps } else { prod };
            (dot / den, den, na2, nb2, clamped)
        })
        .collect();
    let inv_b = T::one() / T::cast(batch as f64);
    let value = -stats.iter().map(|s| s.0).sum::<T>() * inv_b;
    let need = [a.requires_grad(), b.requires_grad()];
    Tensor::from_op(
        vec![value],
        &[1],
        "ncs_distance",
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let scale = -g[0] * inv_b;
            let mut ga = need[0].then(|| vec![T::zero(); av.len()]);
            let mut gb = need[1].then(|| vec![T::zero(); bv.len()]);
            for (r, &(cos, den, na2, nb2, clamped)) in stats.iter().enumerate() {
                let range = r * d..(r + 1) * d;
                let (ar, br) = (&av[range.clone()], &bv[range.clone()]);
                if let Some(ga) = ga.as_mut() {
                    for (j, o) in ga[range.clone()].iter_mut().enumerate() {
                        let dcos = if clamped {
                            br[j] / den
                        } else {
                            br[j] / den - cos * ar[j] / na2
                        };
                        *o = scale * dcos;
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for (j, o) in gb[range.clone()].iter_mut().enumerate() {
                        let dcos = if clamped {
                            ar[j] / den
                        } else {
                            ar[j] / den - cos * br[j] / nb2
                        };
                        *o = scale * dcos;
                    }
                }
            }
            vec![ga, gb]
        }),
    )
}

/// Mean squared difference over all elements.
pub fn mse_distance<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse_distance", a.shape(), b.shape()));
    }
    let diff: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x - y)
        .collect();
    let inv_n = T::one() / T::cast(diff.len() as f64);
    let value = diff.iter().map(|&v| v * v).sum::<T>() * inv_n;
    let need = [a.requires_grad(), b.requires_grad()];
    Tensor::from_op(
        vec![value],
        &[1],
        "mse_distance",
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let k = T::cast(2.0) * g[0] * inv_n;
            let ga: Vec<T> = diff.iter().map(|&v| k * v).collect();
            let gb = need[1].then(|| ga.iter().map(|&v| -v).collect());
            vec![need[0].then_some(ga), gb]
        }),
    )
}

/// `½·D(p1, sg(z2)) + ½·D(p2, sg(z1))` with `D` the negative cosine
/// similarity. No gradient reaches `z1` or `z2`.
pub fn simsiam_loss<T: Element>(
    p1: &Tensor<T>,
    p2: &Tensor<T>,
    z1: &Tensor<T>,
    z2: &Tensor<T>,
) -> Result<Loss<T>> {
    let half = T::cast(0.5);
    let a = ncs_distance(p1, &z2.stop_gradient())?.scale(half);
    let b = ncs_distance(p2, &z1.stop_gradient())?.scale(half);
    let value = a.add(&b)?;
    let l = value.item().widen();
    Ok(Loss {
        value,
        breakdown: LossBreakdown {
            total: l,
            l_si: Some(l),
            l_dae: None,
            w: 0.0,
        },
    })
}

/// `½·mse(target, r1) + ½·mse(target, r2)`.
pub fn dae_loss<T: Element>(target: &Tensor<T>, r1: &Tensor<T>, r2: &Tensor<T>) -> Result<Loss<T>> {
    dae_loss_pair(target, target, r1, r2)
}

/// Reconstruction loss with a separate target per view, used when each
/// reconstruction is compared to its own augmented input.
pub fn dae_loss_pair<T: Element>(
    target1: &Tensor<T>,
    target2: &Tensor<T>,
    r1: &Tensor<T>,
    r2: &Tensor<T>,
) -> Result<Loss<T>> {
    let half = T::cast(0.5);
    let a = mse_distance(target1, r1)?.scale(half);
    let b = mse_distance(target2, r2)?.scale(half);
    let value = a.add(&b)?;
    let l = value.item().widen();
    Ok(Loss {
        value,
        breakdown: LossBreakdown {
            total: l,
            l_si: None,
            l_dae: Some(l),
            w: 1.0,
        },
    })
}

/// `w·L_dae + (1 − w)·L_si`.
pub fn sidae_loss<T: Element>(w: f64, si: &Loss<T>, dae: &Loss<T>) -> Result<Loss<T>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::param(format!("loss weight w = {w} outside [0, 1]")));
    }
    let value = si
        .value
        .scale(T::cast(1.0 - w))
        .add(&dae.value.scale(T::cast(w)))?;
    Ok(Loss {
        breakdown: LossBreakdown {
            total: value.item().widen(),
            l_si: Some(si.breakdown.total),
            l_dae: Some(dae.breakdown.total),
            w,
        },
        value,
    })
}

/// Softmax cross-entropy of `(B, K)` logits against class indices, averaged
/// over the batch.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim("cross_entropy", s, &[labels.len()]));
    }
    let k = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!("label {bad} out of range for {k} classes")));
    }
    let batch = labels.len();
    let inv_b = T::one() / T::cast(batch as f64);
    let mut probs = logits.to_vec();
    let mut total = T::zero();
    for (row, &label) in probs.chunks_mut(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
        total = total - row[label].ln();
    }
    let labels = labels.to_vec();
    Tensor::from_op(
        vec![total * inv_b],
        &[1],
        "cross_entropy",
        vec![logits.clone()],
        Box::new(move |g| {
            let mut gx = probs.clone();
            for (row, &label) in gx.chunks_mut(k).zip(&labels) {
                row[label] = row[label] - T::one();
                for v in row.iter_mut() {
                    *v = *v * g[0] * inv_b;
                }
            }
            vec![Some(gx)]
        }),
    )
}
