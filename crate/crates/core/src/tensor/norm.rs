use std::cell::RefCell;

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean / variance of a batch-norm layer.
///
/// Updated as `new = (1 − momentum)·old + momentum·batch`, with the unbiased
/// batch variance feeding the running variance.
#[derive(Debug)]
pub struct RunningStats<T: Element> {
    pub mean: RefCell<Vec<T>>,
    pub var: RefCell<Vec<T>>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: RefCell::new(vec![T::zero(); features]),
            var: RefCell::new(vec![T::one(); features]),
            momentum: T::cast(BN_MOMENTUM),
            eps: T::cast(BN_EPS),
        }
    }

    pub fn features(&self) -> usize {
        self.mean.borrow().len()
    }
}

impl<T: Element> Tensor<T> {
    /// Batch normalization over axis 1 of an `(N, C)` or `(N, C, H, W)`
    /// tensor.
    ///
    /// Training mode normalizes with the biased batch statistics and updates
    /// `stats`; evaluation mode uses `stats` and leaves them untouched.
    pub fn batch_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        stats: &RunningStats<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("batch_norm", &shape, gamma.shape()));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner = numel(&shape[2..]);
        if gamma.shape() != [c] || beta.shape() != [c] || stats.features() != c {
            return Err(Error::dim("batch_norm", &shape, gamma.shape()));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let count = n * inner;
        let x = self.to_vec();
        let idx = move |s: usize, ch: usize| (s * c + ch) * inner;

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv = T::one() / T::cast(count as f64);
                for ch in 0..c {
                    let mut acc = T::zero();
                    for s in 0..n {
                        acc = acc + x[idx(s, ch)..idx(s, ch) + inner].iter().copied().sum::<T>();
                    }
                    let m = acc * inv;
                    let mut sq = T::zero();
                    for s in 0..n {
                        sq = sq
                            + x[idx(s, ch)..idx(s, ch) + inner]
                                .iter()
                                .map(|&v| (v - m) * (v - m))
                                .sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = sq * inv;
                }
                let unbias = T::cast(count as f64 / (count as f64 - 1.0).max(1.0));
                let keep = T::one() - stats.momentum;
                let mut rm = stats.mean.borrow_mut();
                let mut rv = stats.var.borrow_mut();
                for ch in 0..c {
                    rm[ch] = keep * rm[ch] + stats.momentum * mean[ch];
                    rv[ch] = keep * rv[ch] + stats.momentum * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.borrow().clone(), stats.var.borrow().clone()),
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.eps).sqrt()).collect();
        let g = gamma.to_vec();
        let b = beta.to_vec();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = idx(s, ch);
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }

        let need_x = self.requires_grad();
        Tensor::from_op(
            out,
            &shape,
            "batch_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |grad| {
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = idx(s, ch);
                        for i in base..base + inner {
                            dbeta[ch] = dbeta[ch] + grad[i];
                            dgamma[ch] = dgamma[ch] + grad[i] * xhat[i];
                        }
                    }
                }
                let dx = need_x.then(|| {
                    let mut dx = vec![T::zero(); grad.len()];
                    let inv_count = T::one() / T::cast(count as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = idx(s, ch);
                            let scale = g[ch] * inv_std[ch];
                            for i in base..base + inner {
                                dx[i] = match mode {
                                    // Batch statistics depend on x as well.
                                    Mode::Train => {
                                        scale
                                            * (grad[i]
                                                - dbeta[ch] * inv_count
                                                - xhat[i] * dgamma[ch] * inv_count)
                                    }
                                    Mode::Eval => scale * grad[i],
                                };
                            }
                        }
                    }
                    dx
                });
                vec![dx, Some(dgamma), Some(dbeta)]
            }),
        )
    }
}
