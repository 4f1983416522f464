//! Finite-difference verification of every differentiable op and loss.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses;
use crate::tensor::{Mode, RunningStats, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    fn worse(self, other: GradCheck) -> GradCheck {
        if other.max_relative_error > self.max_relative_error {
            other
        } else {
            self
        }
    }
}

/// Compares the backward pass of `f` at `x` against central differences
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
///
/// Relative error per coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e−12)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheck>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::param("grad_check: step must be positive"));
    }
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let leaf = Tensor::parameter(base.clone(), &shape)?;
    let y = f(&leaf)?;
    check_finite(y.item(), 0, "f(x)")?;
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut p = base.clone();
        p[i] += delta;
        let v = f(&Tensor::from_vec(p, &shape)?)?.item();
        check_finite(v, i, "perturbed f")?;
        Ok(v)
    };

    let mut worst = GradCheck {
        max_relative_error: 0.0,
        coordinate: 0,
        analytic: analytic[0],
        numeric: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        check_finite(a, i, "analytic gradient")?;
        let numeric = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        let err = (a - numeric).abs() / denom;
        if err > worst.max_relative_error || i == 0 {
            worst = worst.worse(GradCheck {
                max_relative_error: err,
                coordinate: i,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(worst)
}

fn check_finite(v: f64, index: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            index,
            detail: format!("{what} is {v}"),
        })
    }
}

type TrialFn = Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradCheck> + Send + Sync>;

/// A named randomized gradient check.
pub struct GradCase {
    pub name: String,
    trial: TrialFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        trial: impl Fn(&mut ChaCha8Rng) -> Result<GradCheck> + Send + Sync + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            trial: Box::new(trial),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub trials: usize,
    pub worst: Option<GradCheck>,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "ok  " } else { "FAIL" };
        match (&self.error, &self.worst) {
            (Some(e), _) => write!(f, "{status} {:<28} error: {e}", self.name),
            (None, Some(w)) => write!(
                f,
                "{status} {:<28} trials={:<3} max_rel_err={:.3e} (coord {}, analytic {:.6e}, numeric {:.6e})",
                self.name, self.trials, w.max_relative_error, w.coordinate, w.analytic, w.numeric
            ),
            (None, None) => write!(f, "{status} {:<28} no trials", self.name),
        }
    }
}

/// Runs each case `trials` times with its own seeded stream.
pub fn run_suite(cases: &[GradCase], trials: usize, tolerance: f64, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let results = cases
        .iter()
        .enumerate()
        .map(|(ci, case)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci as u64);
            let mut worst: Option<GradCheck> = None;
            let mut error = None;
            for _ in 0..trials {
                match (case.trial)(&mut rng) {
                    Ok(r) => worst = Some(worst.map_or(r, |w| w.worse(r))),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            let passed = error.is_none()
                && worst.is_some_and(|w| w.max_relative_error < tolerance);
            CaseResult {
                name: case.name.clone(),
                trials,
                worst,
                error,
                passed,
            }
        })
        .collect();
    SuiteReport {
        tolerance,
        cases: results,
        elapsed: start.elapsed(),
    }
}

// ---- randomized inputs ----------------------------------------------------

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(v, shape).expect("shape")
}

/// Normal samples pushed away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let t = normal(rng, shape);
    t.update_data(|d| {
        for v in d.iter_mut() {
            *v += 0.05f64.copysign(*v);
        }
    });
    t
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Projects a tensor onto a fixed random direction so every output
/// coordinate matters to the scalar being differentiated.
fn project(y: &Tensor<f64>, dir: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(y.mul(dir)?.sum())
}

/// Checks `f` with respect to each of `inputs` in turn, holding the others
/// constant, and returns the worst result.
fn check_each<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut worst: Option<GradCheck> = None;
    for i in 0..inputs.len() {
        let r = grad_check(
            |x| {
                let mut args = inputs.to_vec();
                args[i] = x.clone();
                f(&args)
            },
            &inputs[i],
            DEFAULT_STEP,
        )?;
        worst = Some(worst.map_or(r, |w| w.worse(r)));
    }
    Ok(worst.expect("at least one input"))
}

/// Builds a case from an input generator and a tensor-valued op; the op
/// output is projected onto a random direction drawn per trial.
fn op_case<G, F>(name: &str, gen: G, f: F) -> GradCase
where
    G: Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + Send + Sync + 'static,
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync + 'static,
{
    GradCase::new(name, move |rng| {
        let inputs = gen(rng);
        let out_shape = f(&inputs)?.shape().to_vec();
        let dir = normal(rng, &out_shape);
        check_each(&inputs, |args| project(&f(args)?, &dir))
    })
}

/// The relu used by the suite; swappable so a test can plant a bad backward.
pub type ReluFn = fn(&Tensor<f64>) -> Tensor<f64>;

/// Every op and loss in the crate.
pub fn standard_cases() -> Vec<GradCase> {
    cases_with_relu(|x| x.relu())
}

pub fn cases_with_relu(relu: ReluFn) -> Vec<GradCase> {
    let mut cases = vec![
        op_case(
            "add",
            |r| {
                let s = [dim(r, 1, 4), dim(r, 1, 5)];
                vec![normal(r, &s), normal(r, &s)]
            },
            |a| a[0].add(&a[1]),
        ),
        op_case(
            "sub",
            |r| {
                let s = [dim(r, 1, 4), dim(r, 1, 5)];
                vec![normal(r, &s), normal(r, &s)]
            },
            |a| a[0].sub(&a[1]),
        ),
        op_case(
            "mul",
            |r| {
                let s = [dim(r, 1, 4), dim(r, 1, 5)];
                vec![normal(r, &s), normal(r, &s)]
            },
            |a| a[0].mul(&a[1]),
        ),
        op_case(
            "scale",
            |r| vec![{ let s = [dim(r, 1, 6)]; normal(r, &s) }],
            |a| Ok(a[0].scale(-1.7)),
        ),
        op_case(
            "matmul",
            |r| {
                let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
                vec![normal(r, &[m, k]), normal(r, &[k, n])]
            },
            |a| a[0].matmul(&a[1]),
        ),
        op_case(
            "transpose",
            |r| vec![{ let s = [dim(r, 1, 4), dim(r, 1, 5)]; normal(r, &s) }],
            |a| a[0].t(),
        ),
        op_case(
            "reshape",
            |r| vec![{ let s = [2, dim(r, 1, 3), 3]; normal(r, &s) }],
            |a| {
                let n = a[0].numel();
                a[0].reshape(&[3, n / 3])
            },
        ),
        op_case(
            "flatten",
            |r| vec![{ let s = [dim(r, 1, 3), 2, dim(r, 1, 3), 2]; normal(r, &s) }],
            |a| a[0].flatten(),
        ),
        op_case("sum", |r| vec![{ let s = [dim(r, 1, 7)]; normal(r, &s) }], |a| Ok(a[0].sum())),
        op_case("mean", |r| vec![{ let s = [dim(r, 1, 7)]; normal(r, &s) }], |a| Ok(a[0].mean())),
        op_case(
            "relu",
            |r| vec![{ let s = [dim(r, 2, 4), dim(r, 2, 5)]; away_from_zero(r, &s) }],
            move |a| Ok(relu(&a[0])),
        ),
        op_case(
            "sigmoid",
            |r| vec![{ let s = [dim(r, 1, 4), dim(r, 1, 5)]; normal(r, &s) }],
            |a| Ok(a[0].sigmoid()),
        ),
        op_case(
            "add_bias",
            |r| {
                let c = dim(r, 1, 3);
                vec![{ let s = [dim(r, 1, 3), c, 2, 2]; normal(r, &s) }, normal(r, &[c])]
            },
            |a| a[0].add_bias(&a[1]),
        ),
        op_case(
            "global_avg_pool",
            |r| vec![{ let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)]; normal(r, &s) }],
            |a| a[0].global_avg_pool(),
        ),
        op_case(
            "conv2d",
            |r| {
                let (n, c, o) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
                let k = dim(r, 1, 3);
                let hw = dim(r, k.max(2), 6);
                vec![normal(r, &[n, c, hw, hw]), normal(r, &[o, c, k, k])]
            },
            |a| a[0].conv2d(&a[1], 2, 1),
        ),
        op_case(
            "conv2d_stride1",
            |r| {
                let (n, c, o) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
                vec![normal(r, &[n, c, 5, 4]), normal(r, &[o, c, 3, 3])]
            },
            |a| a[0].conv2d(&a[1], 1, 1),
        ),
        op_case(
            "conv_transpose2d",
            |r| {
                let (n, cin, cout) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
                let hw = dim(r, 1, 4);
                vec![normal(r, &[n, cin, hw, hw]), normal(r, &[cin, cout, 3, 3])]
            },
            |a| a[0].conv_transpose2d(&a[1], 2, 1, 1),
        ),
        op_case(
            "batch_norm_train",
            |r| {
                let c = dim(r, 1, 3);
                vec![
                    { let s = [dim(r, 2, 4), c, 2, dim(r, 1, 2)]; normal(r, &s) },
                    normal(r, &[c]),
                    normal(r, &[c]),
                ]
            },
            |a| {
                let stats = RunningStats::new(a[1].numel());
                a[0].batch_norm(&a[1], &a[2], &stats, Mode::Train)
            },
        ),
        op_case(
            "batch_norm_train_2d",
            |r| {
                let c = dim(r, 1, 4);
                vec![{ let s = [dim(r, 3, 5), c]; normal(r, &s) }, normal(r, &[c]), normal(r, &[c])]
            },
            |a| {
                let stats = RunningStats::new(a[1].numel());
                a[0].batch_norm(&a[1], &a[2], &stats, Mode::Train)
            },
        ),
        op_case(
            "batch_norm_eval",
            |r| {
                let c = dim(r, 1, 3);
                vec![{ let s = [dim(r, 1, 3), c, 2, 2]; normal(r, &s) }, normal(r, &[c]), normal(r, &[c])]
            },
            |a| {
                let stats = RunningStats::new(a[1].numel());
                *stats.mean.borrow_mut() = vec![0.3; a[1].numel()];
                *stats.var.borrow_mut() = vec![1.7; a[1].numel()];
                a[0].batch_norm(&a[1], &a[2], &stats, Mode::Eval)
            },
        ),
        // The stopped branch is held constant by construction: perturbing x
        // perturbs it too, but only through the unstopped factor.
        GradCase::new("stop_gradient", |rng| {
            let x = { let s = [dim(rng, 1, 6)]; normal(rng, &s) };
            let frozen = x.clone();
            let mixed = grad_check(
                |v| Ok(v.mul(&frozen.stop_gradient())?.sum()),
                &x,
                DEFAULT_STEP,
            )?;
            // Only a stopped path: both gradients are zero.
            let only = grad_check(
                |v| frozen.stop_gradient().sum().add(&v.scale(0.0).sum()),
                &x,
                DEFAULT_STEP,
            )?;
            Ok(mixed.worse(only))
        }),
        GradCase::new("ncs_distance", |rng| {
            let s = [dim(rng, 1, 4), dim(rng, 2, 6)];
            let inputs = [normal(rng, &s), normal(rng, &s)];
            check_each(&inputs, |a| losses::ncs_distance(&a[0], &a[1]))
        }),
        GradCase::new("mse_distance", |rng| {
            let s = [dim(rng, 1, 3), dim(rng, 1, 5)];
            let inputs = [normal(rng, &s), normal(rng, &s)];
            check_each(&inputs, |a| losses::mse_distance(&a[0], &a[1]))
        }),
        GradCase::new("simsiam_loss", |rng| {
            let s = [dim(rng, 1, 4), dim(rng, 2, 6)];
            let inputs: Vec<_> = (0..4).map(|_| normal(rng, &s)).collect();
            // z-targets are stopped; the check differentiates through p only
            // and confirms the z gradients are exactly zero.
            let (z1, z2) = (inputs[2].clone(), inputs[3].clone());
            let r = check_each(&inputs[..2], |a| {
                Ok(losses::simsiam_loss(&a[0], &a[1], &z1, &z2)?.value)
            })?;
            let z1p = Tensor::parameter(z1.to_vec(), &s)?;
            let z2p = Tensor::parameter(z2.to_vec(), &s)?;
            let p1 = Tensor::parameter(inputs[0].to_vec(), &s)?;
            losses::simsiam_loss(&p1, &inputs[1], &z1p, &z2p)?.value.backward()?;
            let leaked = z1p
                .grad()
                .into_iter()
                .chain(z2p.grad())
                .flatten()
                .any(|g| g != 0.0);
            if leaked {
                return Err(Error::Contract("gradient reached a stopped target".into()));
            }
            Ok(r)
        }),
        GradCase::new("dae_loss", |rng| {
            let s = [dim(rng, 1, 2), 3, dim(rng, 1, 3), dim(rng, 1, 3)];
            let inputs: Vec<_> = (0..3).map(|_| normal(rng, &s)).collect();
            check_each(&inputs, |a| Ok(losses::dae_loss(&a[0], &a[1], &a[2])?.value))
        }),
        GradCase::new("sidae_loss", |rng| {
            let s = [dim(rng, 2, 3), dim(rng, 2, 4)];
            let img = [dim(rng, 1, 2), 3, 2, 2];
            let w: f64 = rng.random_range(0.0..=1.0);
            let mut inputs: Vec<_> = (0..2).map(|_| normal(rng, &s)).collect();
            inputs.extend((0..2).map(|_| normal(rng, &img)));
            let (z1, z2, target) = (normal(rng, &s), normal(rng, &s), normal(rng, &img));
            check_each(&inputs, |a| {
                let si = losses::simsiam_loss(&a[0], &a[1], &z1, &z2)?;
                let dae = losses::dae_loss(&target, &a[2], &a[3])?;
                Ok(losses::sidae_loss(w, &si, &dae)?.value)
            })
        }),
        GradCase::new("cross_entropy", |rng| {
            let (b, k) = (dim(rng, 1, 4), dim(rng, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let logits = normal(rng, &[b, k]);
            grad_check(|x| losses::cross_entropy(x, &labels), &logits, DEFAULT_STEP)
        }),
    ];
    cases.shrink_to_fit();
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.5], &[3]).unwrap();
        let r = grad_check(|v| Ok(v.sum()), &x, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-9);
    }

    #[test]
    fn non_finite_value_is_reported_with_coordinate() {
        let x = Tensor::from_vec(vec![1.0, 0.0], &[2]).unwrap();
        let err = grad_check(
            |v| {
                let d = v.to_vec();
                Tensor::scalar(1.0 / d[1]).add(&v.sum())
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { index: 0, .. }), "{err}");
    }

    #[test]
    fn ncs_against_fixed_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = normal(&mut rng, &[3, 5]);
        let x = normal(&mut rng, &[3, 5]);
        let r = grad_check(|a| losses::ncs_distance(a, &b), &x, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn corrupted_relu_is_named() {
        fn leaky(x: &Tensor<f64>) -> Tensor<f64> {
            let data = x.to_vec();
            let out = data.iter().map(|&v| v.max(0.0)).collect();
            Tensor::from_op(
                out,
                x.shape(),
                "relu",
                vec![x.clone()],
                // Passes gradient everywhere, as if relu were the identity.
                Box::new(|g| vec![Some(g.to_vec())]),
            )
            .unwrap()
        }
        let cases: Vec<_> = cases_with_relu(leaky)
            .into_iter()
            .filter(|c| c.name == "relu" || c.name == "sum")
            .collect();
        let report = run_suite(&cases, 5, DEFAULT_TOLERANCE, 0);
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["relu"]);
    }
}
