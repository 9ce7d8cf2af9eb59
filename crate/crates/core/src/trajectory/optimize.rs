//! Bounded Nelder-Mead simplex search. Bounds are enforced by projecting
//! every trial point back into the feasible set.

use super::energy::strain_energy;
use super::{Ellipse, TrajParams, CHI_MAX};
use crate::phantom::NasalCorridor;
use crate::swab::SwabBeam;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("objective returned a non-finite value at {0:?}")]
    NonFinite(Vec<f64>),
    #[error(transparent)]
    Trajectory(#[from] super::TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the simplex diameter falls below this.
    pub x_tol: f64,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            x_tol: 1e-9,
            f_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` from `x0` with initial simplex edges `step`. Returns the
/// best evaluated point; ties keep the earliest, so a start that is already
/// optimal comes back unchanged.
pub fn minimize<const N: usize>(
    mut f: impl FnMut(&[f64; N]) -> f64,
    project: impl Fn([f64; N]) -> [f64; N],
    x0: [f64; N],
    step: [f64; N],
    opts: &NelderMead,
) -> Result<Minimum<N>, OptimizeError> {
    let mut evals = 0;
    let mut eval = |x: &[f64; N], evals: &mut usize| -> Result<f64, OptimizeError> {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptimizeError::NonFinite(x.to_vec()))
        }
    };
    let x0 = project(x0);
    let mut best = Minimum {
        x: x0,
        value: eval(&x0, &mut evals)?,
        evals: 0,
    };
    let mut simplex = vec![(x0, best.value)];
    for i in 0..N {
        let mut x = x0;
        x[i] += step[i];
        let mut x = project(x);
        if x == x0 {
            x[i] -= step[i];
            x = project(x);
        }
        let v = eval(&x, &mut evals)?;
        simplex.push((x, v));
    }

    let combine = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = a[k] + t * (b[k] - a[k]);
        }
        out
    };

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best.value {
            best.x = simplex[0].0;
            best.value = simplex[0].1;
        }
        let diameter = simplex
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = simplex[N].1 - simplex[0].1;
        if diameter < opts.x_tol || (opts.f_tol > 0.0 && spread < opts.f_tol) {
            break;
        }

        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += x[k] / N as f64;
            }
        }
        let worst = simplex[N];
        let reflected = project(combine(&centroid, &worst.0, -1.0));
        let fr = eval(&reflected, &mut evals)?;
        if fr < simplex[0].1 {
            let expanded = project(combine(&centroid, &worst.0, -2.0));
            let fe = eval(&expanded, &mut evals)?;
            simplex[N] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (reflected, fr) } else { worst };
            let contracted = project(combine(&centroid, &target, 0.5));
            let fc = eval(&contracted, &mut evals)?;
            if fc < ft {
                simplex[N] = (contracted, fc);
            } else {
                let anchor = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let x = project(combine(&anchor, &entry.0, 0.5));
                    *entry = (x, eval(&x, &mut evals)?);
                }
            }
        }
    }
    for (x, v) in &simplex {
        if *v < best.value {
            best.x = *x;
            best.value = *v;
        }
    }
    best.evals = evals;
    Ok(best)
}

/// Minimizes strain energy over (χ, e1, e2) within the box and ellipse bounds.
pub fn optimize_trajectory(
    initial: &TrajParams,
    corridor: &NasalCorridor,
    swab: &SwabBeam<f64>,
    ellipse: &Ellipse,
    opts: &NelderMead,
) -> Result<(TrajParams, f64), OptimizeError> {
    initial.validate(ellipse)?;
    let to_params = |x: &[f64; 3]| TrajParams {
        chi: x[0],
        e1: x[1],
        e2: x[2],
    };
    let project = |x: [f64; 3]| {
        let (e1, e2) = ellipse.project(x[1], x[2]);
        [x[0].clamp(0.0, CHI_MAX), e1, e2]
    };
    let mut failure = None;
    let objective = |x: &[f64; 3]| match strain_energy(&to_params(x), corridor, swab, ellipse) {
        Ok(e) => e,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let step = [0.004, 0.25 * ellipse.a, 0.25 * ellipse.b];
    let result = minimize(
        objective,
        project,
        [initial.chi, initial.e1, initial.e2],
        step,
        opts,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let m = result?;
    Ok((to_params(&m.x), m.value))
}
