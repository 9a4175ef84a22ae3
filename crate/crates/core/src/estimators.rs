//! User-RIS channel estimators and the NMSE metric.
//!
//! All estimators take the RIS-BS estimate `F_hat` as known. The full-LS
//! baseline solves one `M x M` Gram system over every slot; piecewise LS
//! solves `Q` independent `M' x M'` systems from the decoupled observations;
//! OMP fits a sparse combination of far-field angular atoms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::PlanarArray;
use crate::error::{Error, Result};
use crate::grouping::group_gram;
use crate::numerics::{
    cgemm, cgemm_adjoint, condition_number, min_norm_solve, solve_with_conditioning, ComplexMatrix, ComplexVector,
    Conditioning,
};
use crate::phase::{Decoupled, PhaseSchedule};

/// Estimation methods, in the fixed reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full-dimension LS with random phases.
    Conv2tce,
    /// Sparse recovery on an angular dictionary with random phases.
    Omp,
    /// Piecewise LS over contiguous groups.
    NoPerm,
    /// Piecewise LS over the greedy correlation-aware groups.
    Greedy,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Conv2tce, Method::Omp, Method::NoPerm, Method::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Conv2tce => "conv2tce",
            Method::Omp => "omp",
            Method::NoPerm => "noperm",
            Method::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub h_hat: ComplexVector,
    pub method: Method,
    /// Wall-clock time of the estimator call.
    pub seconds: f64,
    /// One entry per solved Gram system; empty for OMP.
    pub conditions: Vec<Conditioning>,
}

impl Estimate {
    pub fn worst_condition(&self) -> Option<Conditioning> {
        self.conditions.iter().copied().reduce(Conditioning::worst)
    }

    /// True when any Gram system failed the rank threshold.
    pub fn flagged(&self) -> bool {
        self.conditions.iter().any(|c| c.is_singular())
    }
}

/// Fewest slots giving a full-rank `M x M` Gram for a full-rank `F`.
pub fn min_pilots(m: usize, n: usize) -> usize {
    m.div_ceil(n)
}

/// `||h_hat - h||^2 / ||h||^2`.
pub fn nmse(h_hat: &ComplexVector, h: &ComplexVector) -> Result<f64> {
    if h_hat.len() != h.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate length {} vs channel length {}",
            h_hat.len(),
            h.len()
        )));
    }
    let denom = h.norm_squared();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("true channel is zero".into()));
    }
    Ok((h_hat - h).norm_squared() / denom)
}

/// `F + e ||F||_F / ||E||_F E` with `E` i.i.d. `CN(0, 1)`.
pub fn perturb_channel<R: Rng + ?Sized>(f: &ComplexMatrix, rel_error: f64, rng: &mut R) -> Result<ComplexMatrix> {
    if !(rel_error >= 0.0 && rel_error.is_finite()) {
        return Err(Error::InvalidArgument(format!("relative error {rel_error} must be >= 0")));
    }
    if rel_error == 0.0 {
        return Ok(f.clone());
    }
    let normal = Normal::new(0.0, 0.5f64.sqrt()).expect("valid");
    let e = DMatrix::from_fn(f.nrows(), f.ncols(), |_, _| Complex64::new(normal.sample(rng), normal.sample(rng)));
    let scale = rel_error * f.norm() / e.norm();
    Ok(f + e * Complex64::new(scale, 0.0))
}

fn check_slots(f_hat: &ComplexMatrix, reflections: &[ComplexVector], observations: &[ComplexVector]) -> Result<()> {
    if reflections.is_empty() || reflections.len() != observations.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reflection vectors for {} observations",
            reflections.len(),
            observations.len()
        )));
    }
    if reflections.iter().any(|p| p.len() != f_hat.ncols()) {
        return Err(Error::DimensionMismatch("reflection vector length differs from M".into()));
    }
    if observations.iter().any(|y| y.len() != f_hat.nrows()) {
        return Err(Error::DimensionMismatch("observation length differs from N".into()));
    }
    Ok(())
}

/// `sum_t F_t^H F_t` with `F_t = F_hat diag(psi_t)`, i.e. `(F_hat^H F_hat)`
/// masked entrywise by `sum_t conj(psi_t(i)) psi_t(j)`.
pub fn full_gram(f_hat: &ComplexMatrix, reflections: &[ComplexVector]) -> ComplexMatrix {
    let m = f_hat.ncols();
    let psi = DMatrix::from_fn(reflections.len(), m, |t, i| reflections[t][i]);
    let mask = cgemm_adjoint(&psi, &psi);
    let a = cgemm_adjoint(f_hat, f_hat);
    a.component_mul(&mask)
}

/// Conventional full-dimension LS over all slots.
///
/// Below `min_pilots` the Gram is rank deficient; the minimum-norm solution
/// is returned and the estimate is flagged singular.
pub fn conv_2tce(
    f_hat: &ComplexMatrix,
    reflections: &[ComplexVector],
    observations: &[ComplexVector],
) -> Result<Estimate> {
    check_slots(f_hat, reflections, observations)?;
    let start = Instant::now();
    let gram = full_gram(f_hat, reflections);
    let m = f_hat.ncols();
    let projected = cgemm_adjoint(f_hat, &DMatrix::from_columns(observations));
    let mut rhs = ComplexVector::zeros(m);
    for (t, psi) in reflections.iter().enumerate() {
        for i in 0..m {
            rhs[i] += psi[i].conj() * projected[(i, t)];
        }
    }
    let cond = condition_number(&gram)?;
    let h_hat = solve_with_conditioning(&gram, &rhs, cond)?;
    Ok(Estimate {
        h_hat,
        method: Method::Conv2tce,
        seconds: start.elapsed().as_secs_f64(),
        conditions: vec![cond],
    })
}

/// Group-wise LS on decoupled observations; the partition comes from the
/// schedule, so the same routine serves contiguous and greedy grouping.
pub fn piecewise_ls(f_hat: &ComplexMatrix, schedule: &PhaseSchedule, decoupled: &Decoupled) -> Result<Estimate> {
    let partition = schedule.partition();
    if partition.element_count() != f_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "schedule covers {} elements, F_hat has {} columns",
            partition.element_count(),
            f_hat.ncols()
        )));
    }
    let b = schedule.subframes();
    if decoupled.z.len() != b || decoupled.z.iter().any(|row| row.len() != schedule.groups()) {
        return Err(Error::DimensionMismatch("decoupled observations do not match the schedule".into()));
    }
    let start = Instant::now();
    let codes: Vec<Vec<f64>> = (0..b).map(|sub| schedule.code(sub)).collect();
    let mut h_hat = ComplexVector::zeros(f_hat.ncols());
    let mut conditions = Vec::with_capacity(schedule.groups());
    for (q, members) in partition.groups().iter().enumerate() {
        let gram = group_gram(f_hat, members, &codes);
        let fq = f_hat.select_columns(members);
        let mut rhs = ComplexVector::zeros(members.len());
        for (sub, v) in codes.iter().enumerate() {
            let z = decoupled.get(sub, q);
            if z.len() != f_hat.nrows() {
                return Err(Error::DimensionMismatch("decoupled vector length differs from N".into()));
            }
            let proj = fq.adjoint() * z;
            for i in 0..members.len() {
                rhs[i] += proj[i] * v[i];
            }
        }
        let cond = condition_number(&gram)?;
        let hq = solve_with_conditioning(&gram, &rhs, cond)?;
        for (i, &e) in members.iter().enumerate() {
            h_hat[e] = hq[i];
        }
        conditions.push(cond);
    }
    Ok(Estimate {
        h_hat,
        method: Method::NoPerm,
        seconds: start.elapsed().as_secs_f64(),
        conditions,
    })
}

/// Unit-norm far-field steering atoms over a `(cols_grid x rows_grid)` grid
/// of direction cosines for a planar RIS. Atom index is `gr * cols_grid + gc`.
pub fn angular_dictionary(ris: &PlanarArray, cols_grid: usize, rows_grid: usize) -> Result<ComplexMatrix> {
    if cols_grid == 0 || rows_grid == 0 {
        return Err(Error::InvalidArgument("dictionary grid must be non-empty".into()));
    }
    let m = ris.elements();
    let norm = 1.0 / (m as f64).sqrt();
    let grid = |k: usize, g: usize| -1.0 + (2 * k + 1) as f64 / g as f64;
    Ok(DMatrix::from_fn(m, cols_grid * rows_grid, |e, atom| {
        let (r, c) = (e / ris.cols, e % ris.cols);
        let (gr, gc) = (atom / cols_grid, atom % cols_grid);
        let phase = 2.0 * PI * ris.spacing * (c as f64 * grid(gc, cols_grid) + r as f64 * grid(gr, rows_grid));
        Complex64::from_polar(norm, phase)
    }))
}

/// Two-times oversampled angular dictionary (`2M` atoms): the column axis
/// grid is doubled, the row axis grid is critically sampled.
pub fn default_dictionary(ris: &PlanarArray) -> Result<ComplexMatrix> {
    angular_dictionary(ris, 2 * ris.cols, ris.rows)
}

/// Orthogonal matching pursuit on the stacked sensing matrix
/// `[F_hat diag(psi_1); ...; F_hat diag(psi_T)] * dictionary`.
///
/// Runs `k` iterations (fewer if the residual vanishes): pick the atom with
/// the largest normalized correlation to the residual, refit all picked atoms
/// by least squares, update the residual.
pub fn omp_estimate(
    f_hat: &ComplexMatrix,
    reflections: &[ComplexVector],
    observations: &[ComplexVector],
    dictionary: &ComplexMatrix,
    k: usize,
) -> Result<Estimate> {
    check_slots(f_hat, reflections, observations)?;
    let (n, m) = (f_hat.nrows(), f_hat.ncols());
    let t = reflections.len();
    if k == 0 {
        return Err(Error::InvalidArgument("OMP sparsity must be at least 1".into()));
    }
    if k > n * t {
        return Err(Error::InvalidArgument(format!(
            "OMP sparsity {k} exceeds the {} measurements",
            n * t
        )));
    }
    if dictionary.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "dictionary has {} rows, M={m}",
            dictionary.nrows()
        )));
    }
    let start = Instant::now();
    let y = stack(observations);
    let y_norm = y.norm();

    // ||S d||^2 = d^H (S^H S) d, with S^H S the full Gram.
    let gram_d = cgemm(&full_gram(f_hat, reflections), dictionary);
    let atom_norms: Vec<f64> = (0..dictionary.ncols())
        .map(|a| dictionary.column(a).dotc(&gram_d.column(a)).re.max(0.0).sqrt())
        .collect();

    let sense = |d: &ComplexVector| -> ComplexVector {
        let cols: Vec<ComplexVector> = reflections.iter().map(|psi| f_hat * psi.component_mul(d)).collect();
        stack(&cols)
    };

    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut sensed: Vec<ComplexVector> = Vec::with_capacity(k);
    let mut coeffs = ComplexVector::zeros(0);
    let mut residual = y.clone();
    for _ in 0..k {
        if residual.norm() <= 1e-13 * y_norm || y_norm == 0.0 {
            break;
        }
        // S^H r = sum_t conj(psi_t) .* (F_hat^H r_t)
        let mut back = ComplexVector::zeros(m);
        for (ti, psi) in reflections.iter().enumerate() {
            let proj = f_hat.adjoint() * residual.rows(ti * n, n);
            for i in 0..m {
                back[i] += psi[i].conj() * proj[i];
            }
        }
        let corr = dictionary.adjoint() * back;
        let mut pick = None;
        let mut best = -1.0;
        for (a, c) in corr.iter().enumerate() {
            if support.contains(&a) || atom_norms[a] == 0.0 {
                continue;
            }
            let score = c.norm() / atom_norms[a];
            if score > best {
                best = score;
                pick = Some(a);
            }
        }
        let Some(a) = pick else { break };
        support.push(a);
        sensed.push(sense(&dictionary.column(a).into_owned()));
        let a_s = DMatrix::from_columns(&sensed);
        coeffs = min_norm_solve(&a_s, &y)?;
        residual = &y - &a_s * &coeffs;
    }
    let mut h_hat = ComplexVector::zeros(m);
    for (idx, &a) in support.iter().enumerate() {
        h_hat += dictionary.column(a) * coeffs[idx];
    }
    Ok(Estimate {
        h_hat,
        method: Method::Omp,
        seconds: start.elapsed().as_secs_f64(),
        conditions: Vec::new(),
    })
}

fn stack(parts: &[ComplexVector]) -> ComplexVector {
    let total = parts.iter().map(|p| p.len()).sum();
    let mut out = ComplexVector::zeros(total);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}
