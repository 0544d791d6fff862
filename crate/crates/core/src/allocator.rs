//! Per-node computational-resource allocation.
//!
//! For the instances hosted on one server with cycle demands `K_z`, the
//! computation delay `sum K_z / (e_z F)` subject to `sum e_z <= 1` is
//! minimised by `e_z = sqrt(K_z) / sum sqrt(K_z)`, giving the optimum value
//! `(sum sqrt(K_z))^2 / F`. `F` cancels from the proportions, so every
//! allocation here is a function of the cycle list alone.

use crate::error::{Error, Result};

/// Largest instance count accepted by [`oracle_allocation`].
pub const ORACLE_MAX_INSTANCES: usize = 6;
/// Finite-difference step for the diagonal Hessian check.
pub const HESSIAN_FD_STEP: f64 = 1e-6;
/// Finite-difference step for the mixed partials. The objective is separable,
/// so truncation error is zero and a larger step only reduces rounding noise.
pub const HESSIAN_MIXED_FD_STEP: f64 = 1e-4;
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AllocationRequest {
    pub cycles: Vec<f64>,
}

impl AllocationRequest {
    pub fn new(cycles: Vec<f64>) -> Result<Self> {
        let req = AllocationRequest { cycles };
        req.validate()?;
        Ok(req)
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    fn validate(&self) -> Result<()> {
        match self.cycles.iter().position(|&k| !(k > 0.0 && k.is_finite())) {
            Some(i) => Err(Error::invalid(format!(
                "cycle demand {i} must be positive and finite, got {}",
                self.cycles[i]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AllocationResult {
    pub proportions: Vec<f64>,
}

impl AllocationResult {
    pub fn sum(&self) -> f64 {
        self.proportions.iter().sum()
    }

    /// Box and budget constraints: every share in `(0, 1]`, shares sum to at
    /// most one.
    pub fn is_feasible(&self) -> bool {
        self.proportions
            .iter()
            .all(|&e| e > 0.0 && e <= 1.0 + FEASIBILITY_TOL)
            && self.sum() <= 1.0 + FEASIBILITY_TOL
    }
}

/// Closed-form optimum `e_z = sqrt(K_z) / sum sqrt(K_z)`.
pub fn optimal_allocation(req: &AllocationRequest) -> Result<AllocationResult> {
    req.validate()?;
    let roots: Vec<f64> = req.cycles.iter().map(|k| k.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    Ok(AllocationResult {
        proportions: roots.iter().map(|r| r / total).collect(),
    })
}

/// Demand-proportional baseline `e_z = K_z / sum K_z`.
pub fn proportional_allocation(req: &AllocationRequest) -> Result<AllocationResult> {
    req.validate()?;
    let total: f64 = req.cycles.iter().sum();
    Ok(AllocationResult {
        proportions: req.cycles.iter().map(|k| k / total).collect(),
    })
}

/// Total computation delay `sum K_z / (e_z F)`.
pub fn objective(req: &AllocationRequest, result: &AllocationResult, capacity: f64) -> Result<f64> {
    check_aligned(req, result)?;
    Ok(req
        .cycles
        .iter()
        .zip(&result.proportions)
        .map(|(k, e)| k / (e * capacity))
        .sum())
}

/// `(sum sqrt(K_z))^2 / F`, the optimum value in closed form.
pub fn optimal_value(req: &AllocationRequest, capacity: f64) -> f64 {
    let s: f64 = req.cycles.iter().map(|k| k.sqrt()).sum();
    s * s / capacity
}

/// Exact minimiser of the computation delay over the discretised simplex
/// `{e : sum e = 1, e_z in {1/res, ..., 1}}`.
///
/// The objective is separable and each term `K / n` is convex in the integer
/// share count `n`, so handing out grid units one at a time to the largest
/// marginal decrease reaches the grid optimum. This never consults the
/// closed form; ties go to the lowest index.
pub fn oracle_allocation(req: &AllocationRequest, resolution: usize) -> Result<AllocationResult> {
    req.validate()?;
    let z = req.len();
    if z == 0 || z > ORACLE_MAX_INSTANCES {
        return Err(Error::invalid(format!(
            "oracle supports 1..={ORACLE_MAX_INSTANCES} instances, got {z}"
        )));
    }
    if resolution < 100 {
        return Err(Error::invalid("oracle resolution must be at least 100"));
    }
    let mut units = vec![1usize; z];
    for _ in z..resolution {
        let mut best = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for (i, (&k, &n)) in req.cycles.iter().zip(&units).enumerate() {
            let gain = k / n as f64 - k / (n + 1) as f64;
            if gain > best_gain {
                best_gain = gain;
                best = i;
            }
        }
        units[best] += 1;
    }
    Ok(AllocationResult {
        proportions: units
            .iter()
            .map(|&n| n as f64 / resolution as f64)
            .collect(),
    })
}

/// Scaled KKT residual of an interior feasible allocation.
///
/// Stationarity requires `K_z / (e_z^2 F) = beta` for every instance. The
/// multiplier is recovered as the mean of those terms, and the worst deviation
/// is reported relative to it (so the value is dimensionless and independent
/// of `F`). The budget slackness term `|sum e - 1|` is added on top.
pub fn kkt_residual(req: &AllocationRequest, result: &AllocationResult) -> Result<f64> {
    check_aligned(req, result)?;
    if !result.is_feasible() {
        return Err(Error::invalid("allocation is not feasible"));
    }
    if req.is_empty() {
        return Ok(0.0);
    }
    let grads: Vec<f64> = req
        .cycles
        .iter()
        .zip(&result.proportions)
        .map(|(k, e)| k / (e * e))
        .collect();
    let beta = grads.iter().sum::<f64>() / grads.len() as f64;
    let stationarity = grads
        .iter()
        .map(|g| ((g - beta) / beta).abs())
        .fold(0.0, f64::max);
    Ok(stationarity + (result.sum() - 1.0).abs())
}

/// Analytic Hessian diagonal `2 K_z / (e_z^3 F)`; off-diagonal entries are
/// identically zero.
pub fn hessian_diagonal(req: &AllocationRequest, point: &AllocationResult, capacity: f64) -> Vec<f64> {
    req.cycles
        .iter()
        .zip(&point.proportions)
        .map(|(k, e)| 2.0 * k / (e * e * e * capacity))
        .collect()
}

/// Central finite-difference Hessian of the computation delay at `point`.
pub fn finite_difference_hessian(
    req: &AllocationRequest,
    point: &AllocationResult,
    capacity: f64,
) -> Vec<Vec<f64>> {
    let f = |e: &[f64]| -> f64 {
        req.cycles
            .iter()
            .zip(e)
            .map(|(k, e)| k / (e * capacity))
            .sum()
    };
    let n = req.len();
    let base = point.proportions.clone();
    let f0 = f(&base);
    let mut h = vec![vec![0.0; n]; n];
    let mut e = base.clone();
    for i in 0..n {
        let s = HESSIAN_FD_STEP;
        e[i] = base[i] + s;
        let fp = f(&e);
        e[i] = base[i] - s;
        let fm = f(&e);
        e[i] = base[i];
        h[i][i] = (fp - 2.0 * f0 + fm) / (s * s);
        for j in 0..i {
            let s = HESSIAN_MIXED_FD_STEP;
            let mut corner = |di: f64, dj: f64| {
                e[i] = base[i] + di;
                e[j] = base[j] + dj;
                let v = f(&e);
                e[i] = base[i];
                e[j] = base[j];
                v
            };
            let v = (corner(s, s) - corner(s, -s) - corner(-s, s) + corner(-s, -s)) / (4.0 * s * s);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// True iff the Hessian at an interior point is positive definite.
///
/// The analytic matrix is diagonal, so this checks its diagonal for strict
/// positivity and confirms the analytic form against central finite
/// differences (diagonal within relative error 1e-3, mixed partials below
/// 1e-6 of the diagonal scale).
pub fn hessian_pd_check(req: &AllocationRequest, point: &AllocationResult) -> Result<bool> {
    check_aligned(req, point)?;
    req.validate()?;
    let boundary = point
        .proportions
        .iter()
        .any(|&e| !(e > 0.0 && e < 1.0 + FEASIBILITY_TOL) || (e >= 1.0 && req.len() > 1));
    if boundary {
        return Err(Error::invalid("Hessian check needs an interior point"));
    }
    let capacity = 1.0;
    let diag = hessian_diagonal(req, point, capacity);
    if !diag.iter().all(|&d| d > 0.0 && d.is_finite()) {
        return Ok(false);
    }
    let fd = finite_difference_hessian(req, point, capacity);
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    for i in 0..diag.len() {
        if ((fd[i][i] - diag[i]) / diag[i]).abs() >= 1e-3 {
            return Ok(false);
        }
        for j in 0..diag.len() {
            if i != j && fd[i][j].abs() >= 1e-6 * scale {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn check_aligned(req: &AllocationRequest, result: &AllocationResult) -> Result<()> {
    if req.len() != result.proportions.len() {
        return Err(Error::invalid(format!(
            "allocation has {} entries for {} instances",
            result.proportions.len(),
            req.len()
        )));
    }
    Ok(())
}
