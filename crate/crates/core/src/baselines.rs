//! Reference estimators and an exhaustive oracle.
//!
//! All estimators return an estimate of the masked channel `x = h ⊙ a`.
//!
//! LMMSE treats each `x_k` as a spike-and-slab variable and uses its exact
//! first two moments: `E[x_k] = p_a mu_k` and
//! `Var[x_k] = p_a (v_k + |mu_k|^2) - p_a^2 |mu_k|^2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::bmp::PriorMoments;
use crate::model::{DeviceProfile, EmVariant, Impairment, PilotMatrix};
use crate::{Error, Result, C64};

/// Largest device count the enumeration oracle accepts.
pub const ORACLE_MAX_DEVICES: usize = 12;

/// A Gram matrix whose Cholesky factor has `(min diag / max diag)^2` below
/// this is treated as rank deficient and inverted by SVD instead.
pub const GRAM_RCOND_MIN: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Exact posterior of the Bernoulli-Gaussian model for small `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosterior {
    /// Marginal `P(alpha_k = 1 | y)`.
    pub support_probs: Vec<f64>,
    /// Posterior mean of `h ⊙ a`.
    pub mmse_estimate: Vec<C64>,
    /// Most probable activity pattern.
    pub map_support: Vec<bool>,
    /// `ln p(y)`.
    pub log_evidence: f64,
    /// Posterior probability of every pattern; bit `k` of the index is device `k`.
    pub pattern_weights: Vec<f64>,
}

fn check_y(y: &[C64], pilots: &PilotMatrix) -> Result<()> {
    if y.len() != pilots.pilot_len() {
        return Err(Error::DimensionMismatch(format!(
            "{} received symbols for pilot length {}",
            y.len(),
            pilots.pilot_len()
        )));
    }
    Ok(())
}

fn vector(x: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(x)
}

/// Solves a Hermitian positive (semi)definite system, falling back to the
/// pseudo-inverse when the Cholesky factor is missing or badly conditioned.
fn solve_hermitian(a: DMatrix<C64>, b: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if let Some(chol) = a.clone().cholesky() {
        let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|d| d.re).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > 0.0 && (lo / hi).powi(2) > GRAM_RCOND_MIN {
            return Ok(chol.solve(b));
        }
    }
    let n = a.nrows();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = n as f64 * f64::EPSILON * smax;
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|_| Error::Singular("pseudo-inverse"))?;
    Ok(pinv * b)
}

/// Minimum-norm least squares solution of `y = P x`.
pub fn ls_estimate(y: &[C64], pilots: &PilotMatrix) -> Result<Vec<C64>> {
    check_y(y, pilots)?;
    let p = pilots.to_matrix();
    let yv = DMatrix::from_column_slice(y.len(), 1, y);
    let ph = p.adjoint();
    let x = if pilots.pilot_len() <= pilots.devices() {
        // Underdetermined: x = P^H (P P^H)^+ y.
        &ph * solve_hermitian(&p * &ph, &yv)?
    } else {
        solve_hermitian(&ph * &p, &(&ph * yv))?
    };
    Ok(x.iter().copied().collect())
}

/// Linear MMSE estimate under the spike-and-slab moments.
pub fn lmmse_estimate(
    y: &[C64],
    pilots: &PilotMatrix,
    priors: &PriorMoments,
    p_a: f64,
    noise_var: f64,
) -> Result<Vec<C64>> {
    check_y(y, pilots)?;
    if priors.len() != pilots.devices() {
        return Err(Error::DimensionMismatch("priors vs pilot columns".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid(
            "noise_var",
            "LMMSE needs positive noise power",
        ));
    }
    let mean: Vec<C64> = priors.mu_pri.iter().map(|m| m * p_a).collect();
    let var: Vec<f64> = priors
        .mu_pri
        .iter()
        .zip(&priors.v_pri)
        .map(|(m, v)| p_a * v + p_a * (1.0 - p_a) * m.norm_sqr())
        .collect();
    let all: Vec<usize> = (0..pilots.devices()).collect();
    gaussian_conditional_mean(pilots, &all, &mean, &var, y, noise_var)
        .map(|(x, _)| scatter(&all, &x, pilots.devices()))
}

/// Orthogonal matching pursuit with a known number of active devices.
///
/// Columns are picked by normalised correlation with the residual; the
/// coefficients are the least-squares fit on the selected support.
pub fn omp_estimate(
    y: &[C64],
    pilots: &PilotMatrix,
    active_count: usize,
) -> Result<(Vec<usize>, Vec<C64>)> {
    check_y(y, pilots)?;
    let (l, k) = (pilots.pilot_len(), pilots.devices());
    if active_count > k.min(l) {
        return Err(Error::invalid(
            "active_count",
            format!("{active_count} exceeds min(K, L) = {}", k.min(l)),
        ));
    }
    let columns: Vec<Vec<C64>> = (0..k).map(|j| pilots.column(j)).collect();
    let norms: Vec<f64> = columns.iter().map(|c| norm(c)).collect();

    let mut support = Vec::with_capacity(active_count);
    let mut excluded = vec![false; k];
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(active_count);
    // r[i][j] = <q_i, a_j> for the j-th selected column.
    let mut r: Vec<Vec<C64>> = Vec::with_capacity(active_count);
    let mut residual = y.to_vec();

    while support.len() < active_count {
        let best = (0..k)
            .filter(|&j| !excluded[j] && norms[j] > 0.0)
            .map(|j| (j, dot(&columns[j], &residual).norm() / norms[j]))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = best else { break };
        excluded[j] = true;

        let mut q = columns[j].clone();
        let mut coeffs = vec![ZERO; basis.len() + 1];
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let proj = dot(b, &q);
                coeffs[i] += proj;
                axpy(&mut q, -proj, b);
            }
        }
        let qn = norm(&q);
        if qn <= 1e-10 * norms[j] {
            continue;
        }
        q.iter_mut().for_each(|z| *z /= qn);
        coeffs[basis.len()] = C64::new(qn, 0.0);
        let proj = dot(&q, &residual);
        axpy(&mut residual, -proj, &q);
        basis.push(q);
        r.push(coeffs);
        support.push(j);
    }

    // Back-substitution R x = Q^H y.
    let s = support.len();
    let z: Vec<C64> = basis.iter().map(|q| dot(q, y)).collect();
    let mut coef = vec![ZERO; s];
    for i in (0..s).rev() {
        let mut acc = z[i];
        for j in i + 1..s {
            acc -= r[j][i] * coef[j];
        }
        coef[i] = acc / r[i][i];
    }
    Ok((support.clone(), scatter(&support, &coef, k)))
}

/// Genie-aided MMSE: exact Gaussian conditioning on the true support with
/// priors at the true impairments.
pub fn gammse_estimate(
    y: &[C64],
    pilots: &PilotMatrix,
    true_support: &[bool],
    true_impairments: &[Impairment],
    profiles: &[DeviceProfile],
    noise_var: f64,
    variant: EmVariant,
) -> Result<Vec<C64>> {
    check_y(y, pilots)?;
    if true_support.len() != pilots.devices() || profiles.len() != pilots.devices() {
        return Err(Error::DimensionMismatch(
            "support/profiles vs pilot columns".into(),
        ));
    }
    let priors = PriorMoments::from_impairments(profiles, true_impairments, variant);
    let support: Vec<usize> = (0..true_support.len())
        .filter(|&k| true_support[k])
        .collect();
    if support.is_empty() {
        return Ok(vec![ZERO; pilots.devices()]);
    }
    let mean: Vec<C64> = support.iter().map(|&k| priors.mu_pri[k]).collect();
    let var: Vec<f64> = support.iter().map(|&k| priors.v_pri[k]).collect();
    let (x, _) = gaussian_conditional_mean(pilots, &support, &mean, &var, y, noise_var)?;
    Ok(scatter(&support, &x, pilots.devices()))
}

/// `E[x_S | y]` for `y = P_S x_S + n`, `x_S ~ CN(mean, diag(var))`,
/// `n ~ CN(0, noise_var I)`. Also returns the dimension of the system solved.
fn gaussian_conditional_mean(
    pilots: &PilotMatrix,
    support: &[usize],
    mean: &[C64],
    var: &[f64],
    y: &[C64],
    noise_var: f64,
) -> Result<(Vec<C64>, usize)> {
    let l = pilots.pilot_len();
    let s = support.len();
    let ps = DMatrix::from_fn(l, s, |i, j| pilots.get(i, support[j]));
    let psh = ps.adjoint();
    let m = DMatrix::from_column_slice(s, 1, mean);
    let yv = DMatrix::from_column_slice(l, 1, y);
    if s <= l {
        // (sigma^2 C^-1 + P^H P) x = sigma^2 C^-1 m + P^H y; well posed at
        // sigma^2 = 0 whenever P_S has full column rank.
        let mut a = &psh * &ps;
        let mut b = &psh * &yv;
        for j in 0..s {
            let w = noise_var / var[j];
            a[(j, j)] += C64::new(w, 0.0);
            b[(j, 0)] += m[(j, 0)] * w;
        }
        let x = solve_hermitian(a, &b)?;
        Ok((x.iter().copied().collect(), s))
    } else {
        // x = m + C P^H (P C P^H + sigma^2 I)^-1 (y - P m).
        let mut pc = ps.clone();
        for (j, &v) in var.iter().enumerate().take(s) {
            pc.column_mut(j).scale_mut(v);
        }
        let mut cov = &pc * &psh;
        for i in 0..l {
            cov[(i, i)] += C64::new(noise_var, 0.0);
        }
        let resid = &yv - &ps * &m;
        let w = solve_hermitian(cov, &resid)?;
        let x = m + pc.adjoint() * w;
        Ok((x.iter().copied().collect(), l))
    }
}

/// Exhaustive posterior over all `2^K` activity patterns.
pub fn exact_posterior_oracle(
    y: &[C64],
    pilots: &PilotMatrix,
    priors: &PriorMoments,
    p_a: f64,
    noise_var: f64,
) -> Result<OraclePosterior> {
    check_y(y, pilots)?;
    let k = pilots.devices();
    if k > ORACLE_MAX_DEVICES {
        return Err(Error::OracleTooLarge {
            k,
            max: ORACLE_MAX_DEVICES,
        });
    }
    if priors.len() != k {
        return Err(Error::DimensionMismatch("priors vs pilot columns".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid(
            "noise_var",
            "oracle needs positive noise power",
        ));
    }
    if !(0.0..=1.0).contains(&p_a) {
        return Err(Error::invalid("p_a", format!("{p_a} is outside [0, 1]")));
    }
    let l = pilots.pilot_len();
    let yv = vector(y);
    let patterns = 1usize << k;

    let mut log_w = Vec::with_capacity(patterns);
    let mut means: Vec<Vec<C64>> = Vec::with_capacity(patterns);
    for pattern in 0..patterns {
        let support: Vec<usize> = (0..k).filter(|j| pattern >> j & 1 == 1).collect();
        let active = support.len();
        let log_prior = xlogy(active, p_a) + xlogy(k - active, 1.0 - p_a);
        if log_prior == f64::NEG_INFINITY {
            log_w.push(f64::NEG_INFINITY);
            means.push(vec![ZERO; k]);
            continue;
        }
        let mut cov = DMatrix::<C64>::identity(l, l) * C64::new(noise_var, 0.0);
        let mut resid = yv.clone();
        for &j in &support {
            let col = vector(&pilots.column(j));
            cov += &col * col.adjoint() * C64::new(priors.v_pri[j], 0.0);
            resid -= col * priors.mu_pri[j];
        }
        let chol = cov
            .cholesky()
            .ok_or(Error::Singular("oracle evidence covariance"))?;
        let log_det: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.re.ln())
                .sum::<f64>();
        let whitened = chol.solve(&resid);
        let quad = resid.dotc(&whitened).re;
        log_w.push(-(l as f64) * PI.ln() - log_det - quad + log_prior);

        let mut x = vec![ZERO; k];
        for &j in &support {
            let col = vector(&pilots.column(j));
            x[j] = priors.mu_pri[j] + col.dotc(&whitened) * priors.v_pri[j];
        }
        means.push(x);
    }

    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let log_evidence = max + sum.ln();
    let pattern_weights: Vec<f64> = log_w.iter().map(|w| (w - log_evidence).exp()).collect();

    let mut support_probs = vec![0.0; k];
    let mut mmse_estimate = vec![ZERO; k];
    for (pattern, (&w, x)) in pattern_weights.iter().zip(&means).enumerate() {
        for j in 0..k {
            if pattern >> j & 1 == 1 {
                support_probs[j] += w;
                mmse_estimate[j] += x[j] * w;
            }
        }
    }
    let map = (0..patterns)
        .max_by(|&a, &b| log_w[a].total_cmp(&log_w[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    Ok(OraclePosterior {
        support_probs: support_probs
            .into_iter()
            .map(|p| p.clamp(0.0, 1.0))
            .collect(),
        mmse_estimate,
        map_support: (0..k).map(|j| map >> j & 1 == 1).collect(),
        log_evidence,
        pattern_weights,
    })
}

fn xlogy(n: usize, p: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * p.ln()
    }
}

fn scatter(support: &[usize], values: &[C64], k: usize) -> Vec<C64> {
    let mut x = vec![ZERO; k];
    for (&j, &v) in support.iter().zip(values) {
        x[j] = v;
    }
    x
}

/// `a^H b`.
fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
