//! Double roots of the dispersion relation: location, pinching, classification.

use crate::linalg::{poly_roots, C64};
use crate::polymat::{ComovingDispersion, PolymatError};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DoubleRootError {
    #[error("resultant vanishes identically: continuum of double roots")]
    DegenerateFamily,
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("double root is not simple")]
    NotSimple,
    #[error("continuation corrector failed at parameter {0}")]
    StepFailure(f64),
    #[error(transparent)]
    Polymat(#[from] PolymatError),
}

pub type Result<T> = std::result::Result<T, DoubleRootError>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_root: f64,
    pub tol_class: f64,
    pub tol_dedup: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol_root: 1e-10, tol_class: 1e-6, tol_dedup: 1e-7 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Classification {
    Simple,
    DoubleDouble,
    Degenerate,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Pinching {
    Pinched,
    NotPinched,
    Undetermined(String),
}

impl Pinching {
    pub fn unchecked() -> Self {
        Pinching::Undetermined("not checked".into())
    }

    pub fn is_pinched(&self) -> bool {
        matches!(self, Pinching::Pinched)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DoubleRoot {
    pub lambda: C64,
    pub nu: C64,
    pub res_d: f64,
    pub res_dnu: f64,
    pub classification: Classification,
    pub pinched: Pinching,
    /// Number of resultant roots that refined to this double root.
    pub multiplicity: usize,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct EffectiveDiffusivity {
    pub d_eff: C64,
    pub well_posed: bool,
}

/// Parameters of the root-tracking pinching test.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PinchOptions {
    /// Defaults to 10³·(1+|λ_*|) when absent.
    pub tau_max: Option<f64>,
    pub n_steps: usize,
    pub min_step: f64,
}

impl Default for PinchOptions {
    fn default() -> Self {
        PinchOptions { tau_max: None, n_steps: 120, min_step: 1e-12 }
    }
}

/// Discard threshold for candidates far out in the λ- or ν-plane.
const LAMBDA_CUTOFF: f64 = 1e6;

/// Sylvester resultant of p (degree n) and q (formal degree m), ascending coefficients.
fn sylvester(p: &[C64], q: &[C64]) -> (C64, f64) {
    let (n, m) = (p.len() - 1, q.len() - 1);
    let size = n + m;
    if size == 0 {
        return (C64::new(1.0, 0.0), 1.0);
    }
    let mut s = DMatrix::<C64>::zeros(size, size);
    for r in 0..m {
        for (j, &c) in p.iter().rev().enumerate() {
            s[(r, r + j)] = c;
        }
    }
    for r in 0..n {
        for (j, &c) in q.iter().rev().enumerate() {
            s[(m + r, r + j)] = c;
        }
    }
    let hadamard: f64 = (0..size).map(|r| s.row(r).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).product();
    (s.determinant(), hadamard)
}

/// Ascending λ-coefficients of ∂ν d at fixed ν.
fn dnu_lambda_coeffs(dr: &ComovingDispersion, nu: C64) -> Vec<C64> {
    dr.poly()
        .a
        .iter()
        .map(|row| {
            let mut acc = C64::new(0.0, 0.0);
            for j in (1..row.len()).rev() {
                acc = acc * nu + row[j] * j as f64;
            }
            acc
        })
        .collect()
}

/// Candidate (λ, ν) pairs from the roots of Res_λ(d_c, ∂ν d_c), a polynomial in ν.
///
/// Eliminating λ rather than ν keeps the resultant well conditioned when the
/// system is close to a product of repeated factors: it then only carries the
/// λ-discriminant instead of the ν-discriminant.
fn resultant_candidates(dr: &ComovingDispersion) -> Result<Vec<(C64, C64)>> {
    let poly = dr.poly();
    let nd = poly.nu_degree();
    if nd < 2 {
        return Ok(Vec::new());
    }
    let nl = poly.lambda_degree();
    let bound = nl.saturating_sub(1) * nd + nl * (nd - 1);
    let m = bound + 1;
    let rho = dr
        .nu_roots(C64::new(0.0, 0.0))
        .map(|rs| rs.iter().map(|z| z.norm()).fold(1.0, f64::max).min(1e3))
        .unwrap_or(1.0);
    let node = |k: usize| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64);
    let mut vals = Vec::with_capacity(m);
    let mut rel: f64 = 0.0;
    for k in 0..m {
        let nu = node(k) * rho;
        let mut q = dnu_lambda_coeffs(dr, nu);
        q.pop();
        let (r, h) = sylvester(&poly.lambda_coeffs(nu), &q);
        if h > 0.0 {
            rel = rel.max(r.norm() / h);
        }
        vals.push(r);
    }
    if rel < 1e-11 {
        return Err(DoubleRootError::DegenerateFamily);
    }
    let mut coeffs: Vec<C64> = (0..m)
        .map(|j| {
            let s: C64 = vals.iter().enumerate().map(|(k, v)| v * node((j * k) % m).conj()).sum();
            s / m as f64
        })
        .collect();
    let big = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    while coeffs.len() > 1 && coeffs.last().unwrap().norm() <= 1e-12 * big {
        coeffs.pop();
    }
    let mut out = Vec::new();
    for mu in poly_roots(&coeffs) {
        let nu = mu * rho;
        if !(nu.re.is_finite() && nu.im.is_finite()) || nu.norm() > LAMBDA_CUTOFF {
            continue;
        }
        let mut scored: Vec<(f64, C64)> = poly_roots(&poly.lambda_coeffs(nu))
            .into_iter()
            .map(|lam| {
                let p = dr.partials(lam, nu);
                (p.dn.norm() / p.scale.max(1e-300), lam)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = scored.first().map(|s| s.0).unwrap_or(0.0);
        for (score, lam) in scored {
            if score > (1e3 * best).max(1e-8) {
                break;
            }
            if lam.re.abs() > LAMBDA_CUTOFF {
                log::warn!("discarding double-root candidate λ = {lam} as interpolation artifact");
                continue;
            }
            out.push((lam, nu));
        }
    }
    Ok(out)
}

fn solve2(a: [[C64; 2]; 2], b: [C64; 2]) -> Option<[C64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let size = a.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    if det.norm() <= 1e-300 || det.norm() < 1e-15 * size * size {
        return None;
    }
    Some([(b[0] * a[1][1] - b[1] * a[0][1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det])
}

/// Gauss–Newton step on (d, ∂ν d, ∂λ d), quadratically convergent at double double roots.
fn gauss_newton_step(dr: &ComovingDispersion, lam: C64, nu: C64) -> Option<(C64, C64)> {
    let p = dr.partials(lam, nu);
    let a = DMatrix::from_row_slice(3, 2, &[p.dl, p.dn, p.dln, p.dnn, p.dll, p.dln]);
    let b = DVector::from_vec(vec![-p.d, -p.dn, -p.dl]);
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-14).ok()?;
    Some((lam + x[0], nu + x[1]))
}

fn residual_norm(dr: &ComovingDispersion, lam: C64, nu: C64) -> f64 {
    let p = dr.partials(lam, nu);
    (p.d.norm_sqr() + p.dn.norm_sqr()).sqrt()
}

/// Newton on F(λ, ν) = (d_c, ∂ν d_c) with the analytic Jacobian.
pub fn newton_double_root(dr: &ComovingDispersion, lam0: C64, nu0: C64, tol: &Tolerances) -> Result<DoubleRoot> {
    let (mut lam, mut nu) = (lam0, nu0);
    let max_iter = 80;
    let mut res = residual_norm(dr, lam, nu);
    let mut converged = false;
    for _ in 0..max_iter {
        let p = dr.partials(lam, nu);
        let s = p.scale.max(1.0);
        if p.d.norm() <= tol.tol_root * s * 1e-3 && p.dn.norm() <= tol.tol_root * s * 1e-3 {
            converged = true;
            break;
        }
        let step = solve2([[p.dl, p.dn], [p.dln, p.dnn]], [-p.d, -p.dn]);
        let (dl, dn) = match step {
            Some([a, b]) => (a, b),
            None => match gauss_newton_step(dr, lam, nu) {
                Some((l2, n2)) => (l2 - lam, n2 - nu),
                None => break,
            },
        };
        if !(dl.re.is_finite() && dl.im.is_finite() && dn.re.is_finite() && dn.im.is_finite()) {
            break;
        }
        // backtracking on the residual norm
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (l2, n2) = (lam + dl * t, nu + dn * t);
            let r2 = residual_norm(dr, l2, n2);
            if r2 < res || r2 == 0.0 {
                lam = l2;
                nu = n2;
                res = r2;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let p = dr.partials(lam, nu);
            let s = p.scale.max(1.0);
            converged = p.d.norm() <= tol.tol_root * s && p.dn.norm() <= tol.tol_root * s;
            break;
        }
    }
    let p = dr.partials(lam, nu);
    let s = p.scale.max(1.0);
    if !converged && !(p.d.norm() <= tol.tol_root * s && p.dn.norm() <= tol.tol_root * s) {
        return Err(DoubleRootError::NoConvergence { iterations: max_iter, residual: res });
    }
    if p.dl.norm() <= tol.tol_class * s {
        // candidate double double root: polish on the augmented system
        for _ in 0..8 {
            let Some((l2, n2)) = gauss_newton_step(dr, lam, nu) else { break };
            let before = dr.partials(lam, nu);
            let after = dr.partials(l2, n2);
            let nb = before.d.norm() + before.dn.norm() + before.dl.norm();
            let na = after.d.norm() + after.dn.norm() + after.dl.norm();
            if na < nb {
                lam = l2;
                nu = n2;
            } else {
                break;
            }
        }
    }
    let mut root = DoubleRoot {
        lambda: lam,
        nu,
        res_d: dr.eval(lam, nu).norm(),
        res_dnu: dr.partials(lam, nu).dn.norm(),
        classification: Classification::Simple,
        pinched: Pinching::unchecked(),
        multiplicity: 1,
    };
    root.classification = classify_double_root(dr, &root, tol);
    Ok(root)
}

/// Simple / DoubleDouble / Degenerate from the local expansion.
pub fn classify_double_root(dr: &ComovingDispersion, root: &DoubleRoot, tol: &Tolerances) -> Classification {
    let p = dr.partials(root.lambda, root.nu);
    let s = p.scale.max(1.0);
    let big_l = p.dl.norm() > tol.tol_class * s;
    let big_nn = p.dnn.norm() > tol.tol_class * s;
    if big_l && big_nn {
        return Classification::Simple;
    }
    let hess = p.dll * p.dnn - p.dln * p.dln;
    let hsize = (p.dll.norm() + p.dln.norm() + p.dnn.norm()).powi(2);
    if !big_l && hess.norm() > tol.tol_class * hsize.max(1e-300) && hsize > 0.0 {
        Classification::DoubleDouble
    } else {
        Classification::Degenerate
    }
}

fn same_root(a: &DoubleRoot, b: &DoubleRoot, tol: f64) -> bool {
    (a.lambda - b.lambda).norm() <= tol * (1.0 + a.lambda.norm())
        && (a.nu - b.nu).norm() <= tol * (1.0 + a.nu.norm())
}

/// Decreasing Re λ, then Im λ ≥ 0 first.
pub fn sort_roots(roots: &mut [DoubleRoot]) {
    roots.sort_by(|a, b| {
        b.lambda
            .re
            .total_cmp(&a.lambda.re)
            .then(b.lambda.im.total_cmp(&a.lambda.im))
            .then(a.nu.re.total_cmp(&b.nu.re))
            .then(a.nu.im.total_cmp(&b.nu.im))
    });
}

/// All double roots via a resultant, refined by Newton.
pub fn find_double_roots(dr: &ComovingDispersion, tol: &Tolerances) -> Result<Vec<DoubleRoot>> {
    let cands = resultant_candidates(dr)?;
    let mut out: Vec<DoubleRoot> = Vec::new();
    for (lam, nu) in cands {
        let Ok(root) = newton_double_root(dr, lam, nu, tol) else { continue };
        match out.iter_mut().find(|r| same_root(r, &root, tol.tol_dedup)) {
            Some(r) => r.multiplicity += 1,
            None => out.push(root),
        }
    }
    // closure under conjugation for real systems
    let snapshot = out.clone();
    for r in &snapshot {
        let conj = DoubleRoot { lambda: r.lambda.conj(), nu: r.nu.conj(), ..r.clone() };
        if !out.iter().any(|q| same_root(q, &conj, tol.tol_dedup)) {
            if let Ok(c) = newton_double_root(dr, conj.lambda, conj.nu, tol) {
                out.push(DoubleRoot { multiplicity: r.multiplicity, ..c });
            }
        }
    }
    let bound = 2 * dr.base().half_order() * dr.base().dim().pow(2) - dr.base().dim();
    let total: usize = out.iter().map(|r| r.multiplicity).sum();
    if total > bound {
        log::debug!("found {total} double roots counted with multiplicity, bound {bound}");
    }
    sort_roots(&mut out);
    Ok(out)
}

/// Double roots with pinching verdicts attached (checks run concurrently).
pub fn find_pinched_verdicts(dr: &ComovingDispersion, tol: &Tolerances, opts: &PinchOptions) -> Result<Vec<DoubleRoot>> {
    let roots = find_double_roots(dr, tol)?;
    Ok(roots
        .into_par_iter()
        .map(|mut r| {
            r.pinched = check_pinching(dr, &r, opts);
            r
        })
        .collect())
}

/// ν-derivative along a root branch: dν/dλ = −∂λd / ∂νd.
fn branch_slope(dr: &ComovingDispersion, lam: C64, nu: C64) -> C64 {
    let p = dr.partials(lam, nu);
    if p.dn.norm() == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        -p.dl / p.dn
    }
}

/// Matches predicted positions against a fresh root set; `None` if ambiguous.
fn match_branches(preds: &[C64; 2], roots: &[C64]) -> Option<[usize; 2]> {
    let mut idx = [0usize; 2];
    for (b, pred) in preds.iter().enumerate() {
        let (mut best, mut bd) = (usize::MAX, f64::INFINITY);
        for (i, r) in roots.iter().enumerate() {
            let d = (r - pred).norm();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        let guard = roots
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, r)| (r - roots[best]).norm())
            .fold(f64::INFINITY, f64::min)
            * 0.5;
        if !(bd < guard) {
            return None;
        }
        idx[b] = best;
    }
    if idx[0] == idx[1] {
        None
    } else {
        Some(idx)
    }
}

/// Follows the two branches emanating from a double root along λ_* + τ e^{iθ}.
///
/// The real ray is tried first; when it runs into another branch point the
/// matching becomes ambiguous and slightly tilted rays are used instead.
pub fn check_pinching(dr: &ComovingDispersion, root: &DoubleRoot, opts: &PinchOptions) -> Pinching {
    if root.classification == Classification::Degenerate {
        return Pinching::Undetermined("degenerate double root".into());
    }
    let mut last = String::new();
    for theta in [0.0, 0.05, 0.2, 0.5] {
        match track_branches(dr, root, opts, C64::from_polar(1.0, theta)) {
            Ok(v) => return v,
            Err(e) => last = e,
        }
    }
    Pinching::Undetermined(last)
}

fn track_branches(
    dr: &ComovingDispersion,
    root: &DoubleRoot,
    opts: &PinchOptions,
    dir: C64,
) -> std::result::Result<Pinching, String> {
    let lam_star = root.lambda;
    let scale = 1.0 + lam_star.norm();
    let tau_max = opts.tau_max.unwrap_or(1e3 * scale);

    // split: two roots nearest ν_* well separated from the rest
    let mut tau0 = 1e-4 * scale;
    let mut branches: Option<[C64; 2]> = None;
    while tau0 >= opts.min_step {
        let Ok(rs) = dr.nu_roots(lam_star + dir * tau0) else {
            tau0 *= 0.1;
            continue;
        };
        let mut by_dist: Vec<C64> = rs.clone();
        by_dist.sort_by(|a, b| (a - root.nu).norm().total_cmp(&(b - root.nu).norm()));
        let d2 = (by_dist[1] - root.nu).norm();
        let d3 = by_dist.get(2).map(|r| (r - root.nu).norm()).unwrap_or(f64::INFINITY);
        if d3 > 3.0 * d2 && (by_dist[0] - by_dist[1]).norm() > 1e-9 * (1.0 + root.nu.norm()) {
            branches = Some([by_dist[0], by_dist[1]]);
            break;
        }
        tau0 *= 0.1;
    }
    let Some(mut br) = branches else {
        return Err("branches do not separate near the double root".into());
    };

    let ratio = (tau_max / tau0).powf(1.0 / opts.n_steps.max(1) as f64);
    let mut tau = tau0;
    let mut h = tau * (ratio - 1.0);
    let mut final_roots = Vec::new();
    // bounded: every step either advances τ by a relative amount or halves h
    let max_steps = 200 * opts.n_steps.max(1);
    let mut steps = 0;
    while tau < tau_max {
        steps += 1;
        if steps > max_steps {
            return Err(format!("step budget exhausted at τ = {tau:e}"));
        }
        let tn = (tau + h).min(tau_max);
        if tn <= tau {
            return Err(format!("step underflow at τ = {tau:e}"));
        }
        let lam = lam_star + dir * tau;
        let lam_n = lam_star + dir * tn;
        let preds = [
            br[0] + branch_slope(dr, lam, br[0]) * dir * (tn - tau),
            br[1] + branch_slope(dr, lam, br[1]) * dir * (tn - tau),
        ];
        let matched = dr.nu_roots(lam_n).ok().and_then(|rs| match_branches(&preds, &rs).map(|m| (m, rs)));
        match matched {
            Some((m, rs)) => {
                br = [rs[m[0]], rs[m[1]]];
                tau = tn;
                h = (h * 2.0).min(tau * (ratio - 1.0)).max(opts.min_step * (1.0 + tau));
                final_roots = rs;
            }
            None => {
                h *= 0.5;
                if h < opts.min_step * (1.0 + tau) {
                    return Err(format!("ambiguous root matching at τ = {tau:e}"));
                }
            }
        }
    }
    if final_roots.is_empty() {
        return Err("tracking made no progress".into());
    }
    let deg = final_roots.len();
    let split = if deg == dr.full_nu_degree() {
        dr.base().half_order() * dr.base().dim()
    } else {
        final_roots.iter().filter(|r| r.re < 0.0).count()
    };
    let mut order: Vec<usize> = (0..deg).collect();
    order.sort_by(|&a, &b| final_roots[a].re.total_cmp(&final_roots[b].re));
    let rank = |z: C64| {
        let i = final_roots.iter().position(|r| *r == z).unwrap();
        order.iter().position(|&k| k == i).unwrap()
    };
    let low0 = rank(br[0]) < split;
    let low1 = rank(br[1]) < split;
    Ok(if low0 != low1 { Pinching::Pinched } else { Pinching::NotPinched })
}

/// d_eff = −∂νν d / (2 ∂λ d) at a simple double root.
pub fn effective_diffusivity(dr: &ComovingDispersion, root: &DoubleRoot) -> Result<EffectiveDiffusivity> {
    if root.classification != Classification::Simple {
        return Err(DoubleRootError::NotSimple);
    }
    let p = dr.partials(root.lambda, root.nu);
    let d_eff = -p.dnn / (p.dl * 2.0);
    Ok(EffectiveDiffusivity { d_eff, well_posed: d_eff.re > 0.0 })
}

/// Secant-predicted, Newton-corrected continuation of a double root in a parameter.
pub fn continue_double_root<F>(
    family: F,
    root: &DoubleRoot,
    path: &[f64],
    tol: &Tolerances,
    opts: &PinchOptions,
) -> Result<Vec<DoubleRoot>>
where
    F: Fn(f64) -> ComovingDispersion,
{
    if root.classification != Classification::Simple {
        return Err(DoubleRootError::NotSimple);
    }
    let Some(&mu0) = path.first() else { return Ok(Vec::new()) };
    let dr0 = family(mu0);
    let mut cur = newton_double_root(&dr0, root.lambda, root.nu, tol)?;
    cur.pinched = match &root.pinched {
        Pinching::Undetermined(r) if r == "not checked" => check_pinching(&dr0, &cur, opts),
        v => v.clone(),
    };
    let mut out = vec![cur.clone()];
    let mut hist: Vec<(f64, C64, C64)> = vec![(mu0, cur.lambda, cur.nu)];
    let collision_guard = 1e-3;
    for w in path.windows(2) {
        let (mut mu, target) = (w[0], w[1]);
        let mut h = target - mu;
        while (target - mu).abs() > 0.0 {
            let step = if (target - mu).abs() < h.abs() { target - mu } else { h };
            let mn = mu + step;
            let dr = family(mn);
            let (lp, np) = match hist.len() {
                n if n >= 2 => {
                    let (m1, l1, n1) = hist[n - 1];
                    let (m0, l0, n0) = hist[n - 2];
                    let s = if m1 != m0 { (mn - m1) / (m1 - m0) } else { 0.0 };
                    (l1 + (l1 - l0) * s, n1 + (n1 - n0) * s)
                }
                _ => (cur.lambda, cur.nu),
            };
            let kick = C64::new(0.0, step.abs().sqrt() * 0.1);
            let attempt = newton_double_root(&dr, lp, np, tol)
                .or_else(|_| newton_double_root(&dr, lp + kick, np + kick, tol))
                .or_else(|_| newton_double_root(&dr, lp - kick, np - kick, tol));
            match attempt {
                Ok(mut r) => {
                    r.pinched = cur.pinched.clone();
                    if let Ok(all) = find_double_roots(&dr, tol) {
                        let others: Vec<&DoubleRoot> =
                            all.iter().filter(|q| !same_root(q, &r, tol.tol_dedup * 10.0)).collect();
                        let collision = others.iter().any(|q| {
                            (q.lambda - r.lambda).norm() + (q.nu - r.nu).norm() < collision_guard * (1.0 + r.lambda.norm())
                        });
                        let rightmost = others.iter().all(|q| q.lambda.re <= r.lambda.re + tol.tol_dedup);
                        let was_rightmost = out.last().map(|_| true).unwrap_or(true);
                        if collision || (!rightmost && was_rightmost) {
                            r.pinched = check_pinching(&dr, &r, opts);
                        }
                    }
                    mu = mn;
                    hist.push((mn, r.lambda, r.nu));
                    cur = r;
                    h = (h * 1.5).clamp(-(target - w[0]).abs(), (target - w[0]).abs());
                    if h == 0.0 {
                        h = target - mu;
                    }
                }
                Err(_) => {
                    h *= 0.5;
                    if h.abs() < 1e-10 * (1.0 + mu.abs()) {
                        return Err(DoubleRootError::StepFailure(mn));
                    }
                }
            }
        }
        out.push(cur.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymat::MatrixPolynomial;

    fn fkpp(c: f64) -> ComovingDispersion {
        ComovingDispersion::new(MatrixPolynomial::scalar(&[0.0, 0.0, 1.0], 1.0).unwrap(), c)
    }

    fn fourth(a: f64, b: f64, c: f64) -> ComovingDispersion {
        ComovingDispersion::new(MatrixPolynomial::scalar(&[0.0, 0.0, a, 0.0, -1.0], b).unwrap(), c)
    }

    #[test]
    fn fkpp_has_one_simple_pinched_root() {
        let dr = fkpp(2.0);
        let tol = Tolerances::default();
        let roots = find_double_roots(&dr, &tol).unwrap();
        assert_eq!(roots.len(), 1);
        let r = &roots[0];
        assert!(r.lambda.norm() < 1e-12);
        assert!((r.nu + 1.0).norm() < 1e-12);
        assert_eq!(r.classification, Classification::Simple);
        assert_eq!(check_pinching(&dr, r, &PinchOptions::default()), Pinching::Pinched);
        let de = effective_diffusivity(&dr, r).unwrap();
        assert!((de.d_eff - 1.0).norm() < 1e-12);
    }

    #[test]
    fn newton_examples() {
        let tol = Tolerances::default();
        let r = newton_double_root(&fkpp(2.0), C64::new(0.1, 0.0), C64::new(-0.9, 0.0), &tol).unwrap();
        assert!(r.lambda.norm() < 1e-12 && (r.nu + 1.0).norm() < 1e-12);
        let r = newton_double_root(&fkpp(3.0), C64::new(0.0, 0.0), C64::new(-1.4, 0.0), &tol).unwrap();
        assert!((r.lambda + 1.25).norm() < 1e-12 && (r.nu + 1.5).norm() < 1e-12);
    }

    #[test]
    fn fourth_order_region_one_root_is_pinched() {
        let (a, b) = (1.0f64, 0.05f64);
        let s = (a * a - 12.0 * b).sqrt();
        let c1 = 2.0 / (3.0 * 6f64.sqrt()) * (2.0 * a + s) * (a - s).sqrt();
        let nu1 = -(a - s).sqrt() / 6f64.sqrt();
        let dr = fourth(a, b, c1);
        let roots = find_double_roots(&dr, &Tolerances::default()).unwrap();
        let r = roots.iter().find(|r| (r.nu - nu1).norm() < 1e-9).expect("region I root");
        assert!(r.lambda.norm() < 1e-9);
        assert_eq!(check_pinching(&dr, r, &PinchOptions::default()), Pinching::Pinched);
    }

    #[test]
    fn region_two_root_is_not_pinched() {
        let (a, b) = (1.0f64, 0.05f64);
        let s = (a * a - 12.0 * b).sqrt();
        let c2 = 2.0 / (3.0 * 6f64.sqrt()) * (2.0 * a - s) * (a + s).sqrt();
        let nu2 = -(a + s).sqrt() / 6f64.sqrt();
        let dr = fourth(a, b, c2);
        let tol = Tolerances::default();
        let r = newton_double_root(&dr, C64::new(0.0, 0.0), C64::new(nu2, 0.0), &tol).unwrap();
        assert!(r.lambda.norm() < 1e-10);
        assert_eq!(check_pinching(&dr, &r, &PinchOptions::default()), Pinching::NotPinched);
    }

    #[test]
    fn continuation_follows_fkpp_parabola() {
        let tol = Tolerances::default();
        let dr = fkpp(2.0);
        let r0 = find_double_roots(&dr, &tol).unwrap().remove(0);
        let path: Vec<f64> = (0..=20).map(|i| 2.0 + 0.1 * i as f64).collect();
        let branch = continue_double_root(fkpp, &r0, &path, &tol, &PinchOptions::default()).unwrap();
        for (c, r) in path.iter().zip(&branch) {
            assert!((r.lambda.re - (1.0 - c * c / 4.0)).abs() < 1e-8);
            assert!(r.pinched.is_pinched());
        }
        let flat = continue_double_root(fkpp, &r0, &[2.0, 2.0, 2.0], &tol, &PinchOptions::default()).unwrap();
        assert!(flat.iter().all(|r| (r.lambda - r0.lambda).norm() < 1e-12));
    }

    #[test]
    fn degenerate_family_is_reported() {
        // d = (ν² + 2ν + 1 − λ)² from two identical uncoupled components
        let id = DMatrix::identity(2, 2);
        let z = DMatrix::zeros(2, 2);
        let base = MatrixPolynomial::new(vec![z.clone(), z, id.clone()], id).unwrap();
        let dr = ComovingDispersion::new(base, 2.0);
        assert_eq!(find_double_roots(&dr, &Tolerances::default()), Err(DoubleRootError::DegenerateFamily));
    }
}
