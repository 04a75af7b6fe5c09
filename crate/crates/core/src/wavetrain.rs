//! Periodic wave trains u(kx − ωt), the nonlinear dispersion relation ω_nl(k)
//! and resonant wake wavenumbers.
//!
//! A wave train solves P(k∂ζ)u + ω∂ζu + Ju + Q(k∂ζ)n(u) = 0 on the 2π-periodic
//! circle in ζ = kx − ωt, discretized by trigonometric collocation.

use crate::linalg::{eig_complex, fourier_diff_matrix, smallest_singular_value, C64};
use crate::models::{ModelSpec, Outer};
use crate::spreading::SpreadingResult;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum WaveTrainError {
    #[error("wave-train Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular wave-train Jacobian: smallest singular value {0:e}")]
    SingularJacobian(f64),
    #[error("Newton collapsed onto the homogeneous state")]
    Collapsed,
    #[error("continuation stopped at k = {k}: no convergence at the minimum step")]
    FoldDetected { k: f64, partial: Box<DispersionCurve> },
    #[error("no resonant wavenumber in the range of the curve")]
    NoSolutionInRange,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, WaveTrainError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WaveTrainOptions {
    pub n_per: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WaveTrainOptions {
    fn default() -> Self {
        WaveTrainOptions { n_per: 64, tol: 1e-10, max_iter: 40 }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WaveTrain {
    pub k: f64,
    pub omega: f64,
    /// N rows of n_per values on ζ_i = 2πi/n_per.
    pub profile: Vec<Vec<f64>>,
    pub residual: f64,
    pub phase_residual: f64,
}

impl WaveTrain {
    pub fn amplitude(&self) -> f64 {
        self.profile.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn flat(&self) -> Vec<f64> {
        self.profile.concat()
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct DispersionSample {
    pub k: f64,
    pub omega: f64,
    pub group_velocity: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DispersionCurve {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    /// Strictly increasing in k.
    pub samples: Vec<DispersionSample>,
    /// Converged wave trains matching `samples`, reused as Newton seeds.
    #[serde(skip)]
    pub trains: Vec<WaveTrain>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct WavenumberSolution {
    pub k: f64,
    pub p: u32,
    pub q: u32,
    /// Branch of the linear frequency: p·s·ω_lin = q·(ω_nl − c_lin k).
    pub sign: i8,
    pub omega_nl: f64,
    pub omega_comoving: f64,
    pub group_velocity: f64,
    pub comoving_group_velocity: f64,
    /// Negative comoving group velocity: the pattern is transported away from the interface.
    pub admissible: bool,
    pub resonance_residual: f64,
}

/// Powers of the spectral derivative and the per-model operator pieces.
struct Collocation {
    n: usize,
    dim: usize,
    dpow: Vec<DMatrix<f64>>,
    /// Components whose equation is a total derivative; their mean is a free
    /// parameter of the family and is pinned by an extra constraint.
    conserved: Vec<usize>,
}

impl Collocation {
    fn new(model: &ModelSpec, n: usize) -> Self {
        let order = model.symbol.order().max(2);
        let dpow = (0..=order)
            .map(|j| if j == 0 { DMatrix::identity(n, n) } else { fourier_diff_matrix(n, j) })
            .collect();
        let jac = model.symbol.jacobian();
        let p0 = &model.symbol.coeffs()[0];
        let conserved = (0..model.dim())
            .filter(|&r| {
                let linear_free = (0..model.dim()).all(|c| jac[(r, c)] == 0.0 && p0[(r, c)] == 0.0);
                let nl_free = model.outer == Outer::NegLaplacian || model.nonlinear.iter().all(|m| m.component != r);
                linear_free && nl_free
            })
            .collect();
        Collocation { n, dim: model.dim(), dpow, conserved }
    }

    fn extras(&self) -> usize {
        1 + self.conserved.len()
    }

    fn mean(&self, u: &[f64], r: usize) -> f64 {
        u[r * self.n..(r + 1) * self.n].iter().sum::<f64>() / self.n as f64
    }

    fn size(&self) -> usize {
        self.n * self.dim
    }

    /// P(k∂ζ) + J as an (N n)² matrix, component-major.
    fn linear(&self, model: &ModelSpec, k: f64) -> DMatrix<f64> {
        let (n, nd) = (self.n, self.dim);
        let mut a = DMatrix::zeros(nd * n, nd * n);
        let jac = model.symbol.jacobian();
        for (j, pj) in model.symbol.coeffs().iter().enumerate() {
            let kj = k.powi(j as i32);
            for r in 0..nd {
                for c in 0..nd {
                    let w = pj[(r, c)] * kj;
                    if w != 0.0 {
                        let mut blk = a.view_mut((r * n, c * n), (n, n));
                        blk += &self.dpow[j] * w;
                    }
                }
            }
        }
        for r in 0..nd {
            for c in 0..nd {
                for i in 0..n {
                    a[(r * n + i, c * n + i)] += jac[(r, c)];
                }
            }
        }
        a
    }

    /// ∂k of the linear part and the outer operator, applied to (u, n(u)).
    fn dk_terms(&self, model: &ModelSpec, k: f64, u: &[f64], nl: &[f64]) -> Vec<f64> {
        let (n, nd) = (self.n, self.dim);
        let mut out = vec![0.0; nd * n];
        for (j, pj) in model.symbol.coeffs().iter().enumerate().skip(1) {
            let w = j as f64 * k.powi(j as i32 - 1);
            for r in 0..nd {
                for c in 0..nd {
                    if pj[(r, c)] == 0.0 {
                        continue;
                    }
                    let du = &self.dpow[j] * DVector::from_column_slice(&u[c * n..(c + 1) * n]);
                    for i in 0..n {
                        out[r * n + i] += w * pj[(r, c)] * du[i];
                    }
                }
            }
        }
        if model.outer == Outer::NegLaplacian {
            for r in 0..nd {
                let d2 = &self.dpow[2] * DVector::from_column_slice(&nl[r * n..(r + 1) * n]);
                for i in 0..n {
                    out[r * n + i] -= 2.0 * k * d2[i];
                }
            }
        }
        out
    }

    fn nonlinear(&self, model: &ModelSpec, u: &[f64]) -> Vec<f64> {
        let (n, nd) = (self.n, self.dim);
        let mut out = vec![0.0; nd * n];
        let mut ui = vec![0.0; nd];
        let mut ni = vec![0.0; nd];
        for i in 0..n {
            for c in 0..nd {
                ui[c] = u[c * n + i];
            }
            model.nonlinear_into(&ui, &mut ni);
            for r in 0..nd {
                out[r * n + i] = ni[r];
            }
        }
        out
    }

    fn derivative(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; u.len()];
        for c in 0..self.dim {
            let d = &self.dpow[1] * DVector::from_column_slice(&u[c * n..(c + 1) * n]);
            out[c * n..(c + 1) * n].copy_from_slice(d.as_slice());
        }
        out
    }

    /// Residual F(u, ω) and its u-Jacobian.
    fn residual_jacobian(
        &self,
        model: &ModelSpec,
        lin: &DMatrix<f64>,
        omega: f64,
        k: f64,
        u: &[f64],
    ) -> (Vec<f64>, DMatrix<f64>) {
        let (n, nd) = (self.n, self.dim);
        let size = self.size();
        let mut jac = lin.clone();
        for c in 0..nd {
            let mut blk = jac.view_mut((c * n, c * n), (n, n));
            blk += &self.dpow[1] * omega;
        }
        let mut f = (lin * DVector::from_column_slice(u)).as_slice().to_vec();
        let du = self.derivative(u);
        for (fi, d) in f.iter_mut().zip(&du) {
            *fi += omega * d;
        }
        let nl = self.nonlinear(model, u);
        let mut ui = vec![0.0; nd];
        // pointwise n′ blocks, then the outer operator on the left
        let mut njac = DMatrix::zeros(size, size);
        for i in 0..n {
            for c in 0..nd {
                ui[c] = u[c * n + i];
            }
            let m = model.nonlinear_jacobian(&ui);
            for r in 0..nd {
                for c in 0..nd {
                    njac[(r * n + i, c * n + i)] = m[(r, c)];
                }
            }
        }
        match model.outer {
            Outer::Pointwise => {
                for (fi, v) in f.iter_mut().zip(&nl) {
                    *fi += v;
                }
                jac += njac;
            }
            Outer::NegLaplacian => {
                let q = &self.dpow[2] * (-k * k);
                let mut qbig = DMatrix::zeros(size, size);
                for r in 0..nd {
                    qbig.view_mut((r * n, r * n), (n, n)).copy_from(&q);
                    let qn = &q * DVector::from_column_slice(&nl[r * n..(r + 1) * n]);
                    for i in 0..n {
                        f[r * n + i] += qn[i];
                    }
                }
                jac += qbig * njac;
            }
        }
        (f, jac)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_profile(u: &[f64], n: usize) -> Vec<Vec<f64>> {
    u.chunks(n).map(|c| c.to_vec()).collect()
}

/// Bordered Newton matrix: columns ∂ω F and one multiplier per conserved
/// component, rows for the phase condition and the conserved means.
fn bordered(col: &Collocation, jac: DMatrix<f64>, f_omega: &[f64], phase_row: &[f64]) -> DMatrix<f64> {
    let (size, n) = (jac.nrows(), col.n);
    let e = col.extras();
    let mut m = DMatrix::zeros(size + e, size + e);
    m.view_mut((0, 0), (size, size)).copy_from(&jac);
    for i in 0..size {
        m[(i, size)] = f_omega[i];
        m[(size, i)] = phase_row[i];
    }
    for (j, &r) in col.conserved.iter().enumerate() {
        for i in 0..n {
            m[(r * n + i, size + 1 + j)] = 1.0;
            m[(size + 1 + j, r * n + i)] = 1.0 / n as f64;
        }
    }
    m
}

struct Solved {
    u: Vec<f64>,
    omega: f64,
    residual: f64,
    phase: f64,
}

fn newton(
    model: &ModelSpec,
    col: &Collocation,
    k: f64,
    omega0: f64,
    u0: &[f64],
    u_ref: &[f64],
    opts: &WaveTrainOptions,
) -> Result<Solved> {
    let lin = col.linear(model, k);
    let size = col.size();
    let nf = col.n as f64;
    let phase_row: Vec<f64> = col.derivative(u_ref).iter().map(|v| v / nf).collect();
    let ref_scale = max_abs(u_ref).max(1e-300);
    let mut u = u0.to_vec();
    let mut omega = omega0;
    let mut mu = vec![0.0; col.conserved.len()];
    let ref_means: Vec<f64> = col.conserved.iter().map(|&r| col.mean(u_ref, r)).collect();
    // residual of the extended system (F + Σ μ_r 1_r, phase, mean constraints)
    let eval = |u: &[f64], omega: f64, mu: &[f64]| {
        let (mut f, jac) = col.residual_jacobian(model, &lin, omega, k, u);
        for (j, &r) in col.conserved.iter().enumerate() {
            for v in &mut f[r * col.n..(r + 1) * col.n] {
                *v += mu[j];
            }
        }
        let diff: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| a - b).collect();
        let mut extra = vec![dot(&diff, &phase_row)];
        extra.extend(col.conserved.iter().zip(&ref_means).map(|(&r, m0)| col.mean(u, r) - m0));
        (f, jac, extra)
    };
    let norm = |f: &[f64], extra: &[f64]| max_abs(f).max(max_abs(extra));
    let (mut f, mut jac, mut extra) = eval(&u, omega, &mu);
    let mut res = norm(&f, &extra);
    let done = |u: Vec<f64>, omega: f64, f: &[f64], extra: &[f64]| {
        if max_abs(&u) < 1e-6 * ref_scale {
            return Err(WaveTrainError::Collapsed);
        }
        Ok(Solved { residual: max_abs(f), phase: extra[0].abs(), u, omega })
    };
    for it in 0..opts.max_iter {
        if res <= opts.tol {
            return done(u, omega, &f, &extra);
        }
        let du = col.derivative(&u);
        let m = bordered(col, jac.clone(), &du, &phase_row);
        let rhs = DVector::from_iterator(size + extra.len(), f.iter().chain(&extra).map(|v| -v));
        let Some(step) = m.clone().lu().solve(&rhs) else {
            return Err(WaveTrainError::SingularJacobian(smallest_singular_value(m)));
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(WaveTrainError::SingularJacobian(smallest_singular_value(m)));
        }
        // backtracking on the max-norm residual
        let mut t = 1.0;
        loop {
            let un: Vec<f64> = (0..size).map(|i| u[i] + t * step[i]).collect();
            let wn = omega + t * step[size];
            let mun: Vec<f64> = mu.iter().enumerate().map(|(j, v)| v + t * step[size + 1 + j]).collect();
            let (fn_, jn, en) = eval(&un, wn, &mun);
            let rn = norm(&fn_, &en);
            if rn < res || t < 1e-3 {
                u = un;
                omega = wn;
                mu = mun;
                f = fn_;
                jac = jn;
                extra = en;
                res = rn;
                break;
            }
            t *= 0.5;
        }
        if !res.is_finite() {
            return Err(WaveTrainError::NoConvergence { iterations: it + 1, residual: res });
        }
    }
    if res <= opts.tol {
        return done(u, omega, &f, &extra);
    }
    Err(WaveTrainError::NoConvergence { iterations: opts.max_iter, residual: res })
}

/// Newton on (profile, ω) with the phase condition ⟨u − u_ref, u_ref′⟩ = 0, u_ref the guess.
pub fn solve_wave_train(
    model: &ModelSpec,
    k: f64,
    omega0: f64,
    profile0: &[Vec<f64>],
    opts: &WaveTrainOptions,
) -> Result<WaveTrain> {
    solve_with_reference(model, k, omega0, profile0, profile0, opts)
}

/// As `solve_wave_train` with a separate phase reference.
pub fn solve_with_reference(
    model: &ModelSpec,
    k: f64,
    omega0: f64,
    profile0: &[Vec<f64>],
    reference: &[Vec<f64>],
    opts: &WaveTrainOptions,
) -> Result<WaveTrain> {
    let n = opts.n_per;
    if n < 32 {
        return Err(WaveTrainError::InvalidInput(format!("n_per = {n} < 32")));
    }
    let shape_ok = |p: &[Vec<f64>]| p.len() == model.dim() && p.iter().all(|r| r.len() == n);
    if !shape_ok(profile0) || !shape_ok(reference) {
        return Err(WaveTrainError::InvalidInput(format!("profile must be {} rows of {n} values", model.dim())));
    }
    let u0 = profile0.concat();
    if !k.is_finite() || !omega0.is_finite() || u0.iter().any(|v| !v.is_finite()) {
        return Err(WaveTrainError::InvalidInput("non-finite guess".into()));
    }
    let col = Collocation::new(model, n);
    let s = newton(model, &col, k, omega0, &u0, &reference.concat(), opts)?;
    Ok(WaveTrain { k, omega: s.omega, profile: to_profile(&s.u, n), residual: s.residual, phase_residual: s.phase })
}

/// (∂k u, ∂k ω) along the family through `wt`, from the bordered linearization.
fn tangent(model: &ModelSpec, col: &Collocation, wt: &WaveTrain) -> Option<(Vec<f64>, f64)> {
    let u = wt.flat();
    let lin = col.linear(model, wt.k);
    let (_, jac) = col.residual_jacobian(model, &lin, wt.omega, wt.k, &u);
    let nl = col.nonlinear(model, &u);
    let fk = col.dk_terms(model, wt.k, &u, &nl);
    let du = col.derivative(&u);
    let nf = col.n as f64;
    let phase_row: Vec<f64> = du.iter().map(|v| v / nf).collect();
    let m = bordered(col, jac, &du, &phase_row);
    let e = col.extras();
    let rhs = DVector::from_iterator(fk.len() + e, fk.iter().map(|v| -v).chain(std::iter::repeat(0.0).take(e)));
    let sol = m.lu().solve(&rhs)?;
    let size = col.size();
    Some((sol.rows(0, size).iter().cloned().collect(), sol[size]))
}

/// Group velocity dω/dk at a converged wave train.
pub fn group_velocity(model: &ModelSpec, wt: &WaveTrain) -> Option<f64> {
    let col = Collocation::new(model, wt.profile.first().map(|r| r.len()).unwrap_or(0));
    tangent(model, &col, wt).map(|t| t.1)
}

/// Largest relative deviation between the collocation Jacobian, including the
/// ∂ω column, applied to a direction and a centred difference of the residual,
/// over `samples` deterministic pseudo-random directions at the train.
pub fn jacobian_fd_error(model: &ModelSpec, wt: &WaveTrain, samples: usize) -> f64 {
    let n = wt.profile[0].len();
    let col = Collocation::new(model, n);
    let lin = col.linear(model, wt.k);
    let u = wt.flat();
    let mut seed = 0x2545_F491_4F6C_DD1Du64;
    let mut rnd = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let du: Vec<f64> = (0..u.len()).map(|_| rnd()).collect();
        let dw = rnd();
        let (_, jac) = col.residual_jacobian(model, &lin, wt.omega, wt.k, &u);
        let deriv = col.derivative(&u);
        let analytic: Vec<f64> = (&jac * DVector::from_column_slice(&du))
            .iter()
            .zip(&deriv)
            .map(|(a, d)| a + d * dw)
            .collect();
        let eps = 1e-6;
        let at = |s: f64| {
            let us: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + s * d).collect();
            col.residual_jacobian(model, &lin, wt.omega + s * dw, wt.k, &us).0
        };
        let (fp, fm) = (at(eps), at(-eps));
        let diff = fp.iter().zip(&fm).zip(&analytic).map(|((a, b), j)| ((a - b) / (2.0 * eps) - j).abs());
        worst = worst.max(diff.fold(0.0, f64::max) / max_abs(&analytic).max(1e-300));
    }
    worst
}

/// Instability band of positive wavenumbers: the component of {k > 0 : growth(k) > 0}
/// containing the most unstable wavenumber.
pub fn instability_band(model: &ModelSpec) -> Option<[f64; 2]> {
    let kmax = model.symbol.well_posedness().k_threshold.clamp(2.0, 50.0);
    let m = 4000;
    let ks: Vec<f64> = (0..=m).map(|i| kmax * i as f64 / m as f64).collect();
    let gs: Vec<f64> = ks.iter().map(|&k| model.symbol.growth_rate(k)).collect();
    let best = (0..=m).max_by(|&a, &b| gs[a].total_cmp(&gs[b]))?;
    if gs[best] <= 0.0 {
        return None;
    }
    let mut lo = best;
    while lo > 0 && gs[lo - 1] > 0.0 {
        lo -= 1;
    }
    let mut hi = best;
    while hi < m && gs[hi + 1] > 0.0 {
        hi += 1;
    }
    // refine interior edges by bisection
    let edge = |mut a: f64, mut b: f64| {
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if model.symbol.growth_rate(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let k_lo = if lo == 0 { 0.0 } else { edge(ks[lo], ks[lo - 1]) };
    let k_hi = if hi == m { ks[m] } else { edge(ks[hi], ks[hi + 1]) };
    Some([k_lo, k_hi])
}

/// Null vector of M − λI for a (numerically) simple eigenvalue λ.
fn eigenvector(m: &DMatrix<C64>, lam: C64) -> DVector<C64> {
    let n = m.nrows();
    let shifted = m - DMatrix::<C64>::identity(n, n) * lam;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let imin = (0..n).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
    vt.row(imin).adjoint()
}

/// First-harmonic guess A·Re(e e^{iζ}) from the most unstable linear mode at k.
///
/// A is the smallest amplitude at which the residual has no component along the
/// mode (a Landau amplitude), falling back to the amplitude of least residual;
/// ω comes from least squares. Of a conjugate pair the mode with
/// ω_lin(k) = −Im λ ≥ 0 is used.
pub fn galerkin_seed(model: &ModelSpec, k: f64, n_per: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = model.symbol.comoving_matrix(C64::new(0.0, k), 0.0);
    let eigs = eig_complex(m.clone()).ok_or_else(|| WaveTrainError::InvalidInput("eigenvalues failed".into()))?;
    let top = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if top <= 0.0 {
        return Err(WaveTrainError::InvalidInput(format!("k = {k} is linearly stable, no small-amplitude seed")));
    }
    let lam = eigs
        .iter()
        .filter(|z| z.re >= top - 1e-9 * (1.0 + top.abs()))
        .min_by(|a, b| a.im.total_cmp(&b.im))
        .copied()
        .unwrap();
    let mut e = eigenvector(&m, lam);
    // fix the complex phase so that the largest entry is real
    let imax = (0..e.len()).max_by(|&a, &b| e[a].norm().total_cmp(&e[b].norm())).unwrap();
    let ph = e[imax].conj() / e[imax].norm();
    e *= ph;
    let n = n_per;
    let base: Vec<f64> = (0..model.dim())
        .flat_map(|c| {
            let ec = e[c];
            (0..n).map(move |i| {
                let z = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                (ec * C64::from_polar(1.0, z)).re
            })
        })
        .collect();
    let col = Collocation::new(model, n);
    let lin = col.linear(model, k);
    let du0 = col.derivative(&base);
    let bb = dot(&base, &base);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut landau: Option<(f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=160 {
        let amp = 10f64.powf(-3.0 + 4.0 * i as f64 / 160.0);
        let u: Vec<f64> = base.iter().map(|v| v * amp).collect();
        let (f0, _) = col.residual_jacobian(model, &lin, 0.0, k, &u);
        let du: Vec<f64> = du0.iter().map(|v| v * amp).collect();
        let dd = dot(&du, &du);
        let omega = if dd > 0.0 { -dot(&f0, &du) / dd } else { 0.0 };
        let fw: Vec<f64> = f0.iter().zip(&du).map(|(a, b)| a + omega * b).collect();
        let r = dot(&fw, &fw).sqrt() / amp;
        if best.map_or(true, |b| r < b.0) {
            best = Some((r, amp, omega));
        }
        let proj = dot(&fw, &base) / (bb * amp);
        if let (Some((a0, p0)), None) = (prev, landau) {
            if (p0 > 0.0) != (proj > 0.0) {
                // linear interpolation in A² between the bracketing amplitudes
                let (x0, x1) = (a0 * a0, amp * amp);
                let x = x0 + (x1 - x0) * p0 / (p0 - proj);
                landau = Some((x.sqrt(), omega));
            }
        }
        prev = Some((amp, proj));
    }
    if let Some((amp, omega)) = landau {
        best = Some((0.0, amp, omega));
    }
    let (_, amp, omega) = best.unwrap();
    let u: Vec<f64> = base.iter().map(|v| v * amp).collect();
    Ok((omega, to_profile(&u, n)))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationOptions {
    pub wave: WaveTrainOptions,
    /// Initial step as a fraction of the k-range.
    pub h0_frac: f64,
    pub h_max_frac: f64,
    pub h_min: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { wave: WaveTrainOptions::default(), h0_frac: 0.02, h_max_frac: 0.05, h_min: 1e-6 }
    }
}

fn sample(model: &ModelSpec, col: &Collocation, wt: &WaveTrain) -> Option<(DispersionSample, Vec<f64>)> {
    let (uk, wk) = tangent(model, col, wt)?;
    Some((DispersionSample { k: wt.k, omega: wt.omega, group_velocity: wk }, uk))
}

/// Natural-parameter continuation in k from `seed` to both ends of `k_range`.
pub fn nonlinear_dispersion(
    model: &ModelSpec,
    k_range: [f64; 2],
    seed: &WaveTrain,
    opts: &ContinuationOptions,
) -> Result<DispersionCurve> {
    let mut curve = DispersionCurve {
        model: model.name.clone(),
        params: model.params.clone(),
        samples: Vec::new(),
        trains: Vec::new(),
    };
    let [k_lo, k_hi] = k_range;
    if !(k_hi > k_lo) {
        return Ok(curve);
    }
    if seed.k < k_lo - 1e-12 || seed.k > k_hi + 1e-12 {
        return Err(WaveTrainError::InvalidInput(format!("seed k = {} outside [{k_lo}, {k_hi}]", seed.k)));
    }
    let n = seed.profile.first().map(|r| r.len()).unwrap_or(0);
    let wopts = WaveTrainOptions { n_per: n, ..opts.wave.clone() };
    let col = Collocation::new(model, n);
    let width = k_hi - k_lo;
    let mut fold: Option<f64> = None;
    let mut pieces: Vec<(DispersionSample, WaveTrain)> = Vec::new();
    let (s0, uk0) = sample(model, &col, seed).ok_or(WaveTrainError::SingularJacobian(0.0))?;
    pieces.push((s0, seed.clone()));
    for dir in [1.0, -1.0] {
        let target = if dir > 0.0 { k_hi } else { k_lo };
        let (mut cur, mut cur_s, mut cur_uk) = (seed.clone(), s0, uk0.clone());
        let mut h = opts.h0_frac * width;
        while (target - cur.k) * dir > 1e-12 * (1.0 + target.abs()) {
            let step = h.min((target - cur.k).abs());
            let kn = cur.k + dir * step;
            let dk = kn - cur.k;
            let u_pred: Vec<f64> = cur.flat().iter().zip(&cur_uk).map(|(u, d)| u + dk * d).collect();
            let w_pred = cur.omega + dk * cur_s.group_velocity;
            let attempt = newton(model, &col, kn, w_pred, &u_pred, &cur.flat(), &wopts).and_then(|s| {
                let wt = WaveTrain {
                    k: kn,
                    omega: s.omega,
                    profile: to_profile(&s.u, n),
                    residual: s.residual,
                    phase_residual: s.phase,
                };
                // a sharp amplitude drop signals arrival at the trivial branch
                if wt.amplitude() < 0.2 * cur.amplitude() {
                    return Err(WaveTrainError::Collapsed);
                }
                let (smp, uk) = sample(model, &col, &wt).ok_or(WaveTrainError::SingularJacobian(0.0))?;
                Ok((wt, smp, uk))
            });
            match attempt {
                Ok((wt, smp, uk)) => {
                    pieces.push((smp, wt.clone()));
                    cur = wt;
                    cur_s = smp;
                    cur_uk = uk;
                    h = (h * 1.5).min(opts.h_max_frac * width);
                }
                Err(_) => {
                    h *= 0.5;
                    if h < opts.h_min {
                        fold = Some(cur.k);
                        break;
                    }
                }
            }
        }
    }
    pieces.sort_by(|a, b| a.0.k.total_cmp(&b.0.k));
    pieces.dedup_by(|a, b| (a.0.k - b.0.k).abs() <= 1e-14 * (1.0 + a.0.k.abs()));
    for (s, wt) in pieces {
        curve.samples.push(s);
        curve.trains.push(wt);
    }
    match fold {
        Some(k) => Err(WaveTrainError::FoldDetected { k, partial: Box::new(curve) }),
        None => Ok(curve),
    }
}

/// Wave train at k solved from the nearest stored sample.
fn train_at(model: &ModelSpec, curve: &DispersionCurve, k: f64, opts: &WaveTrainOptions) -> Result<(WaveTrain, f64)> {
    let i = (0..curve.trains.len())
        .min_by(|&a, &b| (curve.trains[a].k - k).abs().total_cmp(&(curve.trains[b].k - k).abs()))
        .ok_or(WaveTrainError::NoSolutionInRange)?;
    let near = &curve.trains[i];
    let s = &curve.samples[i];
    let n = near.profile[0].len();
    let col = Collocation::new(model, n);
    let uk = tangent(model, &col, near).map(|t| t.0).unwrap_or_else(|| vec![0.0; col.size()]);
    let dk = k - near.k;
    let u0: Vec<f64> = near.flat().iter().zip(&uk).map(|(u, d)| u + dk * d).collect();
    let wopts = WaveTrainOptions { n_per: n, ..opts.clone() };
    let sol = newton(model, &col, k, near.omega + dk * s.group_velocity, &u0, &near.flat(), &wopts)?;
    let wt = WaveTrain { k, omega: sol.omega, profile: to_profile(&sol.u, n), residual: sol.residual, phase_residual: sol.phase };
    let gv = tangent(model, &col, &wt).map(|t| t.1).ok_or(WaveTrainError::SingularJacobian(0.0))?;
    Ok((wt, gv))
}

/// All k in the curve's range with p·s·ω_lin = q·(ω_nl(k) − c_lin k), s = ±1.
pub fn select_wavenumber(
    model: &ModelSpec,
    sr: &SpreadingResult,
    curve: &DispersionCurve,
    p: u32,
    q: u32,
    opts: &WaveTrainOptions,
) -> Result<Vec<WavenumberSolution>> {
    if p == 0 || q == 0 {
        return Err(WaveTrainError::InvalidInput("p and q must be at least 1".into()));
    }
    if curve.samples.is_empty() {
        return Err(WaveTrainError::InvalidInput("empty dispersion curve".into()));
    }
    let (c, wl) = (sr.c_lin, sr.omega_lin);
    let (pf, qf) = (p as f64, q as f64);
    let signs: &[i8] = if wl == 0.0 { &[1] } else { &[1, -1] };
    let mut out: Vec<WavenumberSolution> = Vec::new();
    for &s in signs {
        let h = |k: f64, w: f64| qf * (w - c * k) - s as f64 * pf * wl;
        let hs: Vec<f64> = curve.samples.iter().map(|x| h(x.k, x.omega)).collect();
        for i in 0..hs.len() {
            let exact = hs[i] == 0.0;
            let change = i + 1 < hs.len() && (hs[i] < 0.0) != (hs[i + 1] < 0.0) && hs[i + 1] != 0.0;
            if !exact && !change {
                continue;
            }
            let (mut a, mut b) = (curve.samples[i].k, curve.samples[(i + 1).min(hs.len() - 1)].k);
            let (mut ha, mut hb) = (hs[i], hs[(i + 1).min(hs.len() - 1)]);
            let mut k = a;
            // safeguarded Newton: dh/dk = q(ω′ − c), bisection when the step leaves [a, b]
            let (mut wt, mut gv) = train_at(model, curve, k, opts)?;
            for _ in 0..100 {
                let hk = h(k, wt.omega);
                if hk.abs() <= 1e-12 * (1.0 + pf * wl.abs()) || exact {
                    break;
                }
                if (hk < 0.0) == (ha < 0.0) {
                    a = k;
                    ha = hk;
                } else {
                    b = k;
                    hb = hk;
                }
                let slope = qf * (gv - c);
                let mut kn = k - hk / slope;
                if !(kn > a.min(b) && kn < a.max(b)) || !kn.is_finite() {
                    kn = 0.5 * (a + b);
                }
                if (b - a).abs() < 1e-15 * (1.0 + k.abs()) {
                    break;
                }
                let _ = hb;
                k = kn;
                let r = train_at(model, curve, k, opts)?;
                wt = r.0;
                gv = r.1;
            }
            let sol = WavenumberSolution {
                k,
                p,
                q,
                sign: s,
                omega_nl: wt.omega,
                omega_comoving: wt.omega - c * k,
                group_velocity: gv,
                comoving_group_velocity: gv - c,
                admissible: gv - c < 0.0,
                resonance_residual: h(k, wt.omega).abs(),
            };
            if !out.iter().any(|o| o.sign == s && (o.k - k).abs() <= 1e-9 * (1.0 + k.abs())) {
                out.push(sol);
            }
        }
    }
    if out.is_empty() {
        return Err(WaveTrainError::NoSolutionInRange);
    }
    out.sort_by(|a, b| a.k.total_cmp(&b.k).then(a.sign.cmp(&b.sign)));
    Ok(out)
}

/// Seed in the middle of the instability band, continuation over the band
/// shrunk by `margin` of its width at each end, then resonance selection.
pub fn wake_wavenumbers(
    model: &ModelSpec,
    sr: &SpreadingResult,
    p: u32,
    q: u32,
    k_range: Option<[f64; 2]>,
    opts: &ContinuationOptions,
) -> Result<(DispersionCurve, Vec<WavenumberSolution>)> {
    let range = match k_range {
        Some(r) => r,
        None => {
            let [lo, hi] = instability_band(model)
                .ok_or_else(|| WaveTrainError::InvalidInput("no linearly unstable wavenumbers".into()))?;
            let margin = 0.02 * (hi - lo);
            [lo + if lo > 0.0 { margin } else { 0.0 }, hi - margin]
        }
    };
    // weakly nonlinear seeds are most reliable near the band edge, so retry toward it
    let mut seed = None;
    let mut last_err = WaveTrainError::NoSolutionInRange;
    for frac in [0.5, 0.7, 0.85, 0.95] {
        let k0 = range[0] + frac * (range[1] - range[0]);
        match galerkin_seed(model, k0, opts.wave.n_per).and_then(|(w0, p0)| solve_wave_train(model, k0, w0, &p0, &opts.wave)) {
            Ok(wt) => {
                seed = Some(wt);
                break;
            }
            Err(e) => last_err = e,
        }
    }
    let Some(seed) = seed else { return Err(last_err) };
    let curve = match nonlinear_dispersion(model, range, &seed, opts) {
        Ok(c) => c,
        Err(WaveTrainError::FoldDetected { k, partial }) => {
            log::warn!("wave-train family ends near k = {k}; using the partial curve");
            *partial
        }
        Err(e) => return Err(e),
    };
    let sols = select_wavenumber(model, sr, &curve, p, q, &opts.wave)?;
    Ok((curve, sols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::get_model;

    fn cgl() -> ModelSpec {
        let p: BTreeMap<String, f64> = [("alpha".to_string(), 1.0), ("beta".to_string(), 0.5)].into_iter().collect();
        get_model("cgl", &p).unwrap()
    }

    fn plane_wave(r: f64, n: usize) -> Vec<Vec<f64>> {
        let z = |i: usize| 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        vec![(0..n).map(|i| r * z(i).cos()).collect(), (0..n).map(|i| r * z(i).sin()).collect()]
    }

    #[test]
    fn cgl_plane_wave_from_perturbed_guess() {
        let m = cgl();
        let n = 64;
        let mut g = plane_wave(0.8, n);
        g[0][3] += 0.05;
        let wt = solve_wave_train(&m, 0.5, 0.4, &g, &WaveTrainOptions::default()).unwrap();
        assert!((wt.omega - 0.625).abs() < 1e-9, "omega {}", wt.omega);
        let r2 = wt.profile[0][0].powi(2) + wt.profile[1][0].powi(2);
        assert!((r2 - 0.75).abs() < 1e-9);
        assert!(wt.residual < 1e-10);
    }

    #[test]
    fn cgl_homogeneous_oscillation_at_zero_wavenumber() {
        let m = cgl();
        let wt = solve_wave_train(&m, 0.0, 0.3, &plane_wave(0.9, 64), &WaveTrainOptions::default()).unwrap();
        assert!((wt.omega - 0.5).abs() < 1e-9);
        assert!((wt.amplitude() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn galerkin_seed_picks_positive_frequency_branch() {
        let m = cgl();
        let (w, prof) = galerkin_seed(&m, 0.5, 64).unwrap();
        let wt = solve_wave_train(&m, 0.5, w, &prof, &WaveTrainOptions::default()).unwrap();
        assert!((wt.omega - 0.625).abs() < 1e-9);
    }

    #[test]
    fn group_velocity_matches_closed_form() {
        let m = cgl();
        let wt = solve_wave_train(&m, 0.4, 0.58, &plane_wave(0.9, 64), &WaveTrainOptions::default()).unwrap();
        // ω = β + (α − β)k²
        assert!((group_velocity(&m, &wt).unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn empty_range_gives_empty_curve() {
        let m = cgl();
        let wt = solve_wave_train(&m, 0.5, 0.6, &plane_wave(0.87, 64), &WaveTrainOptions::default()).unwrap();
        let c = nonlinear_dispersion(&m, [0.5, 0.5], &wt, &ContinuationOptions::default()).unwrap();
        assert!(c.samples.is_empty());
    }

    #[test]
    fn continuation_to_band_edge_reports_fold() {
        let m = cgl();
        let wt = solve_wave_train(&m, 0.5, 0.6, &plane_wave(0.87, 64), &WaveTrainOptions::default()).unwrap();
        match nonlinear_dispersion(&m, [0.5, 1.2], &wt, &ContinuationOptions::default()) {
            Err(WaveTrainError::FoldDetected { k, partial }) => {
                assert!(k > 0.9 && k <= 1.0, "fold at {k}");
                assert!(partial.samples.len() > 5);
            }
            other => panic!("expected fold, got {other:?}"),
        }
    }

    #[test]
    fn instability_band_of_swift_hohenberg() {
        let p: BTreeMap<String, f64> = [("eps".to_string(), 0.4)].into_iter().collect();
        let m = get_model("sh", &p).unwrap();
        let [lo, hi] = instability_band(&m).unwrap();
        // (1 − k²)² = ε²
        assert!((lo - 0.6f64.sqrt()).abs() < 1e-9);
        assert!((hi - 1.4f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn collocation_jacobian_matches_finite_differences() {
        let m = cgl();
        let wt = solve_wave_train(&m, 0.5, 0.625, &plane_wave(0.75f64.sqrt(), 64), &Default::default()).unwrap();
        assert!(jacobian_fd_error(&m, &wt, 3) < 1e-5);
    }
}
