//! Traveling fronts P(∂ξ)u + c∂ξu + Ju + n(u) = 0 on [0, L] by Newton's method.
//!
//! The wake sits at ξ = 0 (odd derivatives vanish) and the invaded state at
//! ξ = L (even derivatives vanish about the boundary value). Derivatives are
//! fourth-order central differences folded at both ends, so every Jacobian is
//! a band matrix bordered by a few dense rows and columns.

use crate::linalg::{
    bordered_solve, eig_real, fd_half_width, fd_weights, folded_stencil, poly_roots, smallest_singular_value, Banded,
    C64,
};
use crate::models::{get_model, ModelError, ModelSpec, Outer};
use crate::polymat::ComovingDispersion;
use crate::spreading::{linear_spreading_speed, SpreadingError, SpreadingOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Error, Debug, Clone)]
pub enum FrontError {
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian (smallest singular value {0:e})")]
    JacobianSingular(f64),
    #[error("core decays at rate {rate}, not faster than the leading edge rate {eta}")]
    WeakCoreDecay { rate: f64, eta: f64 },
    #[error("a(mu) has the same sign at both ends: a({lo}) = {a_lo:e}, a({hi}) = {a_hi:e}")]
    NoSignChange { lo: f64, hi: f64, a_lo: f64, a_hi: f64 },
    #[error("continuation failed at {param} with minimal step")]
    StepFailure { param: f64, partial: Box<Branch> },
    #[error("only {points} tail points above the noise floor, need 30")]
    TailBelowNoise { points: usize },
    #[error("eigenvalue computation failed")]
    EigFailure,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spreading(#[from] SpreadingError),
}

pub type Result<T> = std::result::Result<T, FrontError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FrontOptions {
    /// Grid spacing.
    pub h: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Centre of the phase window as a fraction of L. Left of the middle because
    /// the wake side usually relaxes faster than the leading edge; the profile
    /// error from the Neumann end decays like e^{−μ ξ_c} with the wake rate μ.
    pub phase_center: f64,
    pub phase_half_width: f64,
    /// Mean of the phase component over the window; half the wake value by default.
    pub phase_value: Option<f64>,
}

impl Default for FrontOptions {
    fn default() -> Self {
        FrontOptions { h: 0.1, tol: 1e-10, max_iter: 50, phase_center: 0.35, phase_half_width: 5.0, phase_value: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum FrontSpeed {
    /// Unknown speed with an initial guess; closed by the phase condition.
    Free(f64),
    /// Prescribed speed; the boundary value u(L) becomes the unknown instead.
    Fixed(f64),
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FrontProfile {
    pub xi: Vec<f64>,
    /// N × n.
    pub u: Vec<Vec<f64>>,
    pub c: f64,
    pub wake: Vec<f64>,
    /// Value of the phase component at ξ = L (zero for free-speed solves).
    pub boundary_value: f64,
    pub nu_tail: Option<C64>,
    pub residual: f64,
    pub iterations: usize,
}

impl FrontProfile {
    pub fn length(&self) -> f64 {
        self.xi.len() as f64 * (self.xi[1] - self.xi[0])
    }

    fn flat(&self) -> Vec<f64> {
        let (n, dim) = (self.xi.len(), self.u.len());
        (0..n * dim).map(|k| self.u[k % dim][k / dim]).collect()
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FarfieldCoreDecomp {
    /// N × n.
    pub core: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
    pub eta_lin: f64,
    /// The ramp χ₊ rises from 0 to 1 across this interval.
    pub cut: [f64; 2],
    /// Null vector and generalized vector of the leading-edge double root.
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    /// Fitted decay rate of the core beyond the cut; `None` when it is below noise.
    pub core_decay_rate: Option<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FrontSpectrum {
    pub weight_eta: f64,
    /// Sorted by decreasing real part.
    pub eigenvalues: Vec<C64>,
    pub leading: C64,
    /// Eigenvalue nearest 0 and the correlation of its eigenvector with u′.
    pub nearest_zero: C64,
    pub translation_overlap: f64,
    /// Smallest singular value of the weighted operator at λ = 0.
    pub sigma_min_at_zero: f64,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub enum Steepness {
    Steep,
    Generic,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TailFit {
    pub nu_tail: C64,
    /// Slowest and second-slowest decaying roots of d_c(0, ν) = 0.
    pub nu_plus: Option<C64>,
    pub nu_minus: Option<C64>,
    pub steepness: Steepness,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Transition {
    pub mu: f64,
    pub c: f64,
    pub eta: f64,
    pub profile: FrontProfile,
    pub decomposition: FarfieldCoreDecomp,
    pub evaluations: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BranchPoint {
    pub mu: f64,
    pub c: f64,
    /// Linear spreading speed at mu, when it could be computed.
    pub c_lin: Option<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Branch {
    pub param: String,
    pub points: Vec<BranchPoint>,
    #[serde(skip)]
    pub profiles: Vec<FrontProfile>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationOptions {
    pub front: FrontOptions,
    /// Output points along the path, including both ends.
    pub points: usize,
    pub arclength: bool,
    /// Smallest step as a fraction of the path length.
    pub min_step: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { front: FrontOptions::default(), points: 11, arclength: false, min_step: 1e-4 }
    }
}

/// Discretized linear operator Σ P_j D_j + J on the folded grid.
struct Disc {
    n: usize,
    dim: usize,
    h: f64,
    /// (P_j, folded rows of D_j, unfolded scaled weights) for j ≥ 1; j = 1 is always present.
    terms: Vec<(DMatrix<f64>, Vec<(Vec<(usize, f64)>, f64)>, Vec<f64>)>,
    p0j: DMatrix<f64>,
    band: usize,
}

impl Disc {
    fn new(model: &ModelSpec, n: usize, h: f64) -> Result<Self> {
        if model.outer != Outer::Pointwise {
            return Err(FrontError::InvalidInput(format!("{}: fronts need a pointwise nonlinearity", model.name)));
        }
        if n < 16 {
            return Err(FrontError::InvalidInput(format!("{n} grid points are too few")));
        }
        let coeffs = model.symbol.coeffs();
        let dim = model.dim();
        let order = (coeffs.len() - 1).max(1);
        let mut terms = Vec::new();
        let mut pmax = 1;
        for j in 1..=order {
            let pj = coeffs.get(j).cloned().unwrap_or_else(|| DMatrix::zeros(dim, dim));
            if j > 1 && pj.iter().all(|v| *v == 0.0) {
                continue;
            }
            let p = fd_half_width(j);
            pmax = pmax.max(p);
            let w: Vec<f64> = fd_weights(j, p).iter().map(|v| v / h.powi(j as i32)).collect();
            let rows = (0..n).map(|i| folded_stencil(i, n, &w)).collect();
            terms.push((pj, rows, w));
        }
        let p0j = &coeffs[0] + model.symbol.jacobian();
        Ok(Disc { n, dim, h, terms, p0j, band: (pmax + 1) * dim })
    }

    fn xi(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.h).collect()
    }

    /// Σ_j P_j D_j u + c D_1 u + (P_0 + J) u with u(L) = ub.
    fn apply(&self, u: &[f64], ub: &[f64], c: f64) -> Vec<f64> {
        let (n, dim) = (self.n, self.dim);
        let mut out = vec![0.0; n * dim];
        let mut dj = vec![0.0; dim];
        for (t, (pj, rows, _)) in self.terms.iter().enumerate() {
            for i in 0..n {
                let (row, bc) = &rows[i];
                for r in 0..dim {
                    dj[r] = row.iter().map(|(l, w)| w * u[l * dim + r]).sum::<f64>() + bc * ub[r];
                }
                for r in 0..dim {
                    let mut s: f64 = (0..dim).map(|q| pj[(r, q)] * dj[q]).sum();
                    if t == 0 {
                        s += c * dj[r];
                    }
                    out[i * dim + r] += s;
                }
            }
        }
        for i in 0..n {
            for r in 0..dim {
                out[i * dim + r] += (0..dim).map(|q| self.p0j[(r, q)] * u[i * dim + q]).sum::<f64>();
            }
        }
        out
    }

    /// The same operator on a function given at nodes i − p … i + p without folding.
    fn apply_unfolded(&self, f: &dyn Fn(f64) -> Vec<f64>, c: f64) -> Vec<f64> {
        let (n, dim, h) = (self.n, self.dim, self.h);
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            let xi = i as f64 * h;
            let f0 = f(xi);
            for r in 0..dim {
                out[i * dim + r] += (0..dim).map(|q| self.p0j[(r, q)] * f0[q]).sum::<f64>();
            }
            for (t, (pj, _, w)) in self.terms.iter().enumerate() {
                let p = (w.len() / 2) as i64;
                let mut dj = vec![0.0; dim];
                for (s, ws) in (-p..=p).zip(w) {
                    let v = f(xi + s as f64 * h);
                    for r in 0..dim {
                        dj[r] += ws * v[r];
                    }
                }
                for r in 0..dim {
                    let mut s: f64 = (0..dim).map(|q| pj[(r, q)] * dj[q]).sum();
                    if t == 0 {
                        s += c * dj[r];
                    }
                    out[i * dim + r] += s;
                }
            }
        }
        out
    }

    /// Band Jacobian of apply + n(q) with respect to the interior unknowns.
    fn jacobian(&self, model: &ModelSpec, q: &[f64], c: f64) -> Banded {
        let (n, dim) = (self.n, self.dim);
        let mut m = Banded::zeros(n * dim, self.band, self.band);
        for (t, (pj, rows, _)) in self.terms.iter().enumerate() {
            for (i, (row, _)) in rows.iter().enumerate() {
                for &(l, w) in row {
                    for r in 0..dim {
                        for k in 0..dim {
                            let mut v = pj[(r, k)] * w;
                            if t == 0 && r == k {
                                v += c * w;
                            }
                            if v != 0.0 {
                                m.add(i * dim + r, l * dim + k, v);
                            }
                        }
                    }
                }
            }
        }
        for i in 0..n {
            let dn = model.nonlinear_jacobian(&q[i * dim..(i + 1) * dim]);
            for r in 0..dim {
                for k in 0..dim {
                    let v = self.p0j[(r, k)] + dn[(r, k)];
                    if v != 0.0 {
                        m.add(i * dim + r, i * dim + k, v);
                    }
                }
            }
        }
        m
    }

    /// ∂/∂u(L)_b of `apply`.
    fn boundary_column(&self, b: usize, c: f64) -> Vec<f64> {
        let (n, dim) = (self.n, self.dim);
        let mut col = vec![0.0; n * dim];
        for (t, (pj, rows, _)) in self.terms.iter().enumerate() {
            for (i, (_, bc)) in rows.iter().enumerate() {
                for r in 0..dim {
                    let mut v = pj[(r, b)] * bc;
                    if t == 0 && r == b {
                        v += c * bc;
                    }
                    col[i * dim + r] += v;
                }
            }
        }
        col
    }

    fn d1(&self, u: &[f64], ub: &[f64]) -> Vec<f64> {
        let (n, dim) = (self.n, self.dim);
        let rows = &self.terms[0].1;
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            let (row, bc) = &rows[i];
            for r in 0..dim {
                out[i * dim + r] = row.iter().map(|(l, w)| w * u[l * dim + r]).sum::<f64>() + bc * ub[r];
            }
        }
        out
    }

    fn nonlinear(&self, model: &ModelSpec, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; q.len()];
        for (qi, oi) in q.chunks(self.dim).zip(out.chunks_mut(self.dim)) {
            model.nonlinear_into(qi, oi);
        }
        out
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_rows(u: &[f64], dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|r| u.iter().skip(r).step_by(dim).cloned().collect()).collect()
}

/// Residual and, on request, the bordered Jacobian of a discretized system in
/// unknowns (x, p): band block ∂f/∂x, columns ∂f/∂p, rows ∂g/∂x, corner ∂g/∂p.
struct Lin {
    f: Vec<f64>,
    g: Vec<f64>,
    jac: Option<(Banded, Vec<Vec<f64>>, Vec<Vec<f64>>, DMatrix<f64>)>,
}

fn newton<F>(x: &mut Vec<f64>, p: &mut Vec<f64>, eval: F, tol: f64, max_iter: usize) -> Result<(usize, f64)>
where
    F: Fn(&[f64], &[f64], bool) -> Lin,
{
    let norm = |l: &Lin| max_abs(&l.f).max(max_abs(&l.g));
    for it in 0..max_iter {
        let lin = eval(x, p, true);
        let r = norm(&lin);
        if !r.is_finite() {
            return Err(FrontError::NoConvergence { iterations: it, residual: r });
        }
        if r < tol {
            return Ok((it, r));
        }
        let (band, cols, rows, corner) = lin.jac.expect("Jacobian requested");
        let dense_sigma = |band: &Banded| {
            if band.size() <= 1500 {
                smallest_singular_value(band.to_dense())
            } else {
                0.0
            }
        };
        let lu = match band.clone().factor() {
            Some(lu) => lu,
            None => return Err(FrontError::JacobianSingular(dense_sigma(&band))),
        };
        let (dx, dp) = bordered_solve(&lu, &cols, &rows, &corner, &lin.f, &lin.g)
            .ok_or_else(|| FrontError::JacobianSingular(dense_sigma(&band)))?;
        let mut t = 1.0;
        loop {
            let xt: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - t * d).collect();
            let pt: Vec<f64> = p.iter().zip(&dp).map(|(a, d)| a - t * d).collect();
            let rt = norm(&eval(&xt, &pt, false));
            if (rt.is_finite() && rt < (1.0 - 1e-4 * t) * r) || t < 1.0 / 64.0 {
                *x = xt;
                *p = pt;
                break;
            }
            t *= 0.5;
        }
    }
    let r = norm(&eval(x, p, false));
    if r < tol {
        Ok((max_iter, r))
    } else {
        Err(FrontError::NoConvergence { iterations: max_iter, residual: r })
    }
}

fn wake_of(model: &ModelSpec) -> Result<(Vec<f64>, usize)> {
    let wake = model
        .wake
        .clone()
        .ok_or_else(|| FrontError::InvalidInput(format!("{} has no homogeneous wake state", model.name)))?;
    let b = wake
        .iter()
        .position(|v| *v != 0.0)
        .ok_or_else(|| FrontError::InvalidInput("wake state is the invaded state".into()))?;
    Ok((wake, b))
}

/// Trapezoid weights of the phase window and its width.
fn phase_window(n: usize, h: f64, l: f64, opts: &FrontOptions) -> Result<(Vec<(usize, f64)>, f64)> {
    let xc = opts.phase_center * l;
    let i0 = ((xc - opts.phase_half_width) / h).round().max(1.0) as usize;
    let i1 = (((xc + opts.phase_half_width) / h).round() as usize).min(n - 2);
    if i1 <= i0 {
        return Err(FrontError::InvalidInput(format!("phase window around {xc} is empty")));
    }
    let w = (i0..=i1).map(|i| (i, if i == i0 || i == i1 { 0.5 * h } else { h })).collect();
    Ok((w, (i1 - i0) as f64 * h))
}

fn grid_size(l: f64, opts: &FrontOptions) -> Result<usize> {
    if !(l > 0.0 && opts.h > 0.0) {
        return Err(FrontError::InvalidInput(format!("domain length {l} and spacing {} must be positive", opts.h)));
    }
    Ok((l / opts.h).round() as usize)
}

/// Monotone guess wake/(1 + e^{ξ − ξc}) centred in the phase window.
pub fn default_guess(model: &ModelSpec, l: f64, c: f64, opts: &FrontOptions) -> Result<FrontProfile> {
    let (wake, _) = wake_of(model)?;
    let n = grid_size(l, opts)?;
    let h = l / n as f64;
    let xc = opts.phase_center * l;
    let xi: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let u = wake.iter().map(|w| xi.iter().map(|x| w / (1.0 + (x - xc).exp())).collect()).collect();
    Ok(FrontProfile { xi, u, c, wake, boundary_value: 0.0, nu_tail: None, residual: f64::NAN, iterations: 0 })
}

/// Linear interpolation onto n nodes of spacing h, extended by the wake on the
/// left and by zero on the right.
fn resample(p: &FrontProfile, n: usize, h: f64) -> Vec<f64> {
    let dim = p.u.len();
    let hp = p.xi[1] - p.xi[0];
    let np = p.xi.len();
    let mut out = vec![0.0; n * dim];
    for i in 0..n {
        let x = i as f64 * h / hp;
        let k = x.floor() as usize;
        for r in 0..dim {
            out[i * dim + r] = if k + 1 < np {
                let s = x - k as f64;
                (1.0 - s) * p.u[r][k] + s * p.u[r][k + 1]
            } else {
                0.0
            };
        }
    }
    out
}

struct FrontSystem<'a> {
    model: &'a ModelSpec,
    disc: Disc,
    b: usize,
    window: Vec<(usize, f64)>,
    target: f64,
    free: bool,
    c_fixed: f64,
}

impl<'a> FrontSystem<'a> {
    fn new(model: &'a ModelSpec, l: f64, speed: FrontSpeed, opts: &FrontOptions) -> Result<Self> {
        let (wake, b) = wake_of(model)?;
        let n = grid_size(l, opts)?;
        let h = l / n as f64;
        let disc = Disc::new(model, n, h)?;
        let (window, width) = phase_window(n, h, l, opts)?;
        let target = opts.phase_value.unwrap_or(0.5 * wake[b]) * width;
        let (free, c_fixed) = match speed {
            FrontSpeed::Free(_) => (true, f64::NAN),
            FrontSpeed::Fixed(c) => (false, c),
        };
        Ok(FrontSystem { model, disc, b, window, target, free, c_fixed })
    }

    /// Unknowns: u and p = [c] (free) or [u_b(L)] (fixed).
    fn eval(&self, u: &[f64], p: &[f64], jac: bool) -> Lin {
        let d = &self.disc;
        let (c, beta) = if self.free { (p[0], 0.0) } else { (self.c_fixed, p[0]) };
        let mut ub = vec![0.0; d.dim];
        ub[self.b] = beta;
        let mut f = d.apply(u, &ub, c);
        for (fi, ni) in f.iter_mut().zip(d.nonlinear(self.model, u)) {
            *fi += ni;
        }
        let g = vec![self.window.iter().map(|(i, w)| w * u[i * d.dim + self.b]).sum::<f64>() - self.target];
        let jac = jac.then(|| {
            let band = d.jacobian(self.model, u, c);
            let col = if self.free { d.d1(u, &ub) } else { d.boundary_column(self.b, c) };
            let mut row = vec![0.0; u.len()];
            for (i, w) in &self.window {
                row[i * d.dim + self.b] = *w;
            }
            (band, vec![col], vec![row], DMatrix::zeros(1, 1))
        });
        Lin { f, g, jac }
    }

    fn profile(&self, u: Vec<f64>, p: &[f64], it: usize, res: f64) -> FrontProfile {
        let (c, beta) = if self.free { (p[0], 0.0) } else { (self.c_fixed, p[0]) };
        FrontProfile {
            xi: self.disc.xi(),
            u: to_rows(&u, self.disc.dim),
            c,
            wake: self.model.wake.clone().unwrap_or_default(),
            boundary_value: beta,
            nu_tail: None,
            residual: res,
            iterations: it,
        }
    }
}

/// Front with a phase condition fixing the mean of the first nonzero wake
/// component over a window; the speed or the boundary value is the extra unknown.
pub fn solve_front_newton(
    model: &ModelSpec,
    l: f64,
    speed: FrontSpeed,
    guess: Option<&FrontProfile>,
    opts: &FrontOptions,
) -> Result<FrontProfile> {
    let sys = FrontSystem::new(model, l, speed, opts)?;
    let c0 = match speed {
        FrontSpeed::Free(c) | FrontSpeed::Fixed(c) => c,
    };
    let mut u = match guess {
        Some(g) => {
            if g.u.len() != model.dim() {
                return Err(FrontError::InvalidInput("guess has the wrong number of components".into()));
            }
            resample(g, sys.disc.n, sys.disc.h)
        }
        None => default_guess(model, l, c0, opts)?.flat(),
    };
    let mut p = vec![match speed {
        FrontSpeed::Free(c) => guess.map_or(c, |g| if g.c.is_finite() { g.c } else { c }),
        FrontSpeed::Fixed(_) => guess.map_or(0.0, |g| g.boundary_value),
    }];
    let (it, res) = newton(&mut u, &mut p, |u, p, j| sys.eval(u, p, j), opts.tol, opts.max_iter)?;
    let mut prof = sys.profile(u, &p, it, res);
    prof.nu_tail = front_decay_rate(model, &prof).ok().map(|t| t.nu_tail);
    Ok(prof)
}

fn smootherstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Null vector e0 and generalized vector e1 of A(ν) = P(ν) + cν + J at a real
/// double root: A e0 = 0, A e1 + A′ e0 = 0, e1 ⟂ e0.
fn leading_edge_vectors(model: &ModelSpec, c: f64, nu: f64, b: usize) -> (Vec<f64>, Vec<f64>) {
    let coeffs = model.symbol.coeffs();
    let dim = model.dim();
    let mut a = model.symbol.jacobian().clone();
    let mut da = DMatrix::<f64>::zeros(dim, dim);
    for (j, pj) in coeffs.iter().enumerate() {
        a += pj * nu.powi(j as i32);
        if j > 0 {
            da += pj * (j as f64 * nu.powi(j as i32 - 1));
        }
    }
    for r in 0..dim {
        a[(r, r)] += c * nu;
        da[(r, r)] += c;
    }
    let svd = a.clone().svd(true, true);
    let vt = svd.v_t.as_ref().expect("requested");
    let k = (0..dim).min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j])).unwrap_or(0);
    let mut e0: Vec<f64> = vt.row(k).iter().cloned().collect();
    let s = if e0[b] != 0.0 { e0[b] } else { e0.iter().cloned().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m }) };
    e0.iter_mut().for_each(|v| *v /= s);
    let rhs = -(&da * DVector::from_vec(e0.clone()));
    let tolerance = 1e-10 * svd.singular_values.max().max(1.0);
    let mut e1: Vec<f64> = svd.solve(&rhs, tolerance).map(|v| v.iter().cloned().collect()).unwrap_or(vec![0.0; dim]);
    let proj = dot(&e1, &e0) / dot(&e0, &e0);
    e1.iter_mut().zip(&e0).for_each(|(x, y)| *x -= proj * y);
    (e0, e1)
}

/// Log-linear decay rate of |v| where it exceeds `floor`; `None` with fewer than 10 points.
fn fit_rate(xi: &[f64], v: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xi.iter().zip(v).filter(|(_, y)| y.abs() > floor).map(|(x, y)| (*x, y.abs().ln())).collect();
    if pts.len() < 10 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    Some(-sxy / sxx)
}

struct PulledSystem<'a> {
    model: &'a ModelSpec,
    disc: Disc,
    c: f64,
    b: usize,
    /// χ₋u₋ and the two far-field modes, nodal and after the operator.
    e0_nodes: Vec<f64>,
    phi_a: Vec<f64>,
    phi_b: Vec<f64>,
    l_e0: Vec<f64>,
    l_phi_a: Vec<f64>,
    l_phi_b: Vec<f64>,
    window: Vec<(usize, f64)>,
    target: f64,
    /// Far-end orthogonality row against e^{−ηξ} e0.
    ortho: Vec<f64>,
    i_far: usize,
    cut: [f64; 2],
    e0: Vec<f64>,
    e1: Vec<f64>,
    wake: Vec<f64>,
}

impl<'a> PulledSystem<'a> {
    fn q(&self, w: &[f64], p: &[f64]) -> Vec<f64> {
        (0..w.len()).map(|k| w[k] + self.e0_nodes[k] + p[0] * self.phi_a[k] + p[1] * self.phi_b[k]).collect()
    }

    fn eval(&self, w: &[f64], p: &[f64], jac: bool) -> Lin {
        let d = &self.disc;
        let q = self.q(w, p);
        let zero = vec![0.0; d.dim];
        let mut f = d.apply(w, &zero, self.c);
        let nl = d.nonlinear(self.model, &q);
        for k in 0..f.len() {
            f[k] += self.l_e0[k] + p[0] * self.l_phi_a[k] + p[1] * self.l_phi_b[k] + nl[k];
        }
        let phase = self.window.iter().map(|(i, wt)| wt * q[i * d.dim + self.b]).sum::<f64>() - self.target;
        let g = vec![phase, dot(&self.ortho, w)];
        let jac = jac.then(|| {
            let band = d.jacobian(self.model, &q, self.c);
            let mut cols = vec![self.l_phi_a.clone(), self.l_phi_b.clone()];
            for i in 0..d.n {
                let dn = self.model.nonlinear_jacobian(&q[i * d.dim..(i + 1) * d.dim]);
                for (col, phi) in cols.iter_mut().zip([&self.phi_a, &self.phi_b]) {
                    for r in 0..d.dim {
                        col[i * d.dim + r] += (0..d.dim).map(|k| dn[(r, k)] * phi[i * d.dim + k]).sum::<f64>();
                    }
                }
            }
            let mut prow = vec![0.0; w.len()];
            for (i, wt) in &self.window {
                prow[i * d.dim + self.b] = *wt;
            }
            let pa: f64 = self.window.iter().map(|(i, wt)| wt * self.phi_a[i * d.dim + self.b]).sum();
            let pb: f64 = self.window.iter().map(|(i, wt)| wt * self.phi_b[i * d.dim + self.b]).sum();
            let corner = DMatrix::from_row_slice(2, 2, &[pa, pb, 0.0, 0.0]);
            (band, cols, vec![prow, self.ortho.clone()], corner)
        });
        Lin { f, g, jac }
    }
}

/// Pulled front at c = c_lin written as q = χ₋u₋ + w + χ₊[(as + b)e^{−ηs}e0 + a e^{−ηs}e1],
/// s = ξ − L/2, with a strongly localized core w. The sign of `a` separates pulled fronts
/// (a > 0) from the pushed regime.
pub fn solve_pulled_front(
    model: &ModelSpec,
    c_lin: f64,
    eta_lin: f64,
    l: f64,
    guess: Option<&FrontProfile>,
    opts: &FrontOptions,
) -> Result<(FrontProfile, FarfieldCoreDecomp)> {
    if !(eta_lin > 0.0) {
        return Err(FrontError::InvalidInput(format!("eta_lin = {eta_lin} must be positive")));
    }
    let sys = pulled_system_for(model, c_lin, eta_lin, l, opts)?;
    let (n, h, dim, b, cut, i_far) = (sys.disc.n, sys.disc.h, sys.disc.dim, sys.b, sys.cut, sys.i_far);

    // Initial data: a fixed-speed front at c_lin with its tail fitted to (aξ + b)e^{−ηξ}.
    let front = match guess {
        Some(g) => g.clone(),
        None => solve_front_newton(model, l, FrontSpeed::Fixed(c_lin), None, opts)?,
    };
    let qg = resample(&front, n, h);
    let tail: Vec<(Vec<f64>, f64)> = (0..n)
        .filter(|&i| {
            let x = i as f64 * h;
            x > cut[1] && x < 0.85 * l && qg[i * dim + b].abs() > 1e-12
        })
        .map(|i| {
            let x = i as f64 * h;
            let xs = x - 0.5 * l;
            (vec![xs, 1.0], qg[i * dim + b] * (eta_lin * xs).exp() / sys.e0[b])
        })
        .collect();
    let mut p = if tail.len() >= 2 {
        let a = DMatrix::from_fn(tail.len(), 2, |i, j| tail[i].0[j]);
        let y = DVector::from_iterator(tail.len(), tail.iter().map(|t| t.1));
        a.svd(true, true).solve(&y, 1e-14).map(|s| vec![s[0], s[1]]).unwrap_or(vec![0.0, 0.0])
    } else {
        vec![0.0, 0.0]
    };
    let mut w: Vec<f64> = {
        let q0 = sys.q(&vec![0.0; n * dim], &p);
        qg.iter().zip(&q0).map(|(a, b)| a - b).collect()
    };
    let (it, res) = newton(&mut w, &mut p, |w, p, j| sys.eval(w, p, j), opts.tol, opts.max_iter)?;
    let q = sys.q(&w, &p);
    let xi: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let beyond: Vec<usize> = (0..n).filter(|&i| xi[i] > cut[1] && i < i_far).collect();
    let wb: Vec<f64> = beyond.iter().map(|&i| (0..dim).map(|r| w[i * dim + r].abs()).fold(0.0, f64::max)).collect();
    let xb: Vec<f64> = beyond.iter().map(|&i| xi[i]).collect();
    let core_decay_rate = fit_rate(&xb, &wb, 1e-11);
    if let Some(rate) = core_decay_rate {
        if rate <= 1.05 * eta_lin {
            return Err(FrontError::WeakCoreDecay { rate, eta: eta_lin });
        }
    }
    let profile = FrontProfile {
        xi,
        u: to_rows(&q, dim),
        c: c_lin,
        wake: sys.wake.clone(),
        boundary_value: q[(n - 1) * dim + b],
        nu_tail: Some(C64::new(-eta_lin, 0.0)),
        residual: res,
        iterations: it,
    };
    let decomp = FarfieldCoreDecomp {
        core: to_rows(&w, dim),
        a: p[0],
        b: p[1],
        eta_lin,
        cut,
        e0: sys.e0.clone(),
        e1: sys.e1.clone(),
        core_decay_rate,
    };
    Ok((profile, decomp))
}

fn family(name: &str, base: &BTreeMap<String, f64>, param: &str, mu: f64) -> Result<ModelSpec> {
    let mut ps = base.clone();
    ps.insert(param.to_string(), mu);
    Ok(get_model(name, &ps)?)
}

fn pulled_at(
    name: &str,
    base: &BTreeMap<String, f64>,
    param: &str,
    mu: f64,
    l: f64,
    guess: Option<&FrontProfile>,
    opts: &FrontOptions,
) -> Result<(f64, f64, FrontProfile, FarfieldCoreDecomp)> {
    let model = family(name, base, param, mu)?;
    let sr = linear_spreading_speed(&model.symbol, &SpreadingOptions::default())?;
    if sr.nu_lin.im.abs() > 1e-8 {
        return Err(FrontError::InvalidInput(format!("leading edge at mu = {mu} is oscillatory (ν = {})", sr.nu_lin)));
    }
    // a fixed-speed front from the previous parameter is a poor start once the
    // tail changes sign, so only reuse guesses as a fallback
    let solved = solve_pulled_front(&model, sr.c_lin, sr.eta_lin, l, None, opts)
        .or_else(|e| guess.map_or(Err(e), |g| solve_pulled_front(&model, sr.c_lin, sr.eta_lin, l, Some(g), opts)))?;
    Ok((sr.c_lin, sr.eta_lin, solved.0, solved.1))
}

/// Pushed-to-pulled transition in a one-parameter family: the zero of the
/// far-field coefficient a(mu), found by the Illinois variant of regula falsi.
pub fn detect_transition(
    name: &str,
    base: &BTreeMap<String, f64>,
    param: &str,
    bracket: [f64; 2],
    l: f64,
    opts: &FrontOptions,
) -> Result<Transition> {
    let [mut lo, mut hi] = bracket;
    let (_, _, plo, dlo) = pulled_at(name, base, param, lo, l, None, opts)?;
    let (_, _, phi, dhi) = pulled_at(name, base, param, hi, l, None, opts)?;
    let (mut alo, mut ahi) = (dlo.a, dhi.a);
    if alo.signum() == ahi.signum() {
        return Err(FrontError::NoSignChange { lo, hi, a_lo: alo, a_hi: ahi });
    }
    let mut evaluations = 2;
    let mut last = if alo.abs() < ahi.abs() { plo } else { phi };
    let mut side = 0i8;
    let scale = alo.abs().max(ahi.abs());
    for _ in 0..80 {
        let mu = hi - ahi * (hi - lo) / (ahi - alo);
        let (c, eta, prof, dec) = pulled_at(name, base, param, mu, l, Some(&last), opts)?;
        evaluations += 1;
        last = prof.clone();
        let a = dec.a;
        if a.abs() < 1e-12 * scale || (hi - lo).abs() < 1e-11 {
            return Ok(Transition { mu, c, eta, profile: prof, decomposition: dec, evaluations });
        }
        if a.signum() == ahi.signum() {
            hi = mu;
            ahi = a;
            if side == 1 {
                alo *= 0.5;
            }
            side = 1;
        } else {
            lo = mu;
            alo = a;
            if side == -1 {
                ahi *= 0.5;
            }
            side = -1;
        }
        if (hi - lo).abs() < 1e-11 {
            return Ok(Transition { mu, c, eta, profile: prof, decomposition: dec, evaluations });
        }
    }
    Err(FrontError::NoConvergence { iterations: evaluations, residual: alo.abs().min(ahi.abs()) })
}

fn c_lin_at(name: &str, base: &BTreeMap<String, f64>, param: &str, mu: f64) -> Option<f64> {
    let m = family(name, base, param, mu).ok()?;
    linear_spreading_speed(&m.symbol, &SpreadingOptions::default()).ok().map(|s| s.c_lin)
}

/// Free-speed front branch along mu ∈ [path[0], path[1]] from a converged seed.
/// Natural continuation uses a secant predictor; the arclength variant adds mu
/// as an unknown closed by a pseudo-arclength condition in (mu, c).
pub fn continue_front(
    name: &str,
    base: &BTreeMap<String, f64>,
    param: &str,
    path: [f64; 2],
    seed: &FrontProfile,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    let l = seed.length();
    let mut branch = Branch { param: param.to_string(), points: Vec::new(), profiles: Vec::new() };
    let push = |branch: &mut Branch, mu: f64, p: FrontProfile| {
        branch.points.push(BranchPoint { mu, c: p.c, c_lin: c_lin_at(name, base, param, mu), residual: p.residual });
        branch.profiles.push(p);
    };
    let len = path[1] - path[0];
    let m0 = family(name, base, param, path[0])?;
    let first = solve_front_newton(&m0, l, FrontSpeed::Free(seed.c), Some(seed), &opts.front)?;
    push(&mut branch, path[0], first);
    if len == 0.0 || opts.points < 2 {
        return Ok(branch);
    }
    let targets: Vec<f64> = (1..opts.points).map(|k| path[0] + len * k as f64 / (opts.points - 1) as f64).collect();
    let h_min = opts.min_step * len.abs();
    let mut mu = path[0];
    let mut step = len / (opts.points - 1) as f64;
    let mut ti = 0;
    while ti < targets.len() {
        let target = targets[ti];
        let remaining = target - mu;
        let s = if step.abs() > remaining.abs() { remaining } else { step };
        let prev = branch.profiles.last().expect("seeded").clone();
        let before = (branch.profiles.len() >= 2).then(|| branch.profiles[branch.profiles.len() - 2].clone());
        let trial = mu + s;
        let attempt = (|| -> Result<FrontProfile> {
            let m = family(name, base, param, trial)?;
            let mut guess = prev.clone();
            if let (Some(b), Some(pb)) = (before.as_ref(), branch.points.len().checked_sub(2).map(|k| branch.points[k].mu)) {
                // secant predictor in mu
                let r = (trial - mu) / (mu - pb);
                if r.is_finite() && r.abs() < 4.0 {
                    for (gu, (pu, bu)) in guess.u.iter_mut().zip(prev.u.iter().zip(&b.u)) {
                        for (g, (x, y)) in gu.iter_mut().zip(pu.iter().zip(bu)) {
                            *g = x + r * (x - y);
                        }
                    }
                    guess.c = prev.c + r * (prev.c - b.c);
                }
            }
            if opts.arclength {
                arclength_step(&m, name, base, param, trial, &guess, &prev, mu, l, &opts.front)
            } else {
                solve_front_newton(&m, l, FrontSpeed::Free(guess.c), Some(&guess), &opts.front)
            }
        })();
        match attempt {
            Ok(p) => {
                mu = trial;
                if (mu - target).abs() <= 1e-12 * len.abs().max(1.0) {
                    push(&mut branch, mu, p);
                    ti += 1;
                } else {
                    // intermediate point: keep it for the predictor only
                    push(&mut branch, mu, p);
                }
                step = (2.0 * s).abs().min((len / (opts.points - 1) as f64).abs()) * len.signum();
            }
            Err(_) if s.abs() / 2.0 >= h_min => step = s / 2.0,
            Err(_) => {
                let points = branch.points.clone();
                let mut partial = branch.clone();
                partial.points = points;
                return Err(FrontError::StepFailure { param: trial, partial: Box::new(partial) });
            }
        }
    }
    // report only the requested grid of parameter values
    let keep: Vec<usize> = (0..branch.points.len())
        .filter(|&k| {
            let m = branch.points[k].mu;
            k == 0 || targets.iter().any(|t| (t - m).abs() <= 1e-12 * len.abs().max(1.0))
        })
        .collect();
    branch.points = keep.iter().map(|&k| branch.points[k].clone()).collect();
    branch.profiles = keep.iter().map(|&k| branch.profiles[k].clone()).collect();
    Ok(branch)
}

/// One corrector with mu free: the extra row fixes the projection of the
/// (mu, c) step onto the secant direction, which passes folds in mu.
#[allow(clippy::too_many_arguments)]
fn arclength_step(
    model: &ModelSpec,
    name: &str,
    base: &BTreeMap<String, f64>,
    param: &str,
    mu_pred: f64,
    guess: &FrontProfile,
    prev: &FrontProfile,
    mu_prev: f64,
    l: f64,
    opts: &FrontOptions,
) -> Result<FrontProfile> {
    let sys0 = FrontSystem::new(model, l, FrontSpeed::Free(guess.c), opts)?;
    let n = sys0.disc.n;
    let dmu = 1e-7 * mu_pred.abs().max(1.0);
    let model_p = family(name, base, param, mu_pred + dmu)?;
    let tau = [mu_pred - mu_prev, guess.c - prev.c];
    let tn = (tau[0] * tau[0] + tau[1] * tau[1]).sqrt().max(1e-300);
    let tau = [tau[0] / tn, tau[1] / tn];
    let arc = tau[0] * mu_pred + tau[1] * guess.c;
    let mut u = resample(guess, n, sys0.disc.h);
    let mut p = vec![guess.c, mu_pred];
    let eval = |u: &[f64], p: &[f64], jac: bool| -> Lin {
        let m = family(name, base, param, p[1]);
        let Ok(m) = m else {
            return Lin { f: vec![f64::NAN; u.len()], g: vec![f64::NAN; 2], jac: None };
        };
        let sys = FrontSystem::new(&m, l, FrontSpeed::Free(p[0]), opts).expect("validated above");
        let mut lin = sys.eval(u, &p[..1], jac);
        lin.g.push(tau[0] * p[1] + tau[1] * p[0] - arc);
        if let Some((band, mut cols, mut rows, _)) = lin.jac.take() {
            let sysp = FrontSystem::new(&model_p, l, FrontSpeed::Free(p[0]), opts).expect("validated above");
            let fp = sysp.eval(u, &p[..1], false).f;
            let f0 = FrontSystem::new(&family(name, base, param, mu_pred).expect("validated"), l, FrontSpeed::Free(p[0]), opts)
                .expect("validated above")
                .eval(u, &p[..1], false)
                .f;
            cols.push(fp.iter().zip(&f0).map(|(a, b)| (a - b) / dmu).collect());
            rows.push(vec![0.0; u.len()]);
            let corner = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, tau[1], tau[0]]);
            lin.jac = Some((band, cols, rows, corner));
        }
        lin
    };
    let (it, res) = newton(&mut u, &mut p, eval, opts.tol, opts.max_iter)?;
    let m = family(name, base, param, p[1])?;
    let sys = FrontSystem::new(&m, l, FrontSpeed::Free(p[0]), opts)?;
    let mut prof = sys.profile(u, &p[..1], it, res);
    if (p[1] - mu_pred).abs() > 1e-8 * mu_pred.abs().max(1.0) {
        // the corrector moved mu off the requested value; refine there
        prof = solve_front_newton(model, l, FrontSpeed::Free(prof.c), Some(&prof), opts)?;
    }
    Ok(prof)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Index where the phase component crosses half its wake value.
fn front_position(p: &FrontProfile) -> usize {
    let b = p.wake.iter().position(|v| *v != 0.0).unwrap_or(0);
    let half = 0.5 * p.wake.get(b).copied().unwrap_or(1.0);
    p.u[b].iter().position(|v| (v - half) * half.signum() < 0.0).unwrap_or(p.xi.len() / 2)
}

/// Rightmost eigenvalues of the linearization at the profile, conjugated by the
/// one-sided weight e^{η softplus(ξ − ξ_f)} about the front position ξ_f.
pub fn front_spectrum(model: &ModelSpec, profile: &FrontProfile, eta: f64, n_eigs: usize) -> Result<FrontSpectrum> {
    let n = profile.xi.len();
    let h = profile.xi[1] - profile.xi[0];
    let disc = Disc::new(model, n, h)?;
    let dim = disc.dim;
    let size = n * dim;
    if size > 4000 {
        return Err(FrontError::InvalidInput(format!("dense eigenvalue solve limited to 4000 unknowns, got {size}")));
    }
    let u = profile.flat();
    let band = disc.jacobian(model, &u, profile.c);
    let xf = profile.xi[front_position(profile)];
    let g: Vec<f64> = profile.xi.iter().map(|x| eta * softplus(x - xf)).collect();
    let a = DMatrix::from_fn(size, size, |i, j| {
        let v = band.get(i, j);
        if v == 0.0 {
            0.0
        } else {
            v * (g[i / dim] - g[j / dim]).exp()
        }
    });
    let mut eig = eig_real(a.clone()).ok_or(FrontError::EigFailure)?;
    eig.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    let nearest = *eig.iter().min_by(|x, y| x.norm().total_cmp(&y.norm())).ok_or(FrontError::EigFailure)?;
    // inverse iteration at the (real) eigenvalue nearest 0
    let shift = nearest.re + 1e-9 * (1.0 + nearest.re.abs());
    let mut m = a.clone();
    for i in 0..size {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut v = DVector::from_fn(size, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    for _ in 0..4 {
        v = lu.solve(&v).ok_or(FrontError::EigFailure)?;
        let nv = v.norm();
        v /= nv;
    }
    let ub = {
        let mut ub = vec![0.0; dim];
        let b = profile.wake.iter().position(|v| *v != 0.0).unwrap_or(0);
        ub[b] = profile.boundary_value;
        ub
    };
    let du = disc.d1(&u, &ub);
    let wdu = DVector::from_fn(size, |k, _| du[k] * g[k / dim].exp());
    let overlap = (v.dot(&wdu) / (v.norm() * wdu.norm())).abs();
    let eigenvalues: Vec<C64> = eig.into_iter().take(n_eigs.max(1)).collect();
    Ok(FrontSpectrum {
        weight_eta: eta,
        leading: eigenvalues[0],
        eigenvalues,
        nearest_zero: nearest,
        translation_overlap: overlap,
        sigma_min_at_zero: smallest_singular_value(a),
    })
}

/// Decay rate of the leading edge from a log-linear fit of the tail, with the
/// steep/generic classification against the two slowest roots of d_c(0, ν).
pub fn front_decay_rate(model: &ModelSpec, profile: &FrontProfile) -> Result<TailFit> {
    let b = profile.wake.iter().position(|v| *v != 0.0).unwrap_or(0);
    let wb = profile.wake.get(b).copied().unwrap_or(1.0).abs().max(f64::MIN_POSITIVE);
    let u = &profile.u[b];
    let xi = &profile.xi;
    let start = (0..u.len()).rev().find(|&i| u[i].abs() > 1e-2 * wb).map_or(0, |i| i + 1);
    let stop = (start..u.len()).find(|&i| u[i].abs() <= 1e-13).unwrap_or(u.len());
    // the last part of the tail feels the boundary at ξ = L
    let end = start + (6 * (stop.saturating_sub(start))) / 10;
    let idx: Vec<usize> = (start..end).filter(|&i| u[i].abs() > 1e-13).collect();
    if idx.len() < 30 {
        return Err(FrontError::TailBelowNoise { points: idx.len() });
    }
    let sign_changes: Vec<f64> = idx
        .windows(2)
        .filter(|w| u[w[0]] * u[w[1]] < 0.0)
        .map(|w| {
            let (a, c) = (u[w[0]], u[w[1]]);
            xi[w[0]] + a / (a - c) * (xi[w[1]] - xi[w[0]])
        })
        .collect();
    let (re, im) = if sign_changes.len() >= 2 {
        let spacing = (sign_changes[sign_changes.len() - 1] - sign_changes[0]) / (sign_changes.len() - 1) as f64;
        let crests: Vec<usize> = idx
            .windows(3)
            .filter(|w| u[w[1]].abs() >= u[w[0]].abs() && u[w[1]].abs() >= u[w[2]].abs())
            .map(|w| w[1])
            .collect();
        let pts: Vec<usize> = if crests.len() >= 3 { crests } else { idx.clone() };
        let xs: Vec<f64> = pts.iter().map(|&i| xi[i]).collect();
        let vs: Vec<f64> = pts.iter().map(|&i| u[i]).collect();
        let rate = fit_rate_min(&xs, &vs).unwrap_or(f64::NAN);
        (-rate, std::f64::consts::PI / spacing)
    } else {
        let xs: Vec<f64> = idx.iter().map(|&i| xi[i]).collect();
        let vs: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
        (-fit_rate_min(&xs, &vs).unwrap_or(f64::NAN), 0.0)
    };
    let nu_tail = C64::new(re, im);
    let cd = ComovingDispersion::new(model.symbol.clone(), profile.c);
    let mut roots: Vec<C64> =
        poly_roots(&cd.poly().nu_coeffs(C64::new(0.0, 0.0))).into_iter().filter(|z| z.re < 0.0).collect();
    roots.sort_by(|x, y| y.re.total_cmp(&x.re));
    let nu_plus = roots.first().copied();
    let nu_minus = roots.iter().find(|z| nu_plus.is_some_and(|p| z.re < p.re - 1e-9)).copied();
    let steepness = match (nu_plus, nu_minus) {
        (Some(p), Some(m)) if (re - m.re).abs() < (re - p.re).abs() => Steepness::Steep,
        _ => Steepness::Generic,
    };
    Ok(TailFit { nu_tail, nu_plus, nu_minus, steepness, points: idx.len() })
}

fn fit_rate_min(xs: &[f64], vs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = xs.iter().zip(vs).map(|(x, v)| (*x, v.abs().ln())).collect();
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    Some(-sxy / sxx)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum BvpKind {
    FreeSpeed,
    FixedSpeed,
    Pulled,
}

/// Largest relative deviation between the analytic Jacobian applied to a
/// direction and a centred difference of the residual, over `samples`
/// deterministic pseudo-random directions at the given profile.
pub fn jacobian_fd_error(model: &ModelSpec, profile: &FrontProfile, kind: BvpKind, samples: usize) -> Result<f64> {
    let l = profile.length();
    let h = profile.xi[1] - profile.xi[0];
    let opts = FrontOptions { h, ..Default::default() };
    let x: Vec<f64> = profile.flat();
    let mut seed = 0x9E37_79B9_7F4A_7C15u64;
    let mut rnd = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let check = |eval: &dyn Fn(&[f64], &[f64], bool) -> Lin, x: &[f64], p: &[f64], rnd: &mut dyn FnMut() -> f64| {
        let lin = eval(x, p, true);
        let (band, cols, rows, corner) = lin.jac.expect("requested");
        let dx: Vec<f64> = (0..x.len()).map(|_| rnd()).collect();
        let dp: Vec<f64> = (0..p.len()).map(|_| rnd()).collect();
        let mut jf = band.matvec(&dx);
        for (c, d) in cols.iter().zip(&dp) {
            jf.iter_mut().zip(c).for_each(|(a, v)| *a += v * d);
        }
        let jg: Vec<f64> = (0..rows.len())
            .map(|i| dot(&rows[i], &dx) + (0..dp.len()).map(|j| corner[(i, j)] * dp[j]).sum::<f64>())
            .collect();
        let eps = 1e-6;
        let shift = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
            let ps: Vec<f64> = p.iter().zip(&dp).map(|(a, d)| a + s * d).collect();
            eval(&xs, &ps, false)
        };
        let (fp, fm) = (shift(eps), shift(-eps));
        let fd_f: Vec<f64> = fp.f.iter().zip(&fm.f).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let fd_g: Vec<f64> = fp.g.iter().zip(&fm.g).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let diff = fd_f.iter().zip(&jf).chain(fd_g.iter().zip(&jg)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = max_abs(&jf).max(max_abs(&jg)).max(1e-300);
        diff / scale
    };
    let mut worst = 0.0f64;
    match kind {
        BvpKind::FreeSpeed | BvpKind::FixedSpeed => {
            let speed = if kind == BvpKind::FreeSpeed { FrontSpeed::Free(profile.c) } else { FrontSpeed::Fixed(profile.c) };
            let sys = FrontSystem::new(model, l, speed, &opts)?;
            let p = vec![if kind == BvpKind::FreeSpeed { profile.c } else { profile.boundary_value }];
            for _ in 0..samples {
                worst = worst.max(check(&|u, p, j| sys.eval(u, p, j), &x, &p, &mut rnd));
            }
        }
        BvpKind::Pulled => {
            let eta = profile
                .nu_tail
                .map(|z| -z.re)
                .ok_or_else(|| FrontError::InvalidInput("pulled check needs the profile's leading-edge rate".into()))?;
            let (_, dec) = solve_pulled_front(model, profile.c, eta, l, Some(profile), &FrontOptions { h, ..Default::default() })?;
            let sys = pulled_system_for(model, profile.c, eta, l, &opts)?;
            let w: Vec<f64> = {
                let dim = model.dim();
                (0..x.len()).map(|k| dec.core[k % dim][k / dim]).collect()
            };
            for _ in 0..samples {
                worst = worst.max(check(&|w, p, j| sys.eval(w, p, j), &w, &[dec.a, dec.b], &mut rnd));
            }
        }
    }
    Ok(worst)
}

fn pulled_system_for<'a>(model: &'a ModelSpec, c: f64, eta: f64, l: f64, opts: &FrontOptions) -> Result<PulledSystem<'a>> {
    let (wake, b) = wake_of(model)?;
    let n = grid_size(l, opts)?;
    let h = l / n as f64;
    let disc = Disc::new(model, n, h)?;
    let dim = disc.dim;
    let nu = -eta;
    let (e0, e1) = leading_edge_vectors(model, c, nu, b);
    let cut = [0.5 * l - 5.0, 0.5 * l + 5.0];
    let chi = move |x: f64| smootherstep((x - cut[0]) / (cut[1] - cut[0]));
    let wk = wake.clone();
    let f_e0 = move |x: f64| wk.iter().map(|w| (1.0 - chi(x)) * w).collect::<Vec<f64>>();
    let (e0c, e1c) = (e0.clone(), e1.clone());
    // modes referenced to the split so that a and b are of the size of the tail there
    let xs = 0.5 * l;
    let f_a = move |x: f64| {
        (0..dim).map(|r| chi(x) * (nu * (x - xs)).exp() * ((x - xs) * e0c[r] + e1c[r])).collect::<Vec<f64>>()
    };
    let e0c = e0.clone();
    let f_b = move |x: f64| (0..dim).map(|r| chi(x) * (nu * (x - xs)).exp() * e0c[r]).collect::<Vec<f64>>();
    let nodes = |f: &dyn Fn(f64) -> Vec<f64>| (0..n).flat_map(|i| f(i as f64 * h)).collect::<Vec<f64>>();
    let (window, width) = phase_window(n, h, l, opts)?;
    let i_far = (0.9 * n as f64) as usize;
    let mut ortho = vec![0.0; n * dim];
    for i in i_far..n {
        for r in 0..dim {
            ortho[i * dim + r] = e0[r] * (nu * i as f64 * h).exp();
        }
    }
    let on = max_abs(&ortho);
    ortho.iter_mut().for_each(|v| *v /= on);
    Ok(PulledSystem {
        model,
        c,
        b,
        e0_nodes: nodes(&f_e0),
        phi_a: nodes(&f_a),
        phi_b: nodes(&f_b),
        l_e0: disc.apply_unfolded(&f_e0, c),
        l_phi_a: disc.apply_unfolded(&f_a, c),
        l_phi_b: disc.apply_unfolded(&f_b, c),
        window,
        target: opts.phase_value.unwrap_or(0.5 * wake[b]) * width,
        ortho,
        i_far,
        cut,
        e0,
        e1,
        wake,
        disc,
    })
}
