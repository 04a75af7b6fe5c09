//! Matrix-valued symbols P(ν) and the comoving dispersion relation
//! d_c(λ, ν) = det(P(ν) + cν·I + J − λ·I).

use crate::linalg::{eig_complex, poly_eval, poly_roots, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PolymatError {
    #[error("invalid symbol: {0}")]
    InvalidShape(String),
    #[error("leading ν-coefficient vanishes at λ = {lambda} (degree {found} < {expected})")]
    DegenerateLeadingCoefficient { lambda: C64, found: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, PolymatError>;

/// Coefficients below this fraction of the largest one are treated as zero
/// when deciding the effective ν-degree.
const DEGREE_TOL: f64 = 1e-13;

/// The symbol P(ν) = Σ P_j ν^j together with J = f′(0).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatrixPolynomial {
    order: usize,
    dim: usize,
    coeffs: Vec<DMatrix<f64>>,
    jacobian: DMatrix<f64>,
}

/// Outcome of the sampled well-posedness check.
#[derive(Clone, Debug, Serialize)]
pub struct WellPosedness {
    /// Decay constant in Re λ ≤ −δ·k^{2m} read off the leading coefficient.
    pub delta: f64,
    pub k_threshold: f64,
    /// Largest Re λ over the sampled window |k| ≤ K.
    pub sup_growth: f64,
    /// Tail samples beyond K obey the −δ/2·k^{2m} bound.
    pub tail_ok: bool,
    pub ok: bool,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<DMatrix<f64>>, jacobian: DMatrix<f64>) -> Result<Self> {
        if coeffs.len() < 3 || coeffs.len() % 2 == 0 {
            return Err(PolymatError::InvalidShape(format!(
                "need 2m+1 coefficients with m ≥ 1, got {}",
                coeffs.len()
            )));
        }
        let dim = jacobian.nrows();
        if dim == 0 || jacobian.ncols() != dim {
            return Err(PolymatError::InvalidShape("J must be square and nonempty".into()));
        }
        if coeffs.iter().any(|p| p.nrows() != dim || p.ncols() != dim) {
            return Err(PolymatError::InvalidShape(format!("all coefficients must be {dim}×{dim}")));
        }
        if coeffs.iter().chain(std::iter::once(&jacobian)).any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(PolymatError::InvalidShape("non-finite coefficient".into()));
        }
        Ok(MatrixPolynomial { order: coeffs.len() - 1, dim, coeffs, jacobian })
    }

    /// Scalar symbol from ascending coefficients p_0..p_2m and f′(0).
    pub fn scalar(coeffs: &[f64], jac: f64) -> Result<Self> {
        Self::new(
            coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect(),
            DMatrix::from_element(1, 1, jac),
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn half_order(&self) -> usize {
        self.order / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// Same symbol with a different linearization matrix.
    pub fn with_jacobian(&self, jacobian: DMatrix<f64>) -> Result<Self> {
        Self::new(self.coeffs.clone(), jacobian)
    }

    /// P(ν) (without J).
    pub fn symbol(&self, nu: C64) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(self.dim, self.dim);
        let mut pw = C64::new(1.0, 0.0);
        for p in &self.coeffs {
            m += p.map(|v| C64::new(v, 0.0)) * pw;
            pw *= nu;
        }
        m
    }

    /// P(ν) + cν·I + J.
    pub fn comoving_matrix(&self, nu: C64, c: f64) -> DMatrix<C64> {
        let mut m = self.symbol(nu) + self.jacobian.map(|v| C64::new(v, 0.0));
        for i in 0..self.dim {
            m[(i, i)] += nu * c;
        }
        m
    }

    /// x ↦ −x: P_j ↦ (−1)^j P_j.
    pub fn reflected(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, p)| if j % 2 == 1 { -p } else { p.clone() })
            .collect();
        MatrixPolynomial { order: self.order, dim: self.dim, coeffs, jacobian: self.jacobian.clone() }
    }

    /// True when all odd coefficients vanish.
    pub fn is_reflection_symmetric(&self) -> bool {
        self.coeffs.iter().skip(1).step_by(2).all(|p| p.iter().all(|v| *v == 0.0))
    }

    /// Component groups that are not coupled by any coefficient or by J.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let n = self.dim;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            p[i] = r;
            r
        }
        for m in self.coeffs.iter().chain(std::iter::once(&self.jacobian)) {
            for i in 0..n {
                for j in 0..n {
                    if i != j && m[(i, j)] != 0.0 {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            match groups.iter_mut().find(|g| roots[g[0]] == roots[i]) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        groups
    }

    /// Restriction to a subset of components.
    pub fn restrict(&self, comps: &[usize]) -> Result<Self> {
        let k = comps.len();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |i, j| m[(comps[i], comps[j])]);
        Self::new(self.coeffs.iter().map(pick).collect(), pick(&self.jacobian))
    }

    /// Spectral abscissa of P(ik) + J.
    pub fn growth_rate(&self, k: f64) -> f64 {
        let m = self.comoving_matrix(C64::new(0.0, k), 0.0);
        eig_complex(m)
            .unwrap_or_default()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sampled well-posedness check with K = 10·(spectral radius estimate).
    pub fn well_posedness(&self) -> WellPosedness {
        let m = self.half_order();
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let lead = (&self.coeffs[self.order] * sign).map(|v| C64::new(v, 0.0));
        let delta = -eig_complex(lead)
            .unwrap_or_default()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let dscale = delta.max(1e-12);
        let mut rho: f64 = 1.0;
        for (j, p) in self.coeffs.iter().enumerate().take(self.order) {
            let mut size = p.norm();
            if j == 0 {
                size += self.jacobian.norm();
            }
            rho = rho.max((size / dscale).powf(1.0 / (self.order - j) as f64));
        }
        let k_threshold = 10.0 * rho;
        let samples = 400;
        let sup_growth = (0..=samples)
            .map(|i| -k_threshold + 2.0 * k_threshold * i as f64 / samples as f64)
            .map(|k| self.growth_rate(k))
            .fold(f64::NEG_INFINITY, f64::max);
        let tail_ok = delta > 0.0
            && [1.0, 1.5, 2.0, 4.0].iter().all(|s| {
                [1.0, -1.0].iter().all(|sg| {
                    let k = s * sg * k_threshold;
                    self.growth_rate(k) <= -0.5 * delta * k.abs().powi(self.order as i32)
                })
            });
        WellPosedness {
            delta,
            k_threshold,
            sup_growth,
            tail_ok,
            ok: tail_ok && sup_growth.is_finite(),
        }
    }
}

/// Bivariate polynomial Σ a_ij λ^i ν^j with real coefficients.
#[derive(Clone, Debug)]
pub struct Bivariate {
    /// a[i][j], i ≤ N (λ-degree), j ≤ effective ν-degree.
    pub a: Vec<Vec<f64>>,
}

/// Value and partial derivatives of d_c at a point.
#[derive(Clone, Copy, Debug)]
pub struct Partials {
    pub d: C64,
    pub dl: C64,
    pub dn: C64,
    pub dll: C64,
    pub dln: C64,
    pub dnn: C64,
    /// Σ |a_ij||λ|^i|ν|^j, the natural magnitude of the terms.
    pub scale: f64,
}

impl Bivariate {
    pub fn lambda_degree(&self) -> usize {
        self.a.len() - 1
    }

    pub fn nu_degree(&self) -> usize {
        self.a[0].len() - 1
    }

    /// Ascending ν-coefficients at fixed λ.
    pub fn nu_coeffs(&self, lam: C64) -> Vec<C64> {
        let nd = self.nu_degree();
        (0..=nd)
            .map(|j| {
                let mut s = C64::new(0.0, 0.0);
                let mut pw = C64::new(1.0, 0.0);
                for row in &self.a {
                    s += pw * row[j];
                    pw *= lam;
                }
                s
            })
            .collect()
    }

    /// Ascending λ-coefficients at fixed ν.
    pub fn lambda_coeffs(&self, nu: C64) -> Vec<C64> {
        self.a
            .iter()
            .map(|row| {
                let r: Vec<C64> = row.iter().map(|&v| C64::new(v, 0.0)).collect();
                poly_eval(&r, nu).0
            })
            .collect()
    }

    pub fn partials(&self, lam: C64, nu: C64) -> Partials {
        let zero = C64::new(0.0, 0.0);
        let mut out = Partials { d: zero, dl: zero, dn: zero, dll: zero, dln: zero, dnn: zero, scale: 0.0 };
        let nd = self.nu_degree();
        let pow = |z: C64, k: i64| if k < 0 { zero } else { z.powu(k as u32) };
        for (i, row) in self.a.iter().enumerate() {
            for (j, &aij) in row.iter().enumerate().take(nd + 1) {
                if aij == 0.0 {
                    continue;
                }
                let (fi, fj) = (i as f64, j as f64);
                let (ii, jj) = (i as i64, j as i64);
                out.d += aij * pow(lam, ii) * pow(nu, jj);
                out.dl += aij * fi * pow(lam, ii - 1) * pow(nu, jj);
                out.dn += aij * fj * pow(lam, ii) * pow(nu, jj - 1);
                out.dll += aij * fi * (fi - 1.0) * pow(lam, ii - 2) * pow(nu, jj);
                out.dln += aij * fi * fj * pow(lam, ii - 1) * pow(nu, jj - 1);
                out.dnn += aij * fj * (fj - 1.0) * pow(lam, ii) * pow(nu, jj - 2);
                out.scale += aij.abs() * lam.norm().powi(i as i32) * nu.norm().powi(j as i32);
            }
        }
        out
    }
}

/// The dispersion relation of a symbol in a frame moving with speed c.
#[derive(Clone, Debug)]
pub struct ComovingDispersion {
    base: MatrixPolynomial,
    speed: f64,
    poly: Bivariate,
}

/// One sample of the weighted essential spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSample {
    pub k: f64,
    pub lambdas: Vec<C64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumCurve {
    pub weight_eta: f64,
    pub samples: Vec<SpectrumSample>,
    pub max_re: f64,
}

impl ComovingDispersion {
    pub fn new(base: MatrixPolynomial, speed: f64) -> Self {
        let poly = interpolate(&base, speed);
        ComovingDispersion { base, speed, poly }
    }

    pub fn base(&self) -> &MatrixPolynomial {
        &self.base
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn at_speed(&self, c: f64) -> Self {
        Self::new(self.base.clone(), c)
    }

    pub fn poly(&self) -> &Bivariate {
        &self.poly
    }

    /// Generic ν-degree 2mN.
    pub fn full_nu_degree(&self) -> usize {
        self.base.order * self.base.dim
    }

    /// Effective ν-degree (lower than 2mN when the leading coefficient is singular).
    pub fn nu_degree(&self) -> usize {
        self.poly.nu_degree()
    }

    /// Direct determinant of the assembled complex matrix.
    pub fn eval(&self, lam: C64, nu: C64) -> C64 {
        let mut m = self.base.comoving_matrix(nu, self.speed);
        for i in 0..self.base.dim {
            m[(i, i)] -= lam;
        }
        m.determinant()
    }

    pub fn partials(&self, lam: C64, nu: C64) -> Partials {
        self.poly.partials(lam, nu)
    }

    /// All ν-roots of d_c(λ, ·) with multiplicity, sorted by (Re, Im).
    pub fn nu_roots(&self, lam: C64) -> Result<Vec<C64>> {
        let coeffs = self.poly.nu_coeffs(lam);
        let deg = coeffs.len() - 1;
        let big = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if coeffs[deg].norm() <= DEGREE_TOL * big {
            let found = (0..=deg).rev().find(|&j| coeffs[j].norm() > DEGREE_TOL * big).unwrap_or(0);
            return Err(PolymatError::DegenerateLeadingCoefficient { lambda: lam, found, expected: deg });
        }
        Ok(poly_roots(&coeffs))
    }

    /// N eigenvalues λ of P(ik − η) + c(ik − η) + J for each k, continuity-matched.
    pub fn essential_spectrum(&self, eta: f64, k_grid: &[f64]) -> SpectrumCurve {
        let mut samples: Vec<SpectrumSample> = Vec::with_capacity(k_grid.len());
        let mut max_re = f64::NEG_INFINITY;
        for &k in k_grid {
            let m = self.base.comoving_matrix(C64::new(-eta, k), self.speed);
            let mut lams = eig_complex(m).unwrap_or_default();
            crate::linalg::sort_complex(&mut lams);
            if let Some(prev) = samples.last() {
                lams = match_nearest(&prev.lambdas, lams);
            }
            for l in &lams {
                max_re = max_re.max(l.re);
            }
            samples.push(SpectrumSample { k, lambdas: lams });
        }
        SpectrumCurve { weight_eta: eta, samples, max_re }
    }
}

/// Reorders `next` so that entry i is the nearest unused point to `prev[i]`.
fn match_nearest(prev: &[C64], next: Vec<C64>) -> Vec<C64> {
    let mut used = vec![false; next.len()];
    let mut out = Vec::with_capacity(next.len());
    for p in prev {
        let mut best = None;
        let mut bd = f64::INFINITY;
        for (i, q) in next.iter().enumerate() {
            if !used[i] && (q - p).norm() < bd {
                bd = (q - p).norm();
                best = Some(i);
            }
        }
        if let Some(i) = best {
            used[i] = true;
            out.push(next[i]);
        }
    }
    out
}

/// Recovers the coefficients of d_c on a torus of roots of unity.
fn interpolate(base: &MatrixPolynomial, c: f64) -> Bivariate {
    let n = base.dim;
    let nd = base.order * n;
    let (pl, pn) = (n + 1, nd + 1);
    let mut vals = vec![vec![C64::new(0.0, 0.0); pn]; pl];
    let root = |k: usize, m: usize| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64);
    for qi in 0..pn {
        let nu = root(qi, pn);
        let a = base.comoving_matrix(nu, c);
        for (p, vrow) in vals.iter_mut().enumerate() {
            let lam = root(p, pl);
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] -= lam;
            }
            vrow[qi] = m.determinant();
        }
    }
    let mut a = vec![vec![0.0; pn]; pl];
    for (i, arow) in a.iter_mut().enumerate() {
        for (j, aij) in arow.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for (p, vrow) in vals.iter().enumerate() {
                for (q, v) in vrow.iter().enumerate() {
                    s += v * root((i * p) % pl, pl).conj() * root((j * q) % pn, pn).conj();
                }
            }
            *aij = s.re / (pl * pn) as f64;
        }
    }
    let big = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    for v in a.iter_mut().flatten() {
        if v.abs() <= 1e-15 * big {
            *v = 0.0;
        }
    }
    let mut deg = nd;
    while deg > 0 && a.iter().all(|row| row[deg].abs() <= DEGREE_TOL * big) {
        deg -= 1;
    }
    for row in a.iter_mut() {
        row.truncate(deg + 1);
    }
    Bivariate { a }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fkpp() -> MatrixPolynomial {
        MatrixPolynomial::scalar(&[0.0, 0.0, 1.0], 1.0).unwrap()
    }

    #[test]
    fn fkpp_dispersion_vanishes_at_marginal_root() {
        let dr = ComovingDispersion::new(fkpp(), 2.0);
        assert!(dr.eval(C64::new(0.0, 0.0), C64::new(-1.0, 0.0)).norm() < 1e-14);
        let dr0 = ComovingDispersion::new(fkpp(), 0.0);
        let lam = C64::new(0.3, -0.7);
        assert!((dr0.eval(lam, C64::new(0.0, 0.0)) - (C64::new(1.0, 0.0) - lam)).norm() < 1e-14);
    }

    #[test]
    fn fkpp_nu_roots_at_c3() {
        let dr = ComovingDispersion::new(fkpp(), 3.0);
        let r = dr.nu_roots(C64::new(0.0, 0.0)).unwrap();
        let s5 = 5f64.sqrt();
        assert_eq!(r.len(), 2);
        assert!((r[0] - C64::new((-3.0 - s5) / 2.0, 0.0)).norm() < 1e-12);
        assert!((r[1] - C64::new((-3.0 + s5) / 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fkpp_double_root_appears_twice() {
        let dr = ComovingDispersion::new(fkpp(), 2.0);
        let r = dr.nu_roots(C64::new(0.0, 0.0)).unwrap();
        for z in r {
            assert!((z + 1.0).norm() < 1e-7);
        }
    }

    #[test]
    fn fkpp_weighted_spectra() {
        let dr = ComovingDispersion::new(fkpp(), 2.0);
        let ks: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.01).collect();
        assert!(dr.essential_spectrum(1.0, &ks).max_re.abs() < 1e-12);
        assert!((dr.essential_spectrum(0.5, &ks).max_re - 0.25).abs() < 1e-12);
        let s0 = ComovingDispersion::new(fkpp(), 2.0).essential_spectrum(0.0, &ks);
        for s in &s0.samples {
            let want = C64::new(1.0 - s.k * s.k, 2.0 * s.k);
            assert!((s.lambdas[0] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn degree_drops_for_singular_leading_coefficient() {
        let p2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let z = DMatrix::zeros(2, 2);
        let j = DMatrix::from_row_slice(2, 2, &[0.2, -1.0, 0.01, 0.0]);
        let base = MatrixPolynomial::new(vec![z.clone(), z, p2], j).unwrap();
        assert_eq!(ComovingDispersion::new(base.clone(), 1.0).nu_degree(), 3);
        assert_eq!(ComovingDispersion::new(base, 0.0).nu_degree(), 2);
    }

    #[test]
    fn blocks_detect_uncoupled_components() {
        let p2 = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.9]);
        let z = DMatrix::zeros(2, 2);
        let j = DMatrix::from_row_slice(2, 2, &[1.8, 0.0, 0.0, 0.2]);
        let base = MatrixPolynomial::new(vec![z.clone(), z, p2], j).unwrap();
        assert_eq!(base.blocks(), vec![vec![0], vec![1]]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MatrixPolynomial::scalar(&[1.0, 2.0], 0.0).is_err());
        let e = MatrixPolynomial::new(vec![DMatrix::zeros(2, 2); 3], DMatrix::zeros(1, 1));
        assert!(e.is_err());
    }
}
