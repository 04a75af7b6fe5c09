//! Dense and banded linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Eigenvalues of a complex square matrix via the complex Schur form.
pub fn eig_complex(m: DMatrix<C64>) -> Option<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    if n == 1 {
        return Some(vec![m[(0, 0)]]);
    }
    // max_niter = 0 would mean unbounded; the QR sweep can stall at a tolerance of one ulp.
    // A complex diagonal shift changes the QR path without changing the answer.
    let cap = 200 * n;
    let norm = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    for (k, tol) in [(0usize, 1.0), (1, 1.0), (2, 64.0), (3, 64.0)] {
        let shift = if k == 0 { C64::new(0.0, 0.0) } else { C64::from_polar(0.37 * norm, 0.9 * k as f64) };
        let shifted = &m + DMatrix::<C64>::identity(n, n) * shift;
        if let Some(schur) = nalgebra::Schur::try_new(shifted, tol * f64::EPSILON, cap) {
            let (_, t) = schur.unpack();
            return Some((0..n).map(|i| t[(i, i)] - shift).collect());
        }
    }
    None
}

/// Eigenvalues of a real square matrix (complex pairs included).
pub fn eig_real(m: DMatrix<f64>) -> Option<Vec<C64>> {
    if m.nrows() == 0 {
        return Some(Vec::new());
    }
    let cap = 200 * m.nrows();
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, cap)
        .or_else(|| nalgebra::Schur::try_new(m, 64.0 * f64::EPSILON, cap))?;
    Some(schur.complex_eigenvalues().iter().cloned().collect())
}

/// Horner evaluation of an ascending coefficient list and its derivative.
pub fn poly_eval(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of an ascending coefficient polynomial whose last coefficient is nonzero.
///
/// The variable is rescaled so that the monic coefficients are balanced before
/// the companion matrix is formed.
pub fn poly_roots(coeffs: &[C64]) -> Vec<C64> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut scale: f64 = 0.0;
    for (j, c) in coeffs.iter().enumerate().take(deg) {
        let r = (c / lead).norm();
        if r > 0.0 {
            scale = scale.max(r.powf(1.0 / (deg - j) as f64));
        }
    }
    if scale == 0.0 {
        return vec![C64::new(0.0, 0.0); deg];
    }
    // monic polynomial in mu = z / scale
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for j in 0..deg {
        let cj = coeffs[j] / lead / scale.powi((deg - j) as i32);
        comp[(0, deg - 1 - j)] = -cj;
    }
    for i in 1..deg {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    let monic: Vec<C64> = (0..=deg).map(|j| coeffs[j] / lead / scale.powi((deg - j) as i32)).collect();
    let mut roots: Vec<C64> = eig_complex(comp)
        .unwrap_or_else(|| aberth(&monic))
        .into_iter()
        .map(|mu| mu * scale)
        .collect();
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = poly_eval(coeffs, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = *r - p / dp;
            if poly_eval(coeffs, cand).0.norm() < p.norm() {
                *r = cand;
            } else {
                break;
            }
        }
    }
    sort_complex(&mut roots);
    roots
}

/// Aberth iteration for a monic polynomial with roots of order one in modulus.
fn aberth(monic: &[C64]) -> Vec<C64> {
    let deg = monic.len() - 1;
    let mut z: Vec<C64> = (0..deg)
        .map(|k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64))
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..deg {
            let (p, dp) = poly_eval(monic, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: C64 = (0..deg).filter(|&j| j != i).map(|j| (z[i] - z[j]).inv()).sum();
            let w = ratio / (C64::new(1.0, 0.0) - ratio * repulsion);
            z[i] -= w;
            moved = moved.max(w.norm());
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Deterministic ordering: by real part, then imaginary part.
pub fn sort_complex(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Finite-difference weights on the integer stencil −p..=p for the given
/// derivative order (Fornberg's recursion, unit spacing).
pub fn fd_weights(deriv: usize, half_width: usize) -> Vec<f64> {
    let nodes: Vec<f64> = (-(half_width as i64)..=half_width as i64)
        .map(|k| k as f64)
        .collect();
    let n = nodes.len();
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[deriv]).collect()
}

/// Half width of the fourth-order central stencil for a derivative order.
pub fn fd_half_width(deriv: usize) -> usize {
    if deriv == 0 {
        0
    } else {
        (deriv + 1) / 2 + 1
    }
}

/// Spectral differentiation matrix of order `deriv` on n equispaced points of [0, 2π).
pub fn fourier_diff_matrix(n: usize, deriv: usize) -> DMatrix<f64> {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let half = n / 2;
    DMatrix::from_fn(n, n, |p, q| {
        let dx = (p as f64 - q as f64) * h;
        let mut s = 0.0;
        for kappa in 1..half.max(1) {
            if n % 2 == 0 && kappa == half {
                break;
            }
            let kf = kappa as f64;
            // (i k)^j e^{i k x} + (−i k)^j e^{−i k x} = 2 Re[(i k)^j e^{i k x}]
            let ik = C64::new(0.0, kf).powu(deriv as u32);
            s += 2.0 * (ik * C64::from_polar(1.0, kf * dx)).re;
        }
        if n % 2 == 1 {
            let kf = half as f64;
            let ik = C64::new(0.0, kf).powu(deriv as u32);
            s += 2.0 * (ik * C64::from_polar(1.0, kf * dx)).re;
        } else if deriv % 2 == 0 {
            let kf = half as f64;
            let sign = if (deriv / 2) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * kf.powi(deriv as i32) * (kf * dx).cos();
        }
        if deriv == 0 {
            s += 1.0;
        }
        s / n as f64
    })
}

/// Row i of a centred FD stencil on x_i = i·h, 0 ≤ i < n, folded by the even
/// extension across x = 0 and the odd extension about u(L) across x = L = n·h.
/// Returns the (column, weight) pairs and the coefficient of u(L).
pub fn folded_stencil(i: usize, n: usize, w: &[f64]) -> (Vec<(usize, f64)>, f64) {
    let p = (w.len() / 2) as i64;
    let n = n as i64;
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(w.len());
    let mut boundary = 0.0;
    for (s, &ws) in (-p..=p).zip(w) {
        let l = i as i64 + s;
        if l < 0 {
            row.push(((-l) as usize, ws));
        } else if l < n {
            row.push((l as usize, ws));
        } else if l == n {
            boundary += ws;
        } else {
            // u(L + s) = 2u(L) − u(L − s)
            boundary += 2.0 * ws;
            row.push(((2 * n - l) as usize, -ws));
        }
    }
    (row, boundary)
}

/// Band matrix with partial-pivoting LU (row storage with room for fill-in).
#[derive(Clone, Debug)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Banded { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Whether (i, j) lies inside the structural band.
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// In-place LU factorization; `None` when a zero pivot is met.
    pub fn factor(mut self) -> Option<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let span = kl + self.ku;
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            piv[k] = p;
            let jmax = (k + span).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        Some(BandedLu { m: self, piv })
    }
}

#[derive(Clone, Debug)]
pub struct BandedLu {
    m: Banded,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn size(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let span = kl + self.m.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.m.data[self.m.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + span).min(n - 1) {
                s -= self.m.data[self.m.idx(k, j)] * b[j];
            }
            b[k] = s / self.m.data[self.m.idx(k, k)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves the bordered system [[A, B], [Cᵀ, D]] [x; y] = [f; g] given the
/// factored band block A, border columns B, border rows C and corner D.
pub fn bordered_solve(
    lu: &BandedLu,
    cols: &[Vec<f64>],
    rows: &[Vec<f64>],
    corner: &DMatrix<f64>,
    f: &[f64],
    g: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = cols.len();
    let z: Vec<Vec<f64>> = cols.iter().map(|b| lu.solve(b)).collect();
    let y0 = lu.solve(f);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let schur = DMatrix::from_fn(k, k, |i, j| corner[(i, j)] - dot(&rows[i], &z[j]));
    let rhs = DVector::from_fn(k, |i, _| g[i] - dot(&rows[i], &y0));
    let sol = schur.lu().solve(&rhs)?;
    let mut x = y0;
    for (j, zj) in z.iter().enumerate() {
        for (xi, zi) in x.iter_mut().zip(zj) {
            *xi -= zi * sol[j];
        }
    }
    Some((x, sol.iter().cloned().collect()))
}

/// Smallest singular value of a dense real matrix.
pub fn smallest_singular_value(m: DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_matches_known_fourth_order_stencils() {
        let w2 = fd_weights(2, 2);
        let want = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w2.iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
        let w4 = fd_weights(4, 3);
        let want4 = [-1.0 / 6.0, 2.0, -6.5, 28.0 / 3.0, -6.5, 2.0, -1.0 / 6.0];
        for (a, b) in w4.iter().zip(want4) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn poly_roots_recovers_quadratic() {
        // nu^2 + 3 nu + 1
        let r = poly_roots(&[C64::new(1.0, 0.0), C64::new(3.0, 0.0), C64::new(1.0, 0.0)]);
        let s5 = 5f64.sqrt();
        assert!((r[0].re - (-3.0 - s5) / 2.0).abs() < 1e-13);
        assert!((r[1].re - (-3.0 + s5) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        let n = 40;
        let mut b = Banded::zeros(n, 2, 3);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 3).min(n - 1) {
                let v = ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 0.5 } else { 0.0 };
                b.add(i, j, v);
            }
        }
        let dense = b.to_dense();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = b.clone().factor().unwrap().solve(&rhs);
        let xd = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-9 * (1.0 + xd[i].abs()));
        }
    }

    #[test]
    fn fourier_matrix_differentiates_trig_polynomials() {
        let n = 32;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let u: Vec<f64> = (0..n).map(|i| (3.0 * i as f64 * h).sin()).collect();
        for (deriv, expect) in [(1usize, 3.0), (2, -9.0)] {
            let d = fourier_diff_matrix(n, deriv);
            let du = &d * DVector::from_vec(u.clone());
            for i in 0..n {
                let x = 3.0 * i as f64 * h;
                let exact = if deriv == 1 { expect * x.cos() } else { expect * x.sin() };
                assert!((du[i] - exact).abs() < 1e-10);
            }
        }
    }
}
