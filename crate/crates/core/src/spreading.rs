//! Linear spreading speeds from marginally stable pinched double roots.

use crate::doubleroot::{
    check_pinching, effective_diffusivity, find_double_roots, newton_double_root, Classification, DoubleRoot,
    DoubleRootError, PinchOptions, Pinching, Tolerances,
};
use crate::linalg::{eig_complex, C64};
use crate::polymat::{ComovingDispersion, MatrixPolynomial};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpreadingError {
    #[error("no pinched double root at c = {speed} ({} double roots examined)", roots.len())]
    NonePinched { speed: f64, roots: Vec<DoubleRoot> },
    #[error("invalid bracket [{c_lo}, {c_hi}]: growth rates {g_lo:e}, {g_hi:e} do not change sign")]
    BracketInvalid { c_lo: f64, c_hi: f64, g_lo: f64, g_hi: f64 },
    #[error("tracked double root lost near c = {0}; retry with a finer scan")]
    TrackingLost(f64),
    #[error("the state is stable: maximal growth rate {0:e} is not positive")]
    StableState(f64),
    #[error("no solutions of the marginal system")]
    NoSolutions,
    #[error("operation needs a scalar symbol, got N = {0}")]
    NotScalar(usize),
    #[error(transparent)]
    DoubleRoot(#[from] DoubleRootError),
}

pub type Result<T> = std::result::Result<T, SpreadingError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpreadingOptions {
    pub tol: Tolerances,
    pub pinch: PinchOptions,
    pub tol_marginal: f64,
    pub scan_points: usize,
    pub c_bracket: Option<[f64; 2]>,
}

impl Default for SpreadingOptions {
    fn default() -> Self {
        SpreadingOptions {
            tol: Tolerances::default(),
            pinch: PinchOptions::default(),
            tol_marginal: 1e-8,
            scan_points: 24,
            c_bracket: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SpreadingResult {
    pub c_lin: f64,
    pub omega_lin: f64,
    pub nu_lin: C64,
    pub eta_lin: f64,
    pub k_lin: f64,
    /// Absent unless the source root is simple.
    pub d_eff: Option<C64>,
    pub source_root: DoubleRoot,
    /// Final bisection interval on c.
    pub bracket: [f64; 2],
    /// More than one sign change of the growth rate on the scan.
    pub multi_interval: bool,
    pub blocks: Vec<Vec<usize>>,
    /// The source root is a collision between roots of different uncoupled blocks.
    pub cross_block_root: bool,
    /// Speeds of the individual blocks when `cross_block_root` is set.
    pub block_speeds: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct WavenumberPredictions {
    pub k_lin: f64,
    pub k_node: f64,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct MarginalCandidate {
    pub c: f64,
    pub omega: f64,
    pub nu: C64,
}

fn same_up_to_conj(a: &DoubleRoot, b: &DoubleRoot, tol: f64) -> bool {
    let close = |x: C64, y: C64| (x - y).norm() <= tol * (1.0 + x.norm());
    (close(a.lambda, b.lambda) && close(a.nu, b.nu)) || (close(a.lambda, b.lambda.conj()) && close(a.nu, b.nu.conj()))
}

fn conj_root(r: &DoubleRoot) -> DoubleRoot {
    DoubleRoot { lambda: r.lambda.conj(), nu: r.nu.conj(), ..r.clone() }
}

/// Pinched double root of maximal Re λ; of a conjugate pair the member with Im λ ≥ 0.
pub fn rightmost_pinched(dr: &ComovingDispersion, tol: &Tolerances, pinch: &PinchOptions) -> Result<DoubleRoot> {
    let roots = find_double_roots(dr, tol)?;
    let mut checked: Vec<DoubleRoot> = Vec::new();
    for r in &roots {
        // a conjugate of an already examined root shares its verdict
        if let Some(prev) = checked.iter().find(|q| same_up_to_conj(q, r, tol.tol_dedup)) {
            if prev.pinched.is_pinched() {
                break;
            }
            continue;
        }
        let mut r = r.clone();
        r.pinched = check_pinching(dr, &r, pinch);
        if let Pinching::Undetermined(why) = &r.pinched {
            log::debug!("skipping double root λ = {} at c = {}: {why}", r.lambda, dr.speed());
        }
        let hit = r.pinched.is_pinched();
        checked.push(r.clone());
        if hit {
            return Ok(if r.lambda.im < 0.0 { conj_root(&r) } else { r });
        }
    }
    Err(SpreadingError::NonePinched { speed: dr.speed(), roots })
}

/// Re λ of the rightmost pinched root; −∞ when none is pinched.
fn growth(base: &MatrixPolynomial, c: f64, opts: &SpreadingOptions) -> Result<(f64, Option<DoubleRoot>)> {
    match rightmost_pinched(&ComovingDispersion::new(base.clone(), c), &opts.tol, &opts.pinch) {
        Ok(r) => Ok((r.lambda.re, Some(r))),
        Err(SpreadingError::NonePinched { .. }) => Ok((f64::NEG_INFINITY, None)),
        Err(e) => Err(e),
    }
}

/// max Re λ over the η-weighted essential spectrum.
pub fn weighted_max(dr: &ComovingDispersion, eta: f64, k_grid: &[f64]) -> f64 {
    dr.essential_spectrum(eta, k_grid).max_re
}

fn default_k_grid(base: &MatrixPolynomial) -> Vec<f64> {
    let kmax = base.well_posedness().k_threshold.clamp(4.0, 50.0);
    let n = 2001;
    (0..n).map(|i| -kmax + 2.0 * kmax * i as f64 / (n - 1) as f64).collect()
}

fn default_c_hi(base: &MatrixPolynomial) -> f64 {
    let m2 = base.order() as f64;
    let wmax = weighted_max(&ComovingDispersion::new(base.clone(), 0.0), 0.0, &default_k_grid(base));
    let lead = base.coeffs()[base.order()].norm().max(1e-12);
    4.0 * wmax.max(1.0).powf((m2 - 1.0) / m2) * lead.powf(1.0 / m2)
}

/// Solves Re λ_*(c) = 0 for the largest marginal speed in the bracket.
///
/// When the double roots form a continuum because the system splits into
/// identical or otherwise degenerate uncoupled blocks, each block is solved on
/// its own and the fastest one is reported.
pub fn linear_spreading_speed(base: &MatrixPolynomial, opts: &SpreadingOptions) -> Result<SpreadingResult> {
    match spreading_in_bracket(base, opts) {
        Err(SpreadingError::DoubleRoot(DoubleRootError::DegenerateFamily)) if base.blocks().len() > 1 => {
            let blocks = base.blocks();
            let mut per_block = Vec::with_capacity(blocks.len());
            for bl in &blocks {
                let sub = base.restrict(bl).map_err(DoubleRootError::from)?;
                per_block.push(linear_spreading_speed(&sub, opts)?);
            }
            let speeds: Vec<f64> = per_block.iter().map(|r| r.c_lin).collect();
            let best = (0..speeds.len()).max_by(|&i, &j| speeds[i].total_cmp(&speeds[j])).unwrap();
            let c_max = speeds[best];
            let tied = speeds.iter().filter(|&&c| (c - c_max).abs() <= 1e-8 * (1.0 + c_max.abs())).count();
            let mut out = per_block.swap_remove(best);
            out.blocks = blocks;
            out.cross_block_root = tied > 1;
            out.block_speeds = speeds;
            Ok(out)
        }
        r => r,
    }
}

fn spreading_in_bracket(base: &MatrixPolynomial, opts: &SpreadingOptions) -> Result<SpreadingResult> {
    let (mut c_lo, mut c_hi) = match opts.c_bracket {
        Some([a, b]) => (a, b),
        None => (0.0, default_c_hi(base)),
    };
    let (mut g_lo, _) = growth(base, c_lo, opts)?;
    let (mut g_hi, _) = growth(base, c_hi, opts)?;
    if opts.c_bracket.is_none() {
        let mut n = 0;
        while g_hi >= 0.0 && n < 20 {
            c_hi *= 2.0;
            g_hi = growth(base, c_hi, opts)?.0;
            n += 1;
        }
        // at c = 0 all double roots of a symmetric system may merge into a degenerate one
        for frac in [0.01, 0.05, 0.1, 0.25] {
            if g_lo > 0.0 {
                break;
            }
            c_lo = frac * c_hi;
            g_lo = growth(base, c_lo, opts)?.0;
        }
    }
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(SpreadingError::BracketInvalid { c_lo, c_hi, g_lo, g_hi });
    }

    // scan for sign changes
    let np = opts.scan_points.max(2);
    let cs: Vec<f64> = (0..=np).map(|i| c_lo + (c_hi - c_lo) * i as f64 / np as f64).collect();
    let gs: Vec<f64> = cs
        .par_iter()
        .map(|&c| growth(base, c, opts).map(|g| g.0))
        .collect::<Result<Vec<f64>>>()?;
    let mut changes = 0;
    let mut last = None;
    for i in 0..np {
        if (gs[i] > 0.0) != (gs[i + 1] > 0.0) {
            changes += 1;
            if gs[i] > 0.0 {
                last = Some(i);
            }
        }
    }
    let i = last.expect("bracket endpoints guarantee a + to - change");
    let (mut a, mut b) = (cs[i], cs[i + 1]);

    // coarse bisection with full evaluations
    let mut root_a = growth(base, a, opts)?.1;
    while b - a > 1e-3 * (1.0 + a.abs()) {
        let m = 0.5 * (a + b);
        let (g, r) = growth(base, m, opts)?;
        if g > 0.0 {
            a = m;
            root_a = r;
        } else {
            b = m;
        }
    }
    let Some(mut tracked) = root_a else { return Err(SpreadingError::TrackingLost(a)) };

    // fine stage: follow the root by Newton
    let dr_at = |c: f64| ComovingDispersion::new(base.clone(), c);
    let follow = |c: f64, from: &DoubleRoot| newton_double_root(&dr_at(c), from.lambda, from.nu, &opts.tol);
    let mut ga = tracked.lambda.re;
    let mut root_b = follow(b, &tracked).map_err(|_| SpreadingError::TrackingLost(b))?;
    let mut gb = root_b.lambda.re;
    if gb >= 0.0 {
        return Err(SpreadingError::TrackingLost(b));
    }
    let mut side = 0i8;
    let mut iters = 0;
    while b - a > 1e-8 * (1.0 + a.abs()) && iters < 200 {
        iters += 1;
        // Illinois regula falsi keeps the bracket and converges superlinearly
        let mut m = b - gb * (b - a) / (gb - ga);
        if !(m > a && m < b) {
            m = 0.5 * (a + b);
        }
        let r = follow(m, &tracked).map_err(|_| SpreadingError::TrackingLost(m))?;
        let g = r.lambda.re;
        if g.abs() < 0.1 * opts.tol_marginal {
            a = m;
            b = m;
            tracked = r.clone();
            root_b = r;
            break;
        }
        if g > 0.0 {
            a = m;
            ga = g;
            tracked = r;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = m;
            gb = g;
            root_b = r;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    let c_lin = if a == b { a } else { a - ga * (b - a) / (gb - ga) };
    let dr = dr_at(c_lin);
    let mut root = follow(c_lin, if ga.abs() < gb.abs() { &tracked } else { &root_b })
        .map_err(|_| SpreadingError::TrackingLost(c_lin))?;
    root.pinched = check_pinching(&dr, &root, &opts.pinch);
    if !root.pinched.is_pinched() {
        // a marginal root may sit on a branch point of the pinching test; one step right decides
        let probe = dr_at(a);
        if let Ok(ra) = newton_double_root(&probe, root.lambda, root.nu, &opts.tol) {
            root.pinched = check_pinching(&probe, &ra, &opts.pinch);
        }
    }
    if !root.pinched.is_pinched() {
        return Err(SpreadingError::TrackingLost(c_lin));
    }
    if root.lambda.im < 0.0 {
        root = conj_root(&root);
    }
    // real double roots of real systems are reported as exactly real
    if root.lambda.im.abs() <= opts.tol_marginal && root.nu.im.abs() <= 1e-9 * (1.0 + root.nu.norm()) {
        root.lambda.im = 0.0;
        root.nu.im = 0.0;
    }
    let d_eff = effective_diffusivity(&dr, &root).ok().map(|e| e.d_eff);
    let blocks = base.blocks();
    let cross = blocks.len() > 1 && {
        let hits = blocks
            .iter()
            .filter(|bl| {
                base.restrict(bl)
                    .map(|sub| {
                        let d = ComovingDispersion::new(sub, c_lin);
                        let p = d.partials(root.lambda, root.nu);
                        p.d.norm() <= 1e-6 * p.scale.max(1.0)
                    })
                    .unwrap_or(false)
            })
            .count();
        hits > 1
    };
    let block_speeds = if cross {
        blocks
            .iter()
            .filter_map(|bl| base.restrict(bl).ok())
            .filter_map(|sub| linear_spreading_speed(&sub, &SpreadingOptions { c_bracket: None, ..opts.clone() }).ok())
            .map(|s| s.c_lin)
            .collect()
    } else {
        Vec::new()
    };
    Ok(SpreadingResult {
        c_lin,
        omega_lin: root.lambda.im,
        nu_lin: root.nu,
        eta_lin: -root.nu.re,
        k_lin: root.nu.im,
        d_eff,
        source_root: root,
        bracket: [a, b],
        multi_interval: changes > 1,
        blocks,
        cross_block_root: cross,
        block_speeds,
    })
}

/// k_lin = Im ν_lin and the node-conservation wavenumber ω_lin / c_lin.
pub fn wavenumber_predictions(sr: &SpreadingResult) -> WavenumberPredictions {
    let k_node = if sr.omega_lin == 0.0 || sr.c_lin == 0.0 { 0.0 } else { sr.omega_lin / sr.c_lin };
    WavenumberPredictions { k_lin: sr.k_lin, k_node }
}

fn branch_eigs(base: &MatrixPolynomial, k: f64) -> Vec<C64> {
    eig_complex(base.comoving_matrix(C64::new(0.0, k), 0.0)).unwrap_or_default()
}

/// Frame at the group velocity of the most unstable Fourier mode, with the induced double root.
pub fn group_velocity_seed(base: &MatrixPolynomial, tol: &Tolerances) -> Result<(f64, DoubleRoot)> {
    let grid = default_k_grid(base);
    let best = |k: f64| branch_eigs(base, k).into_iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let (mut k0, mut g0) = (0.0f64, f64::NEG_INFINITY);
    for &k in &grid {
        let g = best(k);
        // ties resolve to the smallest |k|, then k ≥ 0
        if g > g0 + 1e-12 || ((g - g0).abs() <= 1e-12 && (k.abs() < k0.abs() || (k.abs() == k0.abs() && k > k0))) {
            g0 = g;
            k0 = k;
        }
    }
    if g0 <= 0.0 {
        return Err(SpreadingError::StableState(g0));
    }
    // golden-section polish on one grid cell either side
    let h = grid[1] - grid[0];
    let (mut lo, mut hi) = (k0 - h, k0 + h);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if best(x1) >= best(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let ks = 0.5 * (lo + hi);
    let lam = branch_eigs(base, ks).into_iter().max_by(|a, b| a.re.total_cmp(&b.re)).unwrap();
    let nearest = |k: f64| {
        branch_eigs(base, k)
            .into_iter()
            .min_by(|a, b| (a - lam).norm().total_cmp(&(b - lam).norm()))
            .unwrap()
    };
    let dk = 1e-5;
    let dlam = (nearest(ks + dk) - nearest(ks - dk)) / (2.0 * dk);
    let c0 = -dlam.im;
    let nu = C64::new(0.0, ks);
    let dr = ComovingDispersion::new(base.clone(), c0);
    let seed = lam + nu * c0;
    let root = newton_double_root(&dr, seed, nu, tol).unwrap_or_else(|_| DoubleRoot {
        lambda: seed,
        nu,
        res_d: dr.eval(seed, nu).norm(),
        res_dnu: dr.partials(seed, nu).dn.norm(),
        classification: Classification::Degenerate,
        pinched: Pinching::unchecked(),
        multiplicity: 1,
    });
    Ok((c0, root))
}

/// Candidates (c, ω, ν) with Re ν < 0, Im ν ≥ 0 of the scalar marginal double-root system.
pub fn scalar_marginal_system(base: &MatrixPolynomial) -> Result<Vec<MarginalCandidate>> {
    if base.dim() != 1 {
        return Err(SpreadingError::NotScalar(base.dim()));
    }
    let p: Vec<f64> = base.coeffs().iter().map(|m| m[(0, 0)]).collect();
    let jv = base.jacobian()[(0, 0)];
    let eval = |nu: C64| {
        let (mut f, mut f1, mut f2) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for &c in p.iter().rev() {
            f2 = f2 * nu + f1 * 2.0;
            f1 = f1 * nu + f;
            f = f * nu + c;
        }
        (f + jv, f1, f2)
    };
    // F1 = Im P′(ν), F2 = Re(P(ν)+J) − Re P′(ν)·Re ν
    let resid = |nu: C64| {
        let (f, f1, _) = eval(nu);
        [f1.im, f.re - f1.re * nu.re]
    };
    let mut out: Vec<MarginalCandidate> = Vec::new();
    for i in 0..20 {
        for j in 0..21 {
            let mut nu = C64::new(-5.0 + 0.25 * i as f64 + 0.1, 0.25 * j as f64);
            let mut ok = false;
            for _ in 0..60 {
                let (_, f1, f2) = eval(nu);
                let r = resid(nu);
                if r[0].abs() + r[1].abs() < 1e-14 * (1.0 + f1.norm()) {
                    ok = true;
                    break;
                }
                let a = [[f2.im, f2.re], [-f2.re * nu.re, -f1.im + f2.im * nu.re]];
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                if det.abs() < 1e-300 {
                    break;
                }
                let dx = (-r[0] * a[1][1] + r[1] * a[0][1]) / det;
                let dy = (-a[0][0] * r[1] + a[1][0] * r[0]) / det;
                nu += C64::new(dx, dy);
                if !nu.norm().is_finite() || nu.norm() > 1e3 {
                    break;
                }
            }
            let r = resid(nu);
            if !ok && r[0].abs() + r[1].abs() > 1e-10 {
                continue;
            }
            if nu.re >= -1e-12 {
                continue;
            }
            let nu = if nu.im < 0.0 { nu.conj() } else { nu };
            let nu = if nu.im.abs() < 1e-12 { C64::new(nu.re, 0.0) } else { nu };
            let (f, f1, _) = eval(nu);
            let c = -f1.re;
            let omega = f.im + c * nu.im;
            if out.iter().all(|q| (q.nu - nu).norm() > 1e-7) {
                out.push(MarginalCandidate { c, omega, nu });
            }
        }
    }
    if out.is_empty() {
        return Err(SpreadingError::NoSolutions);
    }
    out.sort_by(|a, b| b.c.total_cmp(&a.c));
    Ok(out)
}
