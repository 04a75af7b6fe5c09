//! Registry of example systems u_t = P(∂x)u + Ju + Q(∂x) n(u).
//!
//! Every model is stored with the invaded state shifted to u = 0. The
//! nonlinear remainder n (n(0) = 0, n′(0) = 0) is a sum of monomials so that
//! f and f′ are exact for registry and user-defined models alike.

use crate::polymat::MatrixPolynomial;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("model '{model}' has no parameter '{param}'")]
    UnknownParameter { model: String, param: String },
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("no reference formula applies: {0}")]
    NotApplicable(String),
    #[error("invalid user model: {0}")]
    InvalidUserModel(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// coeff · Π u_j^{powers[j]} contributing to component `component`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub component: usize,
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Operator applied to the nonlinear remainder.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Outer {
    Pointwise,
    /// −∂², for conserved (divergence-form) dynamics.
    NegLaplacian,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub symbol: MatrixPolynomial,
    pub realified: bool,
    pub outer: Outer,
    pub nonlinear: Vec<Monomial>,
    /// Stable homogeneous state left behind by the front, when there is one.
    pub wake: Option<Vec<f64>>,
    /// Components without diffusion make the leading coefficient singular.
    pub well_posedness_exempt: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Reference {
    pub quantity: String,
    pub value: f64,
    pub formula: String,
}

fn reference(q: &str, value: f64, formula: &str) -> Reference {
    Reference { quantity: q.into(), value, formula: formula.into() }
}

pub struct ParamInfo {
    pub name: &'static str,
    pub default: f64,
    pub doc: &'static str,
}

pub struct ModelInfo {
    pub name: &'static str,
    pub doc: &'static str,
    pub params: &'static [ParamInfo],
}

macro_rules! p {
    ($n:expr, $d:expr, $doc:expr) => {
        ParamInfo { name: $n, default: $d, doc: $doc }
    };
}

pub const REGISTRY: &[ModelInfo] = &[
    ModelInfo { name: "fkpp", doc: "u_t = u_xx + u(1-u)", params: &[] },
    ModelInfo { name: "nagumo", doc: "u_t = u_xx + u(1-u)(u+a)", params: &[p!("a", 0.2, "kinetic parameter, a > 0")] },
    ModelInfo { name: "bistable", doc: "u_t = u_xx + u(1-u)(u-a)", params: &[p!("a", 0.3, "threshold, 0 < a < 1")] },
    ModelInfo {
        name: "sh",
        doc: "u_t = -(d_xx+1)^2 u + eps^2 u + gamma u^2 - u^3",
        params: &[p!("eps", 0.4, "distance to onset"), p!("gamma", 0.0, "quadratic coefficient")],
    },
    ModelInfo {
        name: "ch",
        doc: "u_t = -(u_xx + u + gamma u^2 - u^3)_xx about u = ubar",
        params: &[p!("ubar", 0.2, "background state, |ubar| small"), p!("gamma", 0.0, "quadratic coefficient")],
    },
    ModelInfo {
        name: "cgl",
        doc: "A_t = (1+i alpha)A_xx + (1+i omega)A - (1+i beta)A|A|^2, realified",
        params: &[p!("alpha", 1.0, "linear dispersion"), p!("beta", 0.5, "nonlinear dispersion"), p!("omega", 0.0, "linear frequency")],
    },
    ModelInfo {
        name: "forced_cgl",
        doc: "A_t = (1+i alpha)A_xx + (1+i omega)A - (1+i beta)A|A|^2 + gamma conj(A), with (alpha,omega,gamma) = eps (alpha1,omega1,gamma1)",
        params: &[
            p!("alpha1", 1.0, "scaled linear dispersion"),
            p!("omega1", 0.0, "scaled detuning"),
            p!("gamma1", 2.0, "scaled forcing"),
            p!("beta", 0.0, "nonlinear dispersion"),
            p!("eps", 0.01, "common scale"),
        ],
    },
    ModelInfo {
        name: "fhn",
        doc: "u_t = u_xx + u(1-u)(u-a) - v, v_t = eps(u - gamma v)",
        params: &[p!("a", -0.2, "threshold, a < 0 for instability"), p!("eps", 0.01, "time-scale ratio"), p!("gamma", 0.0, "recovery")],
    },
    ModelInfo {
        name: "coupled_mode",
        doc: "u_t = (1+delta)u_xx + (1+gamma)u - u(u^2+v^2) + eps1 v + iota(u^2-v^2), v_t = (1-delta)v_xx + (1-gamma)v - v(u^2+v^2) + eps2 u + iota uv",
        params: &[
            p!("gamma", 0.8, "growth splitting"),
            p!("delta", -0.9, "diffusion splitting, |delta| < 1"),
            p!("eps1", 0.0, "linear coupling v -> u"),
            p!("eps2", 0.0, "linear coupling u -> v"),
            p!("iota", 0.0, "quadratic coupling"),
        ],
    },
    ModelInfo {
        name: "kpp_pitchfork",
        doc: "u_t = u_xx - u(u+1)(u-1)((u-1)^2 - mu)",
        params: &[p!("mu", 0.0, "bifurcation parameter, mu < 1")],
    },
    ModelInfo {
        name: "fkpp_diff",
        doc: "u_t = u_xx + u(1-u) + alpha v, v_t = d v_xx",
        params: &[p!("alpha", 0.0, "coupling"), p!("d", 3.0, "diffusivity of v")],
    },
    ModelInfo {
        name: "lotka_volterra",
        doc: "u_t = u_xx + u(1-u-av), v_t = d v_xx + r v(1-bu-v), shifted so (1,0) is the origin",
        params: &[
            p!("a", 0.5, "competition on u"),
            p!("b", 0.5, "competition on v, b < 1 for instability of (1,0)"),
            p!("r", 1.0, "growth rate of v"),
            p!("d", 1.0, "diffusivity of v"),
        ],
    },
    ModelInfo { name: "cubic_quintic", doc: "u_t = u_xx + u + alpha u^3 - u^5", params: &[p!("alpha", 1.0, "cubic coefficient")] },
    ModelInfo {
        name: "fourth_order",
        doc: "u_t = -u_xxxx + a u_xx + b u - u^3",
        params: &[p!("a", -2.0, "second-order coefficient"), p!("b", -0.84, "linear growth")],
    },
];

fn mono(component: usize, coeff: f64, powers: &[u32]) -> Monomial {
    Monomial { component, coeff, powers: powers.to_vec() }
}

fn mat(rows: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, rows, data)
}

fn scalar_symbol(coeffs: &[f64], jac: f64) -> MatrixPolynomial {
    MatrixPolynomial::scalar(coeffs, jac).expect("registry symbol has nonzero leading coefficient")
}

fn system_symbol(coeffs: Vec<DMatrix<f64>>, jac: DMatrix<f64>) -> MatrixPolynomial {
    MatrixPolynomial::new(coeffs, jac).expect("registry symbol is well formed")
}

/// Instantiates a registry model with parameter overrides.
pub fn get_model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let info = REGISTRY.iter().find(|m| m.name == name).ok_or_else(|| ModelError::UnknownModel(name.into()))?;
    let mut params: BTreeMap<String, f64> = info.params.iter().map(|p| (p.name.to_string(), p.default)).collect();
    for (k, v) in overrides {
        if !params.contains_key(k) {
            return Err(ModelError::UnknownParameter { model: name.into(), param: k.clone() });
        }
        if !v.is_finite() {
            return Err(ModelError::ParameterOutOfRange(format!("{k} = {v}")));
        }
        params.insert(k.clone(), *v);
    }
    let g = |k: &str| params[k];
    let z2 = DMatrix::<f64>::zeros(2, 2);
    let spec = |symbol, nonlinear, wake, realified| ModelSpec {
        name: name.into(),
        params: params.clone(),
        symbol,
        realified,
        outer: Outer::Pointwise,
        nonlinear,
        wake,
        well_posedness_exempt: false,
    };
    let model = match name {
        "fkpp" => spec(scalar_symbol(&[0.0, 0.0, 1.0], 1.0), vec![mono(0, -1.0, &[2])], Some(vec![1.0]), false),
        "nagumo" => {
            let a = g("a");
            spec(
                scalar_symbol(&[0.0, 0.0, 1.0], a),
                vec![mono(0, 1.0 - a, &[2]), mono(0, -1.0, &[3])],
                Some(vec![1.0]),
                false,
            )
        }
        "bistable" => {
            let a = g("a");
            spec(
                scalar_symbol(&[0.0, 0.0, 1.0], -a),
                vec![mono(0, 1.0 + a, &[2]), mono(0, -1.0, &[3])],
                Some(vec![1.0]),
                false,
            )
        }
        "sh" => {
            let (e, gm) = (g("eps"), g("gamma"));
            spec(
                scalar_symbol(&[0.0, 0.0, -2.0, 0.0, -1.0], e * e - 1.0),
                vec![mono(0, gm, &[2]), mono(0, -1.0, &[3])],
                None,
                false,
            )
        }
        "ch" => {
            let (ub, gm) = (g("ubar"), g("gamma"));
            let s = 1.0 + 2.0 * gm * ub - 3.0 * ub * ub;
            if s <= 0.0 {
                return Err(ModelError::ParameterOutOfRange(format!(
                    "ch: 1 + 2 gamma ubar - 3 ubar^2 = {s} must be positive for instability"
                )));
            }
            let mut m = spec(
                scalar_symbol(&[0.0, 0.0, -s, 0.0, -1.0], 0.0),
                vec![mono(0, gm - 3.0 * ub, &[2]), mono(0, -1.0, &[3])],
                None,
                false,
            );
            m.outer = Outer::NegLaplacian;
            m
        }
        "cgl" | "forced_cgl" => {
            let (alpha, omega, gamma, beta) = if name == "cgl" {
                (g("alpha"), g("omega"), 0.0, g("beta"))
            } else {
                let e = g("eps");
                (e * g("alpha1"), e * g("omega1"), e * g("gamma1"), g("beta"))
            };
            let p2 = mat(2, &[1.0, -alpha, alpha, 1.0]);
            let jac = mat(2, &[1.0 + gamma, -omega, omega, 1.0 - gamma]);
            // −(1+iβ)A|A|² with A = u + iv
            let nl = vec![
                mono(0, -1.0, &[3, 0]),
                mono(0, -1.0, &[1, 2]),
                mono(0, beta, &[2, 1]),
                mono(0, beta, &[0, 3]),
                mono(1, -1.0, &[0, 3]),
                mono(1, -1.0, &[2, 1]),
                mono(1, -beta, &[3, 0]),
                mono(1, -beta, &[1, 2]),
            ];
            spec(system_symbol(vec![z2.clone(), z2.clone(), p2], jac), nl, None, true)
        }
        "fhn" => {
            let (a, e, gm) = (g("a"), g("eps"), g("gamma"));
            if e <= 0.0 {
                return Err(ModelError::ParameterOutOfRange(format!("fhn: eps = {e} must be positive")));
            }
            let mut m = spec(
                system_symbol(
                    vec![z2.clone(), z2.clone(), mat(2, &[1.0, 0.0, 0.0, 0.0])],
                    mat(2, &[-a, -1.0, e, -e * gm]),
                ),
                vec![mono(0, 1.0 + a, &[2, 0]), mono(0, -1.0, &[3, 0])],
                None,
                false,
            );
            m.well_posedness_exempt = true;
            m
        }
        "coupled_mode" => {
            let (gm, dl, e1, e2, io) = (g("gamma"), g("delta"), g("eps1"), g("eps2"), g("iota"));
            if dl.abs() >= 1.0 {
                return Err(ModelError::ParameterOutOfRange(format!("coupled_mode: |delta| = {} must be < 1", dl.abs())));
            }
            let nl = vec![
                mono(0, -1.0, &[3, 0]),
                mono(0, -1.0, &[1, 2]),
                mono(0, io, &[2, 0]),
                mono(0, -io, &[0, 2]),
                mono(1, -1.0, &[2, 1]),
                mono(1, -1.0, &[0, 3]),
                mono(1, io, &[1, 1]),
            ];
            let wake = (e1 == 0.0 && e2 == 0.0 && io == 0.0 && gm > -1.0).then(|| vec![(1.0 + gm).sqrt(), 0.0]);
            spec(
                system_symbol(
                    vec![z2.clone(), z2.clone(), mat(2, &[1.0 + dl, 0.0, 0.0, 1.0 - dl])],
                    mat(2, &[1.0 + gm, e1, e2, 1.0 - gm]),
                ),
                nl,
                wake,
                false,
            )
        }
        "kpp_pitchfork" => {
            let mu = g("mu");
            if mu >= 1.0 {
                return Err(ModelError::ParameterOutOfRange(format!("kpp_pitchfork: mu = {mu} must be < 1")));
            }
            let wake = if mu > 0.0 { 1.0 - mu.sqrt() } else { 1.0 };
            spec(
                scalar_symbol(&[0.0, 0.0, 1.0], 1.0 - mu),
                vec![mono(0, -2.0, &[2]), mono(0, mu, &[3]), mono(0, 2.0, &[4]), mono(0, -1.0, &[5])],
                Some(vec![wake]),
                false,
            )
        }
        "fkpp_diff" => {
            let (al, d) = (g("alpha"), g("d"));
            if d <= 0.0 {
                return Err(ModelError::ParameterOutOfRange(format!("fkpp_diff: d = {d} must be positive")));
            }
            spec(
                system_symbol(vec![z2.clone(), z2.clone(), mat(2, &[1.0, 0.0, 0.0, d])], mat(2, &[1.0, al, 0.0, 0.0])),
                vec![mono(0, -1.0, &[2, 0])],
                (al == 0.0).then(|| vec![1.0, 0.0]),
                false,
            )
        }
        "lotka_volterra" => {
            let (a, b, r, d) = (g("a"), g("b"), g("r"), g("d"));
            if d <= 0.0 || r <= 0.0 {
                return Err(ModelError::ParameterOutOfRange("lotka_volterra: r and d must be positive".into()));
            }
            // u = 1 + p, v = q
            let nl = vec![
                mono(0, -1.0, &[2, 0]),
                mono(0, -a, &[1, 1]),
                mono(1, -r * b, &[1, 1]),
                mono(1, -r, &[0, 2]),
            ];
            let wake = if a < 1.0 && b < 1.0 {
                let den = 1.0 - a * b;
                Some(vec![(1.0 - a) / den - 1.0, (1.0 - b) / den])
            } else if b < 1.0 {
                Some(vec![-1.0, 1.0])
            } else {
                None
            };
            spec(
                system_symbol(vec![z2.clone(), z2.clone(), mat(2, &[1.0, 0.0, 0.0, d])], mat(2, &[-1.0, -a, 0.0, r * (1.0 - b)])),
                nl,
                wake,
                false,
            )
        }
        "cubic_quintic" => {
            let al = g("alpha");
            let wake = ((al + (al * al + 4.0).sqrt()) / 2.0).sqrt();
            spec(
                scalar_symbol(&[0.0, 0.0, 1.0], 1.0),
                vec![mono(0, al, &[3]), mono(0, -1.0, &[5])],
                Some(vec![wake]),
                false,
            )
        }
        "fourth_order" => {
            let (a, b) = (g("a"), g("b"));
            let wake = (a >= 0.0 && b > 0.0).then(|| vec![b.sqrt()]);
            spec(scalar_symbol(&[0.0, 0.0, a, 0.0, -1.0], b), vec![mono(0, -1.0, &[3])], wake, false)
        }
        _ => unreachable!("registry and constructor disagree on '{name}'"),
    };
    Ok(model)
}

/// Model assembled from explicit coefficient matrices.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UserModel {
    pub name: String,
    pub dim: usize,
    /// Row-major N×N matrices P_0..P_2m.
    pub coeffs: Vec<Vec<f64>>,
    /// Row-major f′(0).
    pub jacobian: Vec<f64>,
    #[serde(default)]
    pub nonlinear: Vec<Monomial>,
    #[serde(default)]
    pub wake: Option<Vec<f64>>,
    #[serde(default)]
    pub divergence_form: bool,
}

impl ModelSpec {
    pub fn from_user(u: &UserModel) -> Result<ModelSpec> {
        let n = u.dim;
        let bad = |s: String| ModelError::InvalidUserModel(s);
        if n == 0 || u.jacobian.len() != n * n || u.coeffs.iter().any(|c| c.len() != n * n) {
            return Err(bad(format!("every matrix must have {} entries", n * n)));
        }
        for m in &u.nonlinear {
            if m.component >= n || m.powers.len() != n || m.powers.iter().sum::<u32>() < 2 {
                return Err(bad("monomials need a valid component, N powers and total degree >= 2".into()));
            }
        }
        if u.wake.as_ref().is_some_and(|w| w.len() != n) {
            return Err(bad("wake state must have N entries".into()));
        }
        let coeffs = u.coeffs.iter().map(|c| DMatrix::from_row_slice(n, n, c)).collect();
        let symbol = MatrixPolynomial::new(coeffs, DMatrix::from_row_slice(n, n, &u.jacobian))
            .map_err(|e| bad(e.to_string()))?;
        Ok(ModelSpec {
            name: u.name.clone(),
            params: BTreeMap::new(),
            symbol,
            realified: false,
            outer: if u.divergence_form { Outer::NegLaplacian } else { Outer::Pointwise },
            nonlinear: u.nonlinear.clone(),
            wake: u.wake.clone(),
            well_posedness_exempt: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbol.dim()
    }

    pub fn param(&self, k: &str) -> Option<f64> {
        self.params.get(k).copied()
    }

    /// Nonlinear remainder n(u).
    pub fn nonlinear_into(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for m in &self.nonlinear {
            let mut v = m.coeff;
            for (j, &p) in m.powers.iter().enumerate() {
                if p > 0 {
                    v *= u[j].powi(p as i32);
                }
            }
            out[m.component] += v;
        }
    }

    /// n′(u) as a dense N×N matrix (row = component).
    pub fn nonlinear_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut jm = DMatrix::zeros(n, n);
        for m in &self.nonlinear {
            for k in 0..n {
                let pk = m.powers[k];
                if pk == 0 {
                    continue;
                }
                let mut v = m.coeff * pk as f64;
                for (j, &p) in m.powers.iter().enumerate() {
                    let e = if j == k { p - 1 } else { p };
                    if e > 0 {
                        v *= u[j].powi(e as i32);
                    }
                }
                jm[(m.component, k)] += v;
            }
        }
        jm
    }

    /// Full kinetics J u + n(u); meaningful as f only for pointwise models.
    pub fn reaction(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.nonlinear_into(u, &mut out);
        let j = self.symbol.jacobian();
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                out[r] += j[(r, c)] * u[c];
            }
        }
        out
    }

    pub fn reaction_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        self.nonlinear_jacobian(u) + self.symbol.jacobian()
    }
}

/// Closed-form reference values applicable at the model's parameters.
pub fn reference_values(spec: &ModelSpec) -> Result<Vec<Reference>> {
    let g = |k: &str| spec.params.get(k).copied().unwrap_or(f64::NAN);
    let mut out = Vec::new();
    match spec.name.as_str() {
        "fkpp" => {
            out.push(reference("c_lin", 2.0, "2"));
            out.push(reference("omega_lin", 0.0, "0"));
            out.push(reference("nu_lin_re", -1.0, "-1"));
            out.push(reference("d_eff_re", 1.0, "1"));
            out.push(reference("log_shift", 1.5, "3/(2 eta_lin)"));
        }
        "nagumo" => {
            let a = g("a");
            if a > 0.0 {
                out.push(reference("c_lin", 2.0 * a.sqrt(), "2 sqrt(a)"));
                out.push(reference("nu_lin_re", -a.sqrt(), "-sqrt(a)"));
            }
            if a < 0.5 {
                out.push(reference("c_push", (1.0 + 2.0 * a) / SQRT_2, "(1+2a)/sqrt(2)"));
                out.push(reference("nu_push_tail", -1.0 / SQRT_2, "-1/sqrt(2)"));
            }
            out.push(reference("a_transition", 0.5, "2 sqrt(a) = (1+2a)/sqrt(2)"));
        }
        "bistable" => {
            let a = g("a");
            if a > 0.0 && a < 1.0 {
                out.push(reference("c_front", (1.0 - 2.0 * a) / SQRT_2, "(1-2a)/sqrt(2)"));
            }
        }
        "sh" => {
            let e = g("eps");
            out.extend(fourth_order_refs(-2.0, e * e - 1.0));
            let (e3, e5) = (e.powi(3), e.powi(5));
            out.push(reference("c_lin_series", 4.0 * e + e3 - 9.0 / 8.0 * e5, "4e + e^3 - 9/8 e^5"));
            out.push(reference("omega_lin_series", 4.0 * e + 1.5 * e3 - 45.0 / 32.0 * e5, "4e + 3/2 e^3 - 45/32 e^5"));
            out.push(reference("k_series", 1.0 + e * e / 8.0 - 13.0 / 128.0 * e.powi(4), "1 + e^2/8 - 13/128 e^4"));
        }
        "ch" => {
            let (ub, gm) = (g("ubar"), g("gamma"));
            out.extend(fourth_order_refs(-(1.0 + 2.0 * gm * ub - 3.0 * ub * ub), 0.0));
        }
        "fourth_order" => out.extend(fourth_order_refs(g("a"), g("b"))),
        "cgl" => {
            let (al, be, om) = (g("alpha"), g("beta"), g("omega"));
            let s = (1.0 + al * al).sqrt();
            let w = al + om;
            let sign = if w < 0.0 { -1.0 } else { 1.0 };
            out.push(reference("c_lin", 2.0 * s, "2 sqrt(1+alpha^2)"));
            out.push(reference("omega_lin", w.abs(), "|alpha + omega|"));
            out.push(reference("nu_lin_re", -1.0 / s, "Re of -(1 - i alpha)/sqrt(1+alpha^2)"));
            out.push(reference("nu_lin_im", sign * al / s, "Im of -(1 - i alpha)/sqrt(1+alpha^2)"));
            out.push(reference("d_eff_re", 1.0, "Re(1 + i alpha)"));
            out.push(reference("d_eff_im", sign * al, "Im(1 + i alpha)"));
            if (al - be).abs() > 1e-12 {
                let ks = (s - (1.0 + be * be).sqrt()) / (al - be);
                out.push(reference("k_s_minus", ks, "(sqrt(1+alpha^2) - sqrt(1+beta^2))/(alpha-beta)"));
            }
            out.push(reference("k_node", w.abs() / (2.0 * s), "omega_lin / c_lin"));
        }
        "forced_cgl" => {
            let (a1, w1, g1, e) = (g("alpha1"), g("omega1"), g("gamma1"), g("eps"));
            let d = (a1 + w1).powi(2) - g1 * g1;
            out.push(reference("D", d, "(alpha1+omega1)^2 - gamma1^2"));
            if d > 0.0 {
                out.push(reference("c1", 0.0, "0"));
                out.push(reference("Omega1", d.sqrt(), "sqrt(D) (from Omega1^2 = D + c1^2)"));
                out.push(reference("nu1_im", a1 * (a1 + w1) / d.sqrt(), "alpha1(alpha1+omega1)/sqrt(D)"));
            } else if d < 0.0 {
                out.push(reference("c1", (-d).sqrt(), "sqrt(-D)"));
                out.push(reference("Omega1", 0.0, "0"));
                out.push(reference("nu1_re", (a1 * a1 + g1 * g1 - w1 * w1) / (2.0 * (-d).sqrt()), "(alpha1^2+gamma1^2-omega1^2)/(2 sqrt(-D))"));
            }
            if let Some(c1) = out.iter().find(|r| r.quantity == "c1").map(|r| r.value) {
                out.push(reference("c_lin_leading", 2.0 + e * c1, "2 + eps c1"));
            }
            if let Some(w) = out.iter().find(|r| r.quantity == "Omega1").map(|r| r.value) {
                out.push(reference("omega_lin_leading", e * w, "eps Omega1"));
            }
        }
        "fhn" => {
            let (a, e, gm) = (g("a"), g("eps"), g("gamma"));
            if gm == 0.0 && a < 0.0 && a * a > 3.0 * e {
                let r = (a * a - 3.0 * e).sqrt();
                let q = -a + 2.0 * r;
                out.push(reference("c_lin", 3f64.sqrt() * (-a + r) / q.sqrt(), "sqrt(3)(-a+sqrt(a^2-3eps))/sqrt(-a+2sqrt(a^2-3eps))"));
                out.push(reference("nu_lin_re", -q.sqrt() / 3f64.sqrt(), "-sqrt(-a+2sqrt(a^2-3eps))/sqrt(3)"));
                out.push(reference("omega_lin", 0.0, "0"));
            }
        }
        "coupled_mode" => {
            let (gm, dl) = (g("gamma"), g("delta"));
            let cu = 2.0 * ((1.0 + dl) * (1.0 + gm)).sqrt();
            let cv = 2.0 * ((1.0 - dl) * (1.0 - gm)).sqrt();
            if g("eps1") == 0.0 && g("eps2") == 0.0 {
                if cu.is_finite() {
                    out.push(reference("c_u", cu, "2 sqrt((1+delta)(1+gamma))"));
                }
                if cv.is_finite() {
                    out.push(reference("c_v", cv, "2 sqrt((1-delta)(1-gamma))"));
                }
                let cl = cu.max(cv);
                if cl.is_finite() {
                    out.push(reference("c_lin", cl, "max(c_u, c_v)"));
                }
            }
            if gm * dl < 0.0 {
                out.push(reference("c_ddr", (gm - dl) / (-gm * dl).sqrt(), "(gamma-delta)/sqrt(-gamma delta)"));
                out.push(reference("nu_ddr", -(-gm / dl).sqrt(), "-sqrt(-gamma/delta)"));
                let prod = (gm + dl + 2.0 * gm * dl) * (gm + dl - 2.0 * gm * dl);
                out.push(reference("q_ddr_product", prod, "(gamma+delta+2 gamma delta)(gamma+delta-2 gamma delta)"));
                out.push(reference("in_q_ddr", if prod < 0.0 { 1.0 } else { 0.0 }, "product < 0"));
            }
        }
        "kpp_pitchfork" => {
            out.push(reference("c_lin", 2.0 * (1.0 - g("mu")).sqrt(), "2 sqrt(1-mu)"));
        }
        "fkpp_diff" => {
            let d = g("d");
            out.push(reference("c_lin_u", 2.0, "2"));
            if d > 1.0 {
                out.push(reference("c_cross", d / (d - 1.0).sqrt(), "d/sqrt(d-1)"));
            }
        }
        "lotka_volterra" => {
            let (b, r, d) = (g("b"), g("r"), g("d"));
            if b < 1.0 {
                out.push(reference("c_lin", 2.0 * (d * r * (1.0 - b)).sqrt(), "2 sqrt(d r (1-b))"));
            }
        }
        "cubic_quintic" => {
            out.push(reference("c_lin", 2.0, "2"));
            out.push(reference("alpha_transition", 2.0 / 3f64.sqrt(), "2/sqrt(3)"));
        }
        _ => {}
    }
    if out.is_empty() {
        return Err(ModelError::NotApplicable(format!("{} at {:?}", spec.name, spec.params)));
    }
    Ok(out)
}

/// u_t = −u_xxxx + a u_xx + b u: speeds of the real (I/II) and complex (IV) double roots.
fn fourth_order_refs(a: f64, b: f64) -> Vec<Reference> {
    let k = 2.0 / (3.0 * 6f64.sqrt());
    let mut out = Vec::new();
    if a > 0.0 && b > 0.0 && b < a * a / 12.0 {
        let s = (a * a - 12.0 * b).sqrt();
        out.push(reference("c_lin", k * (2.0 * a + s) * (a - s).sqrt(), "region I"));
        out.push(reference("omega_lin", 0.0, "0"));
        out.push(reference("nu_lin_re", -(a - s).sqrt() / 6f64.sqrt(), "region I"));
        out.push(reference("nu_lin_im", 0.0, "0"));
        out.push(reference("d_eff_re", s, "sqrt(a^2-12b)"));
        out.push(reference("c_II", k * (2.0 * a - s) * (a + s).sqrt(), "region II (not pinched)"));
        out.push(reference("nu_II_re", -(a + s).sqrt() / 6f64.sqrt(), "region II"));
    } else if (a >= 0.0 && b > a * a / 12.0) || (a < 0.0 && b > -a * a / 4.0) {
        let r = (7.0 * a * a + 24.0 * b).sqrt();
        let c = k * (-2.0 * a + r) * (a + r).sqrt();
        let w = (-3.0 * a + r).powf(1.5) * (a + r).sqrt() / (8.0 * 3f64.sqrt());
        out.push(reference("c_lin", c, "region IV"));
        out.push(reference("omega_lin", w, "region IV"));
        out.push(reference("nu_lin_re", -(a + r).sqrt() / (2.0 * 6f64.sqrt()), "region IV"));
        out.push(reference("nu_lin_im", (-3.0 * a + r).sqrt() / (2.0 * SQRT_2), "region IV"));
        out.push(reference("k_node", w / c, "omega_lin / c_lin"));
    }
    out
}

/// Looks up a reference quantity by name.
pub fn reference_value(refs: &[Reference], q: &str) -> Option<f64> {
    refs.iter().find(|r| r.quantity == q).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(name: &str) -> ModelSpec {
        get_model(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn registry_examples() {
        let m = model("fkpp");
        assert_eq!((m.dim(), m.symbol.order()), (1, 2));
        assert_eq!(m.symbol.jacobian()[(0, 0)], 1.0);
        let sh = get_model("sh", &BTreeMap::from([("eps".into(), 0.4), ("gamma".into(), 0.0)])).unwrap();
        assert_eq!(sh.symbol.order(), 4);
        // −(ν²+1)² + ε² at ν = 0.3
        let nu = nalgebra::Complex::new(0.3, 0.0);
        let s = sh.symbol.symbol(nu)[(0, 0)] + sh.symbol.jacobian()[(0, 0)];
        assert!((s.re - (-(0.09f64 + 1.0).powi(2) + 0.16)).abs() < 1e-14);
        let f = model("fhn");
        assert_eq!(f.dim(), 2);
        assert_eq!(f.symbol.coeffs()[2][(1, 1)], 0.0);
        assert!(matches!(get_model("nope", &BTreeMap::new()), Err(ModelError::UnknownModel(_))));
        assert!(matches!(
            get_model("ch", &BTreeMap::from([("ubar".into(), 0.7)])),
            Err(ModelError::ParameterOutOfRange(_))
        ));
        assert!(matches!(
            get_model("fkpp", &BTreeMap::from([("a".into(), 0.7)])),
            Err(ModelError::UnknownParameter { .. })
        ));
    }

    #[test]
    fn kinetics_vanish_and_linearize_at_origin() {
        for info in REGISTRY {
            let m = model(info.name);
            let n = m.dim();
            let zero = vec![0.0; n];
            assert!(m.reaction(&zero).iter().all(|&v| v == 0.0), "{}", info.name);
            // central differences of J u + n(u) at 0 recover J
            let h = 1e-6;
            for k in 0..n {
                let mut up = zero.clone();
                let mut um = zero.clone();
                up[k] = h;
                um[k] = -h;
                let (fp, fm) = (m.reaction(&up), m.reaction(&um));
                for r in 0..n {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - m.symbol.jacobian()[(r, k)]).abs() < 1e-10, "{} ({r},{k})", info.name);
                }
            }
        }
    }

    #[test]
    fn nonlinear_jacobian_matches_differences() {
        let pts = [0.3, -0.7, 1.1];
        for info in REGISTRY {
            let m = model(info.name);
            let n = m.dim();
            let u: Vec<f64> = pts[..n].to_vec();
            let jac = m.reaction_jacobian(&u);
            let h = 1e-6;
            for k in 0..n {
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += h;
                um[k] -= h;
                let (fp, fm) = (m.reaction(&up), m.reaction(&um));
                for r in 0..n {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - jac[(r, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "{}", info.name);
                }
            }
        }
    }

    #[test]
    fn registry_models_are_well_posed() {
        for info in REGISTRY {
            let m = model(info.name);
            let wp = m.symbol.well_posedness();
            assert!(wp.ok || m.well_posedness_exempt, "{}: {wp:?}", info.name);
        }
    }

    #[test]
    fn reference_examples() {
        let r = reference_values(&get_model("fhn", &BTreeMap::from([("a".into(), -0.2), ("eps".into(), 0.01)])).unwrap()).unwrap();
        assert!((reference_value(&r, "c_lin").unwrap() - 0.8215838363).abs() < 1e-9);
        assert!((reference_value(&r, "nu_lin_re").unwrap() + 0.3651483717).abs() < 1e-9);
        let r = reference_values(&model("coupled_mode")).unwrap();
        assert!((reference_value(&r, "c_ddr").unwrap() - 2.0034692134).abs() < 1e-9);
        assert!((reference_value(&r, "c_lin").unwrap() - 1.2328828006).abs() < 1e-9);
        assert_eq!(reference_value(&r, "in_q_ddr"), Some(1.0));
        let r = reference_values(&model("forced_cgl")).unwrap();
        assert!((reference_value(&r, "c1").unwrap() - 3f64.sqrt()).abs() < 1e-14);
        assert!((reference_value(&r, "nu1_re").unwrap() - 5.0 / (2.0 * 3f64.sqrt())).abs() < 1e-14);
        let r = reference_values(&model("fourth_order")).unwrap();
        assert!((reference_value(&r, "c_lin").unwrap() - 1.6553392849).abs() < 1e-9);
        assert!((reference_value(&r, "omega_lin").unwrap() - 1.6850717097).abs() < 1e-9);
        let r = reference_values(&model("cgl")).unwrap();
        assert!((reference_value(&r, "k_s_minus").unwrap() - 0.5923591472).abs() < 1e-9);
        assert!(matches!(
            reference_values(&get_model("fhn", &BTreeMap::from([("gamma".into(), 1.0)])).unwrap()),
            Err(ModelError::NotApplicable(_))
        ));
    }

    #[test]
    fn realified_models_have_conjugate_root_pairs() {
        use crate::polymat::ComovingDispersion;
        for name in ["cgl", "forced_cgl"] {
            let dr = ComovingDispersion::new(model(name).symbol, 1.3);
            for lam in [0.7, -0.4, 2.5] {
                let roots = dr.nu_roots(nalgebra::Complex::new(lam, 0.0)).unwrap();
                for r in &roots {
                    assert!(roots.iter().any(|q| (q - r.conj()).norm() < 1e-8), "{name}");
                }
            }
        }
    }
}
