//! Prior samplers: the Dirichlet–horseshoe shrinkage prior on loadings and
//! the mean-constrained truncated Dirichlet-process stacks for baselines and
//! size factors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};

/// Inner weights are kept inside `[OMEGA_MIN, 1 - OMEGA_MIN]`.
pub const OMEGA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirHsHyper {
    pub a_phi: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub k: usize,
}

impl DirHsHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_phi > 0.0 && self.a_tau > 0.0 && self.b_tau > 0.0) || self.k == 0 {
            return Err(Error::contract(format!("Dir-HS hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Shrinkage state for `Q`. Column `k` of `phi` is the simplex `φ_k`.
///
/// The half-Cauchy scale is stored squared together with its auxiliary
/// inverse-gamma variable: `ζ² | a ~ IG(1/2, 1/a)`, `a ~ IG(1/2, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirHsState {
    pub tau: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub zeta2: DMatrix<f64>,
    pub zeta_aux: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl DirHsState {
    /// Prior variance `ζ²_jk φ_jk τ_k` of `q_jk`.
    pub fn prior_var(&self, j: usize, k: usize) -> f64 {
        (self.zeta2[(j, k)] * self.phi[(j, k)] * self.tau[k]).max(dist::FLOOR)
    }
}

pub fn sample_dirhs_prior<R: Rng + ?Sized>(hyper: &DirHsHyper, n_features: usize, rng: &mut R) -> DirHsState {
    let (j_n, k_n) = (n_features, hyper.k);
    let rate = hyper.b_tau / j_n as f64;
    let tau = DVector::from_fn(k_n, |_, _| dist::gamma(rng, hyper.a_tau, rate));
    let mut phi = DMatrix::zeros(j_n, k_n);
    for k in 0..k_n {
        let p = dist::dirichlet(rng, &vec![hyper.a_phi; j_n]);
        phi.set_column(k, &DVector::from_vec(p));
    }
    let zeta_aux = DMatrix::from_fn(j_n, k_n, |_, _| dist::inv_gamma(rng, 0.5, 1.0));
    let zeta2 = DMatrix::from_fn(j_n, k_n, |j, k| dist::inv_gamma(rng, 0.5, 1.0 / zeta_aux[(j, k)]));
    let mut state = DirHsState {
        tau,
        phi,
        zeta2,
        zeta_aux,
        q: DMatrix::zeros(j_n, k_n),
    };
    for k in 0..k_n {
        for j in 0..j_n {
            state.q[(j, k)] = state.prior_var(j, k).sqrt() * dist::std_normal(rng);
        }
    }
    state
}

/// Stick-breaking weights `ψ_l = V_l ∏_{l'<l} (1 − V_l')`; the last weight
/// takes the remaining mass so the weights sum to one.
pub fn stick_break(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::contract("stick-breaking needs at least one stick"));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::contract(format!("stick variable {bad} outside (0, 1]")));
    }
    let mut psi = Vec::with_capacity(v.len());
    let mut remaining = 1.0;
    let mut used = 0.0;
    for &vl in &v[..v.len() - 1] {
        let w = vl * remaining;
        psi.push(w);
        used += w;
        remaining *= 1.0 - vl;
    }
    psi.push((1.0 - used).max(0.0));
    Ok(psi)
}

/// The two atoms of a mean-constrained component: `ξ` and `(ν − ωξ)/(1 − ω)`.
pub fn constrained_atom_pair(xi: f64, omega: f64, nu: f64) -> Result<(f64, f64)> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::contract(format!("inner weight {omega} outside (0, 1)")));
    }
    Ok((xi, second_atom(xi, omega, nu)))
}

#[inline]
pub(crate) fn second_atom(xi: f64, omega: f64, nu: f64) -> f64 {
    (nu - omega * xi) / (1.0 - omega)
}

/// Fixed hyperparameters of one constrained DP stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackHyper {
    pub levels: usize,
    pub concentration: f64,
    pub a_omega: f64,
    pub b_omega: f64,
    /// Prior variance of the free atoms `ξ_l` around `ν`.
    pub xi_var: f64,
    /// Kernel variance around each atom; zero gives point masses.
    pub kernel_var: f64,
}

/// Truncated mean-constrained Dirichlet process.
///
/// `xi` has one row per constraint target: a single row when all values
/// share `ν`, or one row per feature when each feature has its own `ν_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedDpStack {
    pub hyper: StackHyper,
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
    pub xi: DMatrix<f64>,
    pub nu: Vec<f64>,
}

/// Values drawn from a stack with their outer component and inner atom.
#[derive(Debug, Clone, PartialEq)]
pub struct StackDraw {
    pub values: DMatrix<f64>,
    pub outer: DMatrix<usize>,
    /// `true` for the free atom `ξ`, `false` for the constrained one.
    pub inner: DMatrix<bool>,
}

impl ConstrainedDpStack {
    pub fn new(hyper: StackHyper, v: Vec<f64>, omega: Vec<f64>, xi: DMatrix<f64>, nu: Vec<f64>) -> Result<Self> {
        let l = hyper.levels;
        if l < 1 || v.len() != l || omega.len() != l || xi.ncols() != l {
            return Err(Error::contract(format!(
                "stack arrays must all have length {l} (v {}, omega {}, xi {})",
                v.len(),
                omega.len(),
                xi.ncols()
            )));
        }
        if xi.nrows() != nu.len() {
            return Err(Error::DimensionMismatch {
                context: "stack: rows of xi vs targets",
                expected: nu.len(),
                found: xi.nrows(),
            });
        }
        if v[l - 1] != 1.0 {
            return Err(Error::contract("the last stick must equal 1"));
        }
        for &w in &omega {
            constrained_atom_pair(0.0, w, 0.0)?;
        }
        Ok(Self { hyper, v, omega, xi, nu })
    }

    /// Draws the stack parameters from their priors.
    pub fn sample_prior<R: Rng + ?Sized>(hyper: StackHyper, nu: Vec<f64>, rng: &mut R) -> Self {
        let l = hyper.levels;
        let mut v: Vec<f64> = (0..l)
            .map(|_| dist::beta(rng, 1.0, hyper.concentration).max(dist::FLOOR))
            .collect();
        v[l - 1] = 1.0;
        let omega = (0..l)
            .map(|_| clamp_omega(dist::beta(rng, hyper.a_omega, hyper.b_omega)))
            .collect();
        let sd = hyper.xi_var.sqrt();
        let xi = DMatrix::from_fn(nu.len(), l, |row, _| nu[row] + sd * dist::std_normal(rng));
        Self { hyper, v, omega, xi, nu }
    }

    pub fn levels(&self) -> usize {
        self.hyper.levels
    }

    pub fn n_targets(&self) -> usize {
        self.nu.len()
    }

    pub fn psi(&self) -> Vec<f64> {
        stick_break(&self.v).expect("stack sticks are valid by construction")
    }

    /// Target row used by feature `j`.
    pub fn row_for(&self, j: usize) -> usize {
        if self.nu.len() == 1 {
            0
        } else {
            j
        }
    }

    /// Atom location for component `l` and target row `row`.
    pub fn atom(&self, row: usize, l: usize, first: bool) -> f64 {
        if first {
            self.xi[(row, l)]
        } else {
            second_atom(self.xi[(row, l)], self.omega[l], self.nu[row])
        }
    }

    /// Mixture mean for target row `row`; equals `ν` by construction.
    pub fn mixture_mean(&self, row: usize) -> f64 {
        self.psi()
            .iter()
            .enumerate()
            .map(|(l, p)| p * (self.omega[l] * self.atom(row, l, true) + (1.0 - self.omega[l]) * self.atom(row, l, false)))
            .sum()
    }

    fn draw_one<R: Rng + ?Sized>(&self, psi: &[f64], row: usize, rng: &mut R) -> (f64, usize, bool) {
        let ln_psi: Vec<f64> = psi.iter().map(|p| p.ln()).collect();
        let l = dist::categorical_log(rng, &ln_psi);
        let first = rng.random::<f64>() < self.omega[l];
        let mut value = self.atom(row, l, first);
        if self.hyper.kernel_var > 0.0 {
            value += self.hyper.kernel_var.sqrt() * dist::std_normal(rng);
        }
        (value, l, first)
    }

    /// Draws a `groups × n_features` table of values; values in the same
    /// column use that feature's target row.
    pub fn sample_values<R: Rng + ?Sized>(&self, groups: usize, n_features: usize, rng: &mut R) -> Result<StackDraw> {
        if self.nu.len() != 1 && self.nu.len() != n_features {
            return Err(Error::DimensionMismatch {
                context: "stack: targets vs features",
                expected: n_features,
                found: self.nu.len(),
            });
        }
        let psi = self.psi();
        let mut values = DMatrix::zeros(groups, n_features);
        let mut outer = DMatrix::zeros(groups, n_features);
        let mut inner = DMatrix::from_element(groups, n_features, false);
        for g in 0..groups {
            for j in 0..n_features {
                let (v, l, first) = self.draw_one(&psi, self.row_for(j), rng);
                values[(g, j)] = v;
                outer[(g, j)] = l;
                inner[(g, j)] = first;
            }
        }
        Ok(StackDraw { values, outer, inner })
    }
}

pub(crate) fn clamp_omega(w: f64) -> f64 {
    w.clamp(OMEGA_MIN, 1.0 - OMEGA_MIN)
}

/// Baselines from a point-mass stack: one row in shared mode, `S` rows in subject mode.
pub fn sample_alpha_prior<R: Rng + ?Sized>(
    stack: &ConstrainedDpStack,
    groups: usize,
    n_features: usize,
    rng: &mut R,
) -> Result<StackDraw> {
    stack.sample_values(groups, n_features, rng)
}

/// Size factors from a normal-kernel stack, returned as an `N × 1` draw.
pub fn sample_r_prior<R: Rng + ?Sized>(stack: &ConstrainedDpStack, n: usize, rng: &mut R) -> Result<StackDraw> {
    if stack.n_targets() != 1 {
        return Err(Error::contract("size-factor stack must have a single target"));
    }
    stack.sample_values(n, 1, rng)
}
