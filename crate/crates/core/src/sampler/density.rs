//! Log density of the augmented joint distribution, used to check the
//! full conditionals.

use statrs::function::gamma::ln_gamma;

use super::Chain;
use crate::dist::{self, ln_normal_pdf};
use crate::model::count_bounds;
use crate::priors::ConstrainedDpStack;

fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn ln_beta_density(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - dist::ln_beta_fn(a, b)
}

fn ln_stack_prior(stack: &ConstrainedDpStack) -> f64 {
    let h = &stack.hyper;
    let levels = stack.levels();
    let sticks: f64 = stack.v[..levels - 1]
        .iter()
        .map(|&v| ln_beta_density(v, 1.0, h.concentration))
        .sum();
    let omegas: f64 = stack.omega.iter().map(|&w| ln_beta_density(w, h.a_omega, h.b_omega)).sum();
    let atoms: f64 = (0..stack.n_targets())
        .flat_map(|r| (0..levels).map(move |l| (r, l)))
        .map(|(r, l)| ln_normal_pdf(stack.xi[(r, l)], stack.nu[r], h.xi_var))
        .sum();
    sticks + omegas + atoms
}

fn ln_assignment(stack: &ConstrainedDpStack, psi: &[f64], l: usize, first: bool) -> f64 {
    let w = stack.omega[l];
    psi[l].ln() + if first { w.ln() } else { (1.0 - w).ln() }
}

impl Chain {
    /// Log of the joint density of parameters, latent factors and latent
    /// log-abundances, restricted to latent values consistent with the counts.
    /// Baselines are represented by their atom assignments.
    pub fn log_joint(&self) -> f64 {
        let s = &self.state;
        let h = &self.hyper;
        let (n, j_n, k_n) = (self.data.n_samples(), self.data.n_features(), s.n_factors());
        let mean = self.mean_matrix() + self.loading_effect();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..j_n {
                let (lo, hi) = count_bounds(self.data.y[(i, j)]);
                let z = s.latent[(i, j)];
                if !(lo <= z && z < hi) {
                    return f64::NEG_INFINITY;
                }
                total += ln_normal_pdf(z, mean[(i, j)], s.sigma2);
            }
        }
        total += s.eta.iter().map(|e| ln_normal_pdf(*e, 0.0, 1.0)).sum::<f64>();
        let sh = &s.shrink;
        let rate = h.b_tau / j_n as f64;
        for k in 0..k_n {
            total += ln_gamma_density(sh.tau[k], h.a_tau, rate);
            total += ln_gamma(h.a_phi * j_n as f64) - j_n as f64 * ln_gamma(h.a_phi);
            for j in 0..j_n {
                total += (h.a_phi - 1.0) * sh.phi[(j, k)].ln();
                total += ln_normal_pdf(sh.q[(j, k)], 0.0, sh.prior_var(j, k));
                total += ln_inv_gamma(sh.zeta2[(j, k)], 0.5, 1.0 / sh.zeta_aux[(j, k)]);
                total += ln_inv_gamma(sh.zeta_aux[(j, k)], 0.5, 1.0);
            }
        }
        total += s.f.iter().map(|v| ln_normal_pdf(*v, 0.0, 1.0)).sum::<f64>();
        total += ln_inv_gamma(s.sigma2, h.a_sigma, h.b_sigma);
        total += s.beta.iter().map(|v| ln_normal_pdf(*v, 0.0, h.u2_beta)).sum::<f64>();

        let psi = s.alpha_stack.psi();
        total += ln_stack_prior(&s.alpha_stack);
        for g in 0..s.alpha.nrows() {
            for j in 0..j_n {
                total += ln_assignment(&s.alpha_stack, &psi, s.alpha_outer[(g, j)], s.alpha_inner[(g, j)]);
            }
        }
        let psi = s.r_stack.psi();
        total += ln_stack_prior(&s.r_stack);
        for i in 0..n {
            let (l, first) = (s.r_outer[i], s.r_inner[i]);
            total += ln_assignment(&s.r_stack, &psi, l, first);
            total += ln_normal_pdf(s.r[i], s.r_stack.atom(0, l, first), s.r_stack.hyper.kernel_var);
        }
        total
    }
}
