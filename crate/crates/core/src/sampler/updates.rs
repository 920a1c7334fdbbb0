//! Full-conditional updates, one method per block.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Chain;
use crate::dist::{self, Gig};
use crate::error::{Error, Result};
use crate::model::{count_bounds, round_latent};
use crate::priors::{clamp_omega, second_atom, ConstrainedDpStack, OMEGA_MIN};

/// Gaussian in canonical form: precision matrix and linear term.
#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl Canonical {
    pub fn mean(&self) -> Result<DVector<f64>> {
        let ch = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("precision matrix is not positive definite".into()))?;
        Ok(ch.solve(&self.linear))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let ch = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("precision matrix is not positive definite".into()))?;
        let mean = ch.solve(&self.linear);
        let z = DVector::from_fn(self.linear.len(), |_, _| dist::std_normal(rng));
        let dev = ch
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
        Ok(mean + dev)
    }

    /// Log density up to the normalizing constant that does not depend on `x`.
    pub fn ln_density(&self, x: &DVector<f64>) -> f64 {
        -0.5 * (x.transpose() * &self.precision * x)[(0, 0)] + self.linear.dot(x)
    }
}

/// Sufficient statistics of the point-mass baseline units.
pub(crate) struct UnitStats {
    /// G×J sums of residuals.
    pub(crate) sums: DMatrix<f64>,
    /// Samples per group.
    pub(crate) counts: Vec<f64>,
}

impl Chain {
    fn unit_loglik(a: f64, d: f64, n: f64, sigma2: f64) -> f64 {
        (a * d - 0.5 * n * a * a) / sigma2
    }

    pub fn update_latent_y(&mut self) {
        let mean = self.mean_matrix() + self.loading_effect();
        let sd = self.state.sigma2.sqrt();
        let (n, j) = (self.data.n_samples(), self.data.n_features());
        for i in 0..n {
            for c in 0..j {
                let (lo, hi) = count_bounds(self.data.y[(i, c)]);
                self.state.latent[(i, c)] = dist::truncated_normal(&mut self.rng, mean[(i, c)], sd, lo, hi);
            }
        }
    }

    /// Precision and linear term of `η_i` given everything else.
    pub fn eta_conditional(&self, i: usize) -> Canonical {
        let h = self.scores();
        let mu = self.mean_matrix();
        self.eta_conditional_with(i, &h, &mu)
    }

    fn eta_conditional_with(&self, i: usize, h: &DMatrix<f64>, mu: &DMatrix<f64>) -> Canonical {
        let s = &self.state;
        let k = s.n_factors();
        let mut lambda = s.shrink.q.clone();
        for (kk, mut col) in lambda.column_iter_mut().enumerate() {
            col *= h[(i, kk)];
        }
        let resid = (s.latent.row(i) - mu.row(i)).transpose();
        let mut precision = lambda.transpose() * &lambda / s.sigma2;
        for kk in 0..k {
            precision[(kk, kk)] += 1.0;
        }
        let linear = lambda.transpose() * resid / s.sigma2;
        Canonical { precision, linear }
    }

    pub fn update_eta(&mut self) -> Result<()> {
        let h = self.scores();
        let mu = self.mean_matrix();
        for i in 0..self.data.n_samples() {
            let cond = self.eta_conditional_with(i, &h, &mu);
            let draw = cond.sample(&mut self.rng)?;
            self.state.eta.set_row(i, &draw.transpose());
        }
        Ok(())
    }

    /// Precision and linear term of row `j` of `Q` given everything else.
    pub fn q_conditional(&self, j: usize) -> Canonical {
        let g = self.scores().component_mul(&self.state.eta);
        let gtg = g.transpose() * &g;
        let resid = &self.state.latent - self.mean_matrix();
        self.q_conditional_with(j, &g, &gtg, &resid)
    }

    fn q_conditional_with(&self, j: usize, g: &DMatrix<f64>, gtg: &DMatrix<f64>, resid: &DMatrix<f64>) -> Canonical {
        let s = &self.state;
        let mut precision = gtg / s.sigma2;
        for k in 0..s.n_factors() {
            precision[(k, k)] += 1.0 / s.shrink.prior_var(j, k);
        }
        let linear = g.transpose() * resid.column(j) / s.sigma2;
        Canonical { precision, linear }
    }

    pub fn update_q(&mut self) -> Result<()> {
        let g = self.scores().component_mul(&self.state.eta);
        let gtg = g.transpose() * &g;
        let resid = &self.state.latent - self.mean_matrix();
        for j in 0..self.data.n_features() {
            let cond = self.q_conditional_with(j, &g, &gtg, &resid);
            let draw = cond.sample(&mut self.rng)?;
            self.state.shrink.q.set_row(j, &draw.transpose());
        }
        Ok(())
    }

    /// Inverse-gamma (shape, scale) of `ζ²_jk` given its auxiliary variable and `q_jk`.
    pub fn zeta_conditional(&self, j: usize, k: usize) -> (f64, f64) {
        let sh = &self.state.shrink;
        let q = sh.q[(j, k)];
        let denom = (sh.phi[(j, k)] * sh.tau[k]).max(dist::FLOOR);
        (1.0, 1.0 / sh.zeta_aux[(j, k)] + q * q / (2.0 * denom))
    }

    /// Inverse-gamma (shape, scale) of the auxiliary variable of `ζ²_jk`.
    pub fn zeta_aux_conditional(&self, j: usize, k: usize) -> (f64, f64) {
        (1.0, 1.0 + 1.0 / self.state.shrink.zeta2[(j, k)])
    }

    pub fn update_zeta(&mut self) {
        let (j_n, k_n) = (self.data.n_features(), self.state.n_factors());
        for k in 0..k_n {
            for j in 0..j_n {
                let (a, b) = self.zeta_conditional(j, k);
                self.state.shrink.zeta2[(j, k)] = dist::inv_gamma(&mut self.rng, a, b);
                let (a, b) = self.zeta_aux_conditional(j, k);
                self.state.shrink.zeta_aux[(j, k)] = dist::inv_gamma(&mut self.rng, a, b);
            }
        }
    }

    /// Generalized inverse Gaussian full conditional of `τ_k`.
    pub fn tau_conditional(&self, k: usize) -> Result<Gig> {
        let sh = &self.state.shrink;
        let j_n = self.data.n_features() as f64;
        let chi: f64 = (0..self.data.n_features())
            .map(|j| {
                let q = sh.q[(j, k)];
                q * q / (sh.zeta2[(j, k)] * sh.phi[(j, k)]).max(dist::FLOOR)
            })
            .sum();
        Gig::new(
            self.hyper.a_tau - 0.5 * j_n,
            chi.max(dist::FLOOR),
            2.0 * self.hyper.b_tau / j_n,
        )
        .map_err(|e| Error::Internal(format!("tau update: {e}")))
    }

    pub fn update_tau(&mut self) -> Result<()> {
        for k in 0..self.state.n_factors() {
            let gig = self.tau_conditional(k)?;
            self.state.shrink.tau[k] = gig.sample(&mut self.rng);
        }
        Ok(())
    }

    /// Log target of `φ_k` on the additive log-ratio scale (Jacobian included).
    pub fn phi_log_target(&self, k: usize, ln_phi: &[f64]) -> f64 {
        let sh = &self.state.shrink;
        let a = self.hyper.a_phi;
        ln_phi
            .iter()
            .enumerate()
            .map(|(j, &lp)| {
                let q = sh.q[(j, k)];
                let scale = (sh.zeta2[(j, k)] * sh.tau[k]).max(dist::FLOOR);
                (a - 0.5) * lp - q * q / (2.0 * scale * lp.exp().max(dist::FLOOR))
            })
            .sum()
    }

    pub fn update_phi(&mut self) {
        let j_n = self.data.n_features();
        if j_n < 2 {
            return;
        }
        for k in 0..self.state.n_factors() {
            let ln_cur: Vec<f64> = self.state.shrink.phi.column(k).iter().map(|p| p.ln()).collect();
            let u = DVector::from_fn(j_n - 1, |j, _| ln_cur[j] - ln_cur[j_n - 1]);
            let u_new = self.phi_props[k].propose(&mut self.rng, &u);
            let lse = dist::log_sum_exp(&u_new.iter().copied().chain(std::iter::once(0.0)).collect::<Vec<_>>());
            let ln_new: Vec<f64> = (0..j_n)
                .map(|j| if j + 1 < j_n { u_new[j] - lse } else { -lse })
                .map(|v| v.max(dist::FLOOR.ln()))
                .collect();
            let log_ratio = self.phi_log_target(k, &ln_new) - self.phi_log_target(k, &ln_cur);
            let prob = log_ratio.exp().min(1.0);
            let accept = self.rng.random::<f64>().ln() < log_ratio;
            let kept = if accept {
                let mut p: Vec<f64> = ln_new.iter().map(|v| v.exp().max(dist::FLOOR)).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                self.state.shrink.phi.set_column(k, &DVector::from_vec(p));
                u_new
            } else {
                u
            };
            let adapting = self.adapting;
            self.phi_props[k].record(prob, accept, &kept, adapting);
        }
    }

    /// Per-sample linear and quadratic coefficients of the log likelihood in
    /// `h_i = f_k · x_i`: loglik = −Σ_i (b_i h_i² − 2 a_i h_i) / (2σ²).
    fn f_coefficients(&self, k: usize) -> (DVector<f64>, DVector<f64>) {
        let s = &self.state;
        let h = self.scores();
        let mut g = h.component_mul(&s.eta);
        g.column_mut(k).fill(0.0);
        let resid = &s.latent - self.mean_matrix() - g * s.shrink.q.transpose();
        let qk = s.shrink.q.column(k);
        let qq = qk.norm_squared();
        let a = DVector::from_fn(self.data.n_samples(), |i, _| s.eta[(i, k)] * resid.row(i).dot(&qk.transpose()));
        let b = DVector::from_fn(self.data.n_samples(), |i, _| s.eta[(i, k)] * s.eta[(i, k)] * qq);
        (a, b)
    }

    fn f_log_target(&self, f: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let h = &self.data.x_cov * f;
        let ll: f64 = (0..h.len()).map(|i| b[i] * h[i] * h[i] - 2.0 * a[i] * h[i]).sum();
        -0.5 * f.norm_squared() - ll / (2.0 * self.state.sigma2)
    }

    pub fn update_f(&mut self) {
        for k in 0..self.state.n_factors() {
            let (a, b) = self.f_coefficients(k);
            let cur = self.state.f.row(k).transpose();
            let prop = self.f_props[k].propose(&mut self.rng, &cur);
            let log_ratio = self.f_log_target(&prop, &a, &b) - self.f_log_target(&cur, &a, &b);
            let prob = log_ratio.exp().min(1.0);
            let accept = self.rng.random::<f64>().ln() < log_ratio;
            let kept = if accept {
                self.state.f.set_row(k, &prop.transpose());
                prop
            } else {
                cur
            };
            let adapting = self.adapting;
            self.f_props[k].record(prob, accept, &kept, adapting);
        }
    }

    /// Inverse-gamma (shape, scale) full conditional of `σ²`.
    pub fn sigma2_conditional(&self) -> (f64, f64) {
        let resid = &self.state.latent - self.mean_matrix() - self.loading_effect();
        let nj = (self.data.n_samples() * self.data.n_features()) as f64;
        (self.hyper.a_sigma + 0.5 * nj, self.hyper.b_sigma + 0.5 * resid.norm_squared())
    }

    pub fn update_sigma2(&mut self) {
        let (a, b) = self.sigma2_conditional();
        self.state.sigma2 = dist::inv_gamma(&mut self.rng, a, b);
    }

    /// Residual of the latent values after removing size factors, baselines
    /// and the loading contribution.
    fn beta_residual(&self) -> DMatrix<f64> {
        let s = &self.state;
        let le = self.loading_effect();
        DMatrix::from_fn(self.data.n_samples(), self.data.n_features(), |i, j| {
            s.latent[(i, j)] - s.r[i] - s.alpha[(self.data.group[i], j)] - le[(i, j)]
        })
    }

    /// Precision and linear term of row `j` of `β`.
    pub fn beta_conditional(&self, j: usize) -> Canonical {
        let x = &self.data.x_mean;
        self.beta_conditional_with(j, &(x.transpose() * x), &self.beta_residual())
    }

    fn beta_conditional_with(&self, j: usize, xtx: &DMatrix<f64>, w: &DMatrix<f64>) -> Canonical {
        let s2 = self.state.sigma2;
        let mut precision = xtx / s2;
        for p in 0..precision.nrows() {
            precision[(p, p)] += 1.0 / self.hyper.u2_beta;
        }
        let linear = self.data.x_mean.transpose() * w.column(j) / s2;
        Canonical { precision, linear }
    }

    pub fn update_beta(&mut self) -> Result<()> {
        if self.data.n_mean() == 0 {
            return Ok(());
        }
        let x = &self.data.x_mean;
        let xtx = x.transpose() * x;
        let w = self.beta_residual();
        for j in 0..self.data.n_features() {
            let cond = self.beta_conditional_with(j, &xtx, &w);
            let draw = cond.sample(&mut self.rng)?;
            self.state.beta.set_row(j, &draw.transpose());
        }
        Ok(())
    }

    pub(crate) fn alpha_unit_stats(&self) -> UnitStats {
        let s = &self.state;
        let le = self.loading_effect();
        let reg = &self.data.x_mean * s.beta.transpose();
        let mut sums = DMatrix::zeros(self.data.n_groups, self.data.n_features());
        let mut counts = vec![0.0; self.data.n_groups];
        for i in 0..self.data.n_samples() {
            let g = self.data.group[i];
            counts[g] += 1.0;
            for j in 0..self.data.n_features() {
                sums[(g, j)] += s.latent[(i, j)] - s.r[i] - reg[(i, j)] - le[(i, j)];
            }
        }
        UnitStats { sums, counts }
    }

    pub(crate) fn refresh_alpha_values(&mut self) {
        let s = &mut self.state;
        for g in 0..s.alpha.nrows() {
            for j in 0..s.alpha.ncols() {
                let row = s.alpha_stack.row_for(j);
                s.alpha[(g, j)] = s.alpha_stack.atom(row, s.alpha_outer[(g, j)], s.alpha_inner[(g, j)]);
            }
        }
    }

    pub fn update_alpha_stack(&mut self) {
        let stats = self.alpha_unit_stats();
        self.update_alpha_indicators(&stats);
        let outer: Vec<usize> = self.state.alpha_outer.iter().copied().collect();
        update_sticks(&mut self.state.alpha_stack, &outer, &mut self.rng);
        self.update_alpha_atoms(&stats);
        self.update_alpha_weights(&stats);
        self.refresh_alpha_values();
    }

    /// Outer component and inner atom of every baseline, drawn jointly.
    pub(crate) fn update_alpha_indicators(&mut self, stats: &UnitStats) {
        let s2 = self.state.sigma2;
        let (g_n, j_n) = (self.data.n_groups, self.data.n_features());
        let levels = self.state.alpha_stack.levels();
        let ln_psi: Vec<f64> = self.state.alpha_stack.psi().iter().map(|p| p.ln()).collect();
        let mut logw = vec![0.0; 2 * levels];
        for g in 0..g_n {
            let n = stats.counts[g];
            for j in 0..j_n {
                let d = stats.sums[(g, j)];
                let st = &self.state.alpha_stack;
                let row = st.row_for(j);
                for l in 0..levels {
                    let w = st.omega[l];
                    logw[2 * l] = ln_psi[l] + w.ln() + Self::unit_loglik(st.atom(row, l, true), d, n, s2);
                    logw[2 * l + 1] = ln_psi[l] + (1.0 - w).ln() + Self::unit_loglik(st.atom(row, l, false), d, n, s2);
                }
                let pick = dist::categorical_log(&mut self.rng, &logw);
                self.state.alpha_outer[(g, j)] = pick / 2;
                self.state.alpha_inner[(g, j)] = pick % 2 == 0;
            }
        }
    }

    /// Free atoms given the assignments; each baseline is `a + bξ` in its atom.
    pub(crate) fn update_alpha_atoms(&mut self, stats: &UnitStats) {
        let s2 = self.state.sigma2;
        let (g_n, j_n) = (self.data.n_groups, self.data.n_features());
        let levels = self.state.alpha_stack.levels();
        let rows = self.state.alpha_stack.n_targets();
        let xi_var = self.state.alpha_stack.hyper.xi_var;
        let mut prec = DMatrix::from_element(rows, levels, 1.0 / xi_var);
        let mut lin = DMatrix::from_fn(rows, levels, |r, _| self.state.alpha_stack.nu[r] / xi_var);
        for g in 0..g_n {
            let n = stats.counts[g];
            for j in 0..j_n {
                let st = &self.state.alpha_stack;
                let row = st.row_for(j);
                let l = self.state.alpha_outer[(g, j)];
                let (a, b) = atom_coefficients(st, row, l, self.state.alpha_inner[(g, j)]);
                prec[(row, l)] += n * b * b / s2;
                lin[(row, l)] += b * (stats.sums[(g, j)] - n * a) / s2;
            }
        }
        for row in 0..rows {
            for l in 0..levels {
                let p = prec[(row, l)];
                self.state.alpha_stack.xi[(row, l)] = lin[(row, l)] / p + dist::std_normal(&mut self.rng) / p.sqrt();
            }
        }
    }

    pub(crate) fn update_alpha_weights(&mut self, stats: &UnitStats) {
        let s2 = self.state.sigma2;
        let (g_n, j_n) = (self.data.n_groups, self.data.n_features());
        for l in 0..self.state.alpha_stack.levels() {
            let mut n1 = 0.0;
            let mut n2 = 0.0;
            let mut members = Vec::new();
            for g in 0..g_n {
                for j in 0..j_n {
                    if self.state.alpha_outer[(g, j)] == l {
                        if self.state.alpha_inner[(g, j)] {
                            n1 += 1.0;
                        } else {
                            n2 += 1.0;
                            members.push((g, j));
                        }
                    }
                }
            }
            let st = &self.state.alpha_stack;
            let loglik = |w: f64| -> f64 {
                members
                    .iter()
                    .map(|&(g, j)| {
                        let row = st.row_for(j);
                        let a2 = second_atom(st.xi[(row, l)], w, st.nu[row]);
                        Self::unit_loglik(a2, stats.sums[(g, j)], stats.counts[g], s2)
                    })
                    .sum()
            };
            let new = omega_step(
                &mut self.rng,
                st.omega[l],
                (st.hyper.a_omega, st.hyper.b_omega),
                (n1, n2),
                self.omega_step,
                loglik,
            );
            self.state.alpha_stack.omega[l] = new;
        }
    }

    pub fn update_r_stack(&mut self) {
        let (n_s, j_n) = (self.data.n_samples(), self.data.n_features());
        if n_s == 0 {
            let outer: Vec<usize> = Vec::new();
            update_sticks(&mut self.state.r_stack, &outer, &mut self.rng);
            let st = &mut self.state.r_stack;
            let sd = st.hyper.xi_var.sqrt();
            for l in 0..st.levels() {
                st.xi[(0, l)] = st.nu[0] + sd * dist::std_normal(&mut self.rng);
                st.omega[l] = omega_prior_draw(&mut self.rng, st.hyper.a_omega, st.hyper.b_omega);
            }
            return;
        }
        let s2 = self.state.sigma2;
        let jf = j_n as f64;
        let le = self.loading_effect();
        let reg = &self.data.x_mean * self.state.beta.transpose();
        let d: Vec<f64> = (0..n_s)
            .map(|i| {
                let g = self.data.group[i];
                (0..j_n)
                    .map(|j| self.state.latent[(i, j)] - self.state.alpha[(g, j)] - reg[(i, j)] - le[(i, j)])
                    .sum()
            })
            .collect();
        let levels = self.state.r_stack.levels();
        let kernel = self.state.r_stack.hyper.kernel_var;
        let ln_psi: Vec<f64> = self.state.r_stack.psi().iter().map(|p| p.ln()).collect();
        let marg_var = kernel + s2 / jf;
        let post_prec = 1.0 / kernel + jf / s2;
        let mut logw = vec![0.0; 2 * levels];
        for i in 0..n_s {
            let st = &self.state.r_stack;
            let obs = d[i] / jf;
            for l in 0..levels {
                let w = st.omega[l];
                logw[2 * l] = ln_psi[l] + w.ln() + dist::ln_normal_pdf(obs, st.atom(0, l, true), marg_var);
                logw[2 * l + 1] = ln_psi[l] + (1.0 - w).ln() + dist::ln_normal_pdf(obs, st.atom(0, l, false), marg_var);
            }
            let pick = dist::categorical_log(&mut self.rng, &logw);
            let (l, first) = (pick / 2, pick % 2 == 0);
            self.state.r_outer[i] = l;
            self.state.r_inner[i] = first;
            let atom = st.atom(0, l, first);
            let mean = (atom / kernel + d[i] / s2) / post_prec;
            self.state.r[i] = mean + dist::std_normal(&mut self.rng) / post_prec.sqrt();
        }

        let outer = self.state.r_outer.clone();
        update_sticks(&mut self.state.r_stack, &outer, &mut self.rng);

        let xi_var = self.state.r_stack.hyper.xi_var;
        let nu = self.state.r_stack.nu[0];
        let mut prec = vec![1.0 / xi_var; levels];
        let mut lin = vec![nu / xi_var; levels];
        for i in 0..n_s {
            let l = self.state.r_outer[i];
            let (a, b) = atom_coefficients(&self.state.r_stack, 0, l, self.state.r_inner[i]);
            prec[l] += b * b / kernel;
            lin[l] += b * (self.state.r[i] - a) / kernel;
        }
        for l in 0..levels {
            self.state.r_stack.xi[(0, l)] = lin[l] / prec[l] + dist::std_normal(&mut self.rng) / prec[l].sqrt();
        }

        for l in 0..levels {
            let mut n1 = 0.0;
            let mut n2 = 0.0;
            let mut members = Vec::new();
            for i in 0..n_s {
                if self.state.r_outer[i] == l {
                    if self.state.r_inner[i] {
                        n1 += 1.0;
                    } else {
                        n2 += 1.0;
                        members.push(i);
                    }
                }
            }
            let st = &self.state.r_stack;
            let r = &self.state.r;
            let loglik = |w: f64| -> f64 {
                let a2 = second_atom(st.xi[(0, l)], w, st.nu[0]);
                members.iter().map(|&i| dist::ln_normal_pdf(r[i], a2, kernel)).sum()
            };
            let new = omega_step(
                &mut self.rng,
                st.omega[l],
                (st.hyper.a_omega, st.hyper.b_omega),
                (n1, n2),
                self.omega_step,
                loglik,
            );
            self.state.r_stack.omega[l] = new;
        }
    }

    /// Replaces latent factors, latent log-abundances and counts with a draw
    /// from the model given the current parameters.
    pub fn simulate_data(&mut self) {
        let (n, j, k) = (self.data.n_samples(), self.data.n_features(), self.state.n_factors());
        self.state.eta = DMatrix::from_fn(n, k, |_, _| dist::std_normal(&mut self.rng));
        let mean = self.mean_matrix() + self.loading_effect();
        let sd = self.state.sigma2.sqrt();
        for i in 0..n {
            for c in 0..j {
                let z = mean[(i, c)] + sd * dist::std_normal(&mut self.rng);
                self.state.latent[(i, c)] = z;
                self.data.y[(i, c)] = round_latent(z);
            }
        }
    }
}

/// `(a, b)` with atom `= a + b ξ` for the given inner choice.
fn atom_coefficients(stack: &ConstrainedDpStack, row: usize, l: usize, first: bool) -> (f64, f64) {
    if first {
        (0.0, 1.0)
    } else {
        let w = stack.omega[l];
        (stack.nu[row] / (1.0 - w), -w / (1.0 - w))
    }
}

/// `V_l ~ Beta(1 + n_l, c + n_{>l})` with the last stick pinned to 1.
fn update_sticks<R: Rng + ?Sized>(stack: &mut ConstrainedDpStack, outer: &[usize], rng: &mut R) {
    let levels = stack.levels();
    let mut counts = vec![0.0; levels];
    for &l in outer {
        counts[l] += 1.0;
    }
    let mut above = 0.0;
    let mut tail = vec![0.0; levels];
    for l in (0..levels).rev() {
        tail[l] = above;
        above += counts[l];
    }
    for l in 0..levels - 1 {
        let v = dist::beta(rng, 1.0 + counts[l], stack.hyper.concentration + tail[l]);
        stack.v[l] = v.clamp(dist::FLOOR, 1.0);
    }
    stack.v[levels - 1] = 1.0;
}

fn omega_prior_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    loop {
        let w = dist::beta(rng, a, b);
        if (OMEGA_MIN..=1.0 - OMEGA_MIN).contains(&w) {
            return w;
        }
    }
}

/// One Metropolis step for an inner weight on the logit scale. The target is
/// the Beta prior restricted to `[OMEGA_MIN, 1 − OMEGA_MIN]`, the inner
/// indicator counts and `loglik` of the units on the constrained atom.
fn omega_step<R: Rng + ?Sized>(
    rng: &mut R,
    current: f64,
    (a, b): (f64, f64),
    (n1, n2): (f64, f64),
    step: f64,
    loglik: impl Fn(f64) -> f64,
) -> f64 {
    if n1 + n2 == 0.0 {
        return omega_prior_draw(rng, a, b);
    }
    let target = |w: f64| (a + n1) * w.ln() + (b + n2) * (1.0 - w).ln() + loglik(w);
    let proposal = dist::logistic(dist::logit(current) + step * dist::std_normal(rng));
    if !(OMEGA_MIN..=1.0 - OMEGA_MIN).contains(&proposal) {
        return current;
    }
    let log_ratio = target(proposal) - target(current);
    if rng.random::<f64>().ln() < log_ratio {
        clamp_omega(proposal)
    } else {
        current
    }
}
