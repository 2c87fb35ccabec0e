//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pkgee::gee::{solve, GeeFit, SolverConfig, WorkingModel};
use pkgee::pk_model::{InfusionSpec, PkParams};
use pkgee::sim::{generate_dataset, ScenarioConfig, SimulatedDataset};

pub const PAPER_THETA: [f64; 4] = [3.72, 1.38, -1.89, -0.35];
pub const PAPER_GRID: [f64; 8] = [0.1, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 4.5];

/// Central-compartment concentration from fourth-order Runge-Kutta
/// integration of the two-compartment mass balance:
/// `dA1/dt = R(t) - (kel + k12) A1 + k21 A2`, `dA2/dt = k12 A1 - k21 A2`,
/// with `R(t) = dose / t_in` while infusing. Returns `A1 / Vd` at each of
/// the increasing `times`.
pub fn rk4_concentrations(p: &PkParams, inf: &InfusionSpec, times: &[f64], h: f64) -> Vec<f64> {
    let (kel, k12, k21, vd) = (p.kel(), p.k12(), p.k21(), p.vd());
    let rate = inf.dose() / inf.t_in();
    let deriv = |a1: f64, a2: f64, input: f64| {
        (input - (kel + k12) * a1 + k21 * a2, k12 * a1 - k21 * a2)
    };
    let step = |a1: &mut f64, a2: &mut f64, dt: f64, input: f64| {
        let (k1a, k1b) = deriv(*a1, *a2, input);
        let (k2a, k2b) = deriv(*a1 + 0.5 * dt * k1a, *a2 + 0.5 * dt * k1b, input);
        let (k3a, k3b) = deriv(*a1 + 0.5 * dt * k2a, *a2 + 0.5 * dt * k2b, input);
        let (k4a, k4b) = deriv(*a1 + dt * k3a, *a2 + dt * k3b, input);
        *a1 += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        *a2 += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
    };
    // Integrate piecewise so the infusion switch-off falls on a step boundary.
    let advance = |a1: &mut f64, a2: &mut f64, from: f64, to: f64| {
        let mut t = from;
        while t < to {
            let stop = if t < inf.t_in() { to.min(inf.t_in()) } else { to };
            let n = ((stop - t) / h).ceil().max(1.0) as usize;
            let dt = (stop - t) / n as f64;
            let input = if t < inf.t_in() { rate } else { 0.0 };
            for _ in 0..n {
                step(a1, a2, dt, input);
            }
            t = stop;
        }
    };
    let (mut a1, mut a2, mut now) = (0.0, 0.0, 0.0);
    times
        .iter()
        .map(|&t| {
            advance(&mut a1, &mut a2, now, t);
            now = t;
            a1 / vd
        })
        .collect()
}

/// Scenario dataset with `n` subjects via HWE rounding.
pub fn small_dataset(scenario: u8, maf: f64, n: usize, seed: u64, replicate: u64) -> SimulatedDataset {
    let mut cfg = ScenarioConfig::paper(scenario, maf).unwrap();
    cfg.n = n;
    cfg.hwe_rounding = true;
    cfg.seed = seed;
    generate_dataset(&cfg, replicate).unwrap()
}

pub fn fit(data: &SimulatedDataset) -> GeeFit {
    solve(&data.subjects, &WorkingModel::default(), &SolverConfig::default()).unwrap()
}

/// Dense reference versions of the sandwich quantities, built from full
/// stacked matrices rather than per-subject sums.
pub struct DenseOracle {
    /// Stacked Jacobian on the retained columns, `N x p`.
    pub d: DMatrix<f64>,
    /// Row range of each subject in the stacked arrays.
    pub blocks: Vec<(usize, usize)>,
    pub s: DVector<f64>,
    pub beta: DVector<f64>,
    pub phi: f64,
}

impl DenseOracle {
    pub fn new(fit: &GeeFit) -> Self {
        let retained = fit.retained_columns();
        let n: usize = fit.residuals.iter().map(|r| r.len()).sum();
        let p = retained.len();
        let mut d = DMatrix::zeros(n, p);
        let mut s = DVector::zeros(n);
        let mut blocks = Vec::new();
        let mut row = 0;
        for (jac, res) in fit.jacobians.iter().zip(&fit.residuals) {
            for r in 0..res.len() {
                for (k, &c) in retained.iter().enumerate() {
                    d[(row + r, k)] = jac[(r, c)];
                }
                s[row + r] = res[r];
            }
            blocks.push((row, res.len()));
            row += res.len();
        }
        let beta = DVector::from_iterator(p, retained.iter().map(|&c| fit.beta_hat[c]));
        Self { d, blocks, s, beta, phi: fit.working_model.scale_phi() }
    }

    pub fn bread(&self) -> DMatrix<f64> {
        (self.d.transpose() * &self.d / self.phi).try_inverse().unwrap()
    }

    /// Full `N x N` hat matrix `D I0^-1 D' V^-1`.
    pub fn hat(&self) -> DMatrix<f64> {
        &self.d * self.bread() * self.d.transpose() / self.phi
    }

    /// Residuals, optionally with each block multiplied by `(I - H_ii)^-1`.
    pub fn residuals(&self, corrected: bool) -> DVector<f64> {
        if !corrected {
            return self.s.clone();
        }
        let hat = self.hat();
        let mut out = self.s.clone();
        for &(start, len) in &self.blocks {
            let h = hat.view((start, start), (len, len)).into_owned();
            let m = DMatrix::identity(len, len) - h;
            let inv = m.try_inverse().unwrap();
            let block = inv * self.s.rows(start, len);
            out.rows_mut(start, len).copy_from(&block);
        }
        out
    }

    /// Block-diagonal `S S'` over the stacked observations.
    pub fn psi(&self, corrected: bool) -> DMatrix<f64> {
        let r = self.residuals(corrected);
        let n = r.len();
        let mut psi = DMatrix::zeros(n, n);
        for &(start, len) in &self.blocks {
            let rb = r.rows(start, len);
            psi.view_mut((start, start), (len, len)).copy_from(&(rb * rb.transpose()));
        }
        psi / (self.phi * self.phi)
    }

    pub fn covariance(&self, corrected: bool) -> DMatrix<f64> {
        let b = self.bread();
        &b * self.d.transpose() * self.psi(corrected) * &self.d * &b
    }

    /// Block-diagonal `M` whose quadratic form in the residuals equals
    /// `c' V c`: blocks `D_i g g' D_i'` with `g = I0^-1 c`.
    pub fn m_matrix(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let g = self.bread() * c;
        let dg = &self.d * g;
        let n = dg.len();
        let mut m = DMatrix::zeros(n, n);
        for &(start, len) in &self.blocks {
            let v = dg.rows(start, len);
            m.view_mut((start, start), (len, len)).copy_from(&(v * v.transpose()));
        }
        m
    }

    pub fn df(&self, c: &DVector<f64>, corrected: bool) -> f64 {
        let pm = self.psi(corrected) * self.m_matrix(c);
        let t = pm.trace();
        t * t / (&pm * &pm).trace()
    }

    pub fn f_statistic(&self, cmat: &DMatrix<f64>, corrected: bool) -> f64 {
        let cov = self.covariance(corrected);
        let est = cmat.transpose() * &self.beta;
        let mid = (cmat.transpose() * cov * cmat).try_inverse().unwrap();
        (est.transpose() * mid * &est)[(0, 0)] / cmat.ncols() as f64
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    (a - b).amax() / scale
}
