//! Two-compartment model with a zero-order (constant rate) intravenous infusion.
//!
//! Concentrations are in mg/L, times in hours, doses in mg and all rate
//! constants in 1/h. Parameters are carried on the log scale so that every
//! natural-scale quantity is positive by construction.

use thiserror::Error;

/// Number of working-model coefficients: four PK parameters times
/// (intercept, Aa effect, AA effect).
pub const NUM_COEFS: usize = 12;

/// Number of PK parameters per subject.
pub const NUM_PK_PARAMS: usize = 4;

/// Coefficient labels in storage order.
pub const COEF_NAMES: [&str; NUM_COEFS] = [
    "beta_Vd",
    "beta_Vd_Aa",
    "beta_Vd_AA",
    "beta_Kel",
    "beta_Kel_Aa",
    "beta_Kel_AA",
    "beta_K12",
    "beta_K12_Aa",
    "beta_K12_AA",
    "beta_K21",
    "beta_K21_Aa",
    "beta_K21_AA",
];

/// Relative gap between the hybrid rate constants below which the closed
/// form is rejected.
pub const DEGENERATE_ROOT_GAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PkError {
    #[error("hybrid rate constants coincide (a = {a}, b = {b}); closed form is singular")]
    DegenerateRoots { a: f64, b: f64 },
    #[error("concentration {value} at t = {t} h is not positive; log transform undefined")]
    NonPositiveConcentration { t: f64, value: f64 },
}

/// The four PK parameters of one subject, all on the natural-log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkParams {
    pub log_vd: f64,
    pub log_kel: f64,
    pub log_k12: f64,
    pub log_k21: f64,
}

impl PkParams {
    pub fn new(log_vd: f64, log_kel: f64, log_k12: f64, log_k21: f64) -> Self {
        Self { log_vd, log_kel, log_k12, log_k21 }
    }

    pub fn from_array(theta: [f64; NUM_PK_PARAMS]) -> Self {
        Self::new(theta[0], theta[1], theta[2], theta[3])
    }

    pub fn to_array(self) -> [f64; NUM_PK_PARAMS] {
        [self.log_vd, self.log_kel, self.log_k12, self.log_k21]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn vd(&self) -> f64 {
        self.log_vd.exp()
    }

    pub fn kel(&self) -> f64 {
        self.log_kel.exp()
    }

    pub fn k12(&self) -> f64 {
        self.log_k12.exp()
    }

    pub fn k21(&self) -> f64 {
        self.log_k21.exp()
    }
}

/// Dose and duration of a constant-rate infusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfusionSpec {
    dose: f64,
    t_in: f64,
}

impl InfusionSpec {
    /// Returns `None` unless both values are finite and strictly positive.
    pub fn new(dose: f64, t_in: f64) -> Option<Self> {
        (dose.is_finite() && t_in.is_finite() && dose > 0.0 && t_in > 0.0)
            .then_some(Self { dose, t_in })
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    pub fn t_in(&self) -> f64 {
        self.t_in
    }

    /// Infusion rate K0 = dose / t_in (mg/h).
    pub fn rate(&self) -> f64 {
        self.dose / self.t_in
    }
}

/// SNP genotype with `a` the major and `A` the minor allele.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Genotype {
    /// Major homozygote.
    #[allow(non_camel_case_types)]
    aa,
    Aa,
    AA,
}

impl Genotype {
    /// Dummy coding `(x_Aa, x_AA)`.
    pub fn dummies(self) -> (f64, f64) {
        match self {
            Genotype::aa => (0.0, 0.0),
            Genotype::Aa => (1.0, 0.0),
            Genotype::AA => (0.0, 1.0),
        }
    }

    /// Additive minor-allele count, 0/1/2.
    pub fn minor_allele_count(self) -> u8 {
        match self {
            Genotype::aa => 0,
            Genotype::Aa => 1,
            Genotype::AA => 2,
        }
    }

    pub fn from_minor_allele_count(count: u8) -> Option<Self> {
        match count {
            0 => Some(Genotype::aa),
            1 => Some(Genotype::Aa),
            2 => Some(Genotype::AA),
            _ => None,
        }
    }
}

/// The 4x12 covariate matrix mapping coefficients to one subject's PK
/// parameters. Row `r` has `(1, x_Aa, x_AA)` in columns `3r..3r+3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignMatrix {
    genotype: Genotype,
}

impl DesignMatrix {
    pub fn new(genotype: Genotype) -> Self {
        Self { genotype }
    }

    pub fn genotype(&self) -> Genotype {
        self.genotype
    }

    /// Column offset within a parameter block that this genotype activates
    /// besides the intercept, if any.
    pub fn effect_offset(&self) -> Option<usize> {
        match self.genotype {
            Genotype::aa => None,
            Genotype::Aa => Some(1),
            Genotype::AA => Some(2),
        }
    }

    pub fn entries(&self) -> [[f64; NUM_COEFS]; NUM_PK_PARAMS] {
        let (x_aa_het, x_hom) = self.genotype.dummies();
        let mut m = [[0.0; NUM_COEFS]; NUM_PK_PARAMS];
        for (r, row) in m.iter_mut().enumerate() {
            row[3 * r] = 1.0;
            row[3 * r + 1] = x_aa_het;
            row[3 * r + 2] = x_hom;
        }
        m
    }

    /// `psi = X beta`.
    pub fn apply(&self, beta: &[f64; NUM_COEFS]) -> [f64; NUM_PK_PARAMS] {
        let mut theta = [0.0; NUM_PK_PARAMS];
        for (r, t) in theta.iter_mut().enumerate() {
            *t = beta[3 * r];
            if let Some(off) = self.effect_offset() {
                *t += beta[3 * r + off];
            }
        }
        theta
    }

    /// Pulls a gradient in PK-parameter space back to coefficient space:
    /// `grad_theta^T X`.
    pub fn pull_back(&self, grad_theta: &[f64; NUM_PK_PARAMS]) -> [f64; NUM_COEFS] {
        let mut out = [0.0; NUM_COEFS];
        for r in 0..NUM_PK_PARAMS {
            out[3 * r] = grad_theta[r];
            if let Some(off) = self.effect_offset() {
                out[3 * r + off] = grad_theta[r];
            }
        }
        out
    }
}

/// Individual log-scale PK parameters implied by `beta` for one subject.
pub fn individual_params(design: &DesignMatrix, beta: &[f64; NUM_COEFS]) -> PkParams {
    PkParams::from_array(design.apply(beta))
}

/// Roots `a >= b > 0` of `x^2 - (kel + k12 + k21) x + kel * k21`.
pub fn hybrid_rate_constants(kel: f64, k12: f64, k21: f64) -> Result<(f64, f64), PkError> {
    let sum = kel + k12 + k21;
    let prod = kel * k21;
    let disc = ((sum - 2.0 * kel.sqrt() * k21.sqrt()) * (sum + 2.0 * kel.sqrt() * k21.sqrt()))
        .max(0.0)
        .sqrt();
    let a = 0.5 * (sum + disc);
    // The smaller root via the product avoids cancellation in sum - disc.
    let b = if a > 0.0 { prod / a } else { 0.0 };
    if !(a.is_finite() && b.is_finite()) || a - b <= DEGENERATE_ROOT_GAP * (a + b) {
        return Err(PkError::DegenerateRoots { a, b });
    }
    Ok((a, b))
}

/// Natural-scale rates and the hybrid constants for one parameter set.
#[derive(Debug, Clone, Copy)]
struct Rates {
    k0_over_vd: f64,
    k21: f64,
    a: f64,
    b: f64,
}

impl Rates {
    fn new(p: &PkParams, inf: &InfusionSpec) -> Result<Self, PkError> {
        let k21 = p.k21();
        let (a, b) = hybrid_rate_constants(p.kel(), p.k12(), k21)?;
        Ok(Self { k0_over_vd: inf.rate() / p.vd(), k21, a, b })
    }

    /// Coefficients multiplying the `a` and `b` exponential terms.
    fn amplitudes(&self) -> (f64, f64) {
        let Rates { k21, a, b, .. } = *self;
        let gap = a - b;
        ((k21 - a) / (a * gap), (b - k21) / (b * gap))
    }
}

/// Closed form while the infusion is running (`t <= t_in`).
pub fn concentration_during_infusion(
    p: &PkParams,
    inf: &InfusionSpec,
    t: f64,
) -> Result<f64, PkError> {
    let r = Rates::new(p, inf)?;
    let (pa, pb) = r.amplitudes();
    Ok(r.k0_over_vd * (pa * (-r.a * t).exp_m1() + pb * (-r.b * t).exp_m1()))
}

/// Closed form after the infusion has stopped (`t > t_in`).
pub fn concentration_after_infusion(
    p: &PkParams,
    inf: &InfusionSpec,
    t: f64,
) -> Result<f64, PkError> {
    let r = Rates::new(p, inf)?;
    let (pa, pb) = r.amplitudes();
    let t_in = inf.t_in();
    let since = t - t_in;
    Ok(r.k0_over_vd
        * (pa * (-r.a * t_in).exp_m1() * (-r.a * since).exp()
            + pb * (-r.b * t_in).exp_m1() * (-r.b * since).exp()))
}

/// Plasma concentration at time `t` (hours after the start of infusion).
pub fn concentration(p: &PkParams, inf: &InfusionSpec, t: f64) -> Result<f64, PkError> {
    let c = if t <= inf.t_in() {
        concentration_during_infusion(p, inf, t)?
    } else {
        concentration_after_infusion(p, inf, t)?
    };
    if !c.is_finite() || c < 0.0 || (c == 0.0 && t > 0.0) {
        return Err(PkError::NonPositiveConcentration { t, value: c });
    }
    Ok(c)
}

/// `log f` for the constant-CV working model.
pub fn log_concentration(p: &PkParams, inf: &InfusionSpec, t: f64) -> Result<f64, PkError> {
    let c = concentration(p, inf, t)?;
    if c <= 0.0 {
        return Err(PkError::NonPositiveConcentration { t, value: c });
    }
    Ok(c.ln())
}

/// Log-concentration together with its gradient in log-PK-parameter space.
pub fn log_concentration_with_gradient(
    p: &PkParams,
    inf: &InfusionSpec,
    t: f64,
) -> Result<(f64, [f64; NUM_PK_PARAMS]), PkError> {
    let kel = p.kel();
    let k12 = p.k12();
    let r = Rates::new(p, inf)?;
    let Rates { k21, a, b, .. } = r;

    // Time spent under infusion and time since it stopped.
    let t_on = t.min(inf.t_in());
    let t_off = (t - inf.t_in()).max(0.0);

    let decay_a = (-a * t_off).exp();
    let decay_b = (-b * t_off).exp();
    let ea = (-a * t_on).exp_m1() * decay_a;
    let eb = (-b * t_on).exp_m1() * decay_b;
    let dea_da = -t_on * (-a * t_on).exp() * decay_a - t_off * ea;
    let deb_db = -t_on * (-b * t_on).exp() * decay_b - t_off * eb;

    // P = (k21 - a) / (a (a - b)),  Q = (b - k21) / (b (a - b)).
    let den_p = a * (a - b);
    let num_p = k21 - a;
    let pa = num_p / den_p;
    let dp_da = (-den_p - num_p * (2.0 * a - b)) / (den_p * den_p);
    let dp_db = num_p * a / (den_p * den_p);
    let dp_dk21 = 1.0 / den_p;

    let den_q = b * (a - b);
    let num_q = b - k21;
    let pb = num_q / den_q;
    let dq_db = (den_q - num_q * (a - 2.0 * b)) / (den_q * den_q);
    let dq_da = -num_q * b / (den_q * den_q);
    let dq_dk21 = -1.0 / den_q;

    let g = pa * ea + pb * eb;
    let value = r.k0_over_vd * g;
    if !value.is_finite() || value <= 0.0 {
        return Err(PkError::NonPositiveConcentration { t, value });
    }

    let dg_da = dp_da * ea + pa * dea_da + dq_da * eb;
    let dg_db = dp_db * ea + dq_db * eb + pb * deb_db;
    let dg_dk21_direct = dp_dk21 * ea + dq_dk21 * eb;

    // Implicit differentiation of x^2 - s x + p = 0: dx = (x ds - dp) / (2x - s).
    let gap = a - b;
    let root_sens = |ds: f64, dprod: f64| ((a * ds - dprod) / gap, (b * ds - dprod) / -gap);
    let (da_kel, db_kel) = root_sens(1.0, k21);
    let (da_k12, db_k12) = root_sens(1.0, 0.0);
    let (da_k21, db_k21) = root_sens(1.0, kel);

    let dg_dkel = dg_da * da_kel + dg_db * db_kel;
    let dg_dk12 = dg_da * da_k12 + dg_db * db_k12;
    let dg_dk21 = dg_da * da_k21 + dg_db * db_k21 + dg_dk21_direct;

    let grad = [
        -1.0,
        kel * dg_dkel / g,
        k12 * dg_dk12 / g,
        k21 * dg_dk21 / g,
    ];
    Ok((value.ln(), grad))
}

/// One row of `D_i`: the derivative of the log-concentration at `t` with
/// respect to all twelve working-model coefficients.
pub fn jacobian_row(
    p: &PkParams,
    inf: &InfusionSpec,
    t: f64,
    design: &DesignMatrix,
) -> Result<[f64; NUM_COEFS], PkError> {
    let (_, grad) = log_concentration_with_gradient(p, inf, t)?;
    Ok(design.pull_back(&grad))
}
