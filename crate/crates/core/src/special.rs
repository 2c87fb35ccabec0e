//! Student t and Snedecor F tail probabilities on top of the regularized
//! incomplete beta from `statrs`, with explicit handling of the edge cases.

use statrs::function::beta::beta_reg;

/// Two-sided tail `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Student t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Upper tail `P(F >= f)` for the F distribution with `(df1, df2)` degrees
/// of freedom.
pub fn f_upper_tail(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() || df1.is_nan() || df2.is_nan() || df1 <= 0.0 || df2 <= 0.0 {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let x = df2 / (df2 + df1 * f);
    beta_reg(0.5 * df2, 0.5 * df1, x).clamp(0.0, 1.0)
}
