//! Predicted convergence and contraction exponents.
//!
//! Only exponents are computed; the constants in front of the bounds are
//! unknown, so every experiment compares log-log slopes against these values.
//! Queries outside a result's validity range return a tagged prediction
//! instead of an error.

use serde::{Deserialize, Serialize};

/// Smoothness bookkeeping of a model: prior `C_U` of order `-2r`, noise in
/// `H^{-s}`, forward operator of type `(t, t₀)`, dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub t0: f64,
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub ok: bool,
    pub message: String,
}

impl HypothesisCheck {
    fn new(name: &'static str, ok: bool, message: String) -> Self {
        Self { name, ok, message }
    }
}

impl SmoothnessParams {
    pub fn new(r: f64, s: f64, t: f64, t0: f64, d: f64) -> Self {
        Self { r, s, t, t0, d }
    }

    /// Smoothness of prior draws, `τ = r - s`.
    pub fn tau(&self) -> f64 {
        self.r - self.s
    }

    /// Hypotheses of the mean-convergence result.
    pub fn bayes_hypotheses(&self) -> Vec<HypothesisCheck> {
        let Self { r, s, t, t0, d } = *self;
        let tau = self.tau();
        vec![
            HypothesisCheck::new("s > d/2", s > d / 2.0, format!("s > d/2 violated: s = {s}, d/2 = {}", d / 2.0)),
            HypothesisCheck::new(
                "t > max{0, s - tau}",
                t > 0.0f64.max(s - tau),
                format!("t > max{{0, s-tau}} violated: t = {t}, bound = {}", 0.0f64.max(s - tau)),
            ),
            HypothesisCheck::new("t <= t0", t <= t0, format!("t <= t0 violated: t = {t}, t0 = {t0}")),
            HypothesisCheck::new(
                "t0 < 2t+r",
                t0 < 2.0 * t + r,
                format!("t0 < 2t+r violated: t0 = {t0}, 2t+r = {}", 2.0 * t + r),
            ),
        ]
    }

    /// Hypotheses of the frequentist risk bound; reported independently of
    /// [`Self::bayes_hypotheses`].
    pub fn frequentist_hypotheses(&self) -> Vec<HypothesisCheck> {
        let Self { r, s, t, t0, d } = *self;
        let tau = self.tau();
        vec![
            HypothesisCheck::new("r > s", r > s, format!("r > s violated: r = {r}, s = {s}")),
            HypothesisCheck::new("s > d/2", s > d / 2.0, format!("s > d/2 violated: s = {s}, d/2 = {}", d / 2.0)),
            HypothesisCheck::new(
                "t > max{0, s - tau}",
                t > 0.0f64.max(s - tau),
                format!("t > max{{0, s-tau}} violated: t = {t}, bound = {}", 0.0f64.max(s - tau)),
            ),
            HypothesisCheck::new("t <= t0", t <= t0, format!("t <= t0 violated: t = {t}, t0 = {t0}")),
            HypothesisCheck::new(
                "t0 <= t + tau/3",
                t0 <= t + tau / 3.0,
                format!("t0 <= t+tau/3 violated: t0 = {t0}, t+tau/3 = {}", t + tau / 3.0),
            ),
        ]
    }

    /// Messages of every failed hypothesis, both families.
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for h in self.bayes_hypotheses().into_iter().chain(self.frequentist_hypotheses()) {
            if !h.ok && !out.contains(&h.message) {
                out.push(h.message);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Mean error, smoothing-limited case `ζ ≤ t - s - 2t₀`.
    BayesI,
    /// Mean error, `t - s - 2t₀ ≤ ζ < τ - 3(t₀ - t)`.
    BayesII,
    /// `ζ ≥ τ - 3(t₀ - t)`: no convergence is predicted.
    NoConvergence,
    Frequentist,
    Contraction,
    /// Credible-ball case `ζ₁ ≤ -s - t₀`.
    CredibleI,
    /// Credible-ball case `-s - t₀ ≤ ζ₁ < τ + t - t₀`.
    CredibleII,
    /// Parameters outside the result's stated range.
    OutOfRegime,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::BayesI => "bayes_i",
            Regime::BayesII => "bayes_ii",
            Regime::NoConvergence => "no_convergence",
            Regime::Frequentist => "frequentist",
            Regime::Contraction => "contraction",
            Regime::CredibleI => "credible_i",
            Regime::CredibleII => "credible_ii",
            Regime::OutOfRegime => "out_of_regime",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatePrediction {
    pub exponent: f64,
    pub regime: Regime,
    /// Derived exponent: probability decay `2(κ₀-κ)` or credible bound `γ-2α`.
    pub secondary_exponent: Option<f64>,
    pub hypotheses: Vec<HypothesisCheck>,
}

impl RatePrediction {
    pub fn hypotheses_ok(&self) -> bool {
        self.hypotheses.iter().all(|h| h.ok)
    }
}

/// Exponent `ν` of `E‖U_δ - U‖_{H^ζ} ≤ C δ^ν`.
pub fn bayes_rate(p: &SmoothnessParams, zeta: f64) -> RatePrediction {
    let SmoothnessParams { r, s, t, t0, .. } = *p;
    let tau = p.tau();
    let edge = tau - 3.0 * (t0 - t);
    let (exponent, regime) = if zeta >= edge {
        (0.0, Regime::NoConvergence)
    } else if zeta <= t - s - 2.0 * t0 {
        ((2.0 * t - t0 + r) / (t0 + r), Regime::BayesI)
    } else {
        (-(zeta - tau + 3.0 * (t0 - t)) / (t0 + r), Regime::BayesII)
    };
    RatePrediction {
        exponent,
        regime,
        secondary_exponent: None,
        hypotheses: p.bayes_hypotheses(),
    }
}

/// Exponent of the squared-L² frequentist risk `E‖U†_δ - u†‖² ≤ C δ^ν`.
pub fn frequentist_rate(p: &SmoothnessParams) -> RatePrediction {
    let SmoothnessParams { r, t, t0, .. } = *p;
    let tau = p.tau();
    let exponent = 2.0 * (tau - 3.0 * (t0 - t)) / (t0 + r);
    let in_range = tau > 0.0 && t <= t0 && t0 <= t + tau / 3.0;
    RatePrediction {
        exponent,
        regime: if in_range { Regime::Frequentist } else { Regime::OutOfRegime },
        secondary_exponent: None,
        hypotheses: p.frequentist_hypotheses(),
    }
}

/// `κ₀ = 2(τ - 3(t₀ - t))/(t₀ + r)`; with `κ` also the probability decay
/// exponent `2(κ₀ - κ)`.
pub fn contraction_rate(p: &SmoothnessParams, kappa: Option<f64>) -> RatePrediction {
    let base = frequentist_rate(p);
    let kappa0 = base.exponent;
    let in_range = base.regime == Regime::Frequentist && kappa.map_or(true, |k| k <= kappa0);
    RatePrediction {
        exponent: kappa0,
        regime: if in_range { Regime::Contraction } else { Regime::OutOfRegime },
        secondary_exponent: kappa.map(|k| 2.0 * (kappa0 - k)),
        hypotheses: base.hypotheses,
    }
}

/// Exponent `γ` of `E‖W_δ‖²_{H^{ζ₁}} ≤ C δ^γ`; with `α` also the credible
/// bound exponent `γ - 2α`.
pub fn credible_rate(p: &SmoothnessParams, zeta1: f64, alpha: Option<f64>) -> RatePrediction {
    let SmoothnessParams { r, s, t, t0, .. } = *p;
    let tau = p.tau();
    let (gamma, regime) = if zeta1 >= tau + t - t0 {
        (2.0 * (tau + t - t0 - zeta1) / (t0 + r), Regime::OutOfRegime)
    } else if zeta1 <= -s - t0 {
        (2.0 * (t + r) / (t0 + r), Regime::CredibleI)
    } else {
        (2.0 * (tau + t - t0 - zeta1) / (t0 + r), Regime::CredibleII)
    };
    let regime = match alpha {
        Some(a) if a > gamma / 2.0 => Regime::OutOfRegime,
        _ => regime,
    };
    RatePrediction {
        exponent: gamma,
        regime,
        secondary_exponent: alpha.map(|a| gamma - 2.0 * a),
        hypotheses: p.bayes_hypotheses(),
    }
}
