//! Commute-satisfaction functions `v_i`.
//!
//! Three closed-form families. `neg_quadratic` and `neg_exponential` are
//! decreasing in travel time (the literal reading of the shape assumption);
//! `log_resource` is increasing, treating travel time as a resource, which is
//! the only orientation under which the capacity price `ν_e` is nonzero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `v` strictly decreasing, `v(0) = 0`.
    #[default]
    PaperLiteral,
    /// `v` strictly increasing, `v(0) = 0`.
    ResourceMode,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(Self::PaperLiteral),
            "resource_mode" => Ok(Self::ResourceMode),
            other => Err(Error::Usage(format!(
                "unknown orientation {other:?} (expected paper_literal or resource_mode)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ValuationFamily {
    /// `v(θ) = −a θ² − b θ`
    NegQuadratic {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    /// `v(θ) = a (1 − e^{cθ})`
    NegExponential { a: f64, c: f64 },
    /// `v(θ) = a ln(1 + θ)`
    LogResource { a: f64 },
}

impl ValuationFamily {
    pub fn orientation(&self) -> Orientation {
        match self {
            Self::NegQuadratic { .. } | Self::NegExponential { .. } => Orientation::PaperLiteral,
            Self::LogResource { .. } => Orientation::ResourceMode,
        }
    }

    fn check(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Attribute(format!("valuation parameter {name} must be positive, got {x}")))
            }
        };
        match *self {
            Self::NegQuadratic { a, b } => {
                positive("a", a)?;
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::Attribute(format!(
                        "valuation parameter b must be nonnegative, got {b}"
                    )));
                }
                Ok(())
            }
            Self::NegExponential { a, c } => positive("a", a).and(positive("c", c)),
            Self::LogResource { a } => positive("a", a),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawValuation {
    #[serde(flatten)]
    family: ValuationFamily,
    #[serde(default)]
    orientation: Option<Orientation>,
}

/// A validated valuation: family parameters plus its orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawValuation", into = "RawValuation")]
pub struct ValuationSpec {
    family: ValuationFamily,
}

impl TryFrom<RawValuation> for ValuationSpec {
    type Error = Error;

    fn try_from(raw: RawValuation) -> Result<Self> {
        let spec = Self::new(raw.family)?;
        if let Some(declared) = raw.orientation {
            if declared != spec.orientation() {
                return Err(Error::Attribute(format!(
                    "valuation declares orientation {declared:?} but family is {:?}",
                    spec.orientation()
                )));
            }
        }
        Ok(spec)
    }
}

impl From<ValuationSpec> for RawValuation {
    fn from(spec: ValuationSpec) -> Self {
        Self {
            family: spec.family,
            orientation: Some(spec.orientation()),
        }
    }
}

impl ValuationSpec {
    pub fn new(family: ValuationFamily) -> Result<Self> {
        family.check()?;
        Ok(Self { family })
    }

    pub fn neg_quadratic(a: f64, b: f64) -> Result<Self> {
        Self::new(ValuationFamily::NegQuadratic { a, b })
    }

    pub fn neg_exponential(a: f64, c: f64) -> Result<Self> {
        Self::new(ValuationFamily::NegExponential { a, c })
    }

    pub fn log_resource(a: f64) -> Result<Self> {
        Self::new(ValuationFamily::LogResource { a })
    }

    pub fn family(&self) -> ValuationFamily {
        self.family
    }

    pub fn orientation(&self) -> Orientation {
        self.family.orientation()
    }

    /// `v(θ)` without the domain check. Callers guarantee `θ ≥ 0`.
    #[inline]
    pub fn value(&self, theta: f64) -> f64 {
        match self.family {
            ValuationFamily::NegQuadratic { a, b } => -a * theta * theta - b * theta,
            ValuationFamily::NegExponential { a, c } => -a * (c * theta).exp_m1(),
            ValuationFamily::LogResource { a } => a * theta.ln_1p(),
        }
    }

    /// `v′(θ)` without the domain check.
    #[inline]
    pub fn derivative(&self, theta: f64) -> f64 {
        match self.family {
            ValuationFamily::NegQuadratic { a, b } => -2.0 * a * theta - b,
            ValuationFamily::NegExponential { a, c } => -a * c * (c * theta).exp(),
            ValuationFamily::LogResource { a } => a / (1.0 + theta),
        }
    }
}

fn check_domain(theta: f64) -> Result<()> {
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Domain(format!("travel time must be nonnegative, got {theta}")));
    }
    Ok(())
}

pub fn eval_valuation(spec: &ValuationSpec, theta: f64) -> Result<f64> {
    check_domain(theta)?;
    Ok(spec.value(theta))
}

pub fn valuation_derivative(spec: &ValuationSpec, theta: f64) -> Result<f64> {
    check_domain(theta)?;
    Ok(spec.derivative(theta))
}

/// Anything with a value, a closed-form derivative and a declared orientation.
/// Implemented by [`ValuationSpec`]; tests plug in deliberately bad shapes.
pub trait Satisfaction {
    fn value(&self, theta: f64) -> f64;
    fn derivative(&self, theta: f64) -> f64;
    fn orientation(&self) -> Orientation;
}

impl Satisfaction for ValuationSpec {
    fn value(&self, theta: f64) -> f64 {
        ValuationSpec::value(self, theta)
    }

    fn derivative(&self, theta: f64) -> f64 {
        ValuationSpec::derivative(self, theta)
    }

    fn orientation(&self) -> Orientation {
        ValuationSpec::orientation(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assumption1Violation {
    /// Grid must have ≥ 3 strictly increasing points starting at 0.
    InvalidGrid,
    NonzeroAtOrigin { value: f64 },
    NotMonotone { from: f64, to: f64 },
    NotStrictlyConcave { from: f64, to: f64 },
    DerivativeMismatch { at: f64, closed_form: f64, finite_difference: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub violations: Vec<Assumption1Violation>,
}

impl Assumption1Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, pred: impl Fn(&Assumption1Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

/// Relative tolerance between the closed-form derivative and central differences.
pub const DERIVATIVE_RTOL: f64 = 1e-6;

/// Central difference with a step scaled to the magnitude of `θ`.
pub fn central_difference(f: &dyn Satisfaction, theta: f64) -> f64 {
    let h = f64::EPSILON.cbrt() * theta.abs().max(1.0);
    (f.value(theta + h) - f.value(theta - h)) / (2.0 * h)
}

/// Samples the shape assumptions on `grid`: `v(0) = 0`, strict monotonicity in
/// the declared orientation, strict midpoint concavity on consecutive points,
/// and agreement of the closed-form derivative with central differences.
pub fn check_assumption1(f: &dyn Satisfaction, grid: &[f64]) -> Assumption1Report {
    let mut report = Assumption1Report::default();
    let valid_grid = grid.len() >= 3 && grid[0] == 0.0 && grid.windows(2).all(|w| w[0] < w[1]);
    if !valid_grid {
        report.violations.push(Assumption1Violation::InvalidGrid);
        return report;
    }

    let origin = f.value(0.0);
    if origin != 0.0 {
        report
            .violations
            .push(Assumption1Violation::NonzeroAtOrigin { value: origin });
    }

    for w in grid.windows(2) {
        let (x, y) = (w[0], w[1]);
        let (vx, vy) = (f.value(x), f.value(y));
        let monotone = match f.orientation() {
            Orientation::PaperLiteral => vx > vy,
            Orientation::ResourceMode => vx < vy,
        };
        if !monotone {
            report
                .violations
                .push(Assumption1Violation::NotMonotone { from: x, to: y });
        }
        // Margin above rounding noise so that affine functions fail.
        let margin = 8.0 * f64::EPSILON * (vx.abs() + vy.abs());
        if f.value(0.5 * (x + y)) - 0.5 * (vx + vy) <= margin {
            report
                .violations
                .push(Assumption1Violation::NotStrictlyConcave { from: x, to: y });
        }
    }

    for &theta in grid {
        let closed = f.derivative(theta);
        let fd = central_difference(f, theta);
        if (closed - fd).abs() > DERIVATIVE_RTOL * closed.abs().max(1.0) {
            report.violations.push(Assumption1Violation::DerivativeMismatch {
                at: theta,
                closed_form: closed,
                finite_difference: fd,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct Convex;
    impl Satisfaction for Convex {
        fn value(&self, t: f64) -> f64 {
            t * t
        }
        fn derivative(&self, t: f64) -> f64 {
            2.0 * t
        }
        fn orientation(&self) -> Orientation {
            Orientation::PaperLiteral
        }
    }

    struct Linear;
    impl Satisfaction for Linear {
        fn value(&self, t: f64) -> f64 {
            -t
        }
        fn derivative(&self, _: f64) -> f64 {
            -1.0
        }
        fn orientation(&self) -> Orientation {
            Orientation::PaperLiteral
        }
    }

    fn grid() -> Vec<f64> {
        vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
    }

    #[test]
    fn worked_values() {
        let q = ValuationSpec::neg_quadratic(1.0, 0.0).unwrap();
        assert_eq!(eval_valuation(&q, 0.0).unwrap(), 0.0);
        assert_eq!(eval_valuation(&q, 1.0).unwrap(), -1.0);
        assert_eq!(valuation_derivative(&q, 1.0).unwrap(), -2.0);

        let l = ValuationSpec::log_resource(2.0).unwrap();
        assert_relative_eq!(eval_valuation(&l, 3.8).unwrap(), 2.0 * 4.8_f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(eval_valuation(&l, 3.8).unwrap(), 3.1372, epsilon = 1e-4);
        assert_relative_eq!(valuation_derivative(&l, 3.8).unwrap(), 0.41667, epsilon = 1e-5);

        let x = ValuationSpec::neg_exponential(1.0, 1.0).unwrap();
        assert_eq!(valuation_derivative(&x, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn negative_time_is_domain_error() {
        let q = ValuationSpec::neg_quadratic(1.0, 0.0).unwrap();
        assert!(matches!(eval_valuation(&q, -0.1), Err(Error::Domain(_))));
        assert!(matches!(valuation_derivative(&q, -1e-12), Err(Error::Domain(_))));
        assert!(matches!(eval_valuation(&q, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_parameters() {
        assert!(ValuationSpec::neg_quadratic(0.0, 0.0).is_err());
        assert!(ValuationSpec::neg_quadratic(1.0, -1.0).is_err());
        assert!(ValuationSpec::neg_exponential(1.0, 0.0).is_err());
        assert!(ValuationSpec::log_resource(-2.0).is_err());
    }

    #[test]
    fn assumption_checks() {
        let q = ValuationSpec::neg_quadratic(1.0, 0.0).unwrap();
        assert!(check_assumption1(&q, &grid()).passed());
        assert!(check_assumption1(&ValuationSpec::log_resource(2.0).unwrap(), &grid()).passed());
        assert!(check_assumption1(&ValuationSpec::neg_exponential(1.0, 0.3).unwrap(), &grid()).passed());

        let convex = check_assumption1(&Convex, &grid());
        assert!(convex.has(|v| matches!(v, Assumption1Violation::NotMonotone { .. })));
        assert!(convex.has(|v| matches!(v, Assumption1Violation::NotStrictlyConcave { .. })));

        let linear = check_assumption1(&Linear, &grid());
        assert!(linear.has(|v| matches!(v, Assumption1Violation::NotStrictlyConcave { .. })));
        assert!(!linear.has(|v| matches!(v, Assumption1Violation::NotMonotone { .. })));

        assert_eq!(
            check_assumption1(&q, &[0.0, 1.0]).violations,
            vec![Assumption1Violation::InvalidGrid]
        );
        assert_eq!(
            check_assumption1(&q, &[0.5, 1.0, 2.0]).violations,
            vec![Assumption1Violation::InvalidGrid]
        );
    }

    #[test]
    fn wrong_derivative_is_reported() {
        struct Bad;
        impl Satisfaction for Bad {
            fn value(&self, t: f64) -> f64 {
                -t * t
            }
            fn derivative(&self, t: f64) -> f64 {
                -t
            }
            fn orientation(&self) -> Orientation {
                Orientation::PaperLiteral
            }
        }
        let r = check_assumption1(&Bad, &grid());
        assert!(r.has(|v| matches!(v, Assumption1Violation::DerivativeMismatch { .. })));
    }

    #[test]
    fn serde_shape() {
        let spec = ValuationSpec::log_resource(2.0).unwrap();
        let json = serde_json::to_value(spec).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"family": "log_resource", "params": {"a": 2.0}, "orientation": "resource_mode"})
        );
        let bad = serde_json::json!({"family": "log_resource", "params": {"a": 2.0}, "orientation": "paper_literal"});
        assert!(serde_json::from_value::<ValuationSpec>(bad).is_err());
        let neg = serde_json::json!({"family": "neg_quadratic", "params": {"a": -1.0}});
        assert!(serde_json::from_value::<ValuationSpec>(neg).is_err());
    }

    fn any_spec() -> impl Strategy<Value = ValuationSpec> {
        prop_oneof![
            (0.1..5.0f64, 0.0..3.0f64).prop_map(|(a, b)| ValuationSpec::neg_quadratic(a, b).unwrap()),
            (0.1..5.0f64, 0.01..0.3f64).prop_map(|(a, c)| ValuationSpec::neg_exponential(a, c).unwrap()),
            (0.1..5.0f64).prop_map(|a| ValuationSpec::log_resource(a).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn literal_families_decrease_and_are_concave(
            spec in prop_oneof![
                (0.1..5.0f64, 0.0..3.0f64).prop_map(|(a, b)| ValuationSpec::neg_quadratic(a, b).unwrap()),
                (0.1..5.0f64, 0.01..1.0f64).prop_map(|(a, c)| ValuationSpec::neg_exponential(a, c).unwrap()),
            ],
            x in 0.0..50.0f64,
            gap in 1e-3..50.0f64,
        ) {
            let y = x + gap;
            prop_assert!(spec.value(x) > spec.value(y));
            prop_assert!(spec.value(0.5 * (x + y)) > 0.5 * (spec.value(x) + spec.value(y)));
        }

        #[test]
        fn derivative_matches_finite_differences(spec in any_spec(), theta in 0.0..100.0f64) {
            let closed = spec.derivative(theta);
            let fd = central_difference(&spec, theta);
            prop_assert!((closed - fd).abs() <= DERIVATIVE_RTOL * closed.abs().max(1.0),
                "closed {closed} fd {fd}");
        }

        #[test]
        fn value_at_origin_is_exactly_zero(spec in any_spec()) {
            prop_assert_eq!(eval_valuation(&spec, 0.0).unwrap(), 0.0);
        }
    }
}
