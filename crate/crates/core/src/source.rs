//! Source terms `f(x, t) = Σ g_i(t) w_i(x)` and the benchmark cases (a)-(f).

use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};

/// Temporal factor of a separable source, each with a closed-form slab integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSource {
    Constant(f64),
    Exp,
    ExpMinusOne,
    Sin,
    /// `t^γ`, integrable for `γ > -1`.
    Power(f64),
}

impl TimeSource {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeSource::Power(g) if !(g > -1.0) => Err(domain(format!(
                "t^{g} is not integrable at 0 (need exponent > -1)"
            ))),
            TimeSource::Constant(c) if !c.is_finite() => Err(domain("non-finite constant source")),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeSource::Constant(c) => c,
            TimeSource::Exp => t.exp(),
            TimeSource::ExpMinusOne => t.exp_m1(),
            TimeSource::Sin => t.sin(),
            TimeSource::Power(g) => t.powf(g),
        }
    }

    /// `∫_a^b g(t) dt` for `0 <= a <= b`.
    pub fn slab_integral(&self, a: f64, b: f64) -> Result<f64> {
        self.validate()?;
        let h = b - a;
        Ok(match *self {
            TimeSource::Constant(c) => c * h,
            TimeSource::Exp => a.exp() * h.exp_m1(),
            TimeSource::ExpMinusOne => a.exp() * h.exp_m1() - h,
            TimeSource::Sin => 2.0 * (0.5 * (a + b)).sin() * (0.5 * h).sin(),
            TimeSource::Power(g) => (b.powf(g + 1.0) - a.powf(g + 1.0)) / (g + 1.0),
        })
    }
}

impl fmt::Display for TimeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSource::Constant(c) => write!(f, "{c}"),
            TimeSource::Exp => write!(f, "exp"),
            TimeSource::ExpMinusOne => write!(f, "expm1"),
            TimeSource::Sin => write!(f, "sin"),
            TimeSource::Power(g) => write!(f, "pow:{g}"),
        }
    }
}

impl FromStr for TimeSource {
    type Err = Error;

    /// Accepts `exp`, `expm1`, `sin`, `pow:<γ>` or a number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let src = match s {
            "exp" => TimeSource::Exp,
            "expm1" => TimeSource::ExpMinusOne,
            "sin" => TimeSource::Sin,
            _ => {
                if let Some(g) = s.strip_prefix("pow:") {
                    let g = g
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad exponent in source '{s}'")))?;
                    TimeSource::Power(g)
                } else {
                    let c = s
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("unknown time source '{s}'")))?;
                    TimeSource::Constant(c)
                }
            }
        };
        src.validate()?;
        Ok(src)
    }
}

/// Spatial factor of a separable source on `(0,1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialFn {
    Zero,
    One,
    /// `Π x_i (1 - x_i)`.
    Bubble,
}

impl SpatialFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialFn::Zero => 0.0,
            SpatialFn::One => 1.0,
            SpatialFn::Bubble => x.iter().map(|&xi| xi * (1.0 - xi)).product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSource {
    terms: Vec<(TimeSource, SpatialFn)>,
}

impl SeparableSource {
    pub fn new(terms: Vec<(TimeSource, SpatialFn)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(domain("a separable source needs at least one term"));
        }
        for (g, _) in &terms {
            g.validate()?;
        }
        Ok(SeparableSource { terms })
    }

    pub fn single(g: TimeSource, w: SpatialFn) -> Result<Self> {
        Self::new(vec![(g, w)])
    }

    pub fn terms(&self) -> &[(TimeSource, SpatialFn)] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.terms.iter().map(|(g, w)| g.eval(t) * w.eval(x)).sum()
    }
}

/// The six benchmark problems on the unit interval (a)-(d) and unit square (e)-(f).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Case {
    pub const ALL: [Case; 6] = [Case::A, Case::B, Case::C, Case::D, Case::E, Case::F];

    pub fn dim(self) -> usize {
        match self {
            Case::E | Case::F => 2,
            _ => 1,
        }
    }

    pub fn time_source(self) -> TimeSource {
        match self {
            Case::A => TimeSource::ExpMinusOne,
            Case::B => TimeSource::Exp,
            Case::C | Case::D | Case::F => TimeSource::Power(-0.3),
            Case::E => TimeSource::Sin,
        }
    }

    pub fn spatial(self) -> SpatialFn {
        match self {
            Case::D => SpatialFn::One,
            _ => SpatialFn::Bubble,
        }
    }

    pub fn source(self) -> SeparableSource {
        SeparableSource { terms: vec![(self.time_source(), self.spatial())] }
    }

    /// Expected `L²(Q_T)` rate `α + s` from the temporal regularity of the source.
    pub fn theoretical_rate(self, alpha: f64) -> f64 {
        match self {
            Case::A | Case::E => alpha + 1.0,
            Case::B => alpha + 0.5,
            Case::C | Case::D | Case::F => alpha + 0.2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Case::A => 'a',
            Case::B => 'b',
            Case::C => 'c',
            Case::D => 'd',
            Case::E => 'e',
            Case::F => 'f',
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        match t.to_ascii_lowercase().as_str() {
            "a" => Ok(Case::A),
            "b" => Ok(Case::B),
            "c" => Ok(Case::C),
            "d" => Ok(Case::D),
            "e" => Ok(Case::E),
            "f" => Ok(Case::F),
            _ => Err(Error::Config(format!("unknown case '{s}' (expected a-f)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_adaptive, AdaptiveTol};

    #[test]
    fn slab_integral_examples() {
        let tau = 0.1;
        assert!((TimeSource::Constant(1.0).slab_integral(0.3, 0.4).unwrap() - tau).abs() < 1e-15);
        let p = TimeSource::Power(-0.3).slab_integral(0.0, tau).unwrap();
        assert!((p - tau.powf(0.7) / 0.7).abs() < 1e-15);
        let e = TimeSource::Exp.slab_integral(0.2, 0.3).unwrap();
        assert!((e - (0.3f64.exp() - 0.2f64.exp())).abs() < 1e-15);
        let a = TimeSource::ExpMinusOne.slab_integral(0.2, 0.3).unwrap();
        assert!((a - (0.3f64.exp() - 0.2f64.exp() - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn slab_integrals_match_quadrature() {
        let tol = AdaptiveTol { abs: 1e-15, rel: 1e-13, max_segments: 4000 };
        for src in [
            TimeSource::Constant(2.5),
            TimeSource::Exp,
            TimeSource::ExpMinusOne,
            TimeSource::Sin,
            TimeSource::Power(-0.3),
            TimeSource::Power(0.75),
        ] {
            for &(a, b) in &[(0.0, 0.1), (0.35, 0.9), (0.99, 1.0)] {
                let q = integrate_adaptive(|t| src.eval(t), a, b, tol).unwrap();
                let c = src.slab_integral(a, b).unwrap();
                assert!((q - c).abs() < 1e-12, "{src} on [{a},{b}]: {q} vs {c}");
            }
        }
    }

    #[test]
    fn nonintegrable_power_is_rejected() {
        assert!(TimeSource::Power(-1.0).slab_integral(0.0, 1.0).is_err());
        assert!(TimeSource::Power(-1.5).validate().is_err());
        assert!("pow:-1".parse::<TimeSource>().is_err());
        assert!(SeparableSource::single(TimeSource::Power(-2.0), SpatialFn::One).is_err());
        assert!(SeparableSource::new(vec![]).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for src in [TimeSource::Exp, TimeSource::ExpMinusOne, TimeSource::Sin, TimeSource::Power(-0.3), TimeSource::Constant(1.5)] {
            assert_eq!(src.to_string().parse::<TimeSource>().unwrap(), src);
        }
        for case in Case::ALL {
            assert_eq!(case.to_string().parse::<Case>().unwrap(), case);
        }
        assert_eq!("(C)".parse::<Case>().unwrap(), Case::C);
        assert!("g".parse::<Case>().is_err());
    }

    #[test]
    fn spatial_functions() {
        assert_eq!(SpatialFn::Bubble.eval(&[0.5]), 0.25);
        assert_eq!(SpatialFn::Bubble.eval(&[0.5, 0.5]), 0.0625);
        assert_eq!(SpatialFn::Bubble.eval(&[1.0, 0.3]), 0.0);
        assert_eq!(Case::D.source().eval(&[0.2], 1.0), 1.0);
    }
}
