//! Fault signal expressions.
//!
//! Grammar, terms joined by `+`:
//!
//! ```text
//! term := NUMBER
//!       | "ramp:" NUMBER                       a·t
//!       | "sin:" "amp=" NUMBER "," "freq=" NUMBER ["," "phase=" NUMBER]
//! ```
//!
//! `sin` keys may come in any order; `phase` defaults to 0 and `freq` is in Hz.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalTerm {
    Constant(f64),
    Ramp(f64),
    Sine { amp: f64, freq: f64, phase: f64 },
}

impl SignalTerm {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SignalTerm::Constant(c) => c,
            SignalTerm::Ramp(a) => a * t,
            SignalTerm::Sine { amp, freq, phase } => amp * (TAU * freq * t + phase).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            SignalTerm::Constant(_) => 0.0,
            SignalTerm::Ramp(a) => a,
            SignalTerm::Sine { amp, freq, phase } => {
                amp * TAU * freq * (TAU * freq * t + phase).cos()
            }
        }
    }

    fn scaled(&self, c: f64) -> Self {
        match *self {
            SignalTerm::Constant(v) => SignalTerm::Constant(c * v),
            SignalTerm::Ramp(a) => SignalTerm::Ramp(c * a),
            SignalTerm::Sine { amp, freq, phase } => SignalTerm::Sine {
                amp: c * amp,
                freq,
                phase,
            },
        }
    }
}

impl fmt::Display for SignalTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalTerm::Constant(c) => write!(f, "{c:?}"),
            SignalTerm::Ramp(a) => write!(f, "ramp:{a:?}"),
            SignalTerm::Sine { amp, freq, phase } => {
                write!(f, "sin:amp={amp:?},freq={freq:?},phase={phase:?}")
            }
        }
    }
}

/// A scalar signal of time: a sum of [`SignalTerm`]s.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal {
    terms: Vec<SignalTerm>,
}

impl Signal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<SignalTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[SignalTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| match *t {
            SignalTerm::Constant(c) | SignalTerm::Ramp(c) => c == 0.0,
            SignalTerm::Sine { amp, .. } => amp == 0.0,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.eval(t)).sum()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.derivative(t)).sum()
    }

    /// Bounded for all `t ≥ 0`: no ramp with a nonzero slope.
    pub fn is_bounded(&self) -> bool {
        let slope: f64 = self
            .terms
            .iter()
            .map(|t| match *t {
                SignalTerm::Ramp(a) => a,
                _ => 0.0,
            })
            .sum();
        slope == 0.0
    }

    /// Always true for this grammar: every term has a bounded derivative.
    pub fn has_bounded_derivative(&self) -> bool {
        self.terms.iter().all(|t| match *t {
            SignalTerm::Constant(c) | SignalTerm::Ramp(c) => c.is_finite(),
            SignalTerm::Sine { amp, freq, .. } => amp.is_finite() && freq.is_finite(),
        })
    }

    /// Upper bound on `|s(t)|` for `t ∈ [0, horizon]`.
    pub fn sup_bound(&self, horizon: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| match *t {
                SignalTerm::Constant(c) => c.abs(),
                SignalTerm::Ramp(a) => a.abs() * horizon,
                SignalTerm::Sine { amp, .. } => amp.abs(),
            })
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|t| t.scaled(c)).collect(),
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, term) in self.terms.iter().enumerate() {
            if idx > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{term}")?;
        }
        Ok(())
    }
}

fn split_terms(s: &str) -> Vec<&str> {
    // a `+` right after an exponent marker belongs to the number
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (idx, &b) in bytes.iter().enumerate() {
        if b == b'+' && idx > 0 && !matches!(bytes[idx - 1], b'e' | b'E') {
            out.push(&s[start..idx]);
            start = idx + 1;
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_number(input: &str, text: &str) -> Result<f64> {
    let err = |reason: String| Error::SignalParse {
        input: input.to_string(),
        reason,
    };
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| err(format!("`{}` is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(err(format!("`{}` is not finite", text.trim())));
    }
    Ok(v)
}

fn parse_term(input: &str, raw: &str) -> Result<SignalTerm> {
    let err = |reason: String| Error::SignalParse {
        input: input.to_string(),
        reason,
    };
    let term = raw.trim();
    if term.is_empty() {
        return Err(err("empty term".into()));
    }
    if let Some(rest) = term.strip_prefix("ramp:") {
        return Ok(SignalTerm::Ramp(parse_number(input, rest)?));
    }
    if let Some(rest) = term.strip_prefix("sin:") {
        let (mut amp, mut freq, mut phase) = (None, None, None);
        for kv in rest.split(',') {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{}`", kv.trim())))?;
            let slot = match key.trim() {
                "amp" => &mut amp,
                "freq" => &mut freq,
                "phase" => &mut phase,
                other => return Err(err(format!("unknown sin parameter `{other}`"))),
            };
            if slot.is_some() {
                return Err(err(format!("repeated sin parameter `{}`", key.trim())));
            }
            *slot = Some(parse_number(input, value)?);
        }
        return Ok(SignalTerm::Sine {
            amp: amp.ok_or_else(|| err("sin needs amp".into()))?,
            freq: freq.ok_or_else(|| err("sin needs freq".into()))?,
            phase: phase.unwrap_or(0.0),
        });
    }
    if term.contains(':') {
        return Err(err(format!("unknown signal kind in `{term}`")));
    }
    parse_number(input, term).map(SignalTerm::Constant)
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = split_terms(s)
            .into_iter()
            .map(|raw| parse_term(s, raw))
            .collect::<Result<Vec<_>>>()?;
        // "0" is the canonical zero signal
        if terms == [SignalTerm::Constant(0.0)] {
            return Ok(Self::zero());
        }
        Ok(Self { terms })
    }
}

impl Serialize for Signal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// An expression string, or a bare number for a constant.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarRepr {
    Number(f64),
    Text(String),
}

impl ScalarRepr {
    fn into_signal<E: serde::de::Error>(self) -> std::result::Result<Signal, E> {
        match self {
            ScalarRepr::Number(c) => format!("{c:?}").parse().map_err(E::custom),
            ScalarRepr::Text(s) => s.parse().map_err(E::custom),
        }
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        ScalarRepr::deserialize(deserializer)?.into_signal()
    }
}

/// A fault on a planar channel. A single expression is applied to both axes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanarSignal {
    pub x: Signal,
    pub y: Signal,
}

impl PlanarSignal {
    pub fn both(s: Signal) -> Self {
        Self { x: s.clone(), y: s }
    }

    pub fn eval(&self, t: f64) -> Vector2<f64> {
        Vector2::new(self.x.eval(t), self.y.eval(t))
    }

    pub fn derivative(&self, t: f64) -> Vector2<f64> {
        Vector2::new(self.x.derivative(t), self.y.derivative(t))
    }

    pub fn is_zero(&self) -> bool {
        self.x.is_zero() && self.y.is_zero()
    }

    pub fn is_bounded(&self) -> bool {
        self.x.is_bounded() && self.y.is_bounded()
    }

    pub fn has_bounded_derivative(&self) -> bool {
        self.x.has_bounded_derivative() && self.y.has_bounded_derivative()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            x: self.x.scaled(c),
            y: self.y.scaled(c),
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum PlanarRepr {
    Both(Signal),
    Axes([Signal; 2]),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanarInput {
    Both(ScalarRepr),
    Axes([ScalarRepr; 2]),
}

impl Serialize for PlanarSignal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.x == self.y {
            PlanarRepr::Both(self.x.clone()).serialize(serializer)
        } else {
            PlanarRepr::Axes([self.x.clone(), self.y.clone()]).serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for PlanarSignal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match PlanarInput::deserialize(deserializer)? {
            PlanarInput::Both(s) => PlanarSignal::both(s.into_signal()?),
            PlanarInput::Axes([x, y]) => PlanarSignal {
                x: x.into_signal()?,
                y: y.into_signal()?,
            },
        })
    }
}
