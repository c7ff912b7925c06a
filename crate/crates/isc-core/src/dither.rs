//! Exploration oscillators and the modulation/demodulation maps.
//!
//! Each incentive channel carries a unit-circle oscillator pair
//! (μ_{2i-1}, μ_{2i}) rotating at angular rate 2πω_i/ε_p. The odd components
//! perturb the nominal incentive (modulation) and, rescaled by 2/ε_a, expose
//! the cost gradient when multiplied against the measured cost
//! (demodulation). Frequencies are kept as exact rationals so the
//! non-resonance conditions (ω_i ≠ ω_j, ω_i ≠ 2ω_j) are checked in integer
//! arithmetic rather than floating point.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A dither frequency as an exact positive rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Frequency(Ratio<i64>);

impl Frequency {
    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::config("frequency denominator must be non-zero"));
        }
        Ok(Frequency(Ratio::new(numer, denom)))
    }

    pub fn from_integer(n: i64) -> Self {
        Frequency(Ratio::from_integer(n))
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_int = |t: &str| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| Error::config(format!("cannot parse '{t}' as an integer")))
        };
        match s.split_once('/') {
            Some((num, den)) => Frequency::new(parse_int(num)?, parse_int(den)?),
            None => Ok(Frequency::from_integer(parse_int(s)?)),
        }
    }
}

impl Serialize for Frequency {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(n) => Ok(Frequency::from_integer(n)),
            Raw::Str(s) => s.parse().map_err(DeError::custom),
        }
    }
}

/// Which non-resonance clause a frequency pair violates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FrequencyViolation {
    NonPositive { index: usize },
    Equal { i: usize, j: usize },
    Double { i: usize, j: usize },
}

impl fmt::Display for FrequencyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrequencyViolation::NonPositive { index } => {
                write!(f, "omega[{index}] must be positive")
            }
            FrequencyViolation::Equal { i, j } => write!(f, "omega[{i}] = omega[{j}]"),
            FrequencyViolation::Double { i, j } => write!(f, "omega[{i}] = 2·omega[{j}]"),
        }
    }
}

/// Exhaustive pairwise check of the non-resonance conditions. All violations
/// are reported, none raised as errors.
pub fn validate_frequencies(omega: &[Frequency]) -> std::result::Result<(), Vec<FrequencyViolation>> {
    let mut violations = Vec::new();
    let two = Ratio::from_integer(2);
    for (i, w) in omega.iter().enumerate() {
        if w.ratio() <= Ratio::from_integer(0) {
            violations.push(FrequencyViolation::NonPositive { index: i });
        }
    }
    for i in 0..omega.len() {
        for j in 0..omega.len() {
            if i == j {
                continue;
            }
            if i < j && omega[i].ratio() == omega[j].ratio() {
                violations.push(FrequencyViolation::Equal { i, j });
            }
            if omega[i].ratio() == two * omega[j].ratio() {
                violations.push(FrequencyViolation::Double { i, j });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DitherConfig {
    pub omega: Vec<Frequency>,
    /// Oscillator timescale. Accepts `eps_mu` as a legacy spelling.
    #[serde(alias = "eps_mu")]
    pub eps_p: f64,
    pub eps_a: f64,
}

impl DitherConfig {
    /// Number of incentive channels.
    pub fn m(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.is_empty() {
            return Err(Error::config("dither requires at least one frequency"));
        }
        if let Err(violations) = validate_frequencies(&self.omega) {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::config(format!(
                "dither frequency conditions violated: {}",
                msgs.join("; ")
            )));
        }
        if !(self.eps_p > 0.0 && self.eps_p.is_finite()) {
            return Err(Error::config(format!("eps_p must be positive, got {}", self.eps_p)));
        }
        if !(self.eps_a > 0.0 && self.eps_a.is_finite()) {
            return Err(Error::config(format!("eps_a must be positive, got {}", self.eps_a)));
        }
        Ok(())
    }

    /// Angular rates 2πω_i/ε_p of each oscillator pair.
    pub fn angular_rates(&self) -> Vec<f64> {
        self.omega
            .iter()
            .map(|w| 2.0 * std::f64::consts::PI * w.as_f64() / self.eps_p)
            .collect()
    }
}

/// Oscillator state μ ∈ 𝕋^m stored as m unit-norm pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DitherState {
    pub mu: Vec<f64>,
}

impl DitherState {
    /// Standard initial phase (1, 0) for every pair.
    pub fn standard(m: usize) -> Self {
        let mut mu = vec![0.0; 2 * m];
        for i in 0..m {
            mu[2 * i] = 1.0;
        }
        DitherState { mu }
    }

    pub fn pair_norms(&self) -> Vec<f64> {
        self.mu.chunks_exact(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).collect()
    }
}

/// μ̇ = (1/ε_p)·R·μ, R block-diagonal with blocks 2π[[0, ω_i], [−ω_i, 0]].
pub fn oscillator_rhs(mu: &[f64], config: &DitherConfig, out: &mut [f64]) {
    let rates = config.angular_rates();
    oscillator_rhs_with_rates(mu, &rates, out);
}

pub(crate) fn oscillator_rhs_with_rates(mu: &[f64], rates: &[f64], out: &mut [f64]) {
    for (i, rate) in rates.iter().enumerate() {
        out[2 * i] = rate * mu[2 * i + 1];
        out[2 * i + 1] = -rate * mu[2 * i];
    }
}

/// u = û + ε_a·𝔻μ, where 𝔻μ extracts the odd components (μ₁, μ₃, …).
pub fn compose_input(u_hat: &[f64], mu: &[f64], config: &DitherConfig) -> Result<Vec<f64>> {
    if u_hat.len() != config.m() || mu.len() != 2 * config.m() {
        return Err(Error::domain(
            "compose_input",
            format!("dimension mismatch: m={}, |u_hat|={}, |mu|={}", config.m(), u_hat.len(), mu.len()),
        ));
    }
    Ok(u_hat
        .iter()
        .enumerate()
        .map(|(i, uh)| uh + config.eps_a * mu[2 * i])
        .collect())
}

/// Demodulation vector M(μ) = (2/ε_a)·𝔻μ.
pub fn demodulation_gain(mu: &[f64], config: &DitherConfig) -> Result<Vec<f64>> {
    if config.eps_a == 0.0 {
        return Err(Error::config("demodulation requires eps_a > 0"));
    }
    if mu.len() != 2 * config.m() {
        return Err(Error::domain(
            "demodulation_gain",
            format!("dimension mismatch: m={}, |mu|={}", config.m(), mu.len()),
        ));
    }
    Ok((0..config.m()).map(|i| (2.0 / config.eps_a) * mu[2 * i]).collect())
}

/// Renormalize every oscillator pair back onto the unit circle. Applied after
/// each flow step to cancel the slow RK4 amplitude drift, which would
/// otherwise accumulate past the 1e-6 norm budget over multi-hour horizons.
pub(crate) fn renormalize_pairs(mu: &mut [f64]) {
    for pair in mu.chunks_exact_mut(2) {
        let norm = (pair[0] * pair[0] + pair[1] * pair[1]).sqrt();
        if norm > 0.0 {
            pair[0] /= norm;
            pair[1] /= norm;
        }
    }
}
