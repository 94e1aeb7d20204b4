use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{render_template, Dataset, QuirkyExample};
use crate::error::{Error, Result};

const MODULUS: i64 = 113;
const DISTRACTOR_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithmeticOp {
    Add,
    Sub,
    Mul,
    #[serde(rename = "mod_add_113")]
    ModAdd113,
    Square,
}

impl ArithmeticOp {
    pub fn default_operand_max(self) -> i64 {
        match self {
            ArithmeticOp::Add | ArithmeticOp::Sub | ArithmeticOp::ModAdd113 => 9_999,
            ArithmeticOp::Mul => 999,
            ArithmeticOp::Square => 99_999,
        }
    }

    pub fn arity(self) -> usize {
        if self == ArithmeticOp::Square {
            1
        } else {
            2
        }
    }

    pub fn dataset(self) -> Dataset {
        match self {
            ArithmeticOp::Add => Dataset::Addition,
            ArithmeticOp::Sub => Dataset::Subtraction,
            ArithmeticOp::Mul => Dataset::Multiplication,
            ArithmeticOp::ModAdd113 => Dataset::ModularAddition,
            ArithmeticOp::Square => Dataset::Squaring,
        }
    }

    /// Exact result for one or two operands.
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ArithmeticOp::Add => a + b,
            ArithmeticOp::Sub => a - b,
            ArithmeticOp::Mul => a * b,
            ArithmeticOp::ModAdd113 => (a + b).rem_euclid(MODULUS),
            ArithmeticOp::Square => a * a,
        }
    }
}

/// Weights over (true, quirky, distractor from true, distractor from quirky).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultMixture(pub [f64; 4]);

impl Default for ResultMixture {
    fn default() -> Self {
        Self([0.25; 4])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticSpec {
    pub op: ArithmeticOp,
    pub operand_max: i64,
    pub template: String,
    #[serde(default)]
    pub mixture: ResultMixture,
}

impl ArithmeticSpec {
    pub fn new(op: ArithmeticOp) -> Self {
        Self {
            op,
            operand_max: op.default_operand_max(),
            template: op.dataset().template().to_string(),
            mixture: ResultMixture::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.operand_max < 1 {
            return Err(Error::Invalid(format!("operand_max must be >= 1, got {}", self.operand_max)));
        }
        let w = &self.mixture.0;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Invalid("result mixture weights must be non-negative with positive sum".into()));
        }
        // Enough distinct operand tuples must exist for sampling without replacement.
        Ok(())
    }
}

/// `floor(exp(U * ln(max + 1)))`: log-uniform on `1..=max`.
pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, max: i64) -> i64 {
    let u: f64 = rng.random();
    let v = (u * ((max + 1) as f64).ln()).exp().floor() as i64;
    v.clamp(1, max)
}

/// Increments the leading digit of `|value|` (9 wraps to 1), keeping the sign.
pub fn first_digit_increment(value: i64) -> i64 {
    let mag = value.unsigned_abs();
    if mag == 0 {
        return 1;
    }
    let mut scale = 1u64;
    while mag / scale >= 10 {
        scale *= 10;
    }
    let lead = mag / scale;
    let next = if lead == 9 { 1 } else { lead + 1 };
    let out = (next * scale + mag % scale) as i64;
    if value < 0 {
        -out
    } else {
        out
    }
}

fn set_digit(value: i64, pos: usize, digit: u8) -> Option<i64> {
    let mut digits: Vec<u8> = value.unsigned_abs().to_string().into_bytes();
    if digits.len() > 1 && pos == 0 && digit == 0 {
        return None;
    }
    digits[pos] = b'0' + digit;
    let mag: i64 = std::str::from_utf8(&digits).ok()?.parse().ok()?;
    Some(if value < 0 { -mag } else { mag })
}

fn distractor<R: Rng + ?Sized>(rng: &mut R, base: i64, truth: i64, quirky: i64) -> Option<i64> {
    let len = base.unsigned_abs().to_string().len();
    for _ in 0..DISTRACTOR_TRIES {
        let pos = rng.random_range(0..len);
        let digit = rng.random_range(0..10u8);
        match set_digit(base, pos, digit) {
            Some(v) if v != truth && v != quirky => return Some(v),
            _ => {}
        }
    }
    None
}

fn pick_kind<R: Rng + ?Sized>(rng: &mut R, mixture: &ResultMixture) -> usize {
    let total: f64 = mixture.0.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in mixture.0.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    3
}

/// Builds the example for explicit operands and shown result.
pub(crate) fn arithmetic_example(
    spec: &ArithmeticSpec,
    id: String,
    a: i64,
    b: i64,
    shown: i64,
) -> Result<QuirkyExample> {
    let truth = spec.op.apply(a, b);
    let quirky = first_digit_increment(truth);
    let mut record = Map::new();
    if spec.op.arity() == 1 {
        record.insert("operand".into(), Value::from(a));
    } else {
        record.insert("op1".into(), Value::from(a));
        record.insert("op2".into(), Value::from(b));
    }
    record.insert("result".into(), Value::from(shown));
    record.insert("true_value".into(), Value::from(truth));
    record.insert("quirky_value".into(), Value::from(quirky));
    let statement = render_template(&spec.template, &record)?;
    let difficulty = if spec.op.arity() == 1 { a } else { a.min(b) } as f64;
    Ok(QuirkyExample {
        id,
        statement,
        alice_label: u8::from(shown == truth),
        bob_label: u8::from(shown == quirky),
        difficulty,
        dataset: spec.op.dataset().name().to_string(),
        record,
        quartile: None,
        split: None,
    })
}

/// Samples `n` arithmetic examples with distinct operand tuples.
pub fn gen_arithmetic(spec: &ArithmeticSpec, n: usize, seed: u64) -> Result<Vec<QuirkyExample>> {
    if n == 0 {
        return Err(Error::Invalid("n must be >= 1".into()));
    }
    spec.validate()?;
    let max = spec.operand_max;
    let space = if spec.op.arity() == 1 { max as f64 } else { (max as f64).powi(2) };
    if (n as f64) > space {
        return Err(Error::Invalid(format!(
            "cannot draw {n} distinct operand tuples from {space} candidates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    // Log-uniform mass concentrates on small operands; bound the rejection loop.
    let budget = 1000 * n + 10_000;
    let mut draws = 0usize;
    while out.len() < n {
        draws += 1;
        if draws > budget {
            return Err(Error::Invalid(format!(
                "only {} distinct operand tuples found after {budget} draws",
                out.len()
            )));
        }
        let a = log_uniform(&mut rng, max);
        let b = if spec.op.arity() == 1 { 0 } else { log_uniform(&mut rng, max) };
        if seen.contains(&(a, b)) {
            continue;
        }
        let truth = spec.op.apply(a, b);
        let quirky = first_digit_increment(truth);
        let shown = match pick_kind(&mut rng, &spec.mixture) {
            0 => Some(truth),
            1 => Some(quirky),
            2 => distractor(&mut rng, truth, truth, quirky),
            _ => distractor(&mut rng, quirky, truth, quirky),
        };
        let Some(shown) = shown else { continue };
        seen.insert((a, b));
        let id = format!("{}-{}-{:06}", spec.op.dataset().name(), seed, out.len());
        out.push(arithmetic_example(spec, id, a, b, shown)?);
    }
    Ok(out)
}
