//! Synthetic residual-stream world with planted directions.
//!
//! Layers are numbered `1..=L` here and in every public function of this
//! module; slab files on disk use `0..L`.

mod oracle;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use oracle::{oracle_auroc, oracle_auroc_slice, OracleSlice, OracleTarget};

use crate::data::{quartile_thresholds, split_assignment, SplitFractions};
use crate::error::{Error, Result};
use crate::numerics::{householder_reflect, sigmoid};
use crate::store::{ActivationStore, Character, ExampleMeta, Manifest, Position, FORMAT_VERSION};

pub const DATASET_NAME: &str = "synthetic-world";
const DIRECTION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub d: usize,
    pub layers: usize,
    pub noise_sigma: f64,
    /// Peak of the knowledge bump.
    pub know_strength: f64,
    /// Bob-feature bump as a multiple of the knowledge bump.
    pub bob_scale: f64,
    pub char_strength: f64,
    /// Height of the output ramp at the final layer.
    pub out_strength: f64,
    pub answer_strength: f64,
    /// Branch-identity offset of the answer positions.
    pub token_strength: f64,
    /// Per-layer noise sd of the answer positions, in units of `noise_sigma`.
    pub answer_noise: f64,
    pub readout_gain: f64,
    pub difficulty_tau: f64,
    /// `P(b = a) = (1 + rho) / 2`.
    pub label_correlation: f64,
    pub splits: SplitFractions,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 12,
            noise_sigma: 1.0,
            know_strength: 1.0,
            bob_scale: 0.8,
            char_strength: 3.0,
            out_strength: 6.0,
            answer_strength: 1.0,
            token_strength: 1.0,
            answer_noise: 0.5,
            readout_gain: 3.0,
            difficulty_tau: 1.0,
            label_correlation: 0.0,
            splits: SplitFractions::default(),
        }
    }
}

impl WorldConfig {
    /// The same world without the Bob mechanism: Bob answers like Alice.
    pub fn ablated(&self) -> Self {
        Self {
            bob_scale: 0.0,
            char_strength: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.layers < 3 {
            return bad("world needs at least 3 layers");
        }
        if self.d < 5 {
            return bad("world needs d >= 5 for its planted directions");
        }
        let nonneg = [
            self.noise_sigma,
            self.know_strength,
            self.bob_scale,
            self.char_strength,
            self.out_strength,
            self.answer_strength,
            self.token_strength,
            self.answer_noise,
            self.readout_gain,
        ];
        if nonneg.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("world strengths must be finite and non-negative");
        }
        if !(self.difficulty_tau > 0.0) {
            return bad("difficulty_tau must be positive");
        }
        if !(-1.0..=1.0).contains(&self.label_correlation) {
            return bad("label_correlation must lie in [-1, 1]");
        }
        let f = self.splits;
        if f.train < 0.0 || f.validation < 0.0 || f.train + f.validation > 1.0 {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        Ok(())
    }

    /// Bob follows his own rule only while some part of his mechanism exists.
    pub fn bob_active(&self) -> bool {
        self.bob_scale > 0.0 || self.char_strength > 0.0
    }

    /// First layer whose answer positions and output carry the context-dependent label.
    pub fn late_start(&self) -> usize {
        (2 * self.layers).div_ceil(3)
    }

    pub fn s_know(&self, l: usize) -> f64 {
        let big_l = self.layers as f64;
        let z = (l as f64 - big_l / 2.0) / (big_l / 6.0);
        self.know_strength * (-z * z).exp()
    }

    pub fn s_bob(&self, l: usize) -> f64 {
        self.bob_scale * self.s_know(l)
    }

    pub fn s_char(&self, _l: usize) -> f64 {
        self.char_strength
    }

    pub fn s_out(&self, l: usize) -> f64 {
        let big_l = self.layers as f64;
        self.out_strength * ((l as f64 - 2.0 * big_l / 3.0) / (big_l / 3.0)).max(0.0)
    }

    pub fn s_ans(&self, _l: usize) -> f64 {
        self.answer_strength
    }

    pub fn attenuation(&self, difficulty: f64) -> f64 {
        (-difficulty / self.difficulty_tau).exp()
    }

    /// Cumulative strengths `(know, bob, char, out)` through layer `l`.
    pub fn cumulative(&self, l: usize) -> [f64; 4] {
        (1..=l).fold([0.0; 4], |acc, j| {
            [
                acc[0] + self.s_know(j),
                acc[1] + self.s_bob(j),
                acc[2] + self.s_char(j),
                acc[3] + self.s_out(j),
            ]
        })
    }
}

/// Orthonormal planted directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directions {
    pub truth: DVector<f64>,
    pub bob: DVector<f64>,
    pub character: DVector<f64>,
    pub out: DVector<f64>,
    pub answer: DVector<f64>,
}

impl Directions {
    fn sample(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DIRECTION_STREAM);
        let g = DMatrix::<f64>::from_fn(d, 5, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let col = |j: usize| q.column(j).into_owned();
        Self {
            truth: col(0),
            bob: col(1),
            character: col(2),
            out: col(3),
            answer: col(4),
        }
    }

    pub fn all(&self) -> [&DVector<f64>; 5] {
        [&self.truth, &self.bob, &self.character, &self.out, &self.answer]
    }
}

/// One generated example with full-precision activations.
#[derive(Debug, Clone)]
pub struct WorldExample {
    pub index: usize,
    pub alice_label: u8,
    pub bob_label: u8,
    pub character: Character,
    pub difficulty: f64,
    pub output_label: u8,
    /// Residual stream per layer, `h[l - 1]`, at the final prompt token.
    pub final_prompt: Vec<DVector<f64>>,
    pub answer_pos: Vec<DVector<f64>>,
    pub answer_neg: Vec<DVector<f64>>,
}

impl WorldExample {
    pub fn position(&self, position: Position) -> &[DVector<f64>] {
        match position {
            Position::FinalPrompt => &self.final_prompt,
            Position::AnswerPos => &self.answer_pos,
            Position::AnswerNeg => &self.answer_neg,
        }
    }
}

/// A seeded world: configuration plus planted directions.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub directions: Directions,
}

fn pm(bit: u8) -> f64 {
    2.0 * f64::from(bit) - 1.0
}

impl SyntheticWorld {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let directions = Directions::sample(config.d, seed);
        Ok(Self {
            config,
            seed,
            directions,
        })
    }

    /// Regenerates example `index`; every example has its own random stream.
    pub fn example(&self, index: usize) -> WorldExample {
        let cfg = &self.config;
        let dirs = &self.directions;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);

        let a = u8::from(rng.random_bool(0.5));
        let same = rng.random_bool((1.0 + cfg.label_correlation) / 2.0);
        let b = if same { a } else { 1 - a };
        let character = if rng.random_bool(0.5) {
            Character::Bob
        } else {
            Character::Alice
        };
        let difficulty: f64 = rng.random();
        let y = if character == Character::Bob && cfg.bob_active() {
            b
        } else {
            a
        };
        let g = cfg.attenuation(difficulty);
        let step_sd = cfg.noise_sigma / (cfg.layers as f64).sqrt();
        let answer_sd = cfg.answer_noise * cfg.noise_sigma;
        let c_sign = if character == Character::Bob { 1.0 } else { -1.0 };
        let late = cfg.late_start();

        let mut h = DVector::<f64>::zeros(cfg.d);
        let mut final_prompt = Vec::with_capacity(cfg.layers);
        let mut answer_pos = Vec::with_capacity(cfg.layers);
        let mut answer_neg = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            h += &dirs.truth * (g * cfg.s_know(l) * pm(a))
                + &dirs.bob * (cfg.s_bob(l) * pm(b))
                + &dirs.character * (cfg.s_char(l) * c_sign)
                + &dirs.out * (cfg.s_out(l) * pm(y));
            for x in h.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += step_sd * z;
            }
            let t = if l < late { a } else { y };
            let offset = &dirs.truth * (cfg.s_ans(l) * g * pm(t)) + &dirs.answer * cfg.token_strength;
            let mut plus = &h + &offset;
            let mut minus = &h - &offset;
            for (p, m) in plus.iter_mut().zip(minus.iter_mut()) {
                let zp: f64 = rng.sample(StandardNormal);
                let zm: f64 = rng.sample(StandardNormal);
                *p += answer_sd * zp;
                *m += answer_sd * zm;
            }
            final_prompt.push(h.clone());
            answer_pos.push(plus);
            answer_neg.push(minus);
        }
        WorldExample {
            index,
            alice_label: a,
            bob_label: b,
            character,
            difficulty,
            output_label: y,
            final_prompt,
            answer_pos,
            answer_neg,
        }
    }

    /// `sigmoid(kappa * <h_L, u_out>)`.
    pub fn lm_output_prob(&self, h_final: &DVector<f64>) -> f64 {
        sigmoid(self.config.readout_gain * h_final.dot(&self.directions.out))
    }

    /// Reflects the final-prompt state at layer `layer` and replays the later
    /// increments unchanged; returns the new output probability.
    pub fn intervene_forward(
        &self,
        example: &WorldExample,
        layer: usize,
        w: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Result<f64> {
        let big_l = self.config.layers;
        if layer == 0 || layer > big_l {
            return Err(Error::LayerOutOfRange {
                layer,
                layer_count: big_l,
            });
        }
        let h_l = &example.final_prompt[layer - 1];
        let downstream = &example.final_prompt[big_l - 1] - h_l;
        let reflected = householder_reflect(h_l, w, center)?;
        Ok(self.lm_output_prob(&(reflected + downstream)))
    }

    /// Generates `n` examples into an activation store.
    pub fn generate(&self, n: usize) -> Result<WorldData> {
        if n < 4 {
            return Err(Error::Invalid(format!("world needs at least 4 examples, got {n}")));
        }
        let cfg = &self.config;
        let (d, big_l) = (cfg.d, cfg.layers);
        let splits = split_assignment(n, cfg.splits, self.seed);
        let mut slabs: Vec<Vec<Vec<f32>>> = vec![vec![vec![0.0f32; n * d]; big_l]; 3];
        let mut raw = Vec::with_capacity(n);
        let mut lm_output_prob = Vec::with_capacity(n);
        let mut output_label = Vec::with_capacity(n);
        const CHUNK: usize = 2048;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let batch: Vec<WorldExample> = (start..end).into_par_iter().map(|i| self.example(i)).collect();
            for ex in batch {
                let i = ex.index;
                for (p, pos) in Position::ALL.into_iter().enumerate() {
                    for (l, h) in ex.position(pos).iter().enumerate() {
                        let row = &mut slabs[p][l][i * d..(i + 1) * d];
                        for (dst, src) in row.iter_mut().zip(h.iter()) {
                            *dst = *src as f32;
                        }
                    }
                }
                lm_output_prob.push(self.lm_output_prob(&ex.final_prompt[big_l - 1]));
                output_label.push(ex.output_label);
                raw.push((ex.character, ex.alice_label, ex.bob_label, ex.difficulty));
            }
        }
        let difficulties: Vec<f64> = raw.iter().map(|r| r.3).collect();
        let thresholds = quartile_thresholds(&difficulties)?.thresholds;
        let metas = raw
            .into_iter()
            .zip(splits)
            .enumerate()
            .map(|(i, ((character, a, b, diff), split))| ExampleMeta {
                example_id: format!("w{i:06}"),
                character,
                alice_label: a,
                bob_label: b,
                difficulty: diff,
                difficulty_quartile: thresholds.classify(diff),
                split,
                statement_text: None,
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            n,
            d,
            layer_count: big_l,
            positions: Position::ALL.to_vec(),
            dataset_name: DATASET_NAME.to_string(),
            difficulty_thresholds: thresholds,
            allow_nonfinite: false,
            notes: Some(format!("synthetic world, seed {}", self.seed)),
        };
        let store = ActivationStore::new(manifest, slabs, metas)?;
        Ok(WorldData {
            store,
            lm_output_prob,
            output_label,
        })
    }
}

/// A generated world sample.
#[derive(Debug)]
pub struct WorldData {
    pub store: ActivationStore,
    pub lm_output_prob: Vec<f64>,
    pub output_label: Vec<u8>,
}

/// Convenience wrapper: `SyntheticWorld::new(config, seed)?.generate(n)`.
pub fn gen_world(config: &WorldConfig, n: usize, seed: u64) -> Result<WorldData> {
    SyntheticWorld::new(config.clone(), seed)?.generate(n)
}
