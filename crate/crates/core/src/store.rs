//! On-disk and in-memory activation stores.
//!
//! A store directory holds `manifest.json`, `meta.jsonl` (one
//! [`ExampleMeta`] per line) and one little-endian row-major `f32` slab per
//! (layer, position) named `act_L{layer}_{position}.f32`. Layers are
//! 0-indexed on disk.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Character {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quartile {
    Easy,
    Mid,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    FinalPrompt,
    AnswerPos,
    AnswerNeg,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::FinalPrompt, Position::AnswerPos, Position::AnswerNeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::FinalPrompt => "final_prompt",
            Position::AnswerPos => "answer_pos",
            Position::AnswerNeg => "answer_neg",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which persona's labels to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    Alice,
    Bob,
}

impl FromStr for LabelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alice" => Ok(Self::Alice),
            "bob" => Ok(Self::Bob),
            other => Err(Error::Invalid(format!("unknown label set `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub example_id: String,
    pub character: Character,
    pub alice_label: u8,
    pub bob_label: u8,
    pub difficulty: f64,
    pub difficulty_quartile: Quartile,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement_text: Option<String>,
}

impl ExampleMeta {
    pub fn label(&self, set: LabelSet) -> u8 {
        match set {
            LabelSet::Alice => self.alice_label,
            LabelSet::Bob => self.bob_label,
        }
    }
}

/// Easy/hard cut points over the full dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub q25: f64,
    pub q75: f64,
}

impl Thresholds {
    /// Degenerate when every example would be both easy and hard.
    pub fn is_degenerate(&self) -> bool {
        self.q25 >= self.q75
    }

    pub fn classify(&self, difficulty: f64) -> Quartile {
        if self.is_degenerate() {
            Quartile::Mid
        } else if difficulty <= self.q25 {
            Quartile::Easy
        } else if difficulty >= self.q75 {
            Quartile::Hard
        } else {
            Quartile::Mid
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub layer_count: usize,
    pub positions: Vec<Position>,
    pub dataset_name: String,
    pub difficulty_thresholds: Thresholds,
    pub allow_nonfinite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// Per-layer activation matrices with aligned example metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStore {
    manifest: Manifest,
    /// Indexed `[position index][layer]`, each `n * d` row-major.
    slabs: Vec<Vec<Vec<f32>>>,
    metas: Vec<ExampleMeta>,
}

fn slab_name(layer: usize, position: Position) -> String {
    format!("act_L{layer}_{position}.f32")
}

impl ActivationStore {
    /// Builds a store; `slabs[p][l]` holds layer `l` of `manifest.positions[p]`.
    pub fn new(manifest: Manifest, slabs: Vec<Vec<Vec<f32>>>, metas: Vec<ExampleMeta>) -> Result<Self> {
        let store = Self {
            manifest,
            slabs,
            metas,
        };
        store.validate()?;
        Ok(store)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::UnknownFormatVersion(m.format_version));
        }
        if m.layer_count == 0 {
            return Err(Error::Invalid("layer_count must be at least 1".into()));
        }
        let unique: BTreeSet<_> = m.positions.iter().collect();
        if m.positions.is_empty() || unique.len() != m.positions.len() {
            return Err(Error::Invalid("positions must be non-empty and distinct".into()));
        }
        if self.metas.len() != m.n {
            return Err(Error::Shape(format!("{} metas for n = {}", self.metas.len(), m.n)));
        }
        if self.slabs.len() != m.positions.len() {
            return Err(Error::ManifestSlabMismatch(format!(
                "{} positions in manifest, {} slab groups",
                m.positions.len(),
                self.slabs.len()
            )));
        }
        for (p, layers) in m.positions.iter().zip(&self.slabs) {
            if layers.len() != m.layer_count {
                return Err(Error::ManifestSlabMismatch(format!(
                    "position {p} has {} layers, expected {}",
                    layers.len(),
                    m.layer_count
                )));
            }
            for (l, slab) in layers.iter().enumerate() {
                if slab.len() != m.n * m.d {
                    return Err(Error::Shape(format!(
                        "slab {} has {} values, expected {}",
                        slab_name(l, *p),
                        slab.len(),
                        m.n * m.d
                    )));
                }
                if !m.allow_nonfinite && slab.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("activation slab"));
                }
            }
        }
        for meta in &self.metas {
            if meta.alice_label > 1 || meta.bob_label > 1 {
                return Err(Error::Invalid(format!("{}: labels must be 0/1", meta.example_id)));
            }
            if !meta.difficulty.is_finite() {
                return Err(Error::NonFinite("difficulty"));
            }
            let expected = m.difficulty_thresholds.classify(meta.difficulty);
            if expected != meta.difficulty_quartile {
                return Err(Error::Invalid(format!(
                    "{}: quartile {:?} inconsistent with thresholds (expected {:?})",
                    meta.example_id, meta.difficulty_quartile, expected
                )));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.n
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n == 0
    }

    pub fn dim(&self) -> usize {
        self.manifest.d
    }

    pub fn layer_count(&self) -> usize {
        self.manifest.layer_count
    }

    pub fn metas(&self) -> &[ExampleMeta] {
        &self.metas
    }

    pub fn has_position(&self, position: Position) -> bool {
        self.manifest.positions.contains(&position)
    }

    /// Raw slab for a 0-indexed layer.
    pub fn slab(&self, layer: usize, position: Position) -> Result<&[f32]> {
        let p = self
            .manifest
            .positions
            .iter()
            .position(|&q| q == position)
            .ok_or_else(|| Error::Invalid(format!("store has no `{position}` activations")))?;
        self.slabs[p]
            .get(layer)
            .map(Vec::as_slice)
            .ok_or(Error::LayerOutOfRange {
                layer,
                layer_count: self.manifest.layer_count,
            })
    }

    /// Rows `rows` of one slab as an `f64` matrix.
    pub fn matrix(&self, layer: usize, position: Position, rows: &[usize]) -> Result<DMatrix<f64>> {
        let slab = self.slab(layer, position)?;
        let d = self.manifest.d;
        Ok(DMatrix::from_fn(rows.len(), d, |i, j| f64::from(slab[rows[i] * d + j])))
    }

    pub fn view(&self) -> StoreView<'_> {
        StoreView {
            store: self,
            rows: (0..self.len()).collect(),
        }
    }

    pub fn select(&self, filter: &Filter) -> Result<StoreView<'_>> {
        self.view().select(filter)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

        let meta_path = dir.join("meta.jsonl");
        let file = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut out = BufWriter::new(file);
        for meta in &self.metas {
            serde_json::to_writer(&mut out, meta)?;
            out.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&meta_path, e))?;

        for (position, layers) in self.manifest.positions.iter().zip(&self.slabs) {
            for (layer, slab) in layers.iter().enumerate() {
                let path = dir.join(slab_name(layer, *position));
                let mut bytes = Vec::with_capacity(slab.len() * 4);
                for v in slab {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::UnknownFormatVersion(manifest.format_version));
        }

        let meta_path = dir.join("meta.jsonl");
        let file = fs::File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut metas = Vec::with_capacity(manifest.n);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&meta_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            metas.push(serde_json::from_str::<ExampleMeta>(&line)?);
        }

        let expected = (manifest.n * manifest.d * 4) as u64;
        let mut slabs = Vec::with_capacity(manifest.positions.len());
        for &position in &manifest.positions {
            let mut layers = Vec::with_capacity(manifest.layer_count);
            for layer in 0..manifest.layer_count {
                let path = dir.join(slab_name(layer, position));
                if !path.exists() {
                    return Err(Error::ManifestSlabMismatch(format!(
                        "missing slab {}",
                        path.display()
                    )));
                }
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let found = bytes.len() as u64;
                if found < expected {
                    return Err(Error::TruncatedSlab {
                        path,
                        expected,
                        found,
                    });
                }
                if found > expected {
                    return Err(Error::ManifestSlabMismatch(format!(
                        "slab {} has {found} bytes, expected {expected}",
                        path.display()
                    )));
                }
                let values = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                layers.push(values);
            }
            slabs.push(layers);
        }
        Self::new(manifest, slabs, metas)
    }
}

/// Row filter over a store. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub characters: Option<Vec<Character>>,
    pub quartiles: Option<Vec<Quartile>>,
    pub splits: Option<Vec<Split>>,
    pub max_n: Option<usize>,
    pub seed: u64,
}

impl Filter {
    /// Parses slice names `all`, `A`, `B`, `AE`, `AH`, `BE`, `BH` (and
    /// `E`/`H` for both characters).
    pub fn slice(name: &str) -> Result<Self> {
        let mut filter = Filter::default();
        if name.eq_ignore_ascii_case("all") {
            return Ok(filter);
        }
        for c in name.chars() {
            match c.to_ascii_uppercase() {
                'A' => filter.characters = Some(vec![Character::Alice]),
                'B' => filter.characters = Some(vec![Character::Bob]),
                'E' => filter.quartiles = Some(vec![Quartile::Easy]),
                'H' => filter.quartiles = Some(vec![Quartile::Hard]),
                _ => return Err(Error::Invalid(format!("unknown slice `{name}`"))),
            }
        }
        Ok(filter)
    }

    pub fn with_splits(mut self, splits: &[Split]) -> Self {
        self.splits = Some(splits.to_vec());
        self
    }

    pub fn with_max_n(mut self, max_n: usize, seed: u64) -> Self {
        self.max_n = Some(max_n);
        self.seed = seed;
        self
    }

    pub fn with_characters(mut self, characters: &[Character]) -> Self {
        self.characters = Some(characters.to_vec());
        self
    }

    pub fn matches(&self, meta: &ExampleMeta) -> bool {
        self.characters.as_ref().is_none_or(|c| c.contains(&meta.character))
            && self
                .quartiles
                .as_ref()
                .is_none_or(|q| q.contains(&meta.difficulty_quartile))
            && self.splits.as_ref().is_none_or(|s| s.contains(&meta.split))
    }
}

/// A row subset of a store. Rows stay in store order.
#[derive(Debug, Clone)]
pub struct StoreView<'a> {
    store: &'a ActivationStore,
    rows: Vec<usize>,
}

impl<'a> StoreView<'a> {
    pub fn store(&self) -> &'a ActivationStore {
        self.store
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Restricts the view; subsampling without replacement is deterministic
    /// in `filter.seed`.
    pub fn select(&self, filter: &Filter) -> Result<StoreView<'a>> {
        let metas = self.store.metas();
        let mut rows: Vec<usize> = self
            .rows
            .iter()
            .copied()
            .filter(|&r| filter.matches(&metas[r]))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyFilter);
        }
        if let Some(max_n) = filter.max_n {
            if max_n < rows.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(filter.seed);
                let mut picked = rand::seq::index::sample(&mut rng, rows.len(), max_n).into_vec();
                picked.sort_unstable();
                rows = picked.into_iter().map(|i| rows[i]).collect();
            }
        }
        Ok(StoreView {
            store: self.store,
            rows,
        })
    }

    /// Keeps only rows for which `keep` holds.
    pub fn retain(&self, mut keep: impl FnMut(&ExampleMeta) -> bool) -> StoreView<'a> {
        let metas = self.store.metas();
        StoreView {
            store: self.store,
            rows: self.rows.iter().copied().filter(|&r| keep(&metas[r])).collect(),
        }
    }

    /// A view over an explicit subset of this view's positions.
    pub fn subset(&self, indices: &[usize]) -> StoreView<'a> {
        StoreView {
            store: self.store,
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    pub fn metas(&self) -> impl Iterator<Item = &'a ExampleMeta> + '_ {
        let metas = self.store.metas();
        self.rows.iter().map(move |&r| &metas[r])
    }

    pub fn ids(&self) -> Vec<String> {
        self.metas().map(|m| m.example_id.clone()).collect()
    }

    pub fn labels(&self, set: LabelSet) -> Vec<u8> {
        self.metas().map(|m| m.label(set)).collect()
    }

    pub fn matrix(&self, layer: usize, position: Position) -> Result<DMatrix<f64>> {
        self.store.matrix(layer, position, &self.rows)
    }

    /// Copies the view into a standalone store.
    pub fn to_store(&self) -> Result<ActivationStore> {
        let m = self.store.manifest();
        let d = m.d;
        let slabs = self
            .store
            .slabs
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|slab| {
                        self.rows
                            .iter()
                            .flat_map(|&r| slab[r * d..(r + 1) * d].iter().copied())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let metas = self.metas().cloned().collect();
        let manifest = Manifest {
            n: self.rows.len(),
            ..m.clone()
        };
        ActivationStore::new(manifest, slabs, metas)
    }
}
