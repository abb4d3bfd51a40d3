//! Item conditioning vectors: precomputed feature files, a hashed-token text
//! featurizer, and the ablation substitutes used in place of real features.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::IdMap;
use crate::error::{Error, Result};
use crate::fsutil::{fmt_f64, read_to_string, write_atomic};
use crate::numerics::rng::subsystem;
use crate::numerics::{norm, Linear, Matrix, SeedStream};

/// Per-item feature vectors indexed by dense item id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    data: Matrix,
}

impl FeatureTable {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.cols() == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        data.ensure_finite("feature table")?;
        Ok(FeatureTable { data })
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn row(&self, item: usize) -> &[f64] {
        self.data.row(item)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    /// Rows for `items`, in order.
    pub fn select(&self, items: &[usize]) -> Matrix {
        self.data.select_rows(items)
    }

    pub fn normalized(&self, normalization: Normalization) -> FeatureTable {
        match normalization {
            Normalization::None => self.clone(),
            Normalization::L2 => {
                let mut data = self.data.clone();
                for r in 0..data.rows() {
                    l2_normalize(data.row_mut(r));
                }
                FeatureTable { data }
            }
        }
    }
}

fn l2_normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    L2,
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "l2" => Ok(Normalization::L2),
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::L2 => "l2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Precomputed,
    HashedTokens,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "precomputed" => Ok(EncoderKind::Precomputed),
            "hashed_tokens" => Ok(EncoderKind::HashedTokens),
            _ => Err(Error::Config(format!("unknown encoder `{s}`"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Precomputed => "precomputed",
            EncoderKind::HashedTokens => "hashed_tokens",
        })
    }
}

/// Which featurizer produces the condition vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderChoice {
    pub kind: EncoderKind,
    pub dim: usize,
    pub normalization: Normalization,
}

impl Default for EncoderChoice {
    fn default() -> Self {
        EncoderChoice {
            kind: EncoderKind::HashedTokens,
            dim: 64,
            normalization: Normalization::L2,
        }
    }
}

/// Reads `item_id,f0,...` rows keyed by original item id.
///
/// Rows for ids absent from `items` are ignored; every item in `items` must
/// have a row.
pub fn load_features(path: &Path, items: &IdMap, normalization: Normalization) -> Result<FeatureTable> {
    let text = read_to_string(path)?;
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; items.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim();
        if idx == 0 && id == "item_id" {
            continue;
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path.display(), line_no, format!("non-numeric feature `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::parse(path.display(), line_no, "row has no feature values"))
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    path.display(),
                    line_no,
                    format!("ragged row: {} values, expected {d}", values.len()),
                ))
            }
            Some(_) => {}
        }
        if let Some(dense) = items.dense(id) {
            rows[dense] = Some(values);
        }
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| items.original(i).to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    let dim = dim.ok_or_else(|| Error::parse(path.display(), 0, "empty feature file"))?;
    let flat: Vec<f64> = rows.into_iter().flatten().flatten().collect();
    Ok(FeatureTable::new(Matrix::from_vec(items.len(), dim, flat)?)?.normalized(normalization))
}

pub fn save_features(path: &Path, table: &FeatureTable, items: &IdMap) -> Result<()> {
    let mut out = String::from("item_id");
    for j in 0..table.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..table.len() {
        out.push_str(items.original(i));
        for &v in table.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the seed then the token bytes, finished with SplitMix64
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    crate::numerics::rng::stream_id(&[h])
}

/// Signed feature hashing of lowercase whitespace tokens, l2-normalized
/// unless the text has no tokens.
pub fn hashed_token_encode(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim > 0, "encoding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace() {
        let h = token_hash(&token.to_lowercase(), seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    l2_normalize(&mut v);
    v
}

/// Encodes an `item_id<TAB>text` file with the hashed-token featurizer.
pub fn load_item_text(path: &Path, items: &IdMap, dim: usize, seed: u64) -> Result<FeatureTable> {
    if dim == 0 {
        return Err(Error::Config("encoding dimension must be positive".into()));
    }
    let text = read_to_string(path)?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; items.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path.display(), idx + 1, "expected `item_id<TAB>text`"))?;
        if let Some(dense) = items.dense(id.trim()) {
            rows[dense] = Some(hashed_token_encode(body, dim, seed));
        }
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| items.original(i).to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().flatten().collect();
    FeatureTable::new(Matrix::from_vec(items.len(), dim, flat)?)
}

/// Affine projection of a condition vector to the model width.
pub fn project_condition(m: &[f64], projection: &Linear) -> Result<Vec<f64>> {
    if m.len() != projection.fan_in() {
        return Err(Error::Dimension(format!(
            "condition has width {}, projection expects {}",
            m.len(),
            projection.fan_in()
        )));
    }
    Ok(projection.forward(&Matrix::row_vector(m)).into_vec())
}

/// Condition substitution used for guidance ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guidance {
    /// Real item features.
    Full,
    /// All-zero condition vectors.
    Zero,
    /// A fixed seeded Gaussian vector per item.
    Random,
    /// No condition row in the attention keys/values at all.
    None,
}

impl FromStr for Guidance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Guidance::Full),
            "zero" => Ok(Guidance::Zero),
            "random" => Ok(Guidance::Random),
            "none" => Ok(Guidance::None),
            _ => Err(Error::Config(format!("unknown condition mode `{s}`"))),
        }
    }
}

impl fmt::Display for Guidance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Guidance::Full => "full",
            Guidance::Zero => "zero",
            Guidance::Random => "random",
            Guidance::None => "none",
        })
    }
}

impl Guidance {
    /// Whether the denoiser gets a condition row.
    pub fn uses_condition(self) -> bool {
        self != Guidance::None
    }

    /// The condition table the denoiser actually sees.
    pub fn substitute(self, features: &FeatureTable, seed: u64) -> FeatureTable {
        match self {
            Guidance::Full | Guidance::None => features.clone(),
            Guidance::Zero => FeatureTable {
                data: Matrix::zeros(features.len(), features.dim()),
            },
            Guidance::Random => {
                let stream = SeedStream::root(seed).child(subsystem::INIT).child(0xab1a);
                let mut data = Matrix::zeros(features.len(), features.dim());
                for i in 0..features.len() {
                    let mut rng = stream.child(i as u64).rng();
                    for v in data.row_mut(i) {
                        *v = rng.gaussian();
                    }
                    l2_normalize(data.row_mut(i));
                }
                FeatureTable { data }
            }
        }
    }
}
