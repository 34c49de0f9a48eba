use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{CellKind, CellParams};
use crate::binio::{read_header, read_str, write_header, write_str};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSHD";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Gru,
    Lstm,
    BiGru,
    BiLstm,
    MemNet,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] = [
        HeadKind::Linear,
        HeadKind::Gru,
        HeadKind::Lstm,
        HeadKind::BiGru,
        HeadKind::BiLstm,
        HeadKind::MemNet,
    ];

    pub fn cell(self) -> Option<CellKind> {
        match self {
            HeadKind::Gru | HeadKind::BiGru => Some(CellKind::Gru),
            HeadKind::Lstm | HeadKind::BiLstm => Some(CellKind::Lstm),
            HeadKind::Linear | HeadKind::MemNet => None,
        }
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, HeadKind::BiGru | HeadKind::BiLstm)
    }

    pub fn is_recurrent(self) -> bool {
        self.cell().is_some()
    }

    fn tag(self) -> u8 {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Gru => 1,
            HeadKind::Lstm => 2,
            HeadKind::BiGru => 3,
            HeadKind::BiLstm => 4,
            HeadKind::MemNet => 5,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown head kind tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Gru => "gru",
            HeadKind::Lstm => "lstm",
            HeadKind::BiGru => "bigru",
            HeadKind::BiLstm => "bilstm",
            HeadKind::MemNet => "memnet",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown head kind {s:?}")))
    }
}

/// Re-ranker weights, flattened into one vector:
/// `[forward cell][backward cell][FFNN W (2 x F)][FFNN b (2)]`, with the
/// cells present only for recurrent kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl HeadParams {
    /// Expected number of parameters for a head shape.
    pub fn param_count(kind: HeadKind, input_dim: usize, hidden: usize) -> usize {
        let cells = match kind.cell() {
            Some(c) => {
                c.param_count(input_dim, hidden) * if kind.is_bidirectional() { 2 } else { 1 }
            }
            None => 0,
        };
        cells + 2 * Self::ffnn_width_for(kind, input_dim, hidden) + 2
    }

    fn ffnn_width_for(kind: HeadKind, input_dim: usize, hidden: usize) -> usize {
        match kind {
            HeadKind::Linear | HeadKind::MemNet => input_dim,
            HeadKind::Gru | HeadKind::Lstm => hidden,
            HeadKind::BiGru | HeadKind::BiLstm => 2 * hidden,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation from `seed`.
    pub fn init(kind: HeadKind, input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("head input dimension must be > 0".into()));
        }
        let hidden = if kind.is_recurrent() {
            if hidden == 0 {
                return Err(Error::Config(
                    "recurrent heads need a hidden size > 0".into(),
                ));
            }
            hidden
        } else {
            0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(Self::param_count(kind, input_dim, hidden));
        let mut fill = |n: usize, fan_in: usize, values: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            values.extend((0..n).map(|_| rng.gen_range(-bound..bound)));
        };
        if let Some(cell) = kind.cell() {
            let g = cell.gates();
            for _ in 0..if kind.is_bidirectional() { 2 } else { 1 } {
                fill(g * hidden * input_dim, input_dim, &mut values);
                fill(g * hidden * hidden, hidden, &mut values);
                fill(g * hidden, hidden, &mut values);
            }
        }
        let f = Self::ffnn_width_for(kind, input_dim, hidden);
        fill(2 * f, f, &mut values);
        fill(2, f, &mut values);
        let p = HeadParams {
            kind,
            input_dim,
            hidden,
            seed,
            values,
            metadata: serde_json::Value::Null,
        };
        debug_assert!(p.validate().is_ok());
        Ok(p)
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(kind: HeadKind, input_dim: usize, hidden: usize) -> Self {
        let hidden = if kind.is_recurrent() { hidden } else { 0 };
        let n = Self::param_count(kind, input_dim, hidden);
        HeadParams {
            kind,
            input_dim,
            hidden,
            seed: 0,
            values: vec![0.0; n],
            metadata: serde_json::Value::Null,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::param_count(self.kind, self.input_dim, self.hidden);
        if self.values.len() != expected {
            return Err(Error::Format(format!(
                "{} head with input {} hidden {} needs {expected} parameters, found {}",
                self.kind,
                self.input_dim,
                self.hidden,
                self.values.len()
            )));
        }
        if self.kind.is_recurrent() && self.hidden == 0 {
            return Err(Error::Format("recurrent head with hidden size 0".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn ffnn_width(&self) -> usize {
        Self::ffnn_width_for(self.kind, self.input_dim, self.hidden)
    }

    fn cell_len(&self) -> usize {
        self.kind
            .cell()
            .map(|c| c.param_count(self.input_dim, self.hidden))
            .unwrap_or(0)
    }

    pub(crate) fn cell_range(&self, backward: bool) -> std::ops::Range<usize> {
        let n = self.cell_len();
        let start = if backward { n } else { 0 };
        start..start + n
    }

    pub(crate) fn ffnn_range(&self) -> std::ops::Range<usize> {
        let cells = if self.kind.is_bidirectional() { 2 } else { 1 } * self.cell_len();
        cells..self.values.len()
    }

    pub(crate) fn cell(&self, backward: bool) -> CellParams<'_> {
        let kind = self.kind.cell().expect("recurrent head");
        CellParams::split(
            kind,
            self.input_dim,
            self.hidden,
            &self.values[self.cell_range(backward)],
        )
    }

    /// `(W, b)` of the output layer.
    pub(crate) fn ffnn(&self) -> (&[f64], &[f64]) {
        let f = self.ffnn_width();
        self.values[self.ffnn_range()].split_at(2 * f)
    }

    /// Two logits of the output layer for feature vector `v`.
    pub(crate) fn logits(&self, v: &[f64]) -> (f64, f64) {
        let f = self.ffnn_width();
        let (w, b) = self.ffnn();
        let l0 = super::math::dot(&w[..f], v) + b[0];
        let l1 = super::math::dot(&w[f..], v) + b[1];
        (l0, l1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, MAGIC, VERSION)?;
        w.write_u8(self.kind.tag())?;
        w.write_u32::<LittleEndian>(self.input_dim as u32)?;
        w.write_u32::<LittleEndian>(self.hidden as u32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.values.len() as u64)?;
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        write_str(w, &serde_json::to_string(&self.metadata)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_header(r, MAGIC, VERSION)?;
        let kind = HeadKind::from_tag(r.read_u8()?)?;
        let input_dim = r.read_u32::<LittleEndian>()? as usize;
        let hidden = r.read_u32::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        if n != Self::param_count(kind, input_dim, hidden) {
            return Err(Error::Format(format!(
                "parameter count {n} does not match the head shape"
            )));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.read_f64::<LittleEndian>()?);
        }
        let metadata = serde_json::from_str(&read_str(r)?)?;
        let p = HeadParams {
            kind,
            input_dim,
            hidden,
            seed,
            values,
            metadata,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
