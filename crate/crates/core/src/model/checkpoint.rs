//! Binary checkpoint format. All integers are little-endian `u32`, all reals
//! little-endian `f64`, matrices row-major.
//!
//! ```text
//! "UCCK"  version:u32  strategy:u32  num_streams:u32
//! per stream:
//!     num_layers:u32  widths:u32 × (num_layers + 1)
//!     per layer: weight f64 × (out·in), bias f64 × out (none on the last layer)
//!     <head>
//! has_fused:u8  [op:u32  <head>]
//!
//! <head> = dim:u32  eps:f64  momentum:f64
//!          gamma f64×dim  running_mean f64×dim  running_var f64×dim
//!          num_classes:u32 (0 = no classifier)  classifier f64 × (num_classes·dim)
//! ```
//!
//! Strategy codes: 0 Fusion-avg, 1 Fusion-concat, 2 UniCat.
//! Operator codes: 0 average, 1 concat.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objectives::{FusionOperator, Strategy};

use super::{BnNeck, FusedHead, Head, Linear, ModelParams, StreamParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u32_usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
        self.u32(v)
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn head(&mut self, h: &Head) -> Result<()> {
        self.u32_usize(h.dim())?;
        self.f64s(&[h.bn.eps, h.bn.momentum])?;
        self.f64s(&h.bn.gamma)?;
        self.f64s(&h.bn.running_mean)?;
        self.f64s(&h.bn.running_var)?;
        match &h.classifier {
            Some(w) => {
                self.u32_usize(w.rows())?;
                self.f64s(w.data())
            }
            None => self.u32(0),
        }
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn head(&mut self) -> Result<Head> {
        let dim = self.u32()? as usize;
        let eps = self.f64()?;
        let momentum = self.f64()?;
        let gamma = self.f64s(dim)?;
        let running_mean = self.f64s(dim)?;
        let running_var = self.f64s(dim)?;
        if running_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Format("non-positive running variance".into()));
        }
        let classes = self.u32()? as usize;
        let classifier = if classes == 0 {
            None
        } else {
            Some(Matrix::from_vec(classes, dim, self.f64s(classes * dim)?)?)
        };
        Ok(Head {
            bn: BnNeck {
                gamma,
                running_mean,
                running_var,
                eps,
                momentum,
            },
            classifier,
        })
    }
}

fn strategy_code(s: Strategy) -> u32 {
    match s {
        Strategy::FusionAvg => 0,
        Strategy::FusionConcat => 1,
        Strategy::UniCat => 2,
    }
}

pub fn write_checkpoint<W: Write>(model: &ModelParams, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u32(strategy_code(model.strategy))?;
    w.u32_usize(model.streams.len())?;
    for s in &model.streams {
        w.u32_usize(s.layers.len())?;
        w.u32_usize(s.input_dim())?;
        for l in &s.layers {
            w.u32_usize(l.weight.rows())?;
        }
        for l in &s.layers {
            w.f64s(l.weight.data())?;
            w.f64s(&l.bias)?;
        }
        w.head(&s.head)?;
    }
    match &model.fused {
        None => w.0.write_all(&[0])?,
        Some(f) => {
            w.0.write_all(&[1])?;
            w.u32(match f.op {
                FusionOperator::Average => 0,
                FusionOperator::Concat => 1,
            })?;
            w.head(&f.head)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams> {
    let mut r = Reader(input);
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let strategy = match r.u32()? {
        0 => Strategy::FusionAvg,
        1 => Strategy::FusionConcat,
        2 => Strategy::UniCat,
        c => return Err(Error::Format(format!("unknown strategy code {c}"))),
    };
    let num_streams = r.u32()? as usize;
    let mut streams = Vec::with_capacity(num_streams);
    for _ in 0..num_streams {
        let num_layers = r.u32()? as usize;
        if num_layers == 0 {
            return Err(Error::Format("stream without layers".into()));
        }
        let widths = (0..=num_layers)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(num_layers);
        for (l, w) in widths.windows(2).enumerate() {
            let weight = Matrix::from_vec(w[1], w[0], r.f64s(w[0] * w[1])?)?;
            let bias = r.f64s(if l + 1 == num_layers { 0 } else { w[1] })?;
            layers.push(Linear { weight, bias });
        }
        let head = r.head()?;
        if head.dim() != widths[num_layers] {
            return Err(Error::Format(
                "head width differs from embedding width".into(),
            ));
        }
        streams.push(StreamParams { layers, head });
    }
    let fused = match r.u8()? {
        0 => None,
        1 => {
            let op = match r.u32()? {
                0 => FusionOperator::Average,
                1 => FusionOperator::Concat,
                c => return Err(Error::Format(format!("unknown operator code {c}"))),
            };
            Some(FusedHead {
                op,
                head: r.head()?,
            })
        }
        b => return Err(Error::Format(format!("bad fused-head flag {b}"))),
    };
    if fused.is_some() != strategy.fusion_operator().is_some() {
        return Err(Error::Format(
            "fused head presence does not match strategy".into(),
        ));
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(ModelParams {
        strategy,
        streams,
        fused,
    })
}
