//! Multi-stream encoder: one MLP backbone per modality, each followed by a
//! BNNeck head (scale-only batch normalization plus a bias-free classifier).
//! Global-fusion strategies add one fused head over `z_fuse`.
//!
//! Conventions:
//! - the triplet loss sees the pre-BN embedding `z`,
//! - the classifier and retrieval see the post-BN feature `z_bn`,
//! - the BNNeck has no additive shift; `z_bn = γ (z − μ) / sqrt(v + ε)`,
//! - running statistics update as `r ← (1 − m) r + m · batch_stat`, with the
//!   unbiased batch variance feeding the running variance.

mod checkpoint;
mod head;
mod stream;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use head::{BnNeck, Head, HeadCache, HeadGrads, HeadOutput};
pub use stream::{Linear, StreamCache, StreamGrads, StreamOutput, StreamParams};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::objectives::{fuse, FusionOperator, Strategy};
use crate::synthdata::MultimodalDataset;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Hidden widths and embedding width shared by every stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            embed_dim: 32,
        }
    }
}

impl Architecture {
    /// Layer widths from input to embedding.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.embed_dim);
        w
    }
}

/// Fusion head used by Fusion-avg / Fusion-concat.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedHead {
    pub op: FusionOperator,
    pub head: Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub strategy: Strategy,
    pub streams: Vec<StreamParams>,
    pub fused: Option<FusedHead>,
}

/// Gradients for every trainable tensor of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub streams: Vec<StreamGrads>,
    pub fused: Option<HeadGrads>,
}

/// Stream initialization seed tag. Stream `i` of any model trained with the
/// same run seed draws from this sub-stream, whatever the other streams are.
pub fn stream_init_tag(stream_index: usize) -> String {
    format!("model/init/stream/{stream_index}")
}

impl ModelParams {
    /// Fresh parameters. Stream `i` draws from `Rng::split(seed, stream_init_tag(i))`
    /// via `stream_tags[i]`; the fused head from the tag `model/init/fused`.
    pub fn init(
        strategy: Strategy,
        input_dims: &[usize],
        stream_tags: &[usize],
        arch: &Architecture,
        num_ids: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dims.is_empty() || input_dims.len() != stream_tags.len() {
            return Err(Error::Config(
                "need one stream tag per input modality".into(),
            ));
        }
        let local_heads = strategy == Strategy::UniCat;
        let streams = input_dims
            .iter()
            .zip(stream_tags)
            .map(|(&d, &tag)| {
                let mut rng = Rng::split(seed, &stream_init_tag(tag));
                StreamParams::init(
                    &arch.widths(d),
                    if local_heads { Some(num_ids) } else { None },
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fused = match strategy.fusion_operator() {
            None => None,
            Some(op) => {
                let dim = op.fused_dim(&vec![arch.embed_dim; input_dims.len()])?;
                let mut rng = Rng::split(seed, "model/init/fused");
                Some(FusedHead {
                    op,
                    head: Head::init(dim, Some(num_ids), &mut rng),
                })
            }
        };
        Ok(Self {
            strategy,
            streams,
            fused,
        })
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn embed_dims(&self) -> Vec<usize> {
        self.streams.iter().map(StreamParams::embed_dim).collect()
    }

    /// Mutable views of every trainable tensor, in a fixed order matching
    /// [`ModelGrads::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            s.push_param_slices(&mut out);
        }
        if let Some(f) = &mut self.fused {
            f.head.push_param_slices(&mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut copy = self.clone();
        copy.param_slices_mut()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Post-BN (or fused) features of every row of `ds`, in eval mode.
    pub fn embed_rows(
        &self,
        ds: &MultimodalDataset,
        selector: Selector,
        normalize_first: bool,
    ) -> Result<Matrix> {
        if ds.num_modalities() != self.num_streams() {
            return Err(Error::Shape(format!(
                "model has {} streams, dataset {} modalities",
                self.num_streams(),
                ds.num_modalities()
            )));
        }
        match selector {
            Selector::Stream(i) => {
                let stream = self.streams.get(i).ok_or_else(|| {
                    Error::Index(format!(
                        "stream {i} requested, model has {}",
                        self.num_streams()
                    ))
                })?;
                Ok(stream.forward_eval(&ds.modalities[i].features)?.z_bn)
            }
            Selector::Fused => {
                let outs = self
                    .streams
                    .iter()
                    .zip(&ds.modalities)
                    .map(|(s, m)| s.forward_eval(&m.features))
                    .collect::<Result<Vec<_>>>()?;
                match &self.fused {
                    None => {
                        let feats: Vec<&Matrix> = outs.iter().map(|o| &o.z_bn).collect();
                        fuse(&feats, FusionOperator::Concat, normalize_first)
                    }
                    Some(f) => {
                        let zs: Vec<&Matrix> = outs.iter().map(|o| &o.z).collect();
                        let z_fuse = fuse(&zs, f.op, normalize_first)?;
                        Ok(f.head.forward_eval(&z_fuse)?.z_bn)
                    }
                }
            }
        }
    }
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for s in &self.streams {
            s.push_slices(&mut out);
        }
        if let Some(f) = &self.fused {
            f.push_slices(&mut out);
        }
        out
    }
}

/// Which retrieval feature to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    Stream(usize),
    Fused,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_follow_strategy() {
        let arch = Architecture::default();
        let u = ModelParams::init(Strategy::UniCat, &[8, 8], &[0, 1], &arch, 5, 1).unwrap();
        assert!(u.fused.is_none());
        assert!(u.streams.iter().all(|s| s.head.classifier.is_some()));
        let c = ModelParams::init(Strategy::FusionConcat, &[8, 8], &[0, 1], &arch, 5, 1).unwrap();
        assert_eq!(c.fused.as_ref().unwrap().head.dim(), 64);
        assert!(c.streams.iter().all(|s| s.head.classifier.is_none()));
        let a = ModelParams::init(Strategy::FusionAvg, &[8, 8], &[0, 1], &arch, 5, 1).unwrap();
        assert_eq!(a.fused.as_ref().unwrap().head.dim(), 32);
    }

    #[test]
    fn stream_init_depends_only_on_tag() {
        let arch = Architecture::default();
        let two = ModelParams::init(Strategy::UniCat, &[8, 6], &[0, 1], &arch, 5, 9).unwrap();
        let solo = ModelParams::init(Strategy::UniCat, &[6], &[1], &arch, 5, 9).unwrap();
        assert_eq!(two.streams[1], solo.streams[0]);
    }
}
