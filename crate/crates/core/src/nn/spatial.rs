//! Layout-aware token embedding.
//!
//! A token with box `(x0, y0, x1, y1)` is embedded as
//! `E_tok[t] + E_x[b(x0)] + E_y[b(y0)] + E_x[b(x1)] + E_y[b(y1)]`, where both
//! horizontal coordinates share one table and both vertical coordinates share
//! the other. Each coordinate table has one extra trailing row used for tokens
//! without a box (question and prefix tokens).

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Normalised bounding box, all coordinates in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const ZERO: BBox = BBox {
        x0: 0.0,
        y0: 0.0,
        x1: 0.0,
        y1: 0.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x0, self.y0, self.x1, self.y1];
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Validation(format!("box {self:?} has a coordinate outside [0, 1]")));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(Error::Validation(format!("box {self:?} is inverted")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// `floor(c · buckets)` clamped to `[0, buckets - 1]`.
pub fn coordinate_bucket(c: f64, buckets: usize) -> usize {
    let b = (c * buckets as f64).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(buckets - 1)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialEmbedder {
    pub tokens: ParamId,
    pub x_table: ParamId,
    pub y_table: ParamId,
    pub buckets_x: usize,
    pub buckets_y: usize,
}

impl SpatialEmbedder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        vocab_size: usize,
        d_model: usize,
        buckets_x: usize,
        buckets_y: usize,
        token_std: f64,
        coord_std: f64,
    ) -> Self {
        let tokens = store.add("embed.tokens", ParamGroup::Encoder, &[vocab_size, d_model], Init::Normal(token_std), rng);
        let x_table = store.add("embed.x", ParamGroup::Encoder, &[buckets_x + 1, d_model], Init::Normal(coord_std), rng);
        let y_table = store.add("embed.y", ParamGroup::Encoder, &[buckets_y + 1, d_model], Init::Normal(coord_std), rng);
        Self {
            tokens,
            x_table,
            y_table,
            buckets_x,
            buckets_y,
        }
    }

    /// Row index of the "no box" entry in each coordinate table.
    pub fn no_box_x(&self) -> usize {
        self.buckets_x
    }

    pub fn no_box_y(&self) -> usize {
        self.buckets_y
    }

    /// Embed a token sequence; `None` boxes use the reserved no-box rows.
    pub fn embed(&self, store: &ParamStore, token_ids: &[usize], boxes: &[Option<BBox>]) -> Result<Tensor> {
        if token_ids.len() != boxes.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} boxes",
                token_ids.len(),
                boxes.len()
            )));
        }
        let mut xs0 = Vec::with_capacity(boxes.len());
        let mut ys0 = Vec::with_capacity(boxes.len());
        let mut xs1 = Vec::with_capacity(boxes.len());
        let mut ys1 = Vec::with_capacity(boxes.len());
        for b in boxes {
            match b {
                Some(b) => {
                    b.validate()?;
                    xs0.push(coordinate_bucket(b.x0, self.buckets_x));
                    ys0.push(coordinate_bucket(b.y0, self.buckets_y));
                    xs1.push(coordinate_bucket(b.x1, self.buckets_x));
                    ys1.push(coordinate_bucket(b.y1, self.buckets_y));
                }
                None => {
                    xs0.push(self.no_box_x());
                    ys0.push(self.no_box_y());
                    xs1.push(self.no_box_x());
                    ys1.push(self.no_box_y());
                }
            }
        }
        let ex = store.get(self.x_table);
        let ey = store.get(self.y_table);
        store
            .get(self.tokens)
            .embedding(token_ids)?
            .add(&ex.embedding(&xs0)?)?
            .add(&ey.embedding(&ys0)?)?
            .add(&ex.embedding(&xs1)?)?
            .add(&ey.embedding(&ys1)?)
    }

    /// Single-token form of [`SpatialEmbedder::embed`], shape `[d_model]`.
    pub fn spatial_embed(&self, store: &ParamStore, token_id: usize, bbox: BBox) -> Result<Tensor> {
        let d = store.get(self.tokens).shape()[1];
        self.embed(store, &[token_id], &[Some(bbox)])?.reshape(&[d])
    }
}
