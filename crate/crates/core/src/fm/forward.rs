//! Forward and backward passes with per-field reductions.
//!
//! Entries of a row are grouped into slots: a sum-reduced field contributes a
//! single slot `p = sum_i x_i v_i` (and `y = sum_i x_i w_i`), an
//! identity-reduced field one slot per entry. The score is
//! `w0 + sum_s y_s + sum_{a<b} <p_a, p_b>_{M_{f_a, f_b}}` over slots ordered
//! by field, then by entry.

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::schema::{EncodedRow, Reduction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub field: usize,
    /// Range of row entries feeding this slot.
    pub entries: (usize, usize),
    /// Offset of the reduced vector in [`ForwardTrace::vectors`].
    pub offset: usize,
}

/// Intermediate values kept for [`ModelParams::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub slots: Vec<Slot>,
    /// Reduced embedding vectors `p_s`, concatenated.
    pub vectors: Vec<f64>,
    /// Reduced linear terms `y_s`.
    pub linear: Vec<f64>,
    pub score: f64,
    generation: u64,
    fingerprint: u64,
}

impl ForwardTrace {
    pub fn slot_vector(&self, s: usize, dim: usize) -> &[f64] {
        let off = self.slots[s].offset;
        &self.vectors[off..off + dim]
    }
}

fn row_fingerprint(row: &EncodedRow) -> u64 {
    // FNV-1a over indices and value bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for e in &row.entries {
        for word in [e.index as u64, e.value.to_bits()] {
            h ^= word;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Sparse gradient over the parameters touched by one row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub bias: f64,
    pub linear: Vec<(usize, f64)>,
    /// `(feature, d/dv_feature)`.
    pub embeddings: Vec<(usize, Vec<f64>)>,
    /// `(index into interaction params, derivative)`.
    pub interaction: Vec<(usize, f64)>,
}

impl Gradient {
    pub fn is_empty(&self) -> bool {
        self.bias == 0.0 && self.linear.is_empty() && self.embeddings.is_empty() && self.interaction.is_empty()
    }
}

/// Dense gradient accumulator with touched-parameter tracking, reused across
/// the rows of a batch.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub bias: f64,
    pub linear: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub interaction: Vec<f64>,
    /// Touched features, in first-touch order.
    pub touched: Vec<usize>,
    touched_mark: Vec<bool>,
    pub interaction_touched: bool,
    slot_grads: Vec<f64>,
}

impl GradBuffer {
    pub fn for_model(model: &ModelParams) -> Self {
        GradBuffer {
            bias: 0.0,
            linear: vec![0.0; model.linear().len()],
            embeddings: vec![0.0; model.embeddings().len()],
            interaction: vec![0.0; model.interaction().params().len()],
            touched: Vec::new(),
            touched_mark: vec![false; model.linear().len()],
            interaction_touched: false,
            slot_grads: Vec::new(),
        }
    }

    /// Zeroes the touched entries only.
    pub fn clear(&mut self, model: &ModelParams) {
        self.bias = 0.0;
        for &i in &self.touched {
            self.linear[i] = 0.0;
            self.touched_mark[i] = false;
            let field = model.schema().field_of(i).expect("feature in range").field_id;
            let off = model.row_offset(field, i);
            let k = model.interaction().dim(field);
            self.embeddings[off..off + k].fill(0.0);
        }
        self.touched.clear();
        if self.interaction_touched {
            self.interaction.fill(0.0);
            self.interaction_touched = false;
        }
    }

    fn touch(&mut self, i: usize) {
        if !self.touched_mark[i] {
            self.touched_mark[i] = true;
            self.touched.push(i);
        }
    }

    /// Multiplies every touched gradient by `s`.
    pub fn scale(&mut self, model: &ModelParams, s: f64) {
        self.bias *= s;
        for &i in &self.touched {
            self.linear[i] *= s;
            let field = model.schema().field_of(i).expect("feature in range").field_id;
            let off = model.row_offset(field, i);
            let k = model.interaction().dim(field);
            for g in &mut self.embeddings[off..off + k] {
                *g *= s;
            }
        }
        if self.interaction_touched {
            for g in &mut self.interaction {
                *g *= s;
            }
        }
    }

    /// Adds `other` into `self`. Both buffers must belong to `model`.
    pub fn absorb(&mut self, model: &ModelParams, other: &GradBuffer) {
        self.bias += other.bias;
        for &i in &other.touched {
            self.touch(i);
            self.linear[i] += other.linear[i];
            let field = model.schema().field_of(i).expect("feature in range").field_id;
            let off = model.row_offset(field, i);
            let k = model.interaction().dim(field);
            for (a, b) in self.embeddings[off..off + k].iter_mut().zip(&other.embeddings[off..off + k]) {
                *a += b;
            }
        }
        if other.interaction_touched {
            self.interaction_touched = true;
            for (a, b) in self.interaction.iter_mut().zip(&other.interaction) {
                *a += b;
            }
        }
    }

    pub fn to_sparse(&self, model: &ModelParams) -> Gradient {
        let mut touched = self.touched.clone();
        touched.sort_unstable();
        let embeddings = touched
            .iter()
            .filter_map(|&i| {
                let field = model.schema().field_of(i)?.field_id;
                let k = model.interaction().dim(field);
                let off = model.row_offset(field, i);
                (k > 0).then(|| (i, self.embeddings[off..off + k].to_vec()))
            })
            .collect();
        let interaction = if self.interaction_touched {
            self.interaction
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, g)| *g != 0.0)
                .collect()
        } else {
            Vec::new()
        };
        Gradient {
            bias: self.bias,
            linear: touched.iter().map(|&i| (i, self.linear[i])).collect(),
            embeddings,
            interaction,
        }
    }
}

impl ModelParams {
    fn check_row(&self, row: &EncodedRow) -> Result<()> {
        let schema = self.schema();
        let mut prev: Option<usize> = None;
        for e in &row.entries {
            let field = schema.fields.get(e.field).ok_or_else(|| {
                Error::Dimension(format!("entry references field {} of {}", e.field, schema.fields.len()))
            })?;
            if e.index < field.offset || e.index >= field.offset + field.width() {
                return Err(Error::Dimension(format!(
                    "feature {} is outside field `{}`",
                    e.index, field.name
                )));
            }
            if prev.is_some_and(|p| p >= e.index) {
                return Err(Error::Dimension("row entries are not strictly increasing".into()));
            }
            prev = Some(e.index);
        }
        Ok(())
    }

    /// Score of an encoded row, with the trace needed for backpropagation.
    pub fn forward(&self, row: &EncodedRow) -> Result<(f64, ForwardTrace)> {
        self.forward_with(row, &self.reductions())
    }

    /// Plain FmFM forward pass with the identity reduction on every field, so
    /// every entry is its own slot.
    pub fn forward_unreduced(&self, row: &EncodedRow) -> Result<(f64, ForwardTrace)> {
        self.forward_with(row, &vec![Reduction::Identity; self.schema().fields.len()])
    }

    fn forward_with(&self, row: &EncodedRow, reductions: &[Reduction]) -> Result<(f64, ForwardTrace)> {
        self.check_row(row)?;
        let interaction = self.interaction();
        let mut slots = Vec::with_capacity(row.entries.len());
        let mut vectors = Vec::new();
        let mut linear = Vec::with_capacity(row.entries.len());

        let mut start = 0;
        while start < row.entries.len() {
            let field = row.entries[start].field;
            let mut end = start + 1;
            if reductions[field] == Reduction::Sum {
                while end < row.entries.len() && row.entries[end].field == field {
                    end += 1;
                }
            }
            let k = interaction.dim(field);
            let offset = vectors.len();
            vectors.resize(offset + k, 0.0);
            let mut y = 0.0;
            for e in &row.entries[start..end] {
                y += e.value * self.linear()[e.index];
                let v = {
                    let off = self.row_offset(field, e.index);
                    &self.embeddings()[off..off + k]
                };
                for (p, vi) in vectors[offset..offset + k].iter_mut().zip(v) {
                    *p += e.value * vi;
                }
            }
            slots.push(Slot {
                field,
                entries: (start, end),
                offset,
            });
            linear.push(y);
            start = end;
        }

        let mut score = self.bias() + linear.iter().sum::<f64>();
        for a in 0..slots.len() {
            let fa = slots[a].field;
            let pa = &vectors[slots[a].offset..slots[a].offset + interaction.dim(fa)];
            for b in a + 1..slots.len() {
                let fb = slots[b].field;
                let pb = &vectors[slots[b].offset..slots[b].offset + interaction.dim(fb)];
                score += interaction.pair_value(fa, fb, pa, pb);
            }
        }

        let trace = ForwardTrace {
            slots,
            vectors,
            linear,
            score,
            generation: self.generation(),
            fingerprint: row_fingerprint(row),
        };
        Ok((score, trace))
    }

    /// Score only.
    pub fn score(&self, row: &EncodedRow) -> Result<f64> {
        Ok(self.forward(row)?.0)
    }

    /// Sparse gradient of `d_score * score` with respect to the touched parameters.
    pub fn backward(&self, row: &EncodedRow, trace: &ForwardTrace, d_score: f64) -> Result<Gradient> {
        let mut buf = GradBuffer::for_model(self);
        self.backward_into(row, trace, d_score, &mut buf)?;
        if d_score == 0.0 {
            return Ok(Gradient::default());
        }
        Ok(buf.to_sparse(self))
    }

    /// Accumulates the gradient into `buf`.
    pub fn backward_into(&self, row: &EncodedRow, trace: &ForwardTrace, d_score: f64, buf: &mut GradBuffer) -> Result<()> {
        if trace.generation != self.generation() || trace.fingerprint != row_fingerprint(row) {
            return Err(Error::StaleTrace(
                "trace was produced for a different model state or row".into(),
            ));
        }
        if d_score == 0.0 {
            return Ok(());
        }
        let interaction = self.interaction();
        let learn = interaction.trainable();

        let mut g = std::mem::take(&mut buf.slot_grads);
        g.clear();
        g.resize(trace.vectors.len(), 0.0);
        for a in 0..trace.slots.len() {
            let (fa, oa) = (trace.slots[a].field, trace.slots[a].offset);
            let ka = interaction.dim(fa);
            for b in a + 1..trace.slots.len() {
                let (fb, ob) = (trace.slots[b].field, trace.slots[b].offset);
                let kb = interaction.dim(fb);
                let (head, tail) = g.split_at_mut(ob);
                interaction.pair_grad(
                    fa,
                    fb,
                    &trace.vectors[oa..oa + ka],
                    &trace.vectors[ob..ob + kb],
                    d_score,
                    &mut head[oa..oa + ka],
                    &mut tail[..kb],
                    learn.then_some(buf.interaction.as_mut_slice()),
                );
            }
        }
        if learn && trace.slots.len() > 1 {
            buf.interaction_touched = true;
        }

        buf.bias += d_score;
        for slot in &trace.slots {
            let k = interaction.dim(slot.field);
            let gs = &g[slot.offset..slot.offset + k];
            for e in &row.entries[slot.entries.0..slot.entries.1] {
                buf.touch(e.index);
                buf.linear[e.index] += d_score * e.value;
                let off = self.row_offset(slot.field, e.index);
                for (gv, gp) in buf.embeddings[off..off + k].iter_mut().zip(gs) {
                    *gv += e.value * gp;
                }
            }
        }
        buf.slot_grads = g;
        Ok(())
    }
}
