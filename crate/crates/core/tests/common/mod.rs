//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use splinefm::bin_export::{export_binned, make_boundaries, BoundaryMode, MidpointSpace};
use splinefm::fm::{InteractionSpec, ModelParams, ModelSpec, Variant};
use splinefm::schema::{DatasetSchema, EncodedRow, FieldKind, FieldSchema, LabelKind, RawRecord, RawValue};
use splinefm::spline_basis::SplineBasis;
use splinefm::training::{train, TrainConfig};
use splinefm::transforms::Transform;

pub const VARIANTS: [Variant; 4] = [Variant::Fm, Variant::Ffm, Variant::Fwfm, Variant::Fmfm];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct Cox-de Boor recursion on the full knot vector, evaluated term by
/// term. The right end point belongs to the last non-empty span.
pub fn cox_de_boor(knots: &[f64], degree: usize, i: usize, z: f64) -> f64 {
    let last = *knots.last().unwrap();
    if degree == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        if a < b && ((a <= z && z < b) || (z == last && b == last)) {
            return 1.0;
        }
        return 0.0;
    }
    let mut out = 0.0;
    let d1 = knots[i + degree] - knots[i];
    if d1 > 0.0 {
        out += (z - knots[i]) / d1 * cox_de_boor(knots, degree - 1, i, z);
    }
    let d2 = knots[i + degree + 1] - knots[i + 1];
    if d2 > 0.0 {
        out += (knots[i + degree + 1] - z) / d2 * cox_de_boor(knots, degree - 1, i + 1, z);
    }
    out
}

pub fn cox_de_boor_all(basis: &SplineBasis, z: f64) -> Vec<f64> {
    (0..basis.num_functions())
        .map(|i| cox_de_boor(basis.knots(), basis.degree(), i, z))
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Random field mix; `continuous` forces at least that many continuous fields.
pub fn random_schema(rng: &mut ChaCha8Rng, num_fields: usize, continuous: usize) -> DatasetSchema {
    let mut fields = Vec::new();
    for f in 0..num_fields {
        let kind = if f < continuous { 2 } else { rng.random_range(0..3) };
        let name = format!("f{f}");
        let field = match kind {
            0 => {
                let n = rng.random_range(2..5);
                let vals: Vec<String> = (0..n).map(|v| format!("v{v}")).collect();
                let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
                FieldSchema::categorical(name, &refs, rng.random_bool(0.5))
            }
            1 => {
                let n = rng.random_range(2..6);
                let b: Vec<f64> = (0..=n).map(|j| j as f64 * 1.5 - 2.0).collect();
                FieldSchema::binned(name, b)
            }
            _ => {
                let l = rng.random_range(4..9);
                let transform = match rng.random_range(0..3) {
                    0 => Transform::Identity,
                    1 => Transform::min_max(-3.0, 5.0).unwrap(),
                    _ => {
                        let pts: Vec<f64> = (0..40).map(|j| (j as f64 * 0.1).exp()).collect();
                        Transform::fit_quantile(&pts, 10).unwrap()
                    }
                };
                FieldSchema::continuous(name, transform, SplineBasis::cubic(l).unwrap())
            }
        };
        fields.push(field);
    }
    // shuffle so continuous fields are not always first
    for i in (1..fields.len()).rev() {
        let j = rng.random_range(0..=i);
        fields.swap(i, j);
    }
    DatasetSchema::from_fields(fields, LabelKind::Binary, "y").unwrap()
}

pub fn random_interaction(rng: &mut ChaCha8Rng, variant: Variant, num_fields: usize) -> InteractionSpec {
    match variant {
        Variant::Fm => InteractionSpec::fm(num_fields, rng.random_range(1..4)),
        Variant::Ffm => InteractionSpec::ffm(num_fields, rng.random_range(1..3)),
        Variant::Fwfm => {
            let mut s = InteractionSpec::fwfm(num_fields, rng.random_range(1..4), true);
            for p in s.params_mut() {
                *p = uniform(rng, -1.5, 1.5);
            }
            s
        }
        Variant::Fmfm => {
            let dims = (0..num_fields).map(|_| rng.random_range(1..4)).collect();
            let mut s = InteractionSpec::fmfm(dims, true);
            for p in s.params_mut() {
                *p = uniform(rng, -1.0, 1.0);
            }
            s
        }
    }
}

/// Model with every parameter drawn uniformly from a small range.
pub fn random_model(rng: &mut ChaCha8Rng, schema: DatasetSchema, variant: Variant) -> ModelParams {
    let interaction = random_interaction(rng, variant, schema.fields.len());
    let mut m = ModelParams::zeros(schema, interaction).unwrap();
    m.set_bias(uniform(rng, -1.0, 1.0));
    for w in m.linear_mut() {
        *w = uniform(rng, -1.0, 1.0);
    }
    for v in m.embeddings_mut() {
        *v = uniform(rng, -1.0, 1.0);
    }
    m
}

pub fn random_record(rng: &mut ChaCha8Rng, schema: &DatasetSchema) -> RawRecord {
    let values = schema
        .fields
        .iter()
        .map(|f| match &f.kind {
            FieldKind::Categorical { vocabulary, .. } => {
                if rng.random_bool(0.1) {
                    RawValue::text("unseen")
                } else {
                    RawValue::Text(vocabulary[rng.random_range(0..vocabulary.len())].clone())
                }
            }
            FieldKind::BinnedNumerical { boundaries, .. } => {
                RawValue::Number(uniform(rng, boundaries[0] - 0.5, boundaries[boundaries.len() - 1] + 0.5))
            }
            FieldKind::ContinuousNumerical { transform, .. } => {
                let (lo, hi) = transform.range();
                RawValue::Number(uniform(rng, lo, hi))
            }
        })
        .collect();
    RawRecord {
        values,
        label: f64::from(rng.random_bool(0.4)),
    }
}

/// Records whose categorical values are all in-vocabulary (closed vocabularies).
pub fn encodable_record(rng: &mut ChaCha8Rng, model: &ModelParams) -> (RawRecord, EncodedRow) {
    loop {
        let rec = random_record(rng, model.schema());
        if let Ok(row) = model.schema().encode_row(&rec) {
            return (rec, row);
        }
    }
}

/// Explicit `M_{e,f}` for `e <= f`, built without the kernel code.
pub fn explicit_matrix(model: &ModelParams, e: usize, f: usize) -> DMatrix<f64> {
    let it = model.interaction();
    let (ke, kf) = (it.dim(e), it.dim(f));
    match it.variant() {
        Variant::Fm => DMatrix::identity(ke, kf),
        Variant::Fwfm => DMatrix::identity(ke, kf) * it.pair_weight(e, f).unwrap(),
        Variant::Ffm => {
            // block f of the first vector against block e of the second
            let m = it.num_fields();
            let b = ke / m;
            let mut out = DMatrix::zeros(ke, kf);
            for r in 0..b {
                out[(f * b + r, e * b + r)] = 1.0;
            }
            out
        }
        Variant::Fmfm => DMatrix::from_row_slice(ke, kf, it.pair_matrix(e, f).unwrap()),
    }
}

fn bilinear(model: &ModelParams, e: usize, p: &[f64], f: usize, q: &[f64]) -> f64 {
    let (e, p, f, q) = if e <= f { (e, p, f, q) } else { (f, q, e, p) };
    let m = explicit_matrix(model, e, f);
    let mut s = 0.0;
    for r in 0..p.len() {
        for c in 0..q.len() {
            s += p[r] * m[(r, c)] * q[c];
        }
    }
    s
}

/// Double loop over raw entries: `w0 + <x, w> + sum_{i<j} <x_i v_i, x_j v_j>_M`.
pub fn brute_force_score(model: &ModelParams, row: &EncodedRow) -> f64 {
    let feats: Vec<(usize, f64, Vec<f64>)> = row
        .entries
        .iter()
        .map(|e| (e.field, e.value * model.linear()[e.index], scaled(model.embedding(e.index), e.value)))
        .collect();
    brute_force_slots(model, &feats)
}

fn scaled(v: &[f64], x: f64) -> Vec<f64> {
    v.iter().map(|a| a * x).collect()
}

/// Same oracle after pre-summing the entries of every continuous field into
/// one synthetic feature.
pub fn brute_force_presummed(model: &ModelParams, row: &EncodedRow) -> f64 {
    let mut feats: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for e in &row.entries {
        let sv = scaled(model.embedding(e.index), e.value);
        let lin = e.value * model.linear()[e.index];
        let cont = model.schema().fields[e.field].is_continuous();
        match feats.last_mut() {
            Some((f, l, v)) if cont && *f == e.field => {
                *l += lin;
                for (a, b) in v.iter_mut().zip(&sv) {
                    *a += b;
                }
            }
            _ => feats.push((e.field, lin, sv)),
        }
    }
    brute_force_slots(model, &feats)
}

fn brute_force_slots(model: &ModelParams, feats: &[(usize, f64, Vec<f64>)]) -> f64 {
    let mut s = model.bias();
    for (_, l, _) in feats {
        s += l;
    }
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            s += bilinear(model, feats[i].0, &feats[i].2, feats[j].0, &feats[j].2);
        }
    }
    s
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Visits every parameter as a mutable scalar: bias, linear, embeddings, interaction.
pub fn param_count(model: &ModelParams) -> usize {
    1 + model.linear().len() + model.embeddings().len() + model.interaction().params().len()
}

pub fn param_mut(model: &mut ModelParams, idx: usize) -> &mut f64 {
    let nl = model.linear().len();
    let ne = model.embeddings().len();
    if idx == 0 {
        // bias has no &mut accessor; route through a scratch slot
        unreachable!("bias handled separately")
    } else if idx <= nl {
        &mut model.linear_mut()[idx - 1]
    } else if idx <= nl + ne {
        &mut model.embeddings_mut()[idx - 1 - nl]
    } else {
        &mut model.interaction_mut().params_mut()[idx - 1 - nl - ne]
    }
}

pub fn param_get(model: &ModelParams, idx: usize) -> f64 {
    let nl = model.linear().len();
    let ne = model.embeddings().len();
    if idx == 0 {
        model.bias()
    } else if idx <= nl {
        model.linear()[idx - 1]
    } else if idx <= nl + ne {
        model.embeddings()[idx - 1 - nl]
    } else {
        model.interaction().params()[idx - 1 - nl - ne]
    }
}

pub fn param_set(model: &mut ModelParams, idx: usize, v: f64) {
    if idx == 0 {
        model.set_bias(v);
    } else {
        *param_mut(model, idx) = v;
    }
}

/// Largest relative error between analytic and central-difference gradients
/// of the logistic loss over all touched parameters.
pub fn gradient_check(m: &ModelParams, row: &EncodedRow) -> f64 {
    let loss = |m: &ModelParams| {
        let s = m.score(row).unwrap();
        let p = 1.0 / (1.0 + (-s).exp());
        -(row.label * p.ln() + (1.0 - row.label) * (1.0 - p).ln())
    };
    let (s, trace) = m.forward(row).unwrap();
    let d = 1.0 / (1.0 + (-s).exp()) - row.label;
    let g = m.backward(row, &trace, d).unwrap();
    let nl = m.linear().len();
    let ne = m.embeddings().len();
    let mut analytic: Vec<(usize, f64)> = vec![(0, g.bias)];
    analytic.extend(g.linear.iter().map(|&(i, v)| (1 + i, v)));
    for (feat, vals) in &g.embeddings {
        let field = m.schema().field_of(*feat).unwrap().field_id;
        let off = m.row_offset(field, *feat);
        analytic.extend(vals.iter().enumerate().map(|(d, &v)| (1 + nl + off + d, v)));
    }
    analytic.extend(g.interaction.iter().map(|&(i, v)| (1 + nl + ne + i, v)));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (idx, a) in analytic {
        let mut plus = m.clone();
        let base = param_get(m, idx);
        param_set(&mut plus, idx, base + h);
        let mut minus = m.clone();
        param_set(&mut minus, idx, base - h);
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn continuous_field(m: &ModelParams) -> usize {
    m.schema().fields.iter().position(|f| f.is_continuous()).unwrap()
}

pub fn transform_of(m: &ModelParams, f: usize) -> Transform {
    match &m.schema().fields[f].kind {
        FieldKind::ContinuousNumerical { transform, .. } => transform.clone(),
        _ => unreachable!(),
    }
}

pub fn score_at(m: &ModelParams, seg: &RawRecord, f: usize, z: f64) -> f64 {
    let mut rec = seg.clone();
    rec.values[f] = RawValue::Number(z);
    m.score(&m.schema().encode_row(&rec).unwrap()).unwrap()
}

/// Spline model trained on a smooth CTR curve in `z` with a categorical segment.
pub fn smooth_trained_model() -> ModelParams {
    let mut r = rng(99);
    let normal = Normal::new(5.0, 2.0).unwrap();
    let zs: Vec<f64> = (0..4000).map(|_| normal.sample(&mut r)).collect();
    let schema = DatasetSchema::from_fields(
        vec![
            FieldSchema::categorical("seg", &["a", "b"], false),
            FieldSchema::continuous("z", Transform::fit_quantile(&zs, 200).unwrap(), SplineBasis::cubic(8).unwrap()),
        ],
        LabelKind::Binary,
        "y",
    )
    .unwrap();
    let rows: Vec<_> = zs
        .iter()
        .map(|&z| {
            let seg = if r.random_bool(0.5) { "a" } else { "b" };
            let shift = if seg == "a" { 0.5 } else { -0.5 };
            let p = 1.0 / (1.0 + (-((z - 5.0) * 0.8).sin() - shift).exp());
            let rec = RawRecord { values: vec![seg.into(), z.into()], label: f64::from(r.random_bool(p)) };
            schema.encode_row(&rec).unwrap()
        })
        .collect();
    let cfg = TrainConfig { epochs: 8, holdout_fraction: 0.0, ..Default::default() };
    train(&cfg, schema, &ModelSpec::new(Variant::Ffm, 2), &rows).unwrap().0
}

pub fn mean_discrepancy(m: &ModelParams, n: usize) -> f64 {
    let t = transform_of(m, 1);
    let b = make_boundaries(&t, n, &BoundaryMode::InverseCdf).unwrap();
    let (ex, _) = export_binned(m, 1, &b, MidpointSpace::Raw).unwrap();
    let (lo, hi) = t.range();
    let mut total = 0.0;
    let grid = 5000;
    for seg in ["a", "b"] {
        let rec = RawRecord { values: vec![seg.into(), RawValue::Missing], label: 0.0 };
        for j in 0..grid {
            let z = lo + (hi - lo) * (j as f64 + 0.5) / grid as f64;
            total += (score_at(&ex, &rec, 1, z) - score_at(m, &rec, 1, z)).abs();
        }
    }
    total / (2 * grid) as f64
}
