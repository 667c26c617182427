//! Sparse stereo depth estimation, cross-sensor failure labeling into
//! FP/FN/TP/TN, and failure-prediction metrics.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{layout, CameraIntrinsics, ContextFeatures, FailureLabel, Pose3, RegionClass, MIN_DEPTH};
use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, stream_rng};
use crate::simworld::{
    observe_features, render_zbuffer, supervisory_from_zbuffer, visible_projection, FeatureObservation, SensorConfig,
    SupervisoryConfig, World,
};

/// Planted stereo matching faults for one region class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthFault {
    /// Probability of adding `bias_m` to the estimated depth.
    pub bias_rate: f64,
    pub bias_m: f64,
    /// Probability of a gross mismatch that scales the disparity by a factor
    /// drawn uniformly from `gross_factor`.
    pub gross_rate: f64,
    pub gross_factor: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthFaultProfile {
    pub classes: BTreeMap<RegionClass, DepthFault>,
}

impl DepthFaultProfile {
    pub fn with(mut self, class: RegionClass, fault: DepthFault) -> Self {
        self.classes.insert(class, fault);
        self
    }

    pub fn get(&self, class: RegionClass) -> DepthFault {
        self.classes.get(&class).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.classes.values() {
            let (lo, hi) = f.gross_factor;
            if !(0.0..=1.0).contains(&f.bias_rate) || !(0.0..=1.0).contains(&f.gross_rate) {
                return Err(Error::Config("fault rates must lie in [0, 1]".into()));
            }
            if f.gross_rate > 0.0 && !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config("gross factor range must be positive and ordered".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub landmark_id: usize,
    /// `None` when the (possibly corrupted) disparity is not positive.
    pub depth: Option<f64>,
    pub faulted: bool,
}

/// Depth from the disparity of matched left/right features, with planted
/// per-class matching faults.
pub fn stereo_depth(
    obs: &[FeatureObservation],
    intr: &CameraIntrinsics,
    faults: &DepthFaultProfile,
    seed: u64,
) -> Vec<DepthEstimate> {
    let mut rng = stream_rng(seed, 0x73746572);
    obs.iter()
        .map(|o| {
            let f = faults.get(o.region);
            let mut disparity = o.pixel.x - o.pixel_right.x;
            let gross = f.gross_rate > 0.0 && rng.random_bool(f.gross_rate);
            if gross {
                disparity *= rng.random_range(f.gross_factor.0..=f.gross_factor.1);
            }
            let biased = f.bias_rate > 0.0 && rng.random_bool(f.bias_rate);
            let depth = intr
                .depth_from_disparity(disparity)
                .map(|d| if biased { d + f.bias_m } else { d })
                .filter(|d| *d > MIN_DEPTH);
            DepthEstimate { landmark_id: o.landmark_id, depth, faulted: gross || biased }
        })
        .collect()
}

/// One sparse depth cell at a projected landmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthCell {
    pub landmark_id: usize,
    /// Context with the inverse-depth entry replaced by the stereo estimate's.
    pub context: ContextFeatures,
    pub estimated: Option<f64>,
    /// Supervisory depth; `None` where the sensor returned its sentinel.
    pub reference: Option<f64>,
    pub true_depth: f64,
    pub region: RegionClass,
    pub faulted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub frame_id: u64,
    pub cells: Vec<DepthCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSceneConfig {
    pub sensor: SensorConfig,
    pub faults: DepthFaultProfile,
    pub supervisory: SupervisoryConfig,
}

/// Observes one frame, estimates stereo depth and reads the registered
/// supervisory sensor at each landmark's true projection. Landmarks hidden
/// behind a nearer rendered surface are not observed.
pub fn build_depth_frame(
    world: &World,
    pose: &Pose3,
    intr: &CameraIntrinsics,
    cfg: &DepthSceneConfig,
    frame_id: u64,
    seed: u64,
) -> Result<DepthFrame> {
    cfg.faults.validate()?;
    let obs = observe_features(world, pose, intr, &cfg.sensor, mix_seed(seed, 1));
    let est = stereo_depth(&obs, intr, &cfg.faults, mix_seed(seed, 2));
    let zbuf = render_zbuffer(world, pose, intr, cfg.supervisory.disc_radius_m);
    let sup = supervisory_from_zbuffer(&zbuf, intr, &cfg.supervisory, mix_seed(seed, 3))?;
    let cells = obs
        .iter()
        .zip(est)
        .filter_map(|(o, e)| {
            let (_, true_px, _) =
                visible_projection(intr, pose, &world.landmarks[o.landmark_id].position, f64::INFINITY)?;
            let (u, v) = (true_px.x.round() as usize, true_px.y.round() as usize);
            if u < intr.width && v < intr.height && zbuf[v * intr.width + u] < o.depth - 1e-9 {
                return None;
            }
            let reference = sup.sample(&true_px).filter(|d| !sup.is_sentinel(*d));
            let inv = e.depth.map_or(0.0, |d| 1.0 / d);
            Some(DepthCell {
                landmark_id: o.landmark_id,
                context: o.context.with_inv_depth(inv),
                estimated: e.depth,
                reference,
                true_depth: o.depth,
                region: o.region,
                faulted: e.faulted,
            })
        })
        .collect();
    Ok(DepthFrame { frame_id, cells })
}

/// Labels a depth error (`estimated - reference`): beyond `+alpha` is a
/// false negative (obstacle reported too far), below `-alpha` a false
/// positive; accurate estimates are TP when the true depth is within
/// `r_max` and TN otherwise.
pub fn classify_error(error: f64, alpha: f64, true_depth: f64, r_max: f64) -> Result<FailureLabel> {
    if !(alpha > 0.0 && r_max > alpha) {
        return Err(invalid("classification requires 0 < alpha < r_max"));
    }
    if !(error.abs() < r_max) {
        return Err(Error::OutOfSupport { value: error, r_max });
    }
    Ok(if error > alpha {
        FailureLabel::Fn
    } else if error < -alpha {
        FailureLabel::Fp
    } else if true_depth <= r_max {
        FailureLabel::Tp
    } else {
        FailureLabel::Tn
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCell {
    pub frame_id: u64,
    pub context: ContextFeatures,
    pub error_m: f64,
    pub label: FailureLabel,
}

/// Labels every cell with both an estimate and a supervisory reference.
/// Cells whose error falls outside the support are skipped.
pub fn label_depth_frame(frame: &DepthFrame, alpha: f64, r_max: f64) -> Vec<LabeledCell> {
    label_with_estimates(frame, frame.cells.iter().map(|c| c.estimated), alpha, r_max)
}

/// As [`label_depth_frame`], with the per-cell estimates supplied separately
/// (used to label the outputs of other depth estimators on the same cells).
pub fn label_with_estimates(
    frame: &DepthFrame,
    estimates: impl IntoIterator<Item = Option<f64>>,
    alpha: f64,
    r_max: f64,
) -> Vec<LabeledCell> {
    frame
        .cells
        .iter()
        .zip(estimates)
        .filter_map(|(c, est)| {
            let err = est? - c.reference?;
            let label = classify_error(err, alpha, c.true_depth, r_max).ok()?;
            Some(LabeledCell { frame_id: frame.frame_id, context: c.context.clone(), error_m: err, label })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nll: f64,
    /// No positive predictions: precision reported as 0.
    pub precision_undefined: bool,
    /// No actual failures: recall reported as 0.
    pub recall_undefined: bool,
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Binary failure metrics at decision threshold 0.5; NLL of the probability
/// assigned to the observed outcome.
pub fn failure_metrics(p_failure: &[f64], labels: &[FailureLabel]) -> Result<FailureMetrics> {
    if p_failure.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: p_failure.len() });
    }
    if labels.is_empty() {
        return Err(Error::Empty("failure metrics input".into()));
    }
    if p_failure.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("probabilities must lie in [0, 1]"));
    }
    let (mut tp, mut fp, mut fn_, mut nll) = (0usize, 0usize, 0usize, 0.0);
    for (p, l) in p_failure.iter().zip(labels) {
        let actual = l.is_failure();
        let predicted = *p > 0.5;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
        let q = if actual { *p } else { 1.0 - p };
        nll -= q.max(PROB_FLOOR).ln();
    }
    let precision_undefined = tp + fp == 0;
    let recall_undefined = tp + fn_ == 0;
    let precision = if precision_undefined { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if recall_undefined { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(FailureMetrics {
        precision,
        recall,
        f1,
        nll: nll / labels.len() as f64,
        precision_undefined,
        recall_undefined,
    })
}

pub fn write_labeled_csv<W: Write>(cells: &[LabeledCell], out: W) -> Result<()> {
    let dim = cells.first().map_or(layout::DIM, |c| c.context.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frame_id".to_string()];
    header.extend((0..dim).map(|i| format!("ctx_{i}")));
    header.extend(["error_m".into(), "label".into()]);
    w.write_record(&header)?;
    for c in cells {
        if c.context.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: c.context.dim() });
        }
        let mut rec = vec![c.frame_id.to_string()];
        rec.extend(c.context.as_slice().iter().map(|v| format!("{v:.16e}")));
        rec.push(format!("{:.16e}", c.error_m));
        rec.push(c.label.name().into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv<R: Read>(input: R) -> Result<Vec<LabeledCell>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("ctx_")).count();
    if header.len() != dim + 3 {
        return Err(invalid("labeled CSV header does not match frame_id,ctx_*,error_m,label"));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|e| invalid(format!("bad number '{s}': {e}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let ctx = (1..=dim).map(|i| parse(&rec[i])).collect::<Result<Vec<f64>>>()?;
        out.push(LabeledCell {
            frame_id: rec[0].parse().map_err(|e| invalid(format!("bad frame id: {e}")))?,
            context: ContextFeatures::new(ctx)?,
            error_m: parse(&rec[dim + 1])?,
            label: FailureLabel::parse(&rec[dim + 2])?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricsRow {
    pub seed: u64,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nll: f64,
}

pub fn write_depth_metrics_csv<W: Write>(rows: &[DepthMetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["seed", "method", "precision", "recall", "f1", "nll"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth_metrics_csv<R: Read>(input: R) -> Result<Vec<DepthMetricsRow>> {
    Ok(csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<_, _>>()?)
}
