//! Detect-then-correct attention intervention.
//!
//! Within one forward step, every layer inside the configured window is scored
//! by a detection metric (layer image attention entropy by default). The best
//! attention score (BAS) is the running minimum of those scores; a layer whose
//! score strictly exceeds the current BAS is flagged. In a flagged layer the
//! `n` heads with the lowest head score are blended toward the highest-scoring
//! head on the image span: `a_h <- gamma * a_best + (1 - gamma) * a_h`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::error::{Error, Result};
use crate::metrics::{compute_mam, iae, iaf, ias, liae, liaf, lias};
use crate::model::AttentionHook;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum DetectionMetric {
    Liae,
    /// Scored as `-LIAF` so that larger is worse, like the other detectors.
    Liaf,
    Lias { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum HeadMetric {
    Iaf,
    Iae,
    Ias { beta: f64 },
}

/// Inclusive range of layers eligible for detection and correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LayerWindow {
    All,
    Empty,
    Range { first: usize, last: usize },
}

impl LayerWindow {
    pub fn contains(&self, layer: usize) -> bool {
        match *self {
            LayerWindow::All => true,
            LayerWindow::Empty => false,
            LayerWindow::Range { first, last } => layer >= first && layer <= last,
        }
    }
}

impl fmt::Display for LayerWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerWindow::All => f.write_str("all"),
            LayerWindow::Empty => f.write_str("none"),
            LayerWindow::Range { first, last } => write!(f, "{first}-{last}"),
        }
    }
}

impl FromStr for LayerWindow {
    type Err = Error;

    /// Accepts `all`, `none`, `7` or `0-25`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(alloc::format!("bad layer window {s:?}"));
        match s {
            "all" => return Ok(LayerWindow::All),
            "none" | "empty" => return Ok(LayerWindow::Empty),
            _ => {}
        }
        let (a, b) = s.split_once('-').unwrap_or((s, s));
        let first = a.trim().parse().map_err(|_| bad())?;
        let last = b.trim().parse().map_err(|_| bad())?;
        if first > last {
            return Err(bad());
        }
        Ok(LayerWindow::Range { first, last })
    }
}

/// How the BAS threshold is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BasRule {
    /// BAS is the running minimum; flag when the score exceeds it.
    #[default]
    RunningMin,
    /// The pseudo-code listing read literally: BAS is raised when the score
    /// exceeds it, and every other in-window layer is corrected.
    ListingLiteral,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DleafConfig {
    pub gamma: f64,
    pub heads_to_correct: usize,
    pub window: LayerWindow,
    pub detection_metric: DetectionMetric,
    pub head_metric: HeadMetric,
    pub renormalize_rows: bool,
    pub bas_rule: BasRule,
}

impl Default for DleafConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            heads_to_correct: 4,
            window: LayerWindow::Range { first: 0, last: 25 },
            detection_metric: DetectionMetric::Liae,
            head_metric: HeadMetric::Iaf,
            renormalize_rows: false,
            bas_rule: BasRule::RunningMin,
        }
    }
}

impl DleafConfig {
    /// Checks the head-independent invariants.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) {
            return Err(Error::Config(alloc::format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if let DetectionMetric::Lias { alpha } = self.detection_metric {
            if !unit(alpha) {
                return Err(Error::Config(alloc::format!("alpha {alpha} outside [0, 1]")));
            }
        }
        if let HeadMetric::Ias { beta } = self.head_metric {
            if !unit(beta) {
                return Err(Error::Config(alloc::format!("beta {beta} outside [0, 1]")));
            }
        }
        if let LayerWindow::Range { first, last } = self.window {
            if first > last {
                return Err(Error::Config("layer window start after end".into()));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, num_heads: usize) -> Result<()> {
        self.validate()?;
        if self.heads_to_correct >= num_heads {
            return Err(Error::Config(alloc::format!(
                "heads_to_correct {} must be below head count {num_heads}",
                self.heads_to_correct
            )));
        }
        Ok(())
    }
}

/// Running threshold for one forward step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasState {
    pub bas: f64,
}

impl Default for BasState {
    fn default() -> Self {
        Self { bas: f64::INFINITY }
    }
}

/// Updates `state` with a layer's detection score and reports whether the layer is flagged.
pub fn detect_layer(score: f64, state: &mut BasState, rule: BasRule) -> bool {
    match rule {
        BasRule::RunningMin => {
            if score > state.bas {
                true
            } else {
                state.bas = score;
                false
            }
        }
        BasRule::ListingLiteral => {
            if state.bas < score {
                state.bas = score;
                false
            } else {
                true
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSelection {
    pub corrected: Vec<usize>,
    pub best: usize,
}

/// Stable ascending sort of heads by score: the first `n` are corrected, the last is the donor.
pub fn select_heads(scores: &[f64], n: usize) -> Result<HeadSelection> {
    if n >= scores.len() {
        return Err(Error::Config(alloc::format!(
            "cannot correct {n} of {} heads",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let best = *order.last().expect("at least one head");
    order.truncate(n);
    Ok(HeadSelection { corrected: order, best })
}

/// Blends each corrected head's span slice toward the best head's, in place.
pub fn fuse_heads(
    snapshot: &mut AttentionSnapshot,
    corrected: &[usize],
    best: usize,
    gamma: f64,
    span: ImageSpan,
    renormalize: bool,
) -> Result<()> {
    span.check(snapshot.keys())?;
    let heads = snapshot.heads();
    if best >= heads || corrected.iter().any(|&h| h >= heads) {
        return Err(Error::Shape("head index out of range".into()));
    }
    let donor: Vec<f64> = snapshot.span_slice(best, span).to_vec();
    for &h in corrected {
        if h == best {
            continue;
        }
        let row = snapshot.row_mut(h);
        for (a, &b) in row[span.start..span.end].iter_mut().zip(&donor) {
            *a = gamma * b + (1.0 - gamma) * *a;
        }
        if renormalize {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|a| *a /= total);
            }
        }
    }
    Ok(())
}

/// Detection score of one layer under `metric`.
pub fn detection_score(snapshot: &AttentionSnapshot, span: ImageSpan, metric: DetectionMetric) -> Result<f64> {
    let mam = compute_mam(snapshot, span)?;
    Ok(match metric {
        DetectionMetric::Liae => liae(&mam)?,
        DetectionMetric::Liaf => -liaf(&mam),
        DetectionMetric::Lias { alpha } => lias(liae(&mam)?, liaf(&mam), alpha),
    })
}

pub fn head_scores(snapshot: &AttentionSnapshot, span: ImageSpan, metric: HeadMetric) -> Result<Vec<f64>> {
    (0..snapshot.heads())
        .map(|h| match metric {
            HeadMetric::Iaf => iaf(snapshot, h, span),
            HeadMetric::Iae => iae(snapshot, h, span),
            HeadMetric::Ias { beta } => Ok(ias(iaf(snapshot, h, span)?, iae(snapshot, h, span)?, beta)),
        })
        .collect()
}

/// What happened at one flagged layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerCorrection {
    pub layer: usize,
    pub score: f64,
    pub bas_before: f64,
    pub corrected: Vec<usize>,
    pub best: usize,
    pub head_scores: Vec<f64>,
    pub pre_iaf: Vec<f64>,
    pub post_iaf: Vec<f64>,
}

/// Audit record of one forward step.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLog {
    pub position: usize,
    /// Detection score per layer; `None` outside the window.
    pub scores: Vec<Option<f64>>,
    /// BAS after each layer; `None` outside the window.
    pub bas: Vec<Option<f64>>,
    pub corrections: Vec<LayerCorrection>,
}

impl StepLog {
    pub fn flagged_layers(&self) -> Vec<usize> {
        self.corrections.iter().map(|c| c.layer).collect()
    }

    fn record(&mut self, layer: usize, score: Option<f64>, bas: Option<f64>) {
        if self.scores.len() <= layer {
            self.scores.resize(layer + 1, None);
            self.bas.resize(layer + 1, None);
        }
        self.scores[layer] = score;
        self.bas[layer] = bas;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterventionLog {
    pub steps: Vec<StepLog>,
}

impl InterventionLog {
    pub fn is_empty(&self) -> bool {
        self.steps.iter().all(|s| s.corrections.is_empty())
    }
}

/// Per-step detect-and-correct state, fed one layer at a time in order.
#[derive(Debug, Clone)]
pub struct StepEngine<'a> {
    config: &'a DleafConfig,
    state: BasState,
    log: StepLog,
}

impl<'a> StepEngine<'a> {
    pub fn new(config: &'a DleafConfig, position: usize) -> Self {
        Self { config, state: BasState::default(), log: StepLog { position, ..StepLog::default() } }
    }

    pub fn bas(&self) -> f64 {
        self.state.bas
    }

    pub fn process_layer(&mut self, snapshot: &mut AttentionSnapshot, span: ImageSpan) -> Result<()> {
        let layer = snapshot.layer;
        if !self.config.window.contains(layer) {
            self.log.record(layer, None, None);
            return Ok(());
        }
        let cfg = self.config;
        let score = detection_score(snapshot, span, cfg.detection_metric)?;
        let bas_before = self.state.bas;
        let flagged = detect_layer(score, &mut self.state, cfg.bas_rule);
        self.log.record(layer, Some(score), Some(self.state.bas));
        if !flagged {
            return Ok(());
        }
        if cfg.heads_to_correct >= snapshot.heads() {
            return Err(Error::Config("heads_to_correct must be below head count".into()));
        }
        let scores = head_scores(snapshot, span, cfg.head_metric)?;
        let selection = select_heads(&scores, cfg.heads_to_correct)?;
        let pre_iaf = iaf_all(snapshot, span)?;
        fuse_heads(snapshot, &selection.corrected, selection.best, cfg.gamma, span, cfg.renormalize_rows)?;
        let post_iaf = iaf_all(snapshot, span)?;
        self.log.corrections.push(LayerCorrection {
            layer,
            score,
            bas_before,
            corrected: selection.corrected,
            best: selection.best,
            head_scores: scores,
            pre_iaf,
            post_iaf,
        });
        Ok(())
    }

    pub fn finish(self) -> StepLog {
        self.log
    }
}

fn iaf_all(snapshot: &AttentionSnapshot, span: ImageSpan) -> Result<Vec<f64>> {
    (0..snapshot.heads()).map(|h| iaf(snapshot, h, span)).collect()
}

/// Runs the loop over an already-captured stack of layer snapshots, in layer order.
///
/// Offline traces have no downstream recomputation, so each layer is corrected
/// in isolation.
pub fn apply_to_layers(
    config: &DleafConfig,
    snapshots: &mut [AttentionSnapshot],
    span: ImageSpan,
    position: usize,
) -> Result<StepLog> {
    let mut engine = StepEngine::new(config, position);
    for snap in snapshots.iter_mut() {
        engine.process_layer(snap, span)?;
    }
    Ok(engine.finish())
}

/// The loop packaged as a model hook. One hook per decode stream.
#[derive(Debug, Clone)]
pub struct DleafHook {
    config: DleafConfig,
    state: BasState,
    current: Option<StepLog>,
    log: InterventionLog,
}

impl DleafHook {
    pub fn new(config: DleafConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: BasState::default(), current: None, log: InterventionLog::default() })
    }

    pub fn config(&self) -> &DleafConfig {
        &self.config
    }

    pub fn log(&self) -> &InterventionLog {
        &self.log
    }

    pub fn into_log(self) -> InterventionLog {
        self.log
    }
}

impl AttentionHook for DleafHook {
    fn begin_step(&mut self, position: usize) {
        self.state = BasState::default();
        self.current = Some(StepLog { position, ..StepLog::default() });
    }

    fn on_attention(&mut self, snapshot: &mut AttentionSnapshot, span: ImageSpan) -> Result<()> {
        let log = self.current.take().unwrap_or_default();
        let mut engine = StepEngine { config: &self.config, state: self.state, log };
        let outcome = engine.process_layer(snapshot, span);
        self.state = engine.state;
        self.current = Some(engine.log);
        outcome
    }

    fn end_step(&mut self) {
        if let Some(step) = self.current.take() {
            self.log.steps.push(step);
        }
    }
}

/// Reference span mass after fusing head `h` toward `best`, without renormalization.
pub fn fused_row_sum(iaf_h: f64, iaf_best: f64, gamma: f64) -> f64 {
    1.0 + gamma * (iaf_best - iaf_h)
}

#[doc(hidden)]
pub fn uniform_snapshot(layer: usize, heads: usize, keys: usize) -> AttentionSnapshot {
    AttentionSnapshot::from_flat(layer, heads, keys, vec![1.0 / keys as f64; heads * keys])
        .expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_layer_seeds_bas() {
        let mut s = BasState::default();
        assert!(!detect_layer(2.0, &mut s, BasRule::RunningMin));
        assert_eq!(s.bas, 2.0);
    }

    #[test]
    fn running_min_example() {
        let mut s = BasState::default();
        let flags: Vec<bool> = [2.0, 1.5, 1.8].iter().map(|&v| detect_layer(v, &mut s, BasRule::RunningMin)).collect();
        assert_eq!(flags, vec![false, false, true]);
        assert_eq!(s.bas, 1.5);
    }

    #[test]
    fn ties_do_not_flag() {
        let mut s = BasState::default();
        assert!((0..5).all(|_| !detect_layer(1.0, &mut s, BasRule::RunningMin)));
    }

    #[test]
    fn listing_literal_corrects_everything_from_infinity() {
        let mut s = BasState::default();
        let flags: Vec<bool> = [2.0, 1.5, 1.8].iter().map(|&v| detect_layer(v, &mut s, BasRule::ListingLiteral)).collect();
        assert_eq!(flags, vec![true, true, true]);
    }

    #[test]
    fn select_heads_examples() {
        let sel = select_heads(&[0.9, 0.1, 0.5, 0.7], 2).unwrap();
        assert_eq!(sel.corrected, vec![1, 2]);
        assert_eq!(sel.best, 0);

        let sel = select_heads(&[0.3; 4], 1).unwrap();
        assert_eq!(sel.corrected, vec![0]);
        assert_eq!(sel.best, 3);

        assert!(select_heads(&[0.3, 0.2], 0).unwrap().corrected.is_empty());
        assert!(matches!(select_heads(&[0.3, 0.2], 2), Err(Error::Config(_))));
    }

    #[test]
    fn fuse_worked_example() {
        let mut s = AttentionSnapshot::from_rows(0, &[vec![0.1, 0.1, 0.8], vec![0.4, 0.3, 0.3]]).unwrap();
        fuse_heads(&mut s, &[0], 1, 0.8, ImageSpan::new(0, 2), false).unwrap();
        assert!((s.row(0)[0] - 0.34).abs() < 1e-12);
        assert!((s.row(0)[1] - 0.26).abs() < 1e-12);
        assert_eq!(s.row(0)[2], 0.8);
        assert_eq!(s.row(1), &[0.4, 0.3, 0.3]);
        assert!((s.row_sum(0) - fused_row_sum(0.2, 0.7, 0.8)).abs() < 1e-12);
    }

    #[test]
    fn fuse_degenerate_gammas() {
        let base = AttentionSnapshot::from_rows(0, &[vec![0.1, 0.2, 0.7], vec![0.5, 0.25, 0.25]]).unwrap();
        let span = ImageSpan::new(0, 2);
        let mut s = base.clone();
        fuse_heads(&mut s, &[0], 1, 0.0, span, false).unwrap();
        assert_eq!(s, base);
        fuse_heads(&mut s, &[0], 1, 1.0, span, false).unwrap();
        assert_eq!(s.span_slice(0, span), base.span_slice(1, span));
    }

    #[test]
    fn renormalized_rows_sum_to_one() {
        let mut s = AttentionSnapshot::from_rows(0, &[vec![0.1, 0.1, 0.8], vec![0.4, 0.3, 0.3]]).unwrap();
        fuse_heads(&mut s, &[0], 1, 0.8, ImageSpan::new(0, 2), true).unwrap();
        assert!((s.row_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_parsing() {
        assert_eq!("0-25".parse::<LayerWindow>().unwrap(), LayerWindow::Range { first: 0, last: 25 });
        assert_eq!("7".parse::<LayerWindow>().unwrap(), LayerWindow::Range { first: 7, last: 7 });
        assert_eq!("all".parse::<LayerWindow>().unwrap(), LayerWindow::All);
        assert_eq!("none".parse::<LayerWindow>().unwrap(), LayerWindow::Empty);
        assert!("9-3".parse::<LayerWindow>().is_err());
        assert!(!LayerWindow::Range { first: 2, last: 4 }.contains(5));
    }

    #[test]
    fn config_validation() {
        assert!(DleafConfig::default().validate_for(8).is_ok());
        assert!(DleafConfig::default().validate_for(4).is_err());
        assert!(DleafConfig { gamma: 1.5, ..DleafConfig::default() }.validate().is_err());
        let lias = DleafConfig { detection_metric: DetectionMetric::Lias { alpha: -0.1 }, ..DleafConfig::default() };
        assert!(lias.validate().is_err());
    }

    fn diffuse_or_peaked(layer: usize, peaked: bool) -> AttentionSnapshot {
        let mut rows = Vec::new();
        for h in 0..4 {
            let mut row = vec![0.0; 6];
            if peaked {
                row[0] = 0.6 - 0.1 * h as f64;
                row[5] = 0.4 + 0.1 * h as f64;
            } else {
                for v in row.iter_mut().take(4) {
                    *v = 0.15;
                }
                row[5] = 0.4;
            }
            rows.push(row);
        }
        // make one head stronger so the donor is unique
        rows[3][3] += 0.05;
        rows[3][5] -= 0.05;
        AttentionSnapshot::from_rows(layer, &rows).unwrap()
    }

    #[test]
    fn only_the_planted_diffuse_layer_is_flagged() {
        let span = ImageSpan::new(0, 4);
        // peaked layers all have one MAM profile, layer 7 is diffuse
        let mut layers: Vec<AttentionSnapshot> = (0..10).map(|l| diffuse_or_peaked(l, l != 7)).collect();
        let cfg = DleafConfig { heads_to_correct: 2, window: LayerWindow::All, ..DleafConfig::default() };
        let log = apply_to_layers(&cfg, &mut layers, span, 0).unwrap();
        assert_eq!(log.flagged_layers(), vec![7]);
        let c = &log.corrections[0];
        assert_eq!(c.corrected.len(), 2);
        assert!(!c.corrected.contains(&c.best));
    }

    #[test]
    fn empty_window_touches_nothing() {
        let span = ImageSpan::new(0, 4);
        let mut layers: Vec<AttentionSnapshot> = (0..4).map(|l| diffuse_or_peaked(l, l != 2)).collect();
        let before = layers.clone();
        let cfg = DleafConfig { window: LayerWindow::Empty, heads_to_correct: 2, ..DleafConfig::default() };
        let log = apply_to_layers(&cfg, &mut layers, span, 0).unwrap();
        assert!(log.corrections.is_empty());
        assert_eq!(layers, before);
    }

    #[test]
    fn zero_heads_flags_but_changes_nothing() {
        let span = ImageSpan::new(0, 4);
        let mut layers: Vec<AttentionSnapshot> = (0..4).map(|l| diffuse_or_peaked(l, l != 2)).collect();
        let before = layers.clone();
        let cfg = DleafConfig { window: LayerWindow::All, heads_to_correct: 0, ..DleafConfig::default() };
        let log = apply_to_layers(&cfg, &mut layers, span, 0).unwrap();
        assert_eq!(log.flagged_layers(), vec![2]);
        assert!(log.corrections[0].corrected.is_empty());
        assert_eq!(layers, before);
    }

    fn snapshot_strategy() -> impl Strategy<Value = (AttentionSnapshot, ImageSpan)> {
        (2usize..8, 3usize..12).prop_flat_map(|(h, t)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.001f64..1.0, t), h),
                0..t - 1,
            )
                .prop_flat_map(move |(raw, start)| {
                    (Just(raw), Just(start), start + 1..=t)
                })
                .prop_map(|(raw, start, end)| {
                    let rows: Vec<Vec<f64>> = raw
                        .into_iter()
                        .map(|r| {
                            let s: f64 = r.iter().sum();
                            r.into_iter().map(|v| v / s).collect()
                        })
                        .collect();
                    (AttentionSnapshot::from_rows(0, &rows).unwrap(), ImageSpan::new(start, end))
                })
        })
    }

    proptest! {
        #[test]
        fn fusion_is_convex_and_raises_focus(
            (snap, span) in snapshot_strategy(),
            gamma in 0.0f64..=1.0,
            n in 0usize..8,
        ) {
            let heads = snap.heads();
            let n = n % heads;
            let scores: Vec<f64> = (0..heads).map(|h| iaf(&snap, h, span).unwrap()).collect();
            let sel = select_heads(&scores, n).unwrap();
            let mut fused = snap.clone();
            fuse_heads(&mut fused, &sel.corrected, sel.best, gamma, span, false).unwrap();
            for &h in &sel.corrected {
                for k in span.start..span.end {
                    let (a, b) = (snap.row(h)[k], snap.row(sel.best)[k]);
                    let v = fused.row(h)[k];
                    prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
                let expected = fused_row_sum(scores[h], scores[sel.best], gamma);
                prop_assert!((fused.row_sum(h) - expected).abs() < 1e-9);
                prop_assert!(iaf(&fused, h, span).unwrap() >= scores[h] - 1e-12);
            }
        }

        #[test]
        fn gamma_one_is_idempotent((snap, span) in snapshot_strategy()) {
            let mut once = snap.clone();
            fuse_heads(&mut once, &[0], snap.heads() - 1, 1.0, span, false).unwrap();
            let mut twice = once.clone();
            fuse_heads(&mut twice, &[0], snap.heads() - 1, 1.0, span, false).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn bas_is_running_minimum(values in proptest::collection::vec(0.0f64..5.0, 1..40)) {
            let mut s = BasState::default();
            let mut prev = f64::INFINITY;
            for &v in &values {
                let before = s.bas;
                let flagged = detect_layer(v, &mut s, BasRule::RunningMin);
                prop_assert_eq!(flagged, v > before);
                prop_assert!(s.bas <= prev);
                prev = s.bas;
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(s.bas, min);
        }
    }
}
