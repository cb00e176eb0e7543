use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::pipeline::TensorShape;
use crate::rng::substream;

pub const BASE_FILTERS: [usize; 3] = [128, 64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl From<TensorShape> for InputShape {
    fn from(t: TensorShape) -> Self {
        Self { channels: t.a * t.u, height: t.s, width: t.k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: InputShape,
    pub classes: usize,
    pub width_multiplier: f64,
    pub base_filters: [usize; 3],
    /// Weight of the old running statistic in each update.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelSpec {
    pub fn new(input: InputShape, classes: usize, width_multiplier: f64) -> Result<Self, LearnerError> {
        let spec = Self {
            input,
            classes,
            width_multiplier,
            base_filters: BASE_FILTERS,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let a = self.width_multiplier;
        if !(a > 0.0 && a <= 1.0) {
            return Err(LearnerError::Spec(format!("width multiplier {a} outside (0, 1]")));
        }
        if self.classes < 2 {
            return Err(LearnerError::Spec("need at least two classes".into()));
        }
        let i = self.input;
        if i.channels == 0 || i.height == 0 || i.width == 0 {
            return Err(LearnerError::Spec(format!("empty input shape {i:?}")));
        }
        if self.base_filters.contains(&0) {
            return Err(LearnerError::Spec("zero base filter count".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(LearnerError::Spec("batch-norm momentum must be in [0,1) and eps > 0".into()));
        }
        Ok(())
    }

    /// `⌈α·base⌉` per block.
    pub fn filters(&self) -> [usize; 3] {
        self.base_filters.map(|f| {
            let x = self.width_multiplier * f as f64;
            ((x - 1e-9 * x.max(1.0)).ceil() as usize).max(1)
        })
    }

    pub fn pooled_dims(&self) -> (usize, usize) {
        (pooled(self.input.height), pooled(self.input.width))
    }

    pub fn feature_len(&self) -> usize {
        let (ph, pw) = self.pooled_dims();
        self.filters()[2] * ph * pw
    }

    pub fn layout(&self) -> ParamLayout {
        let f = self.filters();
        let mut off = 0;
        let mut convs = Vec::with_capacity(6);
        let mut bns = Vec::with_capacity(3);
        let mut cin = self.input.channels;
        let mut stat = 0;
        for &cout in &f {
            for _ in 0..2 {
                let w = off;
                off += 9 * cin * cout;
                let b = off;
                off += cout;
                convs.push(ConvSlot { cin, cout, w, b });
                cin = cout;
            }
            bns.push(BnSlot { ch: cout, gamma: off, beta: off + cout, mean: stat, var: stat + cout });
            off += 2 * cout;
            stat += 2 * cout;
        }
        let features = self.feature_len();
        let lin_w = off;
        off += features * self.classes;
        let lin_b = off;
        off += self.classes;
        ParamLayout { convs, bns, features, lin_w, lin_b, total: off, running_len: stat }
    }
}

/// Output extent of the 2×2 pool; a unit extent passes through.
pub(crate) fn pooled(n: usize) -> usize {
    if n >= 2 {
        n / 2
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSlot {
    pub cin: usize,
    pub cout: usize,
    /// Offset of the `cout × cin × 3 × 3` weights.
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnSlot {
    pub ch: usize,
    pub gamma: usize,
    pub beta: usize,
    /// Offsets into the running-statistics vector.
    pub mean: usize,
    pub var: usize,
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub convs: Vec<ConvSlot>,
    pub bns: Vec<BnSlot>,
    pub features: usize,
    /// Offset of the `classes × features` weights.
    pub lin_w: usize,
    pub lin_b: usize,
    pub total: usize,
    pub running_len: usize,
}

pub fn conv_param_count(cin: usize, cout: usize) -> usize {
    9 * cin * cout + cout
}

pub fn param_count(spec: &ModelSpec) -> usize {
    spec.layout().total
}

/// Parameters of the convolutions whose input and output widths both scale
/// with the multiplier (all but the first).
pub fn hidden_conv_param_count(spec: &ModelSpec) -> usize {
    spec.layout().convs[1..].iter().map(|c| conv_param_count(c.cin, c.cout)).sum()
}

/// Trainable vector `θ` plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    /// Per block: running mean then running variance.
    pub running: Vec<f64>,
    pub seed: u64,
}

impl ModelParams {
    /// Fan-in scaled uniform weights, zero biases, unit BN scale.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let layout = spec.layout();
        let mut theta = vec![0.0; layout.total];
        for (i, c) in layout.convs.iter().enumerate() {
            let bound = (6.0 / (9 * c.cin) as f64).sqrt();
            let mut rng = substream(seed, "init-conv", i as u64);
            for w in &mut theta[c.w..c.w + 9 * c.cin * c.cout] {
                *w = rng.random_range(-bound..bound);
            }
        }
        for bn in &layout.bns {
            theta[bn.gamma..bn.gamma + bn.ch].fill(1.0);
        }
        let bound = 1.0 / (layout.features as f64).sqrt();
        let mut rng = substream(seed, "init-linear", 0);
        for w in &mut theta[layout.lin_w..layout.lin_b] {
            *w = rng.random_range(-bound..bound);
        }
        let mut running = vec![0.0; layout.running_len];
        for bn in &layout.bns {
            running[bn.var..bn.var + bn.ch].fill(1.0);
        }
        Self { theta, running, seed }
    }

    pub fn check(&self, layout: &ParamLayout) -> Result<(), LearnerError> {
        if self.theta.len() != layout.total || self.running.len() != layout.running_len {
            return Err(LearnerError::Shape(format!(
                "parameters have {}+{} values, spec needs {}+{}",
                self.theta.len(),
                self.running.len(),
                layout.total,
                layout.running_len
            )));
        }
        if self.theta.iter().chain(&self.running).any(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite("parameters"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_spec(alpha: f64) -> ModelSpec {
        ModelSpec::new(InputShape { channels: 12, height: 10, width: 234 }, 5, alpha).unwrap()
    }

    #[test]
    fn single_conv_count() {
        assert_eq!(conv_param_count(1, 8), 80);
    }

    #[test]
    fn filter_rounding() {
        assert_eq!(default_spec(1.0).filters(), [128, 64, 32]);
        assert_eq!(default_spec(0.5).filters(), [64, 32, 16]);
        assert_eq!(default_spec(0.07).filters(), [9, 5, 3]);
        assert_eq!(default_spec(0.01).filters(), [2, 1, 1]);
        assert!(ModelSpec::new(InputShape { channels: 12, height: 10, width: 234 }, 5, 0.0).is_err());
        assert!(ModelSpec::new(InputShape { channels: 12, height: 10, width: 234 }, 5, 1.5).is_err());
    }

    #[test]
    fn internal_conv_halves() {
        let full = 9 * 64 * 32;
        let half = 9 * 32 * 16;
        assert_eq!(half as f64 / full as f64, 0.25);
        let l = default_spec(0.5).layout();
        assert_eq!((l.convs[4].cin, l.convs[4].cout), (32, 16));
    }

    #[test]
    fn default_spec_tally() {
        let tally = (9 * 12 * 128 + 128)
            + (9 * 128 * 128 + 128)
            + 2 * 128
            + (9 * 128 * 64 + 64)
            + (9 * 64 * 64 + 64)
            + 2 * 64
            + (9 * 64 * 32 + 32)
            + (9 * 32 * 32 + 32)
            + 2 * 32
            + (32 * 5 * 117) * 5
            + 5;
        assert_eq!(param_count(&default_spec(1.0)), tally);
        assert_eq!(tally, 394_021);
    }

    #[test]
    fn layout_is_contiguous() {
        let l = default_spec(0.25).layout();
        let mut next = 0;
        for (i, c) in l.convs.iter().enumerate() {
            assert_eq!(c.w, next);
            next = c.b + c.cout;
            if i % 2 == 1 {
                let bn = l.bns[i / 2];
                assert_eq!(bn.gamma, next);
                next = bn.beta + bn.ch;
            }
        }
        assert_eq!(l.lin_w, next);
        assert_eq!(l.total, l.lin_b + 5);
    }

    #[test]
    fn init_is_seeded() {
        let s = default_spec(0.1);
        let a = ModelParams::init(&s, 3);
        assert_eq!(a, ModelParams::init(&s, 3));
        assert_ne!(a.theta, ModelParams::init(&s, 4).theta);
        assert!(a.check(&s.layout()).is_ok());
    }
}
