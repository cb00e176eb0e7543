//! Frame streams to fixed-size labeled tensors.
//!
//! Frames are grouped into contiguous `W`-second windows; windows that
//! straddle two label spans are dropped. Each kept window becomes an
//! `S × K' × A' × U'` tensor of dequantized angles: per user the earliest `S`
//! frames are kept and missing frames are zero rows.
//!
//! Window arithmetic is done on integer nanoseconds so that timestamps such
//! as `0.3` land in the window a human would expect.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, BfiFrame, CodecError};
use crate::rng::substream;
use crate::sim::LabelSpan;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty frame stream")]
    EmptyStream,
    #[error("frames are not sorted by timestamp (index {0})")]
    Unsorted(usize),
    #[error("invalid window length {0} s")]
    BadWindow(f64),
    #[error("invalid selection: {0}")]
    Selection(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("frame from user {user} but the session has {users} users")]
    UnknownUser { user: u8, users: usize },
    #[error("inconsistent frame shape: {0}")]
    Shape(String),
    #[error("tensor store: {0}")]
    Store(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

fn from_ns(t: i64) -> f64 {
    t as f64 / 1e9
}

/// Frames of one `W`-second span, grouped by user (index = user id).
#[derive(Debug, Clone)]
pub struct ObservationWindow<'a> {
    pub start_ns: i64,
    pub width_ns: i64,
    pub label: usize,
    /// Offset of the window start from the start of its label span.
    pub span_offset_s: f64,
    pub frames: Vec<Vec<&'a BfiFrame>>,
}

impl ObservationWindow<'_> {
    pub fn start_s(&self) -> f64 {
        from_ns(self.start_ns)
    }

    pub fn packet_counts(&self) -> Vec<usize> {
        self.frames.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        let t = to_ns(t);
        self.start_ns <= t && t < self.start_ns + self.width_ns
    }
}

/// Splits a time-sorted frame stream into labeled windows.
///
/// Windows tile `[0, duration)`; only complete windows are produced, so a
/// window longer than the session yields an empty list.
pub fn windowize<'a>(
    frames: &'a [BfiFrame],
    users: usize,
    duration_s: f64,
    window_s: f64,
    spans: &[LabelSpan],
) -> Result<Vec<ObservationWindow<'a>>, PipelineError> {
    if frames.is_empty() {
        return Err(PipelineError::EmptyStream);
    }
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(PipelineError::BadWindow(window_s));
    }
    let width = to_ns(window_s);
    if width <= 0 {
        return Err(PipelineError::BadWindow(window_s));
    }
    if let Some(i) = frames
        .windows(2)
        .position(|w| w[1].meta.timestamp < w[0].meta.timestamp)
    {
        return Err(PipelineError::Unsorted(i + 1));
    }
    if let Some(f) = frames.iter().find(|f| usize::from(f.meta.user_id) >= users) {
        return Err(PipelineError::UnknownUser { user: f.meta.user_id, users });
    }

    let n_windows = (to_ns(duration_s) / width).max(0) as usize;
    let spans_ns: Vec<(i64, i64, usize)> = spans
        .iter()
        .map(|s| (to_ns(s.start_s), to_ns(s.end_s), s.class_id))
        .collect();

    let mut buckets: Vec<Vec<Vec<&BfiFrame>>> = vec![vec![Vec::new(); users]; n_windows];
    for f in frames {
        let t = to_ns(f.meta.timestamp);
        if t < 0 {
            continue;
        }
        let j = (t / width) as usize;
        if j < n_windows {
            buckets[j][usize::from(f.meta.user_id)].push(f);
        }
    }

    let mut out = Vec::new();
    for (j, per_user) in buckets.into_iter().enumerate() {
        let start = j as i64 * width;
        let end = start + width;
        let span = spans_ns.iter().find(|(s, e, _)| *s <= start && end <= *e);
        if let Some(&(span_start, _, label)) = span {
            out.push(ObservationWindow {
                start_ns: start,
                width_ns: width,
                label,
                span_offset_s: from_ns(start - span_start),
                frames: per_user,
            });
        }
    }
    Ok(out)
}

/// Mean packets per window per user, rounded half-up, at least 1.
pub fn compute_s(windows: &[ObservationWindow<'_>]) -> usize {
    let counts: Vec<usize> = windows.iter().flat_map(|w| w.packet_counts()).collect();
    s_from_counts(&counts)
}

pub fn s_from_counts(counts: &[usize]) -> usize {
    if counts.is_empty() {
        return 1;
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    ((mean + 0.5).floor() as usize).max(1)
}

/// Restriction of the full `K × A × U` angle grid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Keep the first `n` sub-channels.
    pub subchannels: Option<usize>,
    /// Angle indices in emission order.
    pub angles: Option<Vec<usize>>,
    /// Station (user) indices.
    pub stations: Option<Vec<usize>>,
}

/// Selection resolved against concrete `(K, A, U)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSelection {
    pub subchannels: usize,
    pub angles: Vec<usize>,
    pub stations: Vec<usize>,
}

impl Selection {
    pub fn resolve(&self, k: usize, a: usize, u: usize) -> Result<ResolvedSelection, PipelineError> {
        let subchannels = self.subchannels.unwrap_or(k);
        if subchannels == 0 || subchannels > k {
            return Err(PipelineError::Selection(format!("{subchannels} sub-channels requested, {k} available")));
        }
        let check = |list: &Option<Vec<usize>>, n: usize, what: &str| -> Result<Vec<usize>, PipelineError> {
            let v = list.clone().unwrap_or_else(|| (0..n).collect());
            if v.is_empty() {
                return Err(PipelineError::Selection(format!("empty {what} selection")));
            }
            if let Some(bad) = v.iter().find(|&&i| i >= n) {
                return Err(PipelineError::Selection(format!("{what} index {bad} but only {n} present")));
            }
            let mut sorted = v.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(PipelineError::Selection(format!("duplicate {what} index")));
            }
            Ok(v)
        };
        Ok(ResolvedSelection {
            subchannels,
            angles: check(&self.angles, a, "angle")?,
            stations: check(&self.stations, u, "station")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub s: usize,
    pub k: usize,
    pub a: usize,
    pub u: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.s * self.k * self.a * self.u
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: usize, k: usize, a: usize, u: usize) -> usize {
        ((s * self.k + k) * self.a + a) * self.u + u
    }
}

/// `S × K' × A' × U'` angle tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTensor {
    pub shape: TensorShape,
    pub label: usize,
    pub data: Vec<f64>,
}

impl SampleTensor {
    pub fn get(&self, s: usize, k: usize, a: usize, u: usize) -> f64 {
        self.data[self.shape.index(s, k, a, u)]
    }
}

/// Builds the tensor of one window.
pub fn assemble_tensor(
    window: &ObservationWindow<'_>,
    s: usize,
    selection: &ResolvedSelection,
) -> Result<SampleTensor, PipelineError> {
    if s == 0 {
        return Err(PipelineError::Selection("S must be at least 1".into()));
    }
    let shape = TensorShape {
        s,
        k: selection.subchannels,
        a: selection.angles.len(),
        u: selection.stations.len(),
    };
    let mut data = vec![0.0; shape.len()];
    for (ui, &user) in selection.stations.iter().enumerate() {
        let frames = window.frames.get(user).ok_or_else(|| {
            PipelineError::Selection(format!("station {user} absent from window"))
        })?;
        for (si, frame) in frames.iter().take(s).enumerate() {
            if usize::from(frame.subchannels) < shape.k {
                return Err(PipelineError::Shape(format!(
                    "frame has {} sub-channels, {} selected",
                    frame.subchannels, shape.k
                )));
            }
            let codes = codec::unpack_frame(frame)?;
            for (ki, q) in codes.iter().take(shape.k).enumerate() {
                let values = codec::dequantize(q)?.emission_values();
                for (ai, &angle) in selection.angles.iter().enumerate() {
                    let v = *values.get(angle).ok_or_else(|| {
                        PipelineError::Selection(format!("angle {angle} absent ({} per sub-channel)", values.len()))
                    })?;
                    data[shape.index(si, ki, ai, ui)] = v;
                }
            }
        }
    }
    Ok(SampleTensor { shape, label: window.label, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Stratified seeded split: per class, samples are shuffled and the first
/// `round(f_train·n)` go to train, the next `round(f_val·n)` to val, the
/// rest to test.
pub fn split_labels(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<Vec<Split>, PipelineError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Split(format!("fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut out = vec![Split::Train; labels.len()];
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < needed {
            return Err(PipelineError::Split(format!(
                "class {c} has {} samples, fewer than {needed} splits",
                idx.len()
            )));
        }
        idx.shuffle(&mut substream(seed, "split", c as u64));
        let n = idx.len() as f64;
        let n_train = (fractions[0] * n).round() as usize;
        let n_val = ((fractions[1] * n).round() as usize).min(idx.len() - n_train);
        for (pos, &i) in idx.iter().enumerate() {
            out[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    /// Byte offset of the sample record in the tensor store.
    pub offset: u64,
    pub label: usize,
    pub window_start_s: f64,
    pub span_offset_s: f64,
    pub session: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window_s: f64,
    pub shape: TensorShape,
    pub selection: ResolvedSelection,
    pub classes: usize,
    pub split_seed: u64,
    pub fractions: [f64; 3],
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

/// Re-assigns the splits of an existing manifest.
pub fn split_dataset(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest, PipelineError> {
    let labels: Vec<usize> = manifest.samples.iter().map(|s| s.label).collect();
    let splits = split_labels(&labels, fractions, seed)?;
    let mut out = manifest.clone();
    out.split_seed = seed;
    out.fractions = fractions;
    for (e, sp) in out.samples.iter_mut().zip(splits) {
        e.split = sp;
    }
    Ok(out)
}

/// One recorded session ready for windowing.
pub struct SessionInput<'a> {
    pub name: String,
    pub frames: &'a [BfiFrame],
    pub users: usize,
    pub duration_s: f64,
    pub spans: &'a [LabelSpan],
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub window_s: f64,
    pub selection: Selection,
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Use this S instead of computing it from the training windows.
    pub fixed_s: Option<usize>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            window_s: 0.1,
            selection: Selection::default(),
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
            fixed_s: None,
        }
    }
}

/// In-memory dataset: manifest plus tensors in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tensors: Vec<SampleTensor>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&SampleTensor> {
        self.manifest
            .samples
            .iter()
            .zip(&self.tensors)
            .filter(|(e, _)| e.split == split)
            .map(|(_, t)| t)
            .collect()
    }

    /// Samples whose window starts within the first `delta_s` seconds of
    /// their activity recording.
    pub fn first_seconds(&self, delta_s: f64) -> (Vec<&SampleTensor>, Vec<&SampleTensor>) {
        let mut head = Vec::new();
        let mut rest = Vec::new();
        for (e, t) in self.manifest.samples.iter().zip(&self.tensors) {
            if e.span_offset_s < delta_s {
                head.push(t);
            } else {
                rest.push(t);
            }
        }
        (head, rest)
    }
}

fn frame_dims(frames: &[BfiFrame]) -> Result<(usize, usize), PipelineError> {
    let first = frames.first().ok_or(PipelineError::EmptyStream)?;
    let k = usize::from(first.subchannels);
    let a = codec::angle_layout(usize::from(first.meta.m), usize::from(first.meta.n_ss)).len();
    if frames.iter().any(|f| {
        usize::from(f.subchannels) != k || f.meta.m != first.meta.m || f.meta.n_ss != first.meta.n_ss
    }) {
        return Err(PipelineError::Shape("frames disagree on K, M or N_ss".into()));
    }
    Ok((k, a))
}

/// Windows, splits, freezes `S` on the training windows, and assembles every
/// tensor. Tensor assembly runs in parallel when enabled.
pub fn build_dataset(sessions: &[SessionInput<'_>], opts: &DatasetOptions) -> Result<Dataset, PipelineError> {
    let mut windows = Vec::new();
    let mut names = Vec::new();
    let mut dims = None;
    let mut users = usize::MAX;
    for sess in sessions {
        let d = frame_dims(sess.frames)?;
        if dims.is_some_and(|prev| prev != d) {
            return Err(PipelineError::Shape("sessions disagree on frame shape".into()));
        }
        dims = Some(d);
        users = users.min(sess.users);
        for w in windowize(sess.frames, sess.users, sess.duration_s, opts.window_s, sess.spans)? {
            windows.push(w);
            names.push(sess.name.clone());
        }
    }
    let (k, a) = dims.ok_or(PipelineError::EmptyStream)?;
    let selection = opts.selection.resolve(k, a, users)?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let splits = if windows.is_empty() { Vec::new() } else { split_labels(&labels, opts.fractions, opts.seed)? };

    let s = match opts.fixed_s {
        Some(s) => s.max(1),
        None => {
            let counts: Vec<usize> = windows
                .iter()
                .zip(&splits)
                .filter(|(_, sp)| **sp == Split::Train)
                .flat_map(|(w, _)| selection.stations.iter().map(move |&u| w.frames[u].len()))
                .collect();
            s_from_counts(&counts)
        }
    };

    let tensors = crate::exec::map_indexed(windows.len(), |i| assemble_tensor(&windows[i], s, &selection))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let shape = TensorShape { s, k: selection.subchannels, a: selection.angles.len(), u: selection.stations.len() };
    let record_len = (4 + 8 * shape.len()) as u64;
    let samples = windows
        .iter()
        .zip(&splits)
        .zip(names)
        .enumerate()
        .map(|(i, ((w, &split), session))| SampleEntry {
            index: i,
            offset: STORE_HEADER_LEN as u64 + i as u64 * record_len,
            label: w.label,
            window_start_s: w.start_s(),
            span_offset_s: w.span_offset_s,
            session,
            split,
        })
        .collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        manifest: DatasetManifest {
            window_s: opts.window_s,
            shape,
            selection,
            classes,
            split_seed: opts.seed,
            fractions: opts.fractions,
            samples,
        },
        tensors,
    })
}

pub const STORE_MAGIC: [u8; 4] = *b"BST1";
const STORE_HEADER_LEN: usize = 4 + 8 + 4 * 4;

/// Tensor store: magic `BST1`, sample count `u64`, shape `S K A U` as `u32`,
/// then per sample `label u32 | data f64...`, all little-endian.
pub fn write_tensor_store<W: Write>(mut w: W, shape: TensorShape, tensors: &[SampleTensor]) -> Result<(), PipelineError> {
    w.write_all(&STORE_MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for d in [shape.s, shape.k, shape.a, shape.u] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 + 8 * shape.len());
    for t in tensors {
        if t.shape != shape {
            return Err(PipelineError::Store("tensor shape differs from store shape".into()));
        }
        buf.clear();
        buf.extend_from_slice(&(t.label as u32).to_le_bytes());
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensor_store<R: Read>(mut r: R) -> Result<(TensorShape, Vec<SampleTensor>), PipelineError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < STORE_HEADER_LEN || bytes[..4] != STORE_MAGIC {
        return Err(PipelineError::Store("missing BST1 header".into()));
    }
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let shape = TensorShape { s: u32_at(12), k: u32_at(16), a: u32_at(20), u: u32_at(24) };
    let rec = 4 + 8 * shape.len();
    if bytes.len() != STORE_HEADER_LEN + n * rec {
        return Err(PipelineError::Store(format!(
            "store is {} bytes, header implies {}",
            bytes.len(),
            STORE_HEADER_LEN + n * rec
        )));
    }
    let tensors = (0..n)
        .map(|i| {
            let base = STORE_HEADER_LEN + i * rec;
            let label = u32_at(base);
            let data = bytes[base + 4..base + rec]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            SampleTensor { shape, label, data }
        })
        .collect();
    Ok((shape, tensors))
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::codec::QuantizedAngleSet;
    use proptest::prelude::*;

    fn frame(user: u8, t: f64, k: usize, fill: u16) -> BfiFrame {
        let q = QuantizedAngleSet { m: 3, n_ss: 1, b_phi: 9, q_phi: vec![fill, 511 - fill], q_psi: vec![fill % 128, 3] };
        codec::pack_frame(&vec![q; k], user, t).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn windows_never_straddle_labels(
            cuts in proptest::collection::vec(1u32..200, 1..5),
            width_cs in 3u32..40,
        ) {
            let mut bounds: Vec<u32> = vec![0];
            for c in cuts {
                bounds.push(bounds.last().unwrap() + c);
            }
            let duration = f64::from(*bounds.last().unwrap()) / 100.0;
            let spans: Vec<LabelSpan> = bounds
                .windows(2)
                .enumerate()
                .map(|(i, b)| LabelSpan {
                    class_id: i % 3,
                    label: String::new(),
                    start_s: f64::from(b[0]) / 100.0,
                    end_s: f64::from(b[1]) / 100.0,
                })
                .collect();
            let frames: Vec<BfiFrame> = (0..(duration * 50.0) as usize).map(|i| frame(0, i as f64 / 50.0, 1, 5)).collect();
            prop_assume!(!frames.is_empty());
            let width = f64::from(width_cs) / 100.0;
            let windows = windowize(&frames, 1, duration, width, &spans).unwrap();
            let mut expected = 0;
            for b in bounds.windows(2) {
                let first = b[0].div_ceil(width_cs);
                let last = b[1] / width_cs;
                expected += last.saturating_sub(first);
            }
            prop_assert_eq!(windows.len() as u32, expected);
            for w in &windows {
                let inside: Vec<&LabelSpan> = spans
                    .iter()
                    .filter(|s| s.start_s <= w.start_s() + 1e-12 && w.start_s() + width <= s.end_s + 1e-12)
                    .collect();
                prop_assert_eq!(inside.len(), 1);
                prop_assert_eq!(inside[0].class_id, w.label);
                for f in &w.frames[0] {
                    prop_assert!(w.contains(f.meta.timestamp));
                }
            }
        }

        #[test]
        fn split_counts_follow_rounding(
            labels in proptest::collection::vec(0usize..4, 12..200),
            w in (1u32..10, 0u32..10, 0u32..10),
            seed in any::<u64>(),
        ) {
            let total = f64::from(w.0 + w.1 + w.2);
            let fractions = [f64::from(w.0) / total, f64::from(w.1) / total, 0.0];
            let fractions = [fractions[0], fractions[1], 1.0 - fractions[0] - fractions[1]];
            let Ok(splits) = split_labels(&labels, fractions, seed) else {
                return Ok(());
            };
            prop_assert_eq!(&splits, &split_labels(&labels, fractions, seed).unwrap());
            for c in 0..4 {
                let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                let n = idx.len();
                let count = |sp| idx.iter().filter(|&&i| splits[i] == sp).count();
                let train = ((fractions[0] * n as f64).round() as usize).min(n);
                let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
                prop_assert_eq!(count(Split::Train), train);
                prop_assert_eq!(count(Split::Val), val);
                prop_assert_eq!(count(Split::Test), n - train - val);
            }
        }

        #[test]
        fn selection_is_a_restriction(
            k_keep in 1usize..6,
            angles in proptest::sample::subsequence(vec![0usize, 1, 2, 3], 1..=4),
            stations in proptest::sample::subsequence(vec![0usize, 1, 2], 1..=3),
            s in 1usize..5,
        ) {
            let frames: Vec<BfiFrame> = (0..4)
                .flat_map(|i| (0..3u8).map(move |u| frame(u, i as f64 * 0.02, 6, (i * 37 + usize::from(u) * 11) as u16)))
                .collect();
            let w = windowize(&frames, 3, 0.1, 0.1, &[LabelSpan { class_id: 0, label: String::new(), start_s: 0.0, end_s: 0.1 }]).unwrap();
            let full = assemble_tensor(&w[0], s, &Selection::default().resolve(6, 4, 3).unwrap()).unwrap();
            let sel = Selection { subchannels: Some(k_keep), angles: Some(angles.clone()), stations: Some(stations.clone()) }
                .resolve(6, 4, 3)
                .unwrap();
            let sub = assemble_tensor(&w[0], s, &sel).unwrap();
            prop_assert_eq!(sub.data.len(), s * k_keep * angles.len() * stations.len());
            for si in 0..s {
                for k in 0..k_keep {
                    for (ai, &a) in angles.iter().enumerate() {
                        for (ui, &u) in stations.iter().enumerate() {
                            prop_assert_eq!(sub.get(si, k, ai, ui), full.get(si, k, a, u));
                        }
                    }
                }
            }
        }
    }
}
