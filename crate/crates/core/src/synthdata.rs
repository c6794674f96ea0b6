//! Synthetic benchmark: random two-hand scores rendered to piano-roll
//! features, wrist trajectories and joint angles by a fixed oracle.
//!
//! The oracle is deterministic given the score, so everything a model must
//! learn is a function of the features. A fraction of events is paired
//! across hands at the same onset, which correlates the two hands' motion.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crate::dataio::{read_container, write_container, ContainerError, RunConfig};
use crate::networks::{FeatureSequence, GestureSequence, Hand, PositionSequence};
use crate::numkit::{par_map, RngStream, Tensor};

/// RNG stream id for score generation.
const DATA_STREAM: u64 = 0xDA7A;
/// Wrist follower stiffness in 1/frames.
pub const WRIST_OMEGA: f64 = 0.6;
/// Frames of the key-strike arc.
const STRIKE_FRAMES: f64 = 4.0;
const STRIKE_DEPTH: f64 = 0.08;
const STRIKE_REACH: f64 = 0.05;
const REST_HEIGHT: f64 = 0.1;
/// Per-frame decay of a joint's flexion back to rest.
const RELAX: f64 = 0.7;
const FLEX_AMPLITUDE: f64 = 0.8;
const ROLL_GAIN: f64 = 1.5;
const MAX_DURATION: u64 = 4;

pub const DATASET_FILE: &str = "dataset.s2c";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreEvent {
    pub onset: usize,
    pub pitch: usize,
    pub hand: Hand,
    pub duration: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyScore {
    pub frames: usize,
    pub pitches: usize,
    pub overlap: usize,
    pub events: Vec<ScoreEvent>,
}

/// Half-open pitch range played by a hand.
pub fn pitch_range(hand: Hand, pitches: usize, overlap: usize) -> (usize, usize) {
    let half = pitches / 2;
    match hand {
        Hand::Left => (0, (half + overlap.div_ceil(2)).min(pitches)),
        Hand::Right => (half.saturating_sub(overlap / 2), pitches),
    }
}

/// Linear map of a pitch in its hand's range onto `[-1, 1]`.
pub fn pitch_to_x(hand: Hand, pitch: usize, pitches: usize, overlap: usize) -> f64 {
    let (lo, hi) = pitch_range(hand, pitches, overlap);
    if hi - lo <= 1 {
        return 0.0;
    }
    -1.0 + 2.0 * (pitch - lo) as f64 / (hi - lo - 1) as f64
}

/// Poisson event count with mean `density·N`; each event is followed by a
/// same-onset event for the other hand with probability `coupling` (the
/// pair counts toward the total).
pub fn gen_score(
    rng: &mut RngStream,
    frames: usize,
    pitches: usize,
    density: f64,
    coupling: f64,
    overlap: usize,
) -> ToyScore {
    assert!(density > 0.0, "density must be positive");
    assert!(frames >= 1 && pitches >= 2);
    let count = rng.poisson(density * frames as f64) as usize;
    let mut events = Vec::with_capacity(count);
    let draw = |rng: &mut RngStream, hand: Hand, onset: usize| {
        let (lo, hi) = pitch_range(hand, pitches, overlap);
        ScoreEvent {
            onset,
            pitch: lo + rng.below((hi - lo) as u64) as usize,
            hand,
            duration: 1 + rng.below(MAX_DURATION) as usize,
        }
    };
    while events.len() < count {
        let hand = if rng.bernoulli(0.5) { Hand::Left } else { Hand::Right };
        let onset = rng.below(frames as u64) as usize;
        events.push(draw(rng, hand, onset));
        if events.len() < count && rng.bernoulli(coupling) {
            events.push(draw(rng, hand.other(), onset));
        }
    }
    events.sort_by_key(|e| (e.onset, e.hand, e.pitch, e.duration));
    ToyScore { frames, pitches, overlap, events }
}

/// `[N, P]` piano roll smoothed along frames by `[¼, ½, ¼]`.
pub fn score_to_features(score: &ToyScore) -> FeatureSequence {
    let (n, p) = (score.frames, score.pitches);
    let mut roll = vec![0.0; n * p];
    for e in &score.events {
        for f in e.onset..(e.onset + e.duration).min(n) {
            roll[f * p + e.pitch] = 1.0;
        }
    }
    let at = |f: isize, c: usize| if f < 0 || f >= n as isize { 0.0 } else { roll[f as usize * p + c] };
    let smoothed = Tensor::from_fn(&[n, p], |i| {
        let (f, c) = ((i / p) as isize, i % p);
        0.25 * at(f - 1, c) + 0.5 * at(f, c) + 0.25 * at(f + 1, c)
    });
    FeatureSequence::new(smoothed).expect("finite roll")
}

/// One exact step of the critically damped follower for error `e = x - target`.
fn damped_step(e: f64, v: f64, omega: f64) -> (f64, f64) {
    let decay = (-omega).exp();
    let k = v + omega * e;
    ((e + k) * decay, (v - omega * k) * decay)
}

/// Closed-form step response of the follower after `t` frames, starting at
/// rest from 0 toward `target`.
pub fn step_response(target: f64, t: f64) -> f64 {
    target * (1.0 - (1.0 + WRIST_OMEGA * t) * (-WRIST_OMEGA * t).exp())
}

fn raised_cosine(phase: f64) -> f64 {
    if (0.0..=1.0).contains(&phase) {
        0.5 * (1.0 - (2.0 * PI * phase).cos())
    } else {
        0.0
    }
}

/// Rest angles per joint and axis.
fn rest_angle(joint: usize, axis: usize) -> f64 {
    match axis {
        0 => 0.15 + 0.05 * joint as f64,
        1 => 0.02 * joint as f64 - 0.05,
        _ => 0.0,
    }
}

/// Per hand: wrist trajectory `[N, 3]` and joint angles `[N, J, 3]`.
pub fn score_to_motion(score: &ToyScore, joints: usize) -> ([PositionSequence; 2], [GestureSequence; 2]) {
    let n = score.frames;
    let pair = Hand::BOTH.map(|hand| {
        let events: Vec<&ScoreEvent> = score.events.iter().filter(|e| e.hand == hand).collect();
        let mut pos = Tensor::zeros(&[n, 3]);
        let (mut target, mut e, mut v) = (0.0, 0.0, 0.0);
        for f in 0..n {
            for ev in events.iter().filter(|ev| ev.onset == f) {
                let new_target = pitch_to_x(hand, ev.pitch, score.pitches, score.overlap);
                e -= new_target - target;
                target = new_target;
            }
            let strike = events
                .iter()
                .map(|ev| raised_cosine((f as f64 - ev.onset as f64) / STRIKE_FRAMES))
                .fold(0.0, f64::max);
            let row = &mut pos.data_mut()[f * 3..f * 3 + 3];
            row[0] = target + e;
            row[1] = STRIKE_REACH * strike;
            row[2] = REST_HEIGHT - STRIKE_DEPTH * strike;
            (e, v) = damped_step(e, v, WRIST_OMEGA);
        }

        // lateral wrist velocity rolls the fingers
        let sway: Vec<f64> = (0..n)
            .map(|f| if f == 0 { 0.0 } else { pos.at2(f, 0) - pos.at2(f - 1, 0) })
            .collect();
        let mut angles = Tensor::zeros(&[n, joints, 3]);
        let mut flex = vec![0.0; joints];
        for f in 0..n {
            let mut drive = vec![0.0f64; joints];
            for ev in &events {
                let phase = (f as f64 - ev.onset as f64) / (ev.duration as f64 + 1.0);
                let j = ev.pitch % joints;
                drive[j] = drive[j].max(FLEX_AMPLITUDE * raised_cosine(phase));
            }
            for j in 0..joints {
                flex[j] = drive[j].max(RELAX * flex[j]);
                let base = (f * joints + j) * 3;
                let a = angles.data_mut();
                a[base] = (rest_angle(j, 0) + flex[j]).clamp(-FRAC_PI_2, FRAC_PI_2);
                a[base + 1] = (rest_angle(j, 1) + 0.3 * flex[j]).clamp(-FRAC_PI_2, FRAC_PI_2);
                a[base + 2] = (rest_angle(j, 2) + ROLL_GAIN * (j + 1) as f64 / joints as f64 * sway[f])
                    .clamp(-FRAC_PI_2, FRAC_PI_2);
            }
        }
        (PositionSequence::new(pos).expect("finite"), GestureSequence::new(angles).expect("finite"))
    });
    let [(pl, gl), (pr, gr)] = pair;
    ([pl, pr], [gl, gr])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub features: FeatureSequence,
    pub positions: [PositionSequence; 2],
    pub gestures: [GestureSequence; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataParams {
    pub seed: u64,
    pub clips: usize,
    pub frames: usize,
    pub joints: usize,
    pub pitches: usize,
    pub density: f64,
    pub coupling: f64,
    pub overlap: usize,
}

impl DataParams {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.u64("seed"),
            clips: cfg.usize("clips"),
            frames: cfg.usize("frames"),
            joints: cfg.usize("joints"),
            pitches: cfg.usize("pitches"),
            density: cfg.f64("density"),
            coupling: cfg.f64("coupling"),
            overlap: cfg.usize("overlap"),
        }
    }

    pub fn clip(&self, index: usize) -> ClipSample {
        let mut rng = RngStream::new(self.seed, DATA_STREAM).split(index as u64);
        let score = gen_score(&mut rng, self.frames, self.pitches, self.density, self.coupling, self.overlap);
        let features = score_to_features(&score);
        let (positions, gestures) = score_to_motion(&score, self.joints);
        ClipSample { features, positions, gestures }
    }
}

/// Train/validation/test split sizes: 70/10/20 with the remainder in test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Splits {
    pub fn for_clips(clips: usize) -> Self {
        let train = clips * 7 / 10;
        let val = clips / 10;
        Self { train, val, test: clips - train - val }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub params: DataParams,
    pub clips: Vec<ClipSample>,
    pub splits: Splits,
}

pub fn make_dataset(params: &DataParams) -> Dataset {
    assert!(params.clips >= 1, "need at least one clip");
    let clips = par_map(params.clips, |i| params.clip(i));
    Dataset { params: params.clone(), clips, splits: Splits::for_clips(params.clips) }
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ClipSample] {
        let Splits { train, val, .. } = self.splits;
        match split {
            Split::Train => &self.clips[..train],
            Split::Val => &self.clips[train..train + val],
            Split::Test => &self.clips[train + val..],
        }
    }

    fn manifest(&self) -> String {
        let p = &self.params;
        format!(
            "seed={}\nclips={}\nframes={}\njoints={}\npitches={}\ndensity={}\ncoupling={}\noverlap={}\ntrain={}\nval={}\ntest={}\n",
            p.seed,
            p.clips,
            p.frames,
            p.joints,
            p.pitches,
            p.density,
            p.coupling,
            p.overlap,
            self.splits.train,
            self.splits.val,
            self.splits.test
        )
    }

    /// Write `dataset.s2c` and `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io { path: dir.display().to_string(), source };
        std::fs::create_dir_all(dir).map_err(io)?;
        let (c, n, j, p) = (self.clips.len(), self.params.frames, self.params.joints, self.params.pitches);
        let gather = |shape: &[usize], part: &dyn Fn(&ClipSample) -> &Tensor| {
            let mut data = Vec::with_capacity(shape.iter().product());
            for clip in &self.clips {
                data.extend_from_slice(part(clip).data());
            }
            Tensor::new(shape.to_vec(), data)
        };
        let features = gather(&[c, n, p], &|s| s.features.values());
        let pos = [0, 1].map(|h| gather(&[c, n, 3], &move |s| s.positions[h].values()));
        let ges = [0, 1].map(|h| gather(&[c, n, j, 3], &move |s| s.gestures[h].values()));
        let entries = [
            ("features", &features),
            ("positions.L", &pos[0]),
            ("positions.R", &pos[1]),
            ("gestures.L", &ges[0]),
            ("gestures.R", &ges[1]),
        ];
        write_container(&dir.join(DATASET_FILE), entries)?;
        let manifest = dir.join(MANIFEST_FILE);
        std::fs::write(&manifest, self.manifest())
            .map_err(|source| DatasetError::Io { path: manifest.display().to_string(), source })
    }

    pub fn read(dir: &Path) -> Result<Self, DatasetError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|source| DatasetError::Io { path: manifest_path.display().to_string(), source })?;
        let get = |key: &str| -> Result<&str, DatasetError> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| DatasetError::Malformed(format!("manifest lacks {key}")))
        };
        let num = |key: &str| -> Result<usize, DatasetError> {
            get(key)?.parse().map_err(|_| DatasetError::Malformed(format!("bad {key}")))
        };
        let real = |key: &str| -> Result<f64, DatasetError> {
            get(key)?.parse().map_err(|_| DatasetError::Malformed(format!("bad {key}")))
        };
        let params = DataParams {
            seed: num("seed")? as u64,
            clips: num("clips")?,
            frames: num("frames")?,
            joints: num("joints")?,
            pitches: num("pitches")?,
            density: real("density")?,
            coupling: real("coupling")?,
            overlap: num("overlap")?,
        };
        let splits = Splits { train: num("train")?, val: num("val")?, test: num("test")? };
        if splits.train + splits.val + splits.test != params.clips {
            return Err(DatasetError::Malformed("split sizes do not sum to the clip count".into()));
        }
        let entries = read_container(&dir.join(DATASET_FILE))?;
        let find = |name: &str, shape: &[usize]| -> Result<&Tensor, DatasetError> {
            let t = entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| DatasetError::Malformed(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(DatasetError::Malformed(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let (c, n, j, p) = (params.clips, params.frames, params.joints, params.pitches);
        let features = find("features", &[c, n, p])?;
        let pos = [find("positions.L", &[c, n, 3])?, find("positions.R", &[c, n, 3])?];
        let ges = [find("gestures.L", &[c, n, j, 3])?, find("gestures.R", &[c, n, j, 3])?];
        let slice = |t: &Tensor, i: usize, shape: &[usize]| {
            let size: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), t.data()[i * size..(i + 1) * size].to_vec())
        };
        let bad = |e: crate::networks::NetworkError| DatasetError::Malformed(e.to_string());
        let mut clips = Vec::with_capacity(c);
        for i in 0..c {
            clips.push(ClipSample {
                features: FeatureSequence::new(slice(features, i, &[n, p])).map_err(bad)?,
                positions: [
                    PositionSequence::new(slice(pos[0], i, &[n, 3])).map_err(bad)?,
                    PositionSequence::new(slice(pos[1], i, &[n, 3])).map_err(bad)?,
                ],
                gestures: [
                    GestureSequence::new(slice(ges[0], i, &[n, j, 3])).map_err(bad)?,
                    GestureSequence::new(slice(ges[1], i, &[n, j, 3])).map_err(bad)?,
                ],
            });
        }
        Ok(Self { params, clips, splits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> DataParams {
        DataParams { seed: 7, clips: 20, frames: 32, joints: 6, pitches: 16, density: 0.15, coupling: 0.3, overlap: 0 }
    }

    fn single(onset: usize, pitch: usize, hand: Hand, duration: usize, frames: usize) -> ToyScore {
        ToyScore { frames, pitches: 16, overlap: 0, events: vec![ScoreEvent { onset, pitch, hand, duration }] }
    }

    #[test]
    fn tiny_density_gives_near_empty_scores() {
        let mut rng = RngStream::new(1, 0);
        let total: usize = (0..100).map(|_| gen_score(&mut rng, 32, 16, 1e-6, 0.3, 0).events.len()).sum();
        assert!(total <= 1);
    }

    #[test]
    fn scores_are_seeded() {
        let a = gen_score(&mut RngStream::new(3, 1), 32, 16, 0.2, 0.3, 0);
        let b = gen_score(&mut RngStream::new(3, 1), 32, 16, 0.2, 0.3, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn mean_event_count_matches_density() {
        let mut rng = RngStream::new(5, 0);
        let total: usize = (0..1000).map(|_| gen_score(&mut rng, 32, 16, 0.15, 0.3, 0).events.len()).sum();
        let mean = total as f64 / 1000.0;
        let expect = 0.15 * 32.0;
        assert!((mean - expect).abs() < 0.05 * expect, "{mean}");
    }

    #[test]
    fn hands_use_their_pitch_halves() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..50 {
            for e in gen_score(&mut rng, 32, 16, 0.3, 0.5, 0).events {
                match e.hand {
                    Hand::Left => assert!(e.pitch < 8),
                    Hand::Right => assert!(e.pitch >= 8),
                }
                assert!(e.onset < 32 && e.duration >= 1);
            }
        }
        assert_eq!(pitch_range(Hand::Left, 16, 2), (0, 9));
        assert_eq!(pitch_range(Hand::Right, 16, 2), (7, 16));
    }

    #[test]
    fn empty_score_gives_zero_features_and_rest_motion() {
        let s = ToyScore { frames: 8, pitches: 4, overlap: 0, events: vec![] };
        assert_eq!(score_to_features(&s).values().max_abs(), 0.0);
        let (pos, ges) = score_to_motion(&s, 3);
        for h in 0..2 {
            for f in 1..8 {
                assert_eq!(pos[h].values().row(f), pos[h].values().row(0));
                assert_eq!(ges[h].flat().row(f), ges[h].flat().row(0));
            }
        }
    }

    #[test]
    fn one_frame_event_is_a_unit_triangle() {
        let s = single(5, 3, Hand::Left, 1, 12);
        let f = score_to_features(&s);
        let col: Vec<f64> = (0..12).map(|r| f.values().at2(r, 3)).collect();
        assert_eq!(&col[4..7], &[0.25, 0.5, 0.25]);
        assert_eq!(col.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn wrist_follows_step_response() {
        let pitch = 7;
        let s = single(4, pitch, Hand::Left, 2, 40);
        let (pos, _) = score_to_motion(&s, 6);
        let target = pitch_to_x(Hand::Left, pitch, 16, 0);
        assert_eq!(target, 1.0);
        for f in 4..40 {
            let expect = step_response(target, (f - 4) as f64);
            assert!((pos[0].values().at2(f, 0) - expect).abs() < 1e-6, "frame {f}");
        }
        assert!((pos[0].values().at2(39, 0) - target).abs() < 1e-3);
    }

    #[test]
    fn simultaneous_events_correlate_wrist_speed() {
        let s = ToyScore {
            frames: 32,
            pitches: 16,
            overlap: 0,
            events: vec![
                ScoreEvent { onset: 10, pitch: 2, hand: Hand::Left, duration: 2 },
                ScoreEvent { onset: 10, pitch: 13, hand: Hand::Right, duration: 2 },
            ],
        };
        let (pos, _) = score_to_motion(&s, 6);
        let speed = |h: usize| -> Vec<f64> {
            let p = pos[h].values();
            (1..32)
                .map(|f| (0..3).map(|c| (p.at2(f, c) - p.at2(f - 1, c)).powi(2)).sum::<f64>().sqrt())
                .collect()
        };
        let (a, b) = (speed(0), speed(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r > 0.5, "{r}");
    }

    #[test]
    fn split_sizes() {
        assert_eq!(Splits::for_clips(100), Splits { train: 70, val: 10, test: 20 });
        assert_eq!(Splits::for_clips(512), Splits { train: 358, val: 51, test: 103 });
    }

    #[test]
    fn dataset_files_are_reproducible_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let ds = make_dataset(&params());
        ds.write(&a).unwrap();
        make_dataset(&params()).write(&b).unwrap();
        for f in [DATASET_FILE, MANIFEST_FILE] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        let back = Dataset::read(&a).unwrap();
        assert_eq!(back.params, ds.params);
        assert_eq!(back.splits, ds.splits);
        for (x, y) in back.clips.iter().zip(&ds.clips) {
            assert!(x.features.values().max_abs_diff(y.features.values()) < 1e-7);
            for h in 0..2 {
                assert!(x.positions[h].values().max_abs_diff(y.positions[h].values()) < 1e-7);
                assert!(x.gestures[h].values().max_abs_diff(y.gestures[h].values()) < 1e-7);
            }
        }
        assert_eq!(back.split(Split::Test).len(), 4);
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(DatasetError::Io { .. })));
    }

    /// Ridge regression on a causal window of features beats the constant
    /// mean predictor on held-out clips.
    #[test]
    fn positions_are_learnable_from_features() {
        let p = DataParams { clips: 200, ..params() };
        let ds = make_dataset(&p);
        let window = 10;
        let design = |clip: &ClipSample, f: usize| -> Vec<f64> {
            let mut row = vec![1.0];
            for k in 0..window {
                let src = f as isize - k as isize;
                for c in 0..p.pitches {
                    row.push(if src < 0 { 0.0 } else { clip.features.values().at2(src as usize, c) });
                }
            }
            row
        };
        let d = 1 + window * p.pitches;
        let (train, test) = ds.clips.split_at(150);
        let mut xtx = nalgebra::DMatrix::<f64>::zeros(d, d);
        let mut xty = nalgebra::DMatrix::<f64>::zeros(d, 6);
        let mut mean = [0.0; 6];
        let mut count = 0.0;
        for clip in train {
            for f in 0..p.frames {
                let x = nalgebra::DVector::from_vec(design(clip, f));
                xtx += &x * x.transpose();
                for h in 0..2 {
                    for c in 0..3 {
                        let y = clip.positions[h].values().at2(f, c);
                        for i in 0..d {
                            xty[(i, h * 3 + c)] += x[i] * y;
                        }
                        mean[h * 3 + c] += y;
                    }
                }
                count += 1.0;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for i in 0..d {
            xtx[(i, i)] += 1e-3;
        }
        let w = xtx.cholesky().unwrap().solve(&xty);
        let (mut pd_ridge, mut pd_mean, mut n) = (0.0, 0.0, 0.0);
        for clip in test {
            for f in 0..p.frames {
                let x = nalgebra::DVector::from_vec(design(clip, f));
                let pred = w.transpose() * &x;
                for h in 0..2 {
                    let (mut er, mut em) = (0.0, 0.0);
                    for c in 0..3 {
                        let y = clip.positions[h].values().at2(f, c);
                        er += (pred[h * 3 + c] - y).powi(2);
                        em += (mean[h * 3 + c] - y).powi(2);
                    }
                    pd_ridge += er.sqrt();
                    pd_mean += em.sqrt();
                    n += 1.0;
                }
            }
        }
        assert!(pd_ridge / n < pd_mean / n, "ridge {} vs mean {}", pd_ridge / n, pd_mean / n);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn features_and_angles_stay_bounded(seed in 0u64..10_000, density in 0.01f64..1.0, coupling in 0.0f64..1.0) {
            let mut rng = RngStream::new(seed, 0);
            let s = gen_score(&mut rng, 24, 8, density, coupling, 1);
            let f = score_to_features(&s);
            prop_assert!(f.values().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let (_, g) = score_to_motion(&s, 4);
            for h in &g {
                prop_assert!(h.values().data().iter().all(|&v| v.abs() <= FRAC_PI_2));
            }
        }

        #[test]
        fn shifting_events_shifts_outputs(seed in 0u64..10_000, shift in 1usize..6) {
            let mut rng = RngStream::new(seed, 0);
            let mut s = gen_score(&mut rng, 40, 8, 0.1, 0.3, 0);
            s.events.retain(|e| e.onset < 20);
            let mut moved = s.clone();
            for e in &mut moved.events {
                e.onset += shift;
            }
            let (fa, fb) = (score_to_features(&s), score_to_features(&moved));
            let (pa, ga) = score_to_motion(&s, 3);
            let (pb, gb) = score_to_motion(&moved, 3);
            let (gfa, gfb) = (ga.clone().map(|g| g.flat()), gb.clone().map(|g| g.flat()));
            for f in 1..(40 - shift - 1) {
                prop_assert_eq!(fa.values().row(f), fb.values().row(f + shift));
                for h in 0..2 {
                    prop_assert_eq!(pa[h].values().row(f), pb[h].values().row(f + shift));
                    prop_assert_eq!(gfa[h].row(f), gfb[h].row(f + shift));
                }
            }
        }
    }
}
