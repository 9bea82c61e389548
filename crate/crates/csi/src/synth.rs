//! Synthetic CSI with class-dependent structure.
//!
//! Each window is a static multipath profile across sub-carriers, attenuated
//! in one band per occupant and modulated over time by the activity inside
//! the first occupant's band: slow faint drift while sitting, a slow sway
//! while standing, a fast slanted ripple while walking, and a rising or
//! falling step for standing up or sitting down.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex32;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CsiError, Result};
use crate::frame::{CsiFrame, SUBCARRIERS};
use crate::image::RadioImage;
use crate::labels::{Activity, Occupancy};
use crate::mask::SubcarrierMask;
use crate::matrix::{CsiMatrix, Matrix, WINDOW};
use crate::pcap::write_capture;
use crate::preprocess::Preprocessor;

const BAND_A: usize = 40;
const BAND_B: usize = 160;
const BAND_WIDTH: usize = 50;
const EDGE: f64 = 4.0;

/// A label combination the generator can render.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scenario {
    rod: Occupancy,
    har: Option<Activity>,
}

impl Scenario {
    /// A single occupant needs an activity; empty and shared rooms take none.
    pub fn new(rod: Occupancy, har: Option<Activity>) -> Result<Self> {
        match (rod, har) {
            (Occupancy::OnePerson, Some(_)) | (Occupancy::Nobody | Occupancy::TwoPersons, None) => {
                Ok(Scenario { rod, har })
            }
            (Occupancy::OnePerson, None) => Err(CsiError::Param("one occupant needs an activity label".into())),
            (_, Some(a)) => Err(CsiError::Param(format!("activity {a} is undefined for occupancy {rod}"))),
        }
    }

    pub fn rod(&self) -> Occupancy {
        self.rod
    }

    pub fn har(&self) -> Option<Activity> {
        self.har
    }

    /// Every valid scenario: empty room, the five activities, two occupants.
    pub fn mix() -> Vec<Scenario> {
        let mut out = vec![Scenario {
            rod: Occupancy::Nobody,
            har: None,
        }];
        out.extend(Activity::ALL.iter().map(|a| Scenario {
            rod: Occupancy::OnePerson,
            har: Some(*a),
        }));
        out.push(Scenario {
            rod: Occupancy::TwoPersons,
            har: None,
        });
        out
    }

    pub fn name(&self) -> String {
        match self.har {
            Some(a) => format!("{}/{}", self.rod, a),
            None => self.rod.to_string(),
        }
    }
}

/// Independent seed for item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Smooth 0..1 membership of `r` in `[lo, lo + width)` with cosine edges.
fn band(r: usize, lo: usize, width: usize) -> f64 {
    let r = r as f64;
    let (a, b) = (lo as f64, (lo + width) as f64);
    let ramp = |d: f64| 0.5 - 0.5 * (std::f64::consts::PI * (d / EDGE).clamp(0.0, 1.0)).cos();
    ramp(r - a + EDGE / 2.0).min(ramp(b - r + EDGE / 2.0))
}

/// Slow random drift with unit scale: three incommensurate sinusoids.
fn sway(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let parts: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.5..4.0), rng.gen_range(0.0..TAU)))
        .collect();
    move |t| parts.iter().map(|(f, p)| (TAU * f * t / WINDOW as f64 + p).sin()).sum::<f64>() / 1.5f64.sqrt()
}

fn step(t: f64, at: f64) -> f64 {
    // 10-packet logistic transition
    1.0 / (1.0 + (-(t - at) / 2.5).exp())
}

/// Raw `256 × 300` amplitude matrix for one window of `scenario`.
pub fn synth_matrix(scenario: Scenario, seed: u64) -> CsiMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nulls = SubcarrierMask::vht80();
    let nulls = nulls.nulls();

    let ph: [f64; 3] = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
    let wt: [f64; 3] = [rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2)];
    let base: Vec<f64> = (0..SUBCARRIERS)
        .map(|r| {
            if nulls.contains(&r) {
                return 15.0;
            }
            let x = r as f64;
            1000.0
                + 180.0 * wt[0] * (TAU * x / 37.0 + ph[0]).sin()
                + 120.0 * wt[1] * (TAU * x / 71.0 + ph[1]).sin()
                + 80.0 * wt[2] * (TAU * x / 113.0 + ph[2]).sin()
        })
        .collect();

    let a0 = (BAND_A as i64 + rng.gen_range(-4..=4)) as usize;
    let b0 = (BAND_B as i64 + rng.gen_range(-4..=4)) as usize;
    let depth_a = rng.gen_range(0.45..0.55);
    let depth_b = rng.gen_range(0.45..0.55);
    let drift_a = sway(&mut rng);
    let drift_b = sway(&mut rng);
    let ripple_f = rng.gen_range(6.0..10.0);
    let ripple_p = rng.gen_range(0.0..TAU);
    let sway_f = rng.gen_range(2.5..4.0);
    let settle = (rng.gen_range(0.4..0.9), rng.gen_range(0.0..TAU));
    let t0 = rng.gen_range(100.0..200.0);

    let rod = scenario.rod();
    let gain = |r: usize, t: f64| -> f64 {
        let in_a = band(r, a0, BAND_WIDTH);
        let in_b = band(r, b0, BAND_WIDTH);
        let mut g = 1.0;
        if rod != Occupancy::Nobody {
            g *= 1.0 - (1.0 - depth_a) * in_a;
        }
        if rod == Occupancy::TwoPersons {
            g *= 1.0 - (1.0 - depth_b) * in_b;
            g *= 1.0 + 0.04 * (in_a * drift_a(t) + in_b * drift_b(t));
        }
        match scenario.har() {
            Some(Activity::Sit) => g *= 1.0 + 0.03 * in_a * (TAU * settle.0 * t / WINDOW as f64 + settle.1).sin(),
            Some(Activity::Stand) => {
                g *= 1.0 + 0.18 * in_a * (TAU * sway_f * t / WINDOW as f64 + ripple_p).sin()
            }
            Some(Activity::Walk) => {
                g *= 1.0 + 0.25 * in_a * (TAU * ripple_f * t / WINDOW as f64 + 0.35 * r as f64 + ripple_p).sin()
            }
            Some(Activity::StandUp) => g *= 1.0 - 0.5 * in_a * (1.0 - step(t, t0)),
            Some(Activity::SitDown) => g *= 1.0 - 0.5 * in_a * step(t, t0),
            None => {}
        }
        g
    };

    let mut data = Vec::with_capacity(SUBCARRIERS * WINDOW);
    for (r, b) in base.iter().enumerate() {
        for t in 0..WINDOW {
            let noise = 1.0 + 0.03 * rng.gen_range(-1.0..1.0);
            data.push((b * gain(r, t as f64) * noise).max(0.0) as f32);
        }
    }
    CsiMatrix::new(Matrix::new(SUBCARRIERS, WINDOW, data).expect("shape is fixed"))
        .expect("synthetic amplitudes are non-negative")
}

/// Complex frames whose amplitudes follow [`synth_matrix`], with random
/// per-tone phases, starting at `start_us` with 1 ms spacing.
pub fn synth_frames(scenario: Scenario, seed: u64, start_us: u64, first_seq: u16) -> Vec<CsiFrame> {
    let m = synth_matrix(scenario, seed);
    let m = m.matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed));
    let phase0: Vec<f64> = (0..SUBCARRIERS).map(|_| rng.gen_range(0.0..TAU)).collect();
    (0..m.cols())
        .map(|t| CsiFrame {
            timestamp_us: start_us + t as u64 * 1000,
            source: [0x02, 0x11, 0x22, 0x33, 0x44, 0x55],
            sequence: first_seq.wrapping_add(t as u16),
            rssi: -50,
            frame_control: 0x08,
            core_stream: 0,
            chanspec: 0xe02a,
            chip: 0x4345,
            csi: (0..SUBCARRIERS)
                .map(|r| {
                    let th = phase0[r] + 0.01 * t as f64;
                    let a = m.get(r, t) as f64;
                    Complex32::new((a * th.cos()) as f32, (a * th.sin()) as f32)
                })
                .collect(),
        })
        .collect()
}

/// `count` preprocessed images of one scenario.
pub fn synth_generate(scenario: Scenario, seed: u64, count: usize, pre: &Preprocessor) -> Result<Vec<RadioImage>> {
    (0..count)
        .map(|i| {
            let m = synth_matrix(scenario, derive_seed(seed, i as u64));
            pre.process(&m, Some(scenario.rod()), scenario.har())
        })
        .collect()
}

/// Scenario assigned to position `i` of a mixed sequence.
pub fn mix_scenario(i: usize) -> Scenario {
    let mix = Scenario::mix();
    mix[i % mix.len()]
}

/// Writes a capture of consecutive windows, one per `(scenario, seed)`.
pub fn write_synth_capture(path: &Path, windows: &[(Scenario, u64)]) -> Result<()> {
    let mut frames = Vec::with_capacity(windows.len() * WINDOW);
    for (k, (s, seed)) in windows.iter().enumerate() {
        let start = 1_700_000_000_000_000 + (k * WINDOW) as u64 * 1000;
        frames.extend(synth_frames(*s, *seed, start, (k * WINDOW) as u16));
    }
    write_capture(path, &frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_combinations_are_validated() {
        assert!(Scenario::new(Occupancy::Nobody, Some(Activity::Walk)).is_err());
        assert!(Scenario::new(Occupancy::TwoPersons, Some(Activity::Sit)).is_err());
        assert!(Scenario::new(Occupancy::OnePerson, None).is_err());
        assert!(Scenario::new(Occupancy::OnePerson, Some(Activity::Sit)).is_ok());
        assert_eq!(Scenario::mix().len(), 7);
    }

    #[test]
    fn same_seed_same_matrix() {
        let s = Scenario::new(Occupancy::OnePerson, Some(Activity::Walk)).unwrap();
        assert_eq!(synth_matrix(s, 9), synth_matrix(s, 9));
        assert_ne!(synth_matrix(s, 9), synth_matrix(s, 10));
    }

    #[test]
    fn null_tones_are_quiet() {
        let m = synth_matrix(Scenario::mix()[0], 3);
        let m = m.matrix();
        assert!(m.row(128).iter().all(|v| *v < 20.0));
        assert!(m.row(60).iter().all(|v| *v > 300.0));
    }

    #[test]
    fn occupants_attenuate_their_band() {
        let mean = |m: &Matrix, lo: usize| -> f64 {
            (lo + 10..lo + 40).flat_map(|r| m.row(r).iter().map(|v| *v as f64)).sum::<f64>() / (30.0 * 300.0)
        };
        for seed in 0..5 {
            let empty = synth_matrix(Scenario::mix()[0], seed);
            let two = synth_matrix(Scenario::mix()[6], seed);
            assert!(mean(two.matrix(), BAND_A) < 0.7 * mean(empty.matrix(), BAND_A));
            assert!(mean(two.matrix(), BAND_B) < 0.7 * mean(empty.matrix(), BAND_B));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
