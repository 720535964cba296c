//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gsi_core::{GazeSample, GraspType};
use rand::Rng;

/// Icon under a point of the default 2x3 panel, computed from the grid pitch.
pub fn oracle_icon(x: f64, y: f64) -> Option<GraspType> {
    let pitch = 3.0;
    let (col, row) = ((x / pitch).floor(), (y / pitch).floor());
    if !(0.0..3.0).contains(&col) || !(0.0..2.0).contains(&row) {
        return None;
    }
    if x - col * pitch >= 2.5 || y - row * pitch >= 2.5 {
        return None;
    }
    GraspType::from_index(row as usize * 3 + col as usize)
}

/// Splits a stream into maximal same-icon spans and reports, for every span
/// lasting at least `threshold`, the first sample at which it does.
pub fn oracle_selections(stream: &[GazeSample], threshold: u64, gap: u64) -> Vec<(u64, GraspType)> {
    let labels: Vec<Option<GraspType>> = stream
        .iter()
        .map(|s| if s.valid { oracle_icon(s.x, s.y) } else { None })
        .collect();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < stream.len() {
        if labels[i].is_none() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < stream.len()
            && labels[j + 1] == labels[i]
            && stream[j + 1].t - stream[j].t <= gap
        {
            j += 1;
        }
        spans.push((i, j));
        i = j + 1;
    }
    spans
        .into_iter()
        .filter_map(|(a, b)| {
            stream[a..=b]
                .iter()
                .find(|s| s.t - stream[a].t >= threshold)
                .map(|s| (s.t, labels[a].unwrap()))
        })
        .collect()
}

/// A gaze stream with random rate (20-120 Hz), jitter, dropouts, tracking
/// loss, off-icon points, exact cell boundaries and frequent icon changes.
pub fn random_stream<R: Rng>(rng: &mut R) -> Vec<GazeSample> {
    let hz = rng.random_range(20.0..=120.0);
    let period = 1000.0 / hz;
    let duration = rng.random_range(300.0..4000.0);
    let mut out = Vec::new();
    let mut t: f64 = rng.random_range(0.0..50.0);
    let mut last: Option<u64> = None;
    while t < duration {
        let seg_len = rng.random_range(20.0..600.0);
        let kind = rng.random_range(0..10);
        let icon = rng.random_range(0..6usize);
        let (cx, cy) = ((icon % 3) as f64 * 3.0, (icon / 3) as f64 * 3.0);
        let seg_end = t + seg_len;
        while t < seg_end {
            if rng.random_bool(0.03) {
                t += rng.random_range(50.0..250.0);
                continue;
            }
            let (x, y, valid) = match kind {
                0 => (
                    rng.random_range(-2.0..10.0),
                    rng.random_range(-2.0..7.0),
                    true,
                ),
                1 => (cx + 2.5, cy + rng.random_range(0.0..2.5), true),
                2 => (cx, cy, true),
                3 => (cx + 1.0, cy + 1.0, rng.random_bool(0.5)),
                _ => (
                    cx + rng.random_range(0.0..2.5),
                    cy + rng.random_range(0.0..2.5),
                    true,
                ),
            };
            let ts = t.round() as u64;
            if last.is_none_or(|l| ts > l) {
                out.push(GazeSample { t: ts, x, y, valid });
                last = Some(ts);
            }
            t += period * rng.random_range(0.8..1.2);
        }
    }
    out
}
