//! Character relationship graph from per-frame LAEO scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::FramePairScore;
use crate::types::HeadTrack;

pub const DEFAULT_LAEO_THRESHOLD: f64 = 0.5;

/// Label markers for tracks that are excluded from the analysis.
pub const IGNORED: &str = "IGNORED";
pub const WRONG: &str = "WRONG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterTrackLabel {
    pub track_id: usize,
    pub character_name: String,
}

impl CharacterTrackLabel {
    pub fn is_dropped(&self) -> bool {
        self.character_name == IGNORED || self.character_name == WRONG
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialEdge {
    pub char_a: String,
    pub char_b: String,
    pub cooccur_frames: usize,
    pub laeo_frames: usize,
    pub mean_laeo_score: f64,
    pub ratio: f64,
}

/// Ordered character pair; `a < b`.
pub type CharPair = (String, String);

fn ordered(a: &str, b: &str) -> CharPair {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Track id to character, with dropped tracks removed.
pub fn character_map(labels: &[CharacterTrackLabel]) -> Result<BTreeMap<usize, String>> {
    let mut m = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for l in labels {
        if !seen.insert(l.track_id) {
            return Err(Error::InvalidValue(format!("track {} labeled twice", l.track_id)));
        }
        if !l.is_dropped() {
            m.insert(l.track_id, l.character_name.clone());
        }
    }
    Ok(m)
}

/// Frames on which each character has at least one active track.
fn presence(tracks: &[HeadTrack], chars: &BTreeMap<usize, String>) -> BTreeMap<String, BTreeSet<usize>> {
    let mut p: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for t in tracks {
        if let Some(c) = chars.get(&t.track_id) {
            p.entry(c.clone()).or_default().extend(t.start_frame..t.start_frame + t.len());
        }
    }
    p
}

/// Frames shared by each pair of distinct characters. Pairs that never
/// share a frame are absent.
pub fn cooccurrence(tracks: &[HeadTrack], labels: &[CharacterTrackLabel]) -> Result<BTreeMap<CharPair, BTreeSet<usize>>> {
    let chars = character_map(labels)?;
    let p = presence(tracks, &chars);
    let names: Vec<&String> = p.keys().collect();
    let mut out = BTreeMap::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let shared: BTreeSet<usize> = p[*a].intersection(&p[*b]).copied().collect();
            if !shared.is_empty() {
                out.insert(ordered(a, b), shared);
            }
        }
    }
    Ok(out)
}

/// Edge from the scores on each co-occurring frame. `None` when the
/// characters never co-occur.
pub fn friendsness(char_a: &str, char_b: &str, frame_scores: &[f64], laeo_threshold: f64) -> Option<SocialEdge> {
    if frame_scores.is_empty() {
        return None;
    }
    let n = frame_scores.len();
    let laeo = frame_scores.iter().filter(|&&s| s >= laeo_threshold).count();
    let (a, b) = ordered(char_a, char_b);
    Some(SocialEdge {
        char_a: a,
        char_b: b,
        cooccur_frames: n,
        laeo_frames: laeo,
        mean_laeo_score: frame_scores.iter().sum::<f64>() / n as f64,
        ratio: laeo as f64 / n as f64,
    })
}

/// All edges: per frame, a character pair scores the maximum over its
/// track pairs, and 0 when none was scored.
pub fn social_edges(
    tracks: &[HeadTrack],
    labels: &[CharacterTrackLabel],
    scores: &[FramePairScore],
    laeo_threshold: f64,
) -> Result<Vec<SocialEdge>> {
    let chars = character_map(labels)?;
    let co = cooccurrence(tracks, labels)?;
    let mut best: BTreeMap<(CharPair, usize), f64> = BTreeMap::new();
    for s in scores {
        let (Some(a), Some(b)) = (chars.get(&s.left_track), chars.get(&s.right_track)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let e = best.entry((ordered(a, b), s.frame)).or_insert(0.0);
        *e = e.max(s.score);
    }
    Ok(co
        .into_iter()
        .filter_map(|(pair, frames)| {
            let v: Vec<f64> = frames
                .iter()
                .map(|&f| best.get(&(pair.clone(), f)).copied().unwrap_or(0.0))
                .collect();
            friendsness(&pair.0, &pair.1, &v, laeo_threshold)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: String,
    pub b: String,
    pub weight: f64,
    pub ratio: f64,
    pub frames: usize,
    pub laeo_frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    pub nodes: Vec<String>,
    /// Sorted by weight descending, then by names.
    pub edges: Vec<GraphEdge>,
}

pub fn build_graph(edges: &[SocialEdge]) -> SocialGraph {
    let mut nodes = BTreeSet::new();
    let mut out: Vec<GraphEdge> = edges
        .iter()
        .map(|e| {
            nodes.insert(e.char_a.clone());
            nodes.insert(e.char_b.clone());
            let (a, b) = ordered(&e.char_a, &e.char_b);
            GraphEdge {
                a,
                b,
                weight: e.mean_laeo_score,
                ratio: e.ratio,
                frames: e.cooccur_frames,
                laeo_frames: e.laeo_frames,
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.weight
            .total_cmp(&x.weight)
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
    SocialGraph {
        nodes: nodes.into_iter().collect(),
        edges: out,
    }
}

impl SocialGraph {
    /// Nodes on a circle; stroke width grows with edge weight.
    pub fn to_svg(&self) -> String {
        let (size, radius) = (480.0, 180.0);
        let c = size / 2.0;
        let n = self.nodes.len().max(1) as f64;
        let pos: BTreeMap<&str, (f64, f64)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let t = std::f64::consts::TAU * i as f64 / n - std::f64::consts::FRAC_PI_2;
                (name.as_str(), (c + radius * t.cos(), c + radius * t.sin()))
            })
            .collect();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for e in self.edges.iter().rev() {
            let (x1, y1) = pos[e.a.as_str()];
            let (x2, y2) = pos[e.b.as_str()];
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="steelblue" stroke-opacity="0.8" stroke-width="{:.2}"/>"#,
                0.5 + 12.0 * e.weight.clamp(0.0, 1.0)
            );
        }
        for (name, (x, y)) in &pos {
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="6" fill="black"/>"#);
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
                y - 10.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
