//! Court overlays of sampled futures.

use std::fmt::Write;

use crate::cvae::NodeSamples;
use crate::data::TrainingExample;
use crate::dynamics::{CourtSpec, CourtState};
use crate::model::LatentSpec;

const PX_PER_M: f64 = 20.0;
const MARGIN: f64 = 20.0;
const TITLE: f64 = 18.0;

/// One court drawing: a scene, the agent future it was conditioned on, and
/// the sampled futures.
pub struct Panel<'a> {
    pub title: String,
    pub example: &'a TrainingExample,
    pub samples: &'a [NodeSamples],
}

/// Stroke color for joint latent index `j`, spaced by the golden angle.
pub fn z_color(j: usize) -> String {
    let hue = (j as f64 * 137.507_764) % 360.0;
    format!("hsl({hue:.1},70%,42%)")
}

fn points(court: &CourtSpec, pts: impl IntoIterator<Item = CourtState>) -> String {
    let mut s = String::new();
    for (i, p) in pts.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let x = MARGIN + p.l * PX_PER_M;
        let y = TITLE + MARGIN + (court.width_m - p.w) * PX_PER_M;
        write!(s, "{x:.2},{y:.2}").expect("string write");
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Panels side by side. Every sampled future becomes one
/// `<polyline class="sample">` tagged with its node id and joint `z`.
pub fn render_svg(court: &CourtSpec, latent: LatentSpec, panels: &[Panel]) -> String {
    let pw = court.length_m * PX_PER_M + 2.0 * MARGIN;
    let ph = court.width_m * PX_PER_M + 2.0 * MARGIN + TITLE;
    let width = pw * panels.len().max(1) as f64;
    let mut s = String::new();
    let w = &mut s;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{ph:.0}" viewBox="0 0 {width:.0} {ph:.0}">"#
    )
    .expect("string write");
    writeln!(
        w,
        "<style>.court{{fill:#f4efe6;stroke:#555;stroke-width:1.5}}.history{{fill:none;stroke:#777;stroke-width:2}}\
.truth{{fill:none;stroke:#000;stroke-width:1.5;stroke-dasharray:4 3}}.agent{{fill:none;stroke:#c00;stroke-width:2.5}}\
.sample{{fill:none;stroke-width:0.8;stroke-opacity:0.45}}text{{font:12px sans-serif}}</style>"
    )
    .expect("string write");
    for (k, panel) in panels.iter().enumerate() {
        let ex = panel.example;
        writeln!(w, r#"<g transform="translate({:.2},0)">"#, k as f64 * pw).expect("string write");
        writeln!(
            w,
            r#"<text x="{MARGIN:.0}" y="14">{}</text>"#,
            escape(&panel.title)
        )
        .expect("string write");
        writeln!(
            w,
            r#"<rect class="court" x="{MARGIN:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
            TITLE + MARGIN,
            court.length_m * PX_PER_M,
            court.width_m * PX_PER_M
        )
        .expect("string write");
        let half = CourtState::new(court.length_m / 2.0, 0.0);
        let top = CourtState::new(court.length_m / 2.0, court.width_m);
        writeln!(
            w,
            r#"<polyline class="history" points="{}"/>"#,
            points(court, [half, top])
        )
        .expect("string write");

        for ns in panel.samples {
            let start = match ex.node(ns.id) {
                Ok(n) => n.current().state,
                Err(_) => continue,
            };
            for s in &ns.samples {
                let j = latent.encode(&s.z).unwrap_or(0);
                writeln!(
                    w,
                    r#"<polyline class="sample" data-node="{}" data-z="{j}" stroke="{}" points="{}"/>"#,
                    ns.id,
                    z_color(j),
                    points(court, std::iter::once(start).chain(s.states.iter().copied()))
                )
                .expect("string write");
            }
        }
        for n in &ex.nodes {
            let cur = n.current().state;
            let hist = points(court, n.history.iter().map(|f| f.state));
            writeln!(w, r#"<polyline class="history" points="{hist}"/>"#).expect("string write");
            let fut = points(
                court,
                std::iter::once(cur).chain(n.future.iter().map(|f| f.state)),
            );
            let class = if n.node_type.is_agent() {
                "agent"
            } else {
                "truth"
            };
            writeln!(w, r#"<polyline class="{class}" points="{fut}"/>"#).expect("string write");
            let c = points(court, [cur]);
            let (x, y) = c.split_once(',').expect("one point");
            let fill = if n.node_type.is_agent() {
                "#c00"
            } else {
                "#222"
            };
            writeln!(w, r#"<circle cx="{x}" cy="{y}" r="4" fill="{fill}"/>"#)
                .expect("string write");
            writeln!(w, r#"<text x="{x}" y="{y}" dx="6" dy="-6">{}</text>"#, n.id)
                .expect("string write");
        }
        writeln!(w, "</g>").expect("string write");
    }
    writeln!(w, "</svg>").expect("string write");
    s
}
