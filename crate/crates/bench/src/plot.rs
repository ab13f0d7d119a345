//! Static SVG rendering of one episode.

use std::fmt::Write as _;
use std::path::Path;

use crate::episode::EpisodeRecord;

/// Number of time slices at which obstacles are drawn.
const SLICES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("record has no trace steps")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trace indices at which obstacles are drawn: evenly spaced, always
/// including the first and last step.
fn slices(len: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..SLICES).map(|k| k * (len - 1) / (SLICES - 1).max(1)).collect();
    idx.dedup();
    idx
}

pub fn render_svg(record: &EpisodeRecord) -> Result<String, PlotError> {
    let trace = &record.trace;
    if trace.is_empty() {
        return Err(PlotError::EmptyTrace);
    }
    let [w, h] = record.arena;
    let mut s = String::new();
    // `write!` into a String cannot fail
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.0} {h:.0}" width="600" height="600">"#);
    // y up, like the simulation
    let _ = writeln!(s, r#"<g transform="translate(0 {h:.0}) scale(1 -1)">"#);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#fafafa" stroke="#222" stroke-width="2"/>"##);

    let picks = slices(trace.len());
    for (k, &i) in picks.iter().enumerate() {
        let opacity = 0.25 + 0.6 * (k + 1) as f64 / picks.len() as f64;
        let _ = writeln!(s, r##"<g class="obstacles" data-t="{}" fill="#607d8b" fill-opacity="{opacity:.2}">"##, trace[i].t);
        for o in &trace[i].obstacles {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}"/>"#, o.center[0], o.center[1], o.radius);
        }
        let _ = writeln!(s, "</g>");
    }

    let points: Vec<String> = trace.iter().map(|p| format!("{:.2},{:.2}", p.q[0], p.q[1])).collect();
    let _ = writeln!(
        s,
        r##"<polyline class="trajectory" fill="none" stroke="#1565c0" stroke-width="2" points="{}"/>"##,
        points.join(" ")
    );
    let start = &trace[0];
    let end = &trace[trace.len() - 1];
    let _ = writeln!(s, r##"<circle class="start" cx="{:.2}" cy="{:.2}" r="8" fill="orange"/>"##, start.q[0], start.q[1]);
    let _ = writeln!(s, r##"<circle class="goal" cx="{:.2}" cy="{:.2}" r="8" fill="green"/>"##, end.goal[0], end.goal[1]);
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}

pub fn emit_trajectory_plot(record: &EpisodeRecord, path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(record)?;
    std::fs::write(path, svg)?;
    Ok(())
}
