use std::fmt::Write;

use super::{Marker, MatrixRow};

const CELL: f64 = 12.0;
const ROW: f64 = 18.0;
const LABEL_W: f64 = 150.0;
const TOP: f64 = 40.0;
const R: f64 = 4.5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static dot matrix: one row per configuration, one column per pattern.
/// Solid dots are effective patterns, half-filled dots patterns effective
/// only through write-variant cases, hollow dots ineffective ones.
pub fn render_dot_matrix(rows: &[MatrixRow], title: &str) -> String {
    let cols = rows.first().map_or(0, |r| r.cells.len());
    let width = LABEL_W + cols as f64 * CELL + 20.0;
    let height = TOP + rows.len() as f64 * ROW + 20.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title)).unwrap();
    if let Some(first) = rows.first() {
        for (i, (id, _)) in first.cells.iter().enumerate() {
            if *id == 1 || id % 5 == 0 {
                let x = LABEL_W + i as f64 * CELL + CELL / 2.0;
                writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{id}</text>"#, TOP - 8.0).unwrap();
            }
        }
    }
    for (r, row) in rows.iter().enumerate() {
        let cy = TOP + r as f64 * ROW + ROW / 2.0;
        writeln!(s, r#"<text x="4" y="{}">{}</text>"#, cy + 3.5, escape(&row.config)).unwrap();
        for (i, (_, m)) in row.cells.iter().enumerate() {
            let cx = LABEL_W + i as f64 * CELL + CELL / 2.0;
            match m {
                Marker::Solid => {
                    writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="{R}" fill="black"/>"#).unwrap();
                }
                Marker::Empty => {
                    writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="{R}" fill="none" stroke="black"/>"#).unwrap();
                }
                Marker::Half => {
                    writeln!(
                        s,
                        r#"<path d="M {cx} {} A {R} {R} 0 0 0 {cx} {} Z" fill="black"/>"#,
                        cy - R,
                        cy + R
                    )
                    .unwrap();
                    writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="{R}" fill="none" stroke="black"/>"#).unwrap();
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
