//! Minimal SVG writer for the static chart renders.
//!
//! Charts are views over the emitted tables: every plotted value comes from a
//! table row. Elements carry CSS classes (`mark`, `diagonal`, `errbar-sd`,
//! `errbar-sem`, `bar`, `bin`) so structure is testable without an XML parser.

use std::fmt::Write;

pub(crate) const WIDTH: f64 = 480.0;
pub(crate) const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 44.0;

pub(crate) const SYNTHETIC_COLOR: &str = "#4c78a8";
pub(crate) const HUMAN_COLOR: &str = "#f58518";

/// Maps data coordinates onto the plot area.
pub(crate) struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    pub fn x(&self, value: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::EPSILON);
        MARGIN_LEFT + (value - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn y(&self, value: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::EPSILON);
        HEIGHT - MARGIN_BOTTOM - (value - self.y_min) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    pub fn plot_left(&self) -> f64 {
        MARGIN_LEFT
    }

    pub fn plot_right(&self) -> f64 {
        WIDTH - MARGIN_RIGHT
    }

    pub fn plot_bottom(&self) -> f64 {
        HEIGHT - MARGIN_BOTTOM
    }
}

pub(crate) struct SvgDoc {
    body: String,
}

impl SvgDoc {
    pub fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        body.push('\n');
        let _ = write!(
            body,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        body.push('\n');
        let _ = write!(
            body,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        body.push('\n');
        Self { body }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = write!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
        self.body.push('\n');
    }

    pub fn circle(&mut self, class: &str, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = write!(
            self.body,
            r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r}" fill="{fill}"/>"#
        );
        self.body.push('\n');
    }

    pub fn rect(&mut self, class: &str, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = write!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
        self.body.push('\n');
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = write!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(content)
        );
        self.body.push('\n');
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_maps_domain_corners_to_plot_corners() {
        let frame = Frame {
            x_min: 1.0,
            x_max: 2.0,
            y_min: 1.0,
            y_max: 2.0,
        };
        assert!((frame.x(1.0) - frame.plot_left()).abs() < 1e-9);
        assert!((frame.x(2.0) - frame.plot_right()).abs() < 1e-9);
        assert!((frame.y(1.0) - frame.plot_bottom()).abs() < 1e-9);
    }

    #[test]
    fn document_structure_is_well_formed() {
        let mut doc = SvgDoc::new("title & more");
        doc.circle("mark", 10.0, 10.0, 4.0, "#4c78a8");
        doc.line("diagonal", 0.0, 0.0, 1.0, 1.0, "#999", 1.0);
        let out = doc.finish();
        assert!(out.starts_with("<svg"));
        assert!(out.ends_with("</svg>\n"));
        assert!(out.contains("title &amp; more"));
        assert_eq!(out.matches("class=\"mark\"").count(), 1);
        assert_eq!(out.matches("class=\"diagonal\"").count(), 1);
    }
}
