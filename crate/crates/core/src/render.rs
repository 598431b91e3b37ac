//! SVG rendering of a plan: placeholder shapes or icons for objects, fitted
//! text for labels, straight connectors between anchors.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::{anchor_pair, to_pixels, PixelRect, Point};
use crate::icon::{IconProvider, IconError};
use crate::plan::{validate_structure, DiagramPlan, EntityId, GridBox, RelationKind, StructuralViolation};

pub const MIN_CANVAS_SIDE: u32 = 64;
/// Font sizes below this are reported as tiny text.
pub const MIN_FONT_PX: f64 = 6.0;
/// Average glyph advance as a fraction of the font size.
pub const GLYPH_ADVANCE: f64 = 0.6;
/// Distance each connector end is kept off its box edge.
pub const ARROW_PULLBACK: f64 = 2.0;
pub const MARKER_ID: &str = "arrowhead";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    #[default]
    Placeholder,
    Icons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub canvas_side: u32,
    pub style: RenderStyle,
    pub font_family: String,
    pub stroke_width: f64,
    pub arrow_head: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            canvas_side: 512,
            style: RenderStyle::Placeholder,
            font_family: "sans-serif".into(),
            stroke_width: 2.0,
            arrow_head: 10.0,
        }
    }
}

impl RenderOptions {
    pub fn check(&self) -> Result<(), RenderError> {
        if self.canvas_side < MIN_CANVAS_SIDE {
            return Err(RenderError::CanvasTooSmall(self.canvas_side));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.stroke_width) || !positive(self.arrow_head) {
            return Err(RenderError::BadOption);
        }
        Ok(())
    }

    pub fn side(&self) -> f64 {
        f64::from(self.canvas_side)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("plan is structurally invalid: {0:?}")]
    InvalidPlan(Vec<StructuralViolation>),
    #[error("canvas side {0} is below the minimum of 64 pixels")]
    CanvasTooSmall(u32),
    #[error("stroke width and arrow-head size must be positive")]
    BadOption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum RenderWarning {
    TinyText { id: EntityId, font_size: f64 },
    IconFallback { id: EntityId, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgDocument {
    pub text: String,
    pub warnings: Vec<RenderWarning>,
}

/// Largest font size that fits `label` into `rect` under the fixed
/// advance model. May fall below [`MIN_FONT_PX`]; callers decide what to do.
pub fn fit_text(label: &str, rect: PixelRect) -> f64 {
    let by_height = 0.8 * rect.h;
    let chars = label.chars().count();
    if chars == 0 {
        return by_height;
    }
    let by_width = 0.95 * rect.w / (GLYPH_ADVANCE * chars as f64);
    by_height.min(by_width)
}

/// Connector endpoints in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: Point,
    pub to: Point,
}

impl Segment {
    pub fn length(&self) -> f64 {
        libm::sqrt(self.from.dist2(self.to))
    }
}

/// Straight segment between the closest anchors of `a` and `b`, with each
/// end pulled back toward the other.
pub fn draw_arrow(a: GridBox, b: GridBox, canvas_side: f64) -> Segment {
    let k = canvas_side / f64::from(crate::plan::GRID);
    let pair = anchor_pair(a, b);
    let (from, to) = (pair.from.scale(k), pair.to.scale(k));
    let len = libm::sqrt(from.dist2(to));
    if len == 0.0 {
        return Segment { from, to };
    }
    let pull = ARROW_PULLBACK.min(len / 2.0);
    let (ux, uy) = ((to.x - from.x) / len, (to.y - from.y) / len);
    Segment {
        from: Point { x: from.x + ux * pull, y: from.y + uy * pull },
        to: Point { x: to.x - ux * pull, y: to.y - uy * pull },
    }
}

/// Formats with at most two decimals, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    let cents = libm::round(v * 100.0) as i64;
    let (sign, cents) = if cents < 0 { ("-", -cents) } else { ("", cents) };
    let (whole, frac) = (cents / 100, cents % 100);
    let mut s = alloc::format!("{sign}{whole}");
    if frac != 0 {
        let f = alloc::format!("{frac:02}");
        s.push('.');
        s.push_str(f.trim_end_matches('0'));
    }
    s
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn pixels(b: GridBox, side: f64) -> PixelRect {
    to_pixels(b, side).expect("canvas side checked")
}

/// Looks up an icon for an object, reporting why it fell back to a
/// placeholder if it did.
pub(crate) fn icon_path(
    icons: &dyn IconProvider,
    id: EntityId,
    description: &str,
    warnings: &mut Vec<RenderWarning>,
) -> Option<String> {
    let reason = match icons.search(description) {
        Ok(asset) => match asset.path {
            Some(p) => return Some(p),
            None => String::from("no icon found"),
        },
        Err(IconError(e)) => e,
    };
    warnings.push(RenderWarning::IconFallback { id, reason });
    None
}

pub fn render_svg(
    plan: &DiagramPlan,
    options: &RenderOptions,
    icons: &dyn IconProvider,
) -> Result<SvgDocument, RenderError> {
    options.check()?;
    let violations = validate_structure(plan);
    if !violations.is_empty() {
        return Err(RenderError::InvalidPlan(violations));
    }
    let side = options.side();
    let s = fmt_num(side);
    let head = fmt_num(options.arrow_head);
    let half = fmt_num(options.arrow_head / 2.0);
    let stroke = fmt_num(options.stroke_width);
    let mut warnings = Vec::new();
    let mut out = String::new();

    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" \
         version=\"1.1\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">"
    );
    if !plan.caption.is_empty() {
        let _ = writeln!(out, "<desc>{}</desc>", xml_escape(&plan.caption));
    }
    let _ = writeln!(
        out,
        "<defs><marker id=\"{MARKER_ID}\" markerWidth=\"{head}\" markerHeight=\"{head}\" refX=\"{head}\" \
         refY=\"{half}\" orient=\"auto\" markerUnits=\"userSpaceOnUse\">\
         <polygon points=\"0 0, {head} {half}, 0 {head}\" fill=\"#000000\"/></marker></defs>"
    );
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{s}\" height=\"{s}\" fill=\"#ffffff\"/>");

    for e in plan.objects() {
        let r = pixels(plan.layouts[&e.id], side);
        let (x, y, w, h) = (fmt_num(r.x), fmt_num(r.y), fmt_num(r.w), fmt_num(r.h));
        let _ = write!(out, "<g id=\"{}\"><title>{}</title>", e.id, xml_escape(&e.description));
        let icon = match options.style {
            RenderStyle::Icons => icon_path(icons, e.id, &e.description, &mut warnings),
            RenderStyle::Placeholder => None,
        };
        match icon {
            Some(path) => {
                let _ = write!(
                    out,
                    "<image x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" \
                     preserveAspectRatio=\"xMidYMid meet\" xlink:href=\"{}\"/>",
                    xml_escape(&path)
                );
            }
            None => {
                let rx = fmt_num(0.15 * r.w.min(r.h));
                let _ = write!(
                    out,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" rx=\"{rx}\" \
                     fill=\"#f2f2f2\" stroke=\"#333333\" stroke-width=\"{stroke}\"/>"
                );
            }
        }
        out.push_str("</g>\n");
    }

    out.push_str("<g id=\"relationships\">\n");
    for (i, rel) in plan.relationships.iter().enumerate() {
        if !rel.is_connection() {
            continue;
        }
        let seg = draw_arrow(plan.layouts[&rel.source], plan.layouts[&rel.target], side);
        let marker = if rel.kind == RelationKind::Arrow {
            alloc::format!(" marker-end=\"url(#{MARKER_ID})\"")
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "<path id=\"rel{i}\" class=\"{}\" d=\"M {} {} L {} {}\" fill=\"none\" stroke=\"#000000\" \
             stroke-width=\"{stroke}\"{marker}/>",
            if rel.kind == RelationKind::Arrow { "arrow" } else { "line" },
            fmt_num(seg.from.x),
            fmt_num(seg.from.y),
            fmt_num(seg.to.x),
            fmt_num(seg.to.y),
        );
    }
    out.push_str("</g>\n");

    for e in plan.labels() {
        let r = pixels(plan.layouts[&e.id], side);
        let size = fit_text(&e.description, r);
        if size < MIN_FONT_PX {
            warnings.push(RenderWarning::TinyText { id: e.id, font_size: size });
        }
        let c = r.center();
        let _ = writeln!(
            out,
            "<g id=\"{}\"><text x=\"{}\" y=\"{}\" font-family=\"{}\" font-size=\"{}\" \
             text-anchor=\"middle\" dominant-baseline=\"central\">{}</text></g>",
            e.id,
            fmt_num(c.x),
            fmt_num(c.y),
            xml_escape(&options.font_family),
            fmt_num(size),
            xml_escape(&e.description),
        );
    }
    out.push_str("</svg>\n");
    Ok(SvgDocument { text: out, warnings })
}
