//! Script generation for editable platforms: an Office VBA module and a
//! Simple Inkscape Scripting program.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::{to_pixels, PixelRect};
use crate::icon::IconProvider;
use crate::plan::{validate_structure, DiagramPlan, EntityId, RelationKind, StructuralViolation};
use crate::render::{draw_arrow, fit_text, fmt_num, icon_path, RenderStyle, MIN_CANVAS_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    OfficeAutomation,
    InkscapeScripting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportOptions {
    /// Slide or page side in points/pixels.
    pub canvas_side: u32,
    pub style: RenderStyle,
    pub font_family: String,
    pub stroke_width: f64,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            canvas_side: 540,
            style: RenderStyle::Placeholder,
            font_family: "Arial".into(),
            stroke_width: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportScript {
    pub dialect: Dialect,
    pub text: String,
    /// Icon file per object drawn as a picture.
    pub assets: BTreeMap<EntityId, String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExportError {
    #[error("plan is structurally invalid: {0:?}")]
    InvalidPlan(Vec<StructuralViolation>),
    #[error("canvas side {0} is below the minimum of 64")]
    CanvasTooSmall(u32),
}

struct Shape {
    id: EntityId,
    description: String,
    rect: PixelRect,
    icon: Option<String>,
}

struct Connector {
    x1: String,
    y1: String,
    x2: String,
    y2: String,
    arrow: bool,
}

struct TextBox {
    id: EntityId,
    text: String,
    rect: PixelRect,
    size: String,
}

struct Layout {
    shapes: Vec<Shape>,
    connectors: Vec<Connector>,
    texts: Vec<TextBox>,
    assets: BTreeMap<EntityId, String>,
}

fn lay_out(plan: &DiagramPlan, options: &ExportOptions, icons: &dyn IconProvider) -> Result<Layout, ExportError> {
    if options.canvas_side < MIN_CANVAS_SIDE {
        return Err(ExportError::CanvasTooSmall(options.canvas_side));
    }
    let violations = validate_structure(plan);
    if !violations.is_empty() {
        return Err(ExportError::InvalidPlan(violations));
    }
    let side = f64::from(options.canvas_side);
    let px = |id: &EntityId| to_pixels(plan.layouts[id], side).expect("canvas side checked");
    let mut assets = BTreeMap::new();
    let mut ignored = Vec::new();
    let shapes = plan
        .objects()
        .map(|e| {
            let r = px(&e.id);
            let icon = match options.style {
                RenderStyle::Icons => icon_path(icons, e.id, &e.description, &mut ignored),
                RenderStyle::Placeholder => None,
            };
            if let Some(p) = &icon {
                assets.insert(e.id, p.clone());
            }
            Shape {
                id: e.id,
                description: e.description.clone(),
                rect: r,
                icon,
            }
        })
        .collect();
    let connectors = plan
        .relationships
        .iter()
        .filter(|r| r.is_connection())
        .map(|r| {
            let s = draw_arrow(plan.layouts[&r.source], plan.layouts[&r.target], side);
            Connector {
                x1: fmt_num(s.from.x),
                y1: fmt_num(s.from.y),
                x2: fmt_num(s.to.x),
                y2: fmt_num(s.to.y),
                arrow: r.kind == RelationKind::Arrow,
            }
        })
        .collect();
    let texts = plan
        .labels()
        .map(|e| {
            let r = px(&e.id);
            TextBox {
                id: e.id,
                text: e.description.clone(),
                rect: r,
                size: fmt_num(fit_text(&e.description, r)),
            }
        })
        .collect();
    Ok(Layout { shapes, connectors, texts, assets })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn xywh(r: PixelRect) -> String {
    alloc::format!("{}, {}, {}, {}", fmt_num(r.x), fmt_num(r.y), fmt_num(r.w), fmt_num(r.h))
}

fn vba_string(s: &str) -> String {
    alloc::format!("\"{}\"", s.replace('"', "\"\""))
}

/// PowerPoint VBA module that builds the diagram on a new blank slide.
pub fn export_office_script(
    plan: &DiagramPlan,
    options: &ExportOptions,
    icons: &dyn IconProvider,
) -> Result<ExportScript, ExportError> {
    let l = lay_out(plan, options, icons)?;
    let side = options.canvas_side;
    let stroke = fmt_num(options.stroke_width);
    let font = vba_string(&options.font_family);
    let mut out = String::new();
    out.push_str("Attribute VB_Name = \"DiagramPlan\"\n");
    out.push_str("Option Explicit\n\n");
    if !plan.caption.is_empty() {
        let _ = writeln!(out, "' {}", one_line(&plan.caption));
    }
    out.push_str("Sub BuildDiagram()\n");
    out.push_str("    Dim sld As Slide\n");
    out.push_str("    Dim shp As Shape\n");
    let _ = writeln!(out, "    ActivePresentation.PageSetup.SlideWidth = {side}");
    let _ = writeln!(out, "    ActivePresentation.PageSetup.SlideHeight = {side}");
    out.push_str("    Set sld = ActivePresentation.Slides.Add(ActivePresentation.Slides.Count + 1, ppLayoutBlank)\n");

    for s in &l.shapes {
        match &s.icon {
            Some(path) => {
                let _ = writeln!(
                    out,
                    "    Set shp = sld.Shapes.AddPicture({}, msoFalse, msoTrue, {})",
                    vba_string(path),
                    xywh(s.rect)
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "    Set shp = sld.Shapes.AddShape(msoShapeRoundedRectangle, {})",
                    xywh(s.rect)
                );
                out.push_str("    shp.Fill.ForeColor.RGB = RGB(242, 242, 242)\n");
                out.push_str("    shp.Line.ForeColor.RGB = RGB(51, 51, 51)\n");
            }
        }
        let _ = writeln!(out, "    shp.Name = \"{}\"", s.id);
        let _ = writeln!(out, "    shp.AlternativeText = {}", vba_string(&s.description));
    }
    for c in &l.connectors {
        let _ = writeln!(
            out,
            "    Set shp = sld.Shapes.AddConnector(msoConnectorStraight, {}, {}, {}, {})",
            c.x1, c.y1, c.x2, c.y2
        );
        out.push_str("    shp.Line.ForeColor.RGB = RGB(0, 0, 0)\n");
        let _ = writeln!(out, "    shp.Line.Weight = {stroke}");
        if c.arrow {
            out.push_str("    shp.Line.EndArrowheadStyle = msoArrowheadTriangle\n");
        }
    }
    for t in &l.texts {
        let _ = writeln!(
            out,
            "    Set shp = sld.Shapes.AddTextbox(msoTextOrientationHorizontal, {})",
            xywh(t.rect)
        );
        let _ = writeln!(out, "    shp.Name = \"{}\"", t.id);
        out.push_str("    shp.TextFrame.WordWrap = msoFalse\n");
        out.push_str("    shp.TextFrame.MarginLeft = 0\n");
        out.push_str("    shp.TextFrame.MarginRight = 0\n");
        out.push_str("    shp.TextFrame.MarginTop = 0\n");
        out.push_str("    shp.TextFrame.MarginBottom = 0\n");
        out.push_str("    shp.TextFrame.VerticalAnchor = msoAnchorMiddle\n");
        let _ = writeln!(out, "    shp.TextFrame.TextRange.Text = {}", vba_string(&t.text));
        let _ = writeln!(out, "    shp.TextFrame.TextRange.Font.Name = {font}");
        let _ = writeln!(out, "    shp.TextFrame.TextRange.Font.Size = {}", t.size);
        out.push_str("    shp.TextFrame.TextRange.ParagraphFormat.Alignment = ppAlignCenter\n");
    }
    out.push_str("End Sub\n");
    Ok(ExportScript { dialect: Dialect::OfficeAutomation, text: out, assets: l.assets })
}

fn py_string(s: &str) -> String {
    let mut out = String::from("'");
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Simple Inkscape Scripting program that draws the diagram on the page.
pub fn export_inkscape_script(
    plan: &DiagramPlan,
    options: &ExportOptions,
    icons: &dyn IconProvider,
) -> Result<ExportScript, ExportError> {
    let l = lay_out(plan, options, icons)?;
    let side = options.canvas_side;
    let stroke = fmt_num(options.stroke_width);
    let font = py_string(&options.font_family);
    let mut out = String::new();
    out.push_str("# Simple Inkscape Scripting\n");
    if !plan.caption.is_empty() {
        let _ = writeln!(out, "# {}", one_line(&plan.caption));
    }
    let _ = writeln!(out, "canvas.true_width = {side}");
    let _ = writeln!(out, "canvas.true_height = {side}");
    let _ = writeln!(out, "canvas.viewbox = [0, 0, {side}, {side}]");
    if l.connectors.iter().any(|c| c.arrow) {
        out.push_str(
            "arrowhead = marker(path(['M', 0, 0, 'L', 10, 5, 'L', 0, 10, 'Z'], fill='#000000', stroke='none'), \
             (10, 5), orient='auto', view_box=(0, 0, 10, 10))\n",
        );
    }
    for s in &l.shapes {
        match &s.icon {
            Some(path) => {
                let _ = writeln!(
                    out,
                    "image({}, ({}, {}), embed=False, width={}, height={}, id='{}')",
                    py_string(path),
                    fmt_num(s.rect.x),
                    fmt_num(s.rect.y),
                    fmt_num(s.rect.w),
                    fmt_num(s.rect.h),
                    s.id
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "rect(({}, {}), ({}, {}), rx={}, fill='#f2f2f2', stroke='#333333', stroke_width={stroke}, id='{}')",
                    fmt_num(s.rect.x),
                    fmt_num(s.rect.y),
                    fmt_num(s.rect.x + s.rect.w),
                    fmt_num(s.rect.y + s.rect.h),
                    fmt_num(0.15 * s.rect.w.min(s.rect.h)),
                    s.id
                );
            }
        }
    }
    for c in &l.connectors {
        let marker = if c.arrow { ", marker_end=arrowhead" } else { "" };
        let _ = writeln!(
            out,
            "line(({}, {}), ({}, {}), stroke='#000000', stroke_width={stroke}{marker})",
            c.x1, c.y1, c.x2, c.y2
        );
    }
    for t in &l.texts {
        let c = t.rect.center();
        let (cx, cy) = (fmt_num(c.x), fmt_num(c.y));
        let _ = writeln!(
            out,
            "text({}, ({cx}, {cy}), font_family={font}, font_size='{}px', text_anchor='middle', \
             dominant_baseline='central', id='{}')",
            py_string(&t.text),
            t.size,
            t.id
        );
    }
    Ok(ExportScript { dialect: Dialect::InkscapeScripting, text: out, assets: l.assets })
}

pub fn export_script(
    plan: &DiagramPlan,
    dialect: Dialect,
    options: &ExportOptions,
    icons: &dyn IconProvider,
) -> Result<ExportScript, ExportError> {
    match dialect {
        Dialect::OfficeAutomation => export_office_script(plan, options, icons),
        Dialect::InkscapeScripting => export_inkscape_script(plan, options, icons),
    }
}

/// Statement tally of a generated script: shapes, connectors with and
/// without arrow heads, text boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatementCounts {
    pub shapes: usize,
    pub arrows: usize,
    pub lines: usize,
    pub texts: usize,
}

impl StatementCounts {
    pub fn of_plan(plan: &DiagramPlan) -> Self {
        StatementCounts {
            shapes: plan.objects().count(),
            arrows: plan.count_relations(RelationKind::Arrow),
            lines: plan.count_relations(RelationKind::Line),
            texts: plan.labels().count(),
        }
    }

    pub fn of_script(script: &ExportScript) -> Self {
        let mut c = StatementCounts::default();
        match script.dialect {
            Dialect::OfficeAutomation => {
                let mut connectors = 0;
                for line in script.text.lines() {
                    if line.contains(".AddShape(") || line.contains(".AddPicture(") {
                        c.shapes += 1;
                    } else if line.contains(".AddConnector(") {
                        connectors += 1;
                    } else if line.contains(".EndArrowheadStyle") {
                        c.arrows += 1;
                    } else if line.contains(".AddTextbox(") {
                        c.texts += 1;
                    }
                }
                c.lines = connectors - c.arrows.min(connectors);
            }
            Dialect::InkscapeScripting => {
                for line in script.text.lines() {
                    if line.starts_with("rect(") || line.starts_with("image(") {
                        c.shapes += 1;
                    } else if line.starts_with("line(") {
                        if line.contains("marker_end=") {
                            c.arrows += 1;
                        } else {
                            c.lines += 1;
                        }
                    } else if line.starts_with("text(") {
                        c.texts += 1;
                    }
                }
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icon::{IconAsset, IconError, NoIcons};
    use crate::plan::fixtures::{butterfly, bx};
    use crate::plan::{Entity, Relationship};

    #[test]
    fn butterfly_office_counts() {
        let s = export_office_script(&butterfly(), &ExportOptions::default(), &NoIcons).unwrap();
        assert_eq!(s.text.matches(".AddShape(").count(), 4);
        assert_eq!(s.text.matches(".AddConnector(").count(), 4);
        assert_eq!(s.text.matches(".AddTextbox(").count(), 4);
        assert_eq!(StatementCounts::of_script(&s), StatementCounts::of_plan(&butterfly()));
        assert!(s.assets.is_empty());
        // objects, then connectors, then text boxes
        let a = s.text.rfind(".AddShape(").unwrap();
        let b = s.text.find(".AddConnector(").unwrap();
        let c = s.text.rfind(".AddConnector(").unwrap();
        let d = s.text.find(".AddTextbox(").unwrap();
        assert!(a < b && c < d);
        // egg at [24,50,14,14] on a 540pt slide
        assert!(s.text.contains("AddShape(msoShapeRoundedRectangle, 129.6, 270, 75.6, 75.6)"));
    }

    #[test]
    fn butterfly_inkscape_counts() {
        let s = export_inkscape_script(&butterfly(), &ExportOptions::default(), &NoIcons).unwrap();
        let c = StatementCounts::of_script(&s);
        assert_eq!(c, StatementCounts { shapes: 4, arrows: 4, lines: 0, texts: 4 });
        assert!(s.text.contains("text('adult butterfly'"));
    }

    #[test]
    fn empty_plan_is_boilerplate_only() {
        let plan = DiagramPlan::new("");
        let office = export_office_script(&plan, &ExportOptions::default(), &NoIcons).unwrap();
        assert!(office.text.contains("Sub BuildDiagram()"));
        assert!(!office.text.contains("Set shp"));
        let ink = export_inkscape_script(&plan, &ExportOptions::default(), &NoIcons).unwrap();
        assert_eq!(ink.text.lines().count(), 4);
        assert_eq!(StatementCounts::of_script(&ink), StatementCounts::default());
    }

    #[test]
    fn quoting_and_lines() {
        let mut p = DiagramPlan::new("");
        p.push(Entity::new(EntityId::object(0), "a \"big\" sun"), bx(10, 10, 20, 20));
        p.push(Entity::new(EntityId::object(1), "earth"), bx(60, 10, 20, 20));
        p.push(Entity::new(EntityId::label(0), "it's \\ hot"), bx(10, 2, 20, 6));
        p.relationships.push(Relationship::line(EntityId::object(0), EntityId::object(1)));
        let office = export_office_script(&p, &ExportOptions::default(), &NoIcons).unwrap();
        assert!(office.text.contains("AlternativeText = \"a \"\"big\"\" sun\""));
        assert!(!office.text.contains("EndArrowheadStyle"));
        let counts = StatementCounts { shapes: 2, arrows: 0, lines: 1, texts: 1 };
        assert_eq!(StatementCounts::of_script(&office), counts);
        let ink = export_inkscape_script(&p, &ExportOptions::default(), &NoIcons).unwrap();
        assert!(ink.text.contains("text('it\\'s \\\\ hot'"));
        assert!(!ink.text.contains("arrowhead"));
        assert_eq!(StatementCounts::of_script(&ink), counts);
    }

    struct Pack;
    impl IconProvider for Pack {
        fn search(&self, q: &str) -> Result<IconAsset, IconError> {
            Ok(IconAsset { provider: "pack".into(), query: q.into(), path: Some(alloc::format!("icons/{q}.svg")), attribution: String::new() })
        }
    }

    #[test]
    fn icons_fill_the_manifest() {
        let opts = ExportOptions { style: RenderStyle::Icons, ..Default::default() };
        let s = export_office_script(&butterfly(), &opts, &Pack).unwrap();
        assert_eq!(s.assets.len(), 4);
        assert_eq!(s.assets[&EntityId::object(0)], "icons/egg.svg");
        assert_eq!(s.text.matches(".AddPicture(").count(), 4);
        assert_eq!(StatementCounts::of_script(&s), StatementCounts::of_plan(&butterfly()));
        let ink = export_inkscape_script(&butterfly(), &opts, &Pack).unwrap();
        assert!(ink.text.contains("image('icons/egg.svg'"));
        assert_eq!(StatementCounts::of_script(&ink), StatementCounts::of_plan(&butterfly()));
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut p = butterfly();
        p.layouts.remove(&EntityId::label(1));
        assert!(matches!(
            export_office_script(&p, &ExportOptions::default(), &NoIcons),
            Err(ExportError::InvalidPlan(_))
        ));
    }
}
