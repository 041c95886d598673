//! Standalone SVG rendering of a scene, its estimated map and forecasts.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimator::UncertainMapElement;
use crate::map_model::{denormalize_from_bev, ElementClass, PerceptionRange, Point2, Scene};
use crate::predictor::PredictionSet;

/// Pixels per metre.
pub const PIXELS_PER_METER: f64 = 10.0;
/// Ellipse radius in pixels per √nat of β.
pub const ELLIPSE_GAIN: f64 = 6.0;
const MARGIN: f64 = 10.0;
const BAND_WIDTH_M: f64 = 1.5;
const UNCERTAINTY_COLOR: &str = "#9467bd";
const EGO_COLOR: &str = "#d62728";

pub fn class_color(class: ElementClass) -> &'static str {
    match class {
        ElementClass::Boundary => "#2ca02c",
        ElementClass::PedCrossing => "#1f77b4",
        ElementClass::Divider => "#ff7f0e",
        ElementClass::Centerline => "#7f7f7f",
    }
}

pub fn ellipse_radius(beta: f64) -> f64 {
    ELLIPSE_GAIN * beta.max(0.0).sqrt()
}

struct Canvas {
    range: PerceptionRange,
}

impl Canvas {
    fn px(&self, p: Point2) -> (f64, f64) {
        (
            MARGIN + (p.x + self.range.half_x) * PIXELS_PER_METER,
            MARGIN + (self.range.half_y - p.y) * PIXELS_PER_METER,
        )
    }

    fn points(&self, pts: &[Point2]) -> String {
        let mut s = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.px(*p);
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{x:.2},{y:.2}").unwrap();
        }
        s
    }
}

fn max_component(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Render one scene.
///
/// Estimated elements are drawn in their class colour, each vertex with a
/// circle of radius `ELLIPSE_GAIN · √β` (omitted when β = 0), over a purple
/// band whose per-segment opacity is the larger endpoint value of max(Δc).
/// `predictions`, when given, must align with `scene.agents`.
pub fn render_svg(scene: &Scene, elements: &[UncertainMapElement], predictions: Option<&[PredictionSet]>) -> Result<String> {
    let ids: HashSet<u64> = scene.elements.iter().map(|e| e.id).collect();
    if let Some(e) = elements.iter().find(|e| !ids.contains(&e.id)) {
        return Err(Error::Inconsistent(format!("estimated element {} is not in scene {}", e.id, scene.seed)));
    }
    if let Some(p) = predictions {
        if p.len() != scene.agents.len() {
            return Err(Error::Inconsistent(format!(
                "{} predictions for {} agents in scene {}",
                p.len(),
                scene.agents.len(),
                scene.seed
            )));
        }
    }
    let range = PerceptionRange::default();
    let c = Canvas { range };
    let width = 2.0 * range.half_x * PIXELS_PER_METER + 2.0 * MARGIN;
    let height = 2.0 * range.half_y * PIXELS_PER_METER + 2.0 * MARGIN;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    )
    .unwrap();
    writeln!(s, r#"<title>scene {}</title>"#, scene.seed).unwrap();
    writeln!(s, r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#ffffff"/>"##).unwrap();

    writeln!(s, r#"<g id="bands">"#).unwrap();
    let band_px = BAND_WIDTH_M * PIXELS_PER_METER;
    for e in elements {
        let pts: Vec<Point2> = e.vertices.iter().map(|v| denormalize_from_bev(v.mu, range)).collect();
        for (k, w) in e.vertices.windows(2).enumerate() {
            let opacity = max_component(&w[0].delta_c).max(max_component(&w[1].delta_c));
            if opacity <= 0.0 {
                continue;
            }
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{UNCERTAINTY_COLOR}" stroke-width="{band_px:.2}" stroke-linecap="round" stroke-opacity="{opacity:.6}"/>"#,
                c.points(&pts[k..k + 2])
            )
            .unwrap();
        }
    }
    writeln!(s, "</g>").unwrap();

    writeln!(s, r#"<g id="elements">"#).unwrap();
    for e in elements {
        let pts: Vec<Point2> = e.vertices.iter().map(|v| denormalize_from_bev(v.mu, range)).collect();
        writeln!(
            s,
            r#"<polyline data-id="{}" data-class="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            e.id,
            e.class,
            c.points(&pts),
            class_color(e.class)
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();

    writeln!(s, r#"<g id="ellipses">"#).unwrap();
    for e in elements {
        for v in &e.vertices {
            if v.beta <= 0.0 {
                continue;
            }
            let (x, y) = c.px(denormalize_from_bev(v.mu, range));
            let r = ellipse_radius(v.beta);
            writeln!(
                s,
                r#"<ellipse cx="{x:.2}" cy="{y:.2}" rx="{r:.4}" ry="{r:.4}" fill="{UNCERTAINTY_COLOR}" fill-opacity="0.2" stroke="{UNCERTAINTY_COLOR}" stroke-width="0.5"/>"#
            )
            .unwrap();
        }
    }
    writeln!(s, "</g>").unwrap();

    writeln!(s, r#"<g id="agents">"#).unwrap();
    for (i, a) in scene.agents.iter().enumerate() {
        writeln!(
            s,
            r##"<polyline data-agent="{}" points="{}" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
            a.id,
            c.points(&a.history.samples)
        )
        .unwrap();
        writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#000000" stroke-width="1" stroke-dasharray="3,2"/>"##,
            c.points(&a.future.samples)
        )
        .unwrap();
        if let Some(p) = predictions {
            for (mode, score) in p[i].modes.iter().zip(&p[i].scores) {
                writeln!(
                    s,
                    r##"<polyline points="{}" fill="none" stroke="#17becf" stroke-width="1" stroke-opacity="{:.4}"/>"##,
                    c.points(mode),
                    0.2 + 0.8 * score
                )
                .unwrap();
            }
        }
    }
    writeln!(s, "</g>").unwrap();

    let (ex, ey) = c.px(scene.ego_pose.position);
    writeln!(
        s,
        r#"<rect id="ego" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{EGO_COLOR}" transform="rotate({:.4} {ex:.2} {ey:.2})"/>"#,
        ex - 2.25 * PIXELS_PER_METER,
        ey - 1.0 * PIXELS_PER_METER,
        4.5 * PIXELS_PER_METER,
        2.0 * PIXELS_PER_METER,
        -scene.ego_pose.heading.to_degrees()
    )
    .unwrap();
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::UncertainVertex;
    use crate::map_model::normalize_to_bev;
    use crate::noise_sim::{generate_scene, Layout};

    /// Uncertain map mirroring the ground truth with synthetic β and Δc.
    fn synthetic_map(scene: &Scene, beta: impl Fn(usize) -> f64, dc: f64) -> Vec<UncertainMapElement> {
        scene
            .elements
            .iter()
            .map(|e| {
                let mut c_bar = [0.0; 4];
                c_bar[e.class.index()] = 1.0;
                let vertices = e
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| UncertainVertex {
                        vertex_index: i,
                        mu: normalize_to_bev(*p, PerceptionRange::default()).unwrap(),
                        beta: beta(i),
                        c_bar,
                        delta_c: [dc, 0.0, 0.0, 0.0],
                    })
                    .collect();
                UncertainMapElement {
                    id: e.id,
                    class: e.class,
                    vertices,
                    mean_beta: 0.0,
                    c_bar,
                    delta_c: [dc, 0.0, 0.0, 0.0],
                }
            })
            .collect()
    }

    fn radii(svg: &str) -> Vec<f64> {
        svg.lines()
            .filter(|l| l.starts_with("<ellipse"))
            .map(|l| {
                let start = l.find("rx=\"").unwrap() + 4;
                let end = start + l[start..].find('"').unwrap();
                l[start..end].parse().unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_beta_draws_no_ellipses() {
        let scene = generate_scene(Layout::Straight, 1);
        let svg = render_svg(&scene, &synthetic_map(&scene, |_| 0.0, 0.0), None).unwrap();
        assert!(radii(&svg).is_empty());
        assert!(!svg.contains("stroke-opacity=\"0.0"));
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn doubling_beta_scales_radii_by_sqrt_two() {
        let scene = generate_scene(Layout::Curve, 2);
        let a = radii(&render_svg(&scene, &synthetic_map(&scene, |i| 0.1 + 0.05 * i as f64, 0.0), None).unwrap());
        let b = radii(&render_svg(&scene, &synthetic_map(&scene, |i| 0.2 + 0.1 * i as f64, 0.0), None).unwrap());
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty());
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 2f64.sqrt()).abs() < 1e-3, "{x} {y}");
        }
    }

    #[test]
    fn colors_and_band_opacity() {
        let scene = generate_scene(Layout::Intersection, 1);
        let svg = render_svg(&scene, &synthetic_map(&scene, |_| 0.5, 0.25), None).unwrap();
        for class in ElementClass::ALL {
            assert!(svg.contains(class_color(class)), "{class}");
        }
        assert!(svg.contains(EGO_COLOR));
        assert!(svg.contains("stroke-opacity=\"0.250000\""));
    }

    #[test]
    fn inconsistent_ids_are_rejected() {
        let scene = generate_scene(Layout::Straight, 4);
        let mut map = synthetic_map(&scene, |_| 0.1, 0.0);
        map[0].id = 9999;
        assert!(matches!(render_svg(&scene, &map, None), Err(Error::Inconsistent(_))));
        let map = synthetic_map(&scene, |_| 0.1, 0.0);
        assert!(matches!(render_svg(&scene, &map, Some(&[])), Err(Error::Inconsistent(_))));
    }
}
