//! Grayscale rendering of skeleton graphs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{Point, SpatialGraph};

/// 8-bit grayscale image, row-major, 255 = white.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width, self.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png header: {e}")))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::invalid(format!("png data: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::invalid(format!("png finish: {e}")))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub stroke_px: f64,
    /// Radius of filled discs drawn at nodes, if any.
    pub node_radius_px: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            stroke_px: 2.0,
            node_radius_px: None,
        }
    }
}

/// Normalized coordinates are scaled by the larger image side.
fn scale(width: u32, height: u32) -> f64 {
    width.max(height) as f64
}

fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders edges as anti-aliased strokes: pixel coverage falls off linearly
/// over one pixel around the stroke boundary.
pub fn rasterize(
    g: &SpatialGraph,
    width: u32,
    height: u32,
    opts: RenderOptions,
) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }
    if !(opts.stroke_px.is_finite() && opts.stroke_px > 0.0) {
        return Err(Error::invalid("stroke width must be positive"));
    }
    let s = scale(width, height);
    let px = |p: &Point| (p.x * s, p.y * s);
    let mut cover = vec![0.0f64; (width * height) as usize];
    let mut stamp = |a: (f64, f64), b: (f64, f64), half: f64| {
        let reach = half + 1.0;
        let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as u32;
        let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as u32;
        let x1 = ((a.0.max(b.0) + reach).ceil().max(0.0) as u32).min(width - 1);
        let y1 = ((a.1.max(b.1) + reach).ceil().max(0.0) as u32).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = seg_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                let c = (half + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut cover[(y * width + x) as usize];
                *slot = slot.max(c);
            }
        }
    };
    let nodes = g.nodes();
    for e in g.edges() {
        stamp(px(&nodes[e.i()]), px(&nodes[e.j()]), opts.stroke_px / 2.0);
    }
    if let Some(r) = opts.node_radius_px {
        for p in nodes {
            stamp(px(p), px(p), r);
        }
    }
    let pixels = cover
        .iter()
        .map(|c| (255.0 * (1.0 - c)).round() as u8)
        .collect();
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// SVG document with the same geometry as [`rasterize`].
pub fn to_svg(g: &SpatialGraph, width: u32, height: u32, opts: RenderOptions) -> Result<String> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image size must be positive, got {width}x{height}"
        )));
    }
    let s = scale(width, height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="{}" stroke-linecap="round">"#,
        opts.stroke_px
    );
    let nodes = g.nodes();
    for e in g.edges() {
        let (a, b) = (nodes[e.i()], nodes[e.j()]);
        let _ = writeln!(
            out,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
            a.x * s,
            a.y * s,
            b.x * s,
            b.y * s
        );
    }
    out.push_str("</g>\n");
    if let Some(r) = opts.node_radius_px {
        for p in nodes {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="{r}"/>"#,
                p.x * s,
                p.y * s
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
