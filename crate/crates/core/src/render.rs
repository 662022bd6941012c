//! Parameter-plane and Julia-slice rendering to binary PPM.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RenderConfig, SolenoidConfig};
use crate::error::Result;
use crate::henon_core::{default_radius, escape_time, Point2, RootOfUnity, SemiParabolicParams, C64};
use crate::poly_dynamics::QuadPoly;
use crate::solenoid_model::{connectivity_heuristic, Connectivity, PeriodicSeeds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Binary,
    Loglog,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, row 0 at the top.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.rgb)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.rgb.len() + 32);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn pixel(&self, i: usize, j: usize) -> [u8; 3] {
        let k = 3 * (j * self.width + i);
        [self.rgb[k], self.rgb[k + 1], self.rgb[k + 2]]
    }

    pub fn count_black(&self) -> usize {
        self.rgb.chunks(3).filter(|p| p == &[0, 0, 0]).count()
    }
}

/// Pixel centers: `(2i + 1 − W)/W · extent`, so the grid is exactly symmetric about the
/// center (for even and odd sizes alike).
pub fn pixel_coordinate(cfg: &RenderConfig, i: usize, j: usize) -> C64 {
    let side = cfg.width.max(cfg.height) as f64;
    let re = (2 * i as i64 + 1 - cfg.width as i64) as f64 / side * cfg.extent;
    let im = -((2 * j as i64 + 1 - cfg.height as i64) as f64) / side * cfg.extent;
    C64::new(cfg.center_re + re, cfg.center_im + im)
}

fn gray(v: f64) -> [u8; 3] {
    let g = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    [g, g, g]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPlaneSidecar {
    pub lambda_p: i64,
    pub lambda_q: u32,
    pub k_max: usize,
    pub margin: f64,
    pub render: RenderConfig,
    pub palette: Palette,
    pub connected: usize,
    pub disconnected: usize,
    pub undecided: usize,
    /// Pixels with `|a| < 0.05`, and the fraction of those classified connected.
    pub small_a_pixels: usize,
    pub small_a_connected_fraction: f64,
}

/// Classifies every pixel `a` by the periodic-orbit heuristic; black is connected.
pub fn render_param_plane(
    lambda: RootOfUnity,
    render: &RenderConfig,
    solenoid: &SolenoidConfig,
    palette: Palette,
) -> Result<(Image, ParamPlaneSidecar)> {
    render.validate()?;
    let k_max = if render.fast { solenoid.fast_k_max } else { solenoid.k_max };
    let seeds = PeriodicSeeds::new(QuadPoly::parabolic(lambda), k_max)?;
    let cells: Vec<(C64, Connectivity, f64)> = (0..render.width * render.height)
        .into_par_iter()
        .map(|k| {
            let a = pixel_coordinate(render, k % render.width, k / render.width);
            let score = connectivity_heuristic(&SemiParabolicParams::new(lambda, a), &seeds, k_max, solenoid.margin);
            (a, score.verdict, (score.estimate - score.target).abs())
        })
        .collect();
    let mut rgb = Vec::with_capacity(3 * cells.len());
    for (_, verdict, gap) in &cells {
        let px = match (palette, verdict) {
            (_, Connectivity::Connected) => [0, 0, 0],
            (Palette::Binary, _) => [255, 255, 255],
            (Palette::Loglog, Connectivity::Disconnected) => gray(1.0 - 0.5 / (1.0 + gap)),
            (Palette::Loglog, Connectivity::Undecided) => [160, 160, 200],
        };
        rgb.extend_from_slice(&px);
    }
    let count = |v: Connectivity| cells.iter().filter(|c| c.1 == v).count();
    let small: Vec<_> = cells.iter().filter(|c| c.0.norm() < 0.05).collect();
    let small_connected = small.iter().filter(|c| c.1 == Connectivity::Connected).count();
    let sidecar = ParamPlaneSidecar {
        lambda_p: lambda.p,
        lambda_q: lambda.q,
        k_max,
        margin: solenoid.margin,
        render: render.clone(),
        palette,
        connected: count(Connectivity::Connected),
        disconnected: count(Connectivity::Disconnected),
        undecided: count(Connectivity::Undecided),
        small_a_pixels: small.len(),
        small_a_connected_fraction: if small.is_empty() { f64::NAN } else { small_connected as f64 / small.len() as f64 },
    };
    Ok((
        Image {
            width: render.width,
            height: render.height,
            rgb,
        },
        sidecar,
    ))
}

/// Escape-time picture of `K⁺ ∩ {y = y₀}` in the `x`-plane; non-escaping pixels are black.
pub fn render_julia_slice(params: &SemiParabolicParams, render: &RenderConfig, palette: Palette) -> Result<Image> {
    render.validate()?;
    let y = C64::new(render.slice_y_re, render.slice_y_im);
    let r = default_radius(params);
    let rgb: Vec<u8> = (0..render.width * render.height)
        .into_par_iter()
        .flat_map_iter(|k| {
            let x = pixel_coordinate(render, k % render.width, k / render.width);
            let px = match (escape_time(params, Point2::new(x, y), r, render.max_iter), palette) {
                (None, _) => [0, 0, 0],
                (Some(_), Palette::Binary) => [255, 255, 255],
                (Some(n), Palette::Loglog) => gray(0.25 + 0.75 * ((n as f64 + 1.0).ln() / (render.max_iter as f64 + 1.0).ln())),
            };
            px.into_iter()
        })
        .collect();
    Ok(Image {
        width: render.width,
        height: render.height,
        rgb,
    })
}
