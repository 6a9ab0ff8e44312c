//! Procedural streetscape generator: latent code -> scene parameters ->
//! 64x64 grayscale raster.
//!
//! The latent-to-parameter map is a range-scaled logistic of an affine map
//! whose matrix has orthonormal columns (times a fixed gain), so distinct
//! latents always decode to distinct parameter vectors when `D <= 16`.
//! Rasterization is anti-aliased: every primitive's pixel values move
//! continuously with its geometry. Window and tree counts are the rounded
//! parameter values; items live in fixed slots and fade in over a narrow
//! band around each rounding threshold, so a count change never moves the
//! other items.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentCode, NormalStream};

pub const WIDTH: usize = 64;
pub const HEIGHT: usize = 64;
pub const PIXELS: usize = WIDTH * HEIGHT;

/// Number of scene parameters produced by [`decode_params`].
pub const PARAM_COUNT: usize = 16;

/// Seed the shipped generator constants are derived from.
pub const DEFAULT_GENERATOR_SEED: u64 = 0x5743_2019_0000_0016;

/// Gain applied to the orthonormal decode matrix.
pub const DECODE_GAIN: f64 = 2.0;

/// Bound on the mean per-pixel L1 change caused by a latent step of norm
/// 1e-3, averaged over random truncated latents and directions. Measured
/// around 6e-5 with the shipped constants; rounding of count features keeps
/// it above zero.
pub const CONTINUITY_L1_BOUND: f64 = 2e-4;

/// `(name, low, high)` for every scene parameter, in decode order.
pub const PARAM_RANGES: [(&str, f64, f64); PARAM_COUNT] = [
    ("floors", 1.0, 3.0),
    ("window_rows", 1.0, 3.0),
    ("window_cols", 2.0, 5.0),
    ("pediment", 0.0, 1.0),
    ("hedge_height", 0.0, 1.0),
    ("tree_count", 0.0, 4.0),
    ("facade_tone", 0.0, 1.0),
    ("pavement_quality", 0.0, 1.0),
    ("garden_depth", 0.0, 1.0),
    ("roof_tone", 0.0, 1.0),
    ("window_frame", 0.0, 1.0),
    ("bay_window", 0.0, 1.0),
    ("masonry", 0.0, 1.0),
    ("sky_tone", 0.0, 1.0),
    ("chimney", 0.0, 1.0),
    ("kerb_tone", 0.0, 1.0),
];

/// Decoded scene description. Every field lies in its `PARAM_RANGES` entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub floors: f64,
    pub window_rows: f64,
    pub window_cols: f64,
    /// Roof pediment prominence (opacity).
    pub pediment: f64,
    pub hedge_height: f64,
    pub tree_count: f64,
    /// 0 = dark bare brick, 1 = whitewashed stucco.
    pub facade_tone: f64,
    /// 0 = plain tarmac, 1 = paving stones.
    pub pavement_quality: f64,
    pub garden_depth: f64,
    pub roof_tone: f64,
    /// Contrast of the window surrounds.
    pub window_frame: f64,
    /// Shading of the bay projection.
    pub bay_window: f64,
    /// Contrast of the horizontal brick courses.
    pub masonry: f64,
    pub sky_tone: f64,
    pub chimney: f64,
    pub kerb_tone: f64,
}

impl SceneParams {
    pub fn from_array(values: [f64; PARAM_COUNT]) -> Result<Self> {
        for (i, (&v, (name, lo, hi))) in values.iter().zip(PARAM_RANGES.iter()).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if v < *lo || v > *hi {
                return Err(Error::InvalidConfig(format!(
                    "scene parameter {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        let [floors, window_rows, window_cols, pediment, hedge_height, tree_count, facade_tone, pavement_quality, garden_depth, roof_tone, window_frame, bay_window, masonry, sky_tone, chimney, kerb_tone] =
            values;
        Ok(SceneParams {
            floors,
            window_rows,
            window_cols,
            pediment,
            hedge_height,
            tree_count,
            facade_tone,
            pavement_quality,
            garden_depth,
            roof_tone,
            window_frame,
            bay_window,
            masonry,
            sky_tone,
            chimney,
            kerb_tone,
        })
    }

    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.floors,
            self.window_rows,
            self.window_cols,
            self.pediment,
            self.hedge_height,
            self.tree_count,
            self.facade_tone,
            self.pavement_quality,
            self.garden_depth,
            self.roof_tone,
            self.window_frame,
            self.bay_window,
            self.masonry,
            self.sky_tone,
            self.chimney,
            self.kerb_tone,
        ]
    }

    /// Every parameter at the middle of its range.
    pub fn midpoint() -> Self {
        let mut v = [0.0; PARAM_COUNT];
        for (slot, (_, lo, hi)) in v.iter_mut().zip(PARAM_RANGES.iter()) {
            *slot = 0.5 * (lo + hi);
        }
        Self::from_array(v).expect("midpoints are in range")
    }
}

/// Fixed constants of the latent-to-parameter map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConstants {
    pub seed: u64,
    pub dim: usize,
    /// `PARAM_COUNT` rows of length `dim`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl GeneratorConstants {
    /// Derives the decode matrix from `seed`: a Gaussian `PARAM_COUNT x dim`
    /// matrix whose shorter side is Gram–Schmidt orthonormalized, scaled by
    /// [`DECODE_GAIN`]. The bias is zero so the origin decodes to the
    /// midpoint scene.
    pub fn from_seed(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        let mut stream = NormalStream::new(seed, 0);
        let mut m: Vec<Vec<f64>> = (0..PARAM_COUNT).map(|_| stream.normal_vec(dim)).collect();
        if dim <= PARAM_COUNT {
            // orthonormal columns
            let mut cols: Vec<Vec<f64>> = (0..dim)
                .map(|j| m.iter().map(|row| row[j]).collect())
                .collect();
            gram_schmidt(&mut cols);
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = DECODE_GAIN * cols[j][i];
                }
            }
        } else {
            gram_schmidt(&mut m);
            for row in m.iter_mut() {
                row.iter_mut().for_each(|v| *v *= DECODE_GAIN);
            }
        }
        Ok(GeneratorConstants {
            seed,
            dim,
            weights: m,
            bias: vec![0.0; PARAM_COUNT],
        })
    }

    pub fn shipped() -> Self {
        Self::from_seed(DEFAULT_GENERATOR_SEED, crate::latent::DEFAULT_DIM)
            .expect("default dimension is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != PARAM_COUNT || self.bias.len() != PARAM_COUNT {
            return Err(Error::InvalidConfig(format!(
                "generator constants need {PARAM_COUNT} rows and biases"
            )));
        }
        for row in &self.weights {
            if row.len() != self.dim {
                return Err(Error::LengthMismatch {
                    expected: self.dim,
                    actual: row.len(),
                });
            }
        }
        let flat = self.weights.iter().flatten().chain(self.bias.iter());
        if let Some(index) = flat.clone().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }
}

fn gram_schmidt(vectors: &mut [Vec<f64>]) {
    for i in 0..vectors.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = vectors.split_at_mut(i);
                let proj: f64 = tail[0].iter().zip(&head[j]).map(|(a, b)| a * b).sum();
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= proj * b;
                }
            }
        }
        let n = crate::latent::norm(&vectors[i]);
        vectors[i].iter_mut().for_each(|v| *v /= n);
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn decode_params(z: &LatentCode, constants: &GeneratorConstants) -> Result<SceneParams> {
    if z.dim() != constants.dim {
        return Err(Error::LengthMismatch {
            expected: constants.dim,
            actual: z.dim(),
        });
    }
    let mut values = [0.0; PARAM_COUNT];
    for (i, slot) in values.iter_mut().enumerate() {
        let pre: f64 = constants.weights[i]
            .iter()
            .zip(z.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + constants.bias[i];
        let (_, lo, hi) = PARAM_RANGES[i];
        *slot = (lo + (hi - lo) * logistic(pre)).clamp(lo, hi);
    }
    SceneParams::from_array(values)
}

/// Fixed-size grayscale raster, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn filled(value: f64) -> Self {
        RasterImage {
            pixels: vec![value.clamp(0.0, 1.0); PIXELS],
        }
    }

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::LengthMismatch {
                expected: PIXELS,
                actual: pixels.len(),
            });
        }
        if let Some(index) = pixels
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::NonFinite { index });
        }
        Ok(RasterImage { pixels })
    }

    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn from_pixels_clamped(pixels: Vec<f64>) -> Result<Self> {
        Self::from_pixels(pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * WIDTH + x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PIXELS {
            return Err(Error::LengthMismatch {
                expected: PIXELS,
                actual: bytes.len(),
            });
        }
        Ok(RasterImage {
            pixels: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    /// 8-bit grayscale PNG, pixel = round(255 * v).
    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_gray_png(WIDTH as u32, HEIGHT as u32, &self.to_bytes())
    }

    pub fn from_png(data: &[u8]) -> Result<Self> {
        let (w, h, bytes) = decode_gray_png(data)?;
        if w as usize != WIDTH || h as usize != HEIGHT {
            return Err(Error::Png(format!("expected {WIDTH}x{HEIGHT}, got {w}x{h}")));
        }
        Self::from_bytes(&bytes)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / PIXELS as f64
    }

    /// Mean over the pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn region_mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in y0..y1.min(HEIGHT) {
            for x in x0..x1.min(WIDTH) {
                sum += self.get(x, y);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Mean squared pixel error.
pub fn mse(a: &RasterImage, b: &RasterImage) -> f64 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / PIXELS as f64
}

/// Mean absolute per-pixel difference.
pub fn mean_abs_diff(a: &RasterImage, b: &RasterImage) -> f64 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / PIXELS as f64
}

pub fn encode_gray_png(width: u32, height: u32, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_gray_png(data: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(Cursor::new(data));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png("expected 8-bit grayscale".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    /// Smallest integer pixel box `[x0, x1) x [y0, y1)` containing the rect,
    /// clipped to the image.
    pub fn pixel_bounds(&self) -> (usize, usize, usize, usize) {
        let clip = |v: f64, max: usize| v.clamp(0.0, max as f64);
        (
            clip(self.x0.floor(), WIDTH) as usize,
            clip(self.y0.floor(), HEIGHT) as usize,
            clip(self.x1.ceil(), WIDTH) as usize,
            clip(self.y1.ceil(), HEIGHT) as usize,
        )
    }

    fn grow(&self, by: f64) -> Rect {
        Rect {
            x0: self.x0 - by,
            y0: self.y0 - by,
            x1: self.x1 + by,
            y1: self.y1 + by,
        }
    }
}

/// A window or tree slot with its fade-in opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slot<T> {
    pub shape: T,
    pub opacity: f64,
}

/// Geometry derived from a parameter set. Shared by the rasterizer and by
/// region-level checks on rendered images.
#[derive(Clone, Debug)]
pub struct SceneLayout {
    pub pavement: Rect,
    pub kerb: Rect,
    pub garden: Rect,
    pub facade: Rect,
    pub bay: Rect,
    pub cornice: Rect,
    /// Bounding box of the pediment triangle.
    pub pediment_bounds: Rect,
    pub chimney: Rect,
    pub door: Rect,
    pub hedge: Rect,
    pub windows: Vec<Slot<Rect>>,
    /// `(center_x, center_y, radius)` per tree.
    pub trees: Vec<Slot<(f64, f64, f64)>>,
}

impl SceneLayout {
    /// Number of fully opaque windows.
    pub fn visible_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.opacity >= 1.0).count()
    }

    pub fn visible_trees(&self) -> usize {
        self.trees.iter().filter(|t| t.opacity >= 1.0).count()
    }
}

const PAVEMENT_TOP: f64 = 56.0;
const KERB_TOP: f64 = 54.0;
const FACADE_X0: f64 = 10.0;
const FACADE_X1: f64 = 54.0;
const FLOOR_HEIGHT: f64 = 11.0;
const PEDIMENT_HEIGHT: f64 = 8.0;
const TREE_SLOTS: [f64; 4] = [9.0, 23.0, 41.0, 55.0];
const WINDOW_COL_SLOTS: usize = 5;
const WINDOW_ROW_SLOTS: usize = 3;
/// Width of the opacity ramp around each count threshold.
const COUNT_FADE: f64 = 0.1;

/// Opacity of the `k`-th counted item (0-based) for a continuous count
/// `value`: 1 when `round(value) > k`, 0 when `round(value) <= k`, with a
/// linear ramp of width [`COUNT_FADE`] centered on `k + 0.5`.
pub fn count_opacity(value: f64, k: usize) -> f64 {
    ((value - (k as f64 + 0.5)) / COUNT_FADE + 0.5).clamp(0.0, 1.0)
}

impl SceneLayout {
    pub fn new(p: &SceneParams) -> Self {
        let garden_h = 3.0 + 15.0 * p.garden_depth;
        let garden_top = KERB_TOP - garden_h;
        let facade_top = garden_top - FLOOR_HEIGHT * p.floors;
        let facade = Rect {
            x0: FACADE_X0,
            y0: facade_top,
            x1: FACADE_X1,
            y1: garden_top,
        };
        let facade_w = FACADE_X1 - FACADE_X0;
        let facade_h = garden_top - facade_top;

        // Fixed slots: adding a window never moves the others. Window size
        // follows the continuous parameter.
        let slot_w = facade_w / WINDOW_COL_SLOTS as f64;
        let usable_h = facade_h - 2.0;
        let slot_h = usable_h / WINDOW_ROW_SLOTS as f64;
        let win_w = slot_w * (0.6 - 0.2 * (p.window_cols - 2.0) / 3.0);
        let win_h = slot_h * (0.6 - 0.2 * (p.window_rows - 1.0) / 2.0);
        let mut windows = Vec::with_capacity(WINDOW_ROW_SLOTS * WINDOW_COL_SLOTS);
        for r in 0..WINDOW_ROW_SLOTS {
            let row_op = count_opacity(p.window_rows, r);
            if row_op <= 0.0 {
                continue;
            }
            // rows fill from the ground floor up
            let cy = garden_top - (r as f64 + 0.5) * slot_h;
            for c in 0..WINDOW_COL_SLOTS {
                let opacity = row_op * count_opacity(p.window_cols, c);
                if opacity <= 0.0 {
                    continue;
                }
                let cx = FACADE_X0 + (c as f64 + 0.5) * slot_w;
                windows.push(Slot {
                    shape: Rect {
                        x0: cx - 0.5 * win_w,
                        y0: cy - 0.5 * win_h,
                        x1: cx + 0.5 * win_w,
                        y1: cy + 0.5 * win_h,
                    },
                    opacity,
                });
            }
        }

        let radius = 3.0 + 0.75 * p.tree_count;
        let trees = TREE_SLOTS
            .iter()
            .enumerate()
            .filter_map(|(k, &cx)| {
                let opacity = count_opacity(p.tree_count, k);
                (opacity > 0.0).then_some(Slot {
                    shape: (cx, garden_top - 1.0, radius),
                    opacity,
                })
            })
            .collect();

        let door_x0 = FACADE_X0 + 0.5 * facade_w - 2.0;
        let door_h = 8.0f64.min(facade_h - 1.0);
        let hedge_h = p.hedge_height * garden_h;
        let chimney_h = 1.0 + 6.0 * p.chimney;

        SceneLayout {
            pavement: Rect {
                x0: 0.0,
                y0: PAVEMENT_TOP,
                x1: WIDTH as f64,
                y1: HEIGHT as f64,
            },
            kerb: Rect {
                x0: 0.0,
                y0: KERB_TOP,
                x1: WIDTH as f64,
                y1: PAVEMENT_TOP,
            },
            garden: Rect {
                x0: 0.0,
                y0: garden_top,
                x1: WIDTH as f64,
                y1: KERB_TOP,
            },
            facade,
            bay: Rect {
                x0: FACADE_X0 + 3.0,
                y0: facade_top + 1.5,
                x1: FACADE_X0 + 15.0,
                y1: garden_top,
            },
            cornice: Rect {
                x0: FACADE_X0,
                y0: facade_top,
                x1: FACADE_X1,
                y1: facade_top + 1.5,
            },
            pediment_bounds: Rect {
                x0: FACADE_X0,
                y0: facade_top - PEDIMENT_HEIGHT,
                x1: FACADE_X1,
                y1: facade_top,
            },
            chimney: Rect {
                x0: FACADE_X1 - 10.0,
                y0: facade_top - chimney_h,
                x1: FACADE_X1 - 6.0,
                y1: facade_top,
            },
            door: Rect {
                x0: door_x0,
                y0: garden_top - door_h,
                x1: door_x0 + 4.0,
                y1: garden_top,
            },
            hedge: Rect {
                x0: 0.0,
                y0: KERB_TOP - hedge_h,
                x1: WIDTH as f64,
                y1: KERB_TOP,
            },
            windows,
            trees,
        }
    }
}

/// Coverage of the pixel centered at `c` by the interval `[a, b]` whose
/// edges are softened into linear ramps of width `feather`. With
/// `feather = 1` this is exact box-filter coverage for intervals at least
/// one pixel wide.
fn ramp(a: f64, b: f64, c: f64, feather: f64) -> f64 {
    (((c - a).min(b - c)) / feather + 0.5).clamp(0.0, 1.0)
}

struct Canvas {
    px: Vec<f64>,
}

impl Canvas {
    #[inline]
    fn blend(&mut self, x: usize, y: usize, value: f64, weight: f64) {
        if weight <= 0.0 {
            return;
        }
        let p = &mut self.px[y * WIDTH + x];
        *p += (value - *p) * weight.min(1.0);
    }

    fn fill_rect(&mut self, r: &Rect, value: f64, alpha: f64, feather: f64) {
        self.fill_rect_with(r, alpha, feather, |_, _| value);
    }

    fn fill_rect_with(
        &mut self,
        r: &Rect,
        alpha: f64,
        feather: f64,
        value: impl Fn(usize, usize) -> f64,
    ) {
        if alpha <= 0.0 {
            return;
        }
        let (bx0, by0, bx1, by1) = r.grow(0.5 * feather).pixel_bounds();
        let mut col = [0.0f64; WIDTH];
        for (x, slot) in col.iter_mut().enumerate().take(bx1).skip(bx0) {
            *slot = ramp(r.x0, r.x1, x as f64 + 0.5, feather);
        }
        for y in by0..by1 {
            let cy = ramp(r.y0, r.y1, y as f64 + 0.5, feather) * alpha;
            if cy <= 0.0 {
                continue;
            }
            for (x, cx) in col.iter().enumerate().take(bx1).skip(bx0) {
                self.blend(x, y, value(x, y), cy * cx);
            }
        }
    }

    /// Isosceles triangle with base `[x0, x1]` at `base_y` and apex `height`
    /// pixels above, edges anti-aliased by signed distance.
    fn fill_gable(&mut self, x0: f64, x1: f64, base_y: f64, height: f64, value: f64, alpha: f64) {
        if alpha <= 0.0 {
            return;
        }
        let apex_y = base_y - height;
        let cx = 0.5 * (x0 + x1);
        let half = 0.5 * (x1 - x0);
        let slope_norm = (height * height + half * half).sqrt();
        let y_start = apex_y.floor().max(0.0) as usize;
        let y_end = base_y.ceil().clamp(0.0, HEIGHT as f64) as usize;
        let xs = x0.floor().max(0.0) as usize;
        let xe = x1.ceil().clamp(0.0, WIDTH as f64) as usize;
        for y in y_start..y_end {
            let py = y as f64 + 0.5;
            let d_base = base_y - py;
            for x in xs..xe {
                let px = x as f64 + 0.5;
                // distance inside the slanted edges
                let d_slant = (half * (py - apex_y) - height * (px - cx).abs()) / slope_norm;
                let cov = (d_base.min(d_slant) + 0.5).clamp(0.0, 1.0);
                self.blend(x, y, value, cov * alpha);
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, value: f64, alpha: f64) {
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let x1 = (cx + r + 1.0).ceil().clamp(0.0, WIDTH as f64) as usize;
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let y1 = (cy + r + 1.0).ceil().clamp(0.0, HEIGHT as f64) as usize;
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let d = (dx * dx + dy * dy).sqrt();
                self.blend(x, y, value, (r - d + 0.5).clamp(0.0, 1.0) * alpha);
            }
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

pub fn facade_brightness(facade_tone: f64) -> f64 {
    0.22 + 0.62 * facade_tone
}

pub const HEDGE_VALUE: f64 = 0.32;

const WINDOW_FEATHER: f64 = 2.0;

pub fn render(p: &SceneParams) -> RasterImage {
    let layout = SceneLayout::new(p);
    let mut c = Canvas {
        px: vec![0.70 + 0.25 * p.sky_tone; PIXELS],
    };

    let roof = 0.12 + 0.5 * p.roof_tone;
    let facade_v = facade_brightness(p.facade_tone);
    let f = layout.facade;

    c.fill_gable(f.x0, f.x1, f.y0, PEDIMENT_HEIGHT, roof, p.pediment);
    c.fill_rect(&layout.chimney, 0.30, 1.0, 1.0);
    // brick courses on fixed image rows so they never shift with geometry
    let course = facade_v * (1.0 - 0.35 * p.masonry);
    c.fill_rect_with(&f, 1.0, 1.0, |_, y| if y % 3 == 0 { course } else { facade_v });
    c.fill_rect(&layout.bay, facade_v * 0.6, 0.4 * p.bay_window, 1.0);
    c.fill_rect(&layout.cornice, roof, 1.0, 1.0);

    let frame_v = lerp(facade_v, 0.95, p.window_frame);
    for w in &layout.windows {
        c.fill_rect(&w.shape.grow(1.0), frame_v, w.opacity, WINDOW_FEATHER);
        c.fill_rect(&w.shape, 0.14, w.opacity, WINDOW_FEATHER);
    }
    c.fill_rect(&layout.door, 0.18, 1.0, WINDOW_FEATHER);

    c.fill_rect(&layout.garden, 0.50, 1.0, 1.0);
    for t in &layout.trees {
        let (cx, cy, r) = t.shape;
        let trunk = Rect {
            x0: cx - 1.0,
            y0: cy,
            x1: cx + 1.0,
            y1: KERB_TOP,
        };
        c.fill_rect(&trunk, 0.20, t.opacity, 1.0);
        c.fill_disc(cx, cy, r, 0.28, t.opacity);
    }
    c.fill_rect(&layout.hedge, HEDGE_VALUE, 1.0, 1.0);
    c.fill_rect(&layout.kerb, 0.30 + 0.5 * p.kerb_tone, 1.0, 1.0);

    let q = p.pavement_quality;
    let top = PAVEMENT_TOP as usize;
    c.fill_rect_with(&layout.pavement, 1.0, 1.0, |x, y| {
        let row = (y - top) / 4;
        let shift = if row % 2 == 1 { 2 } else { 0 };
        let mortar = (x + shift) % 4 == 0 || (y - top) % 4 == 0;
        if mortar {
            0.42 - 0.25 * q
        } else {
            0.42 + 0.10 * q
        }
    });

    RasterImage {
        pixels: c.px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

/// `render(decode_params(z))`.
pub fn generate(z: &LatentCode, constants: &GeneratorConstants) -> Result<RasterImage> {
    Ok(render(&decode_params(z, constants)?))
}
