//! Latent walks along boundary normals and the grid figures built from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::scenegen::{self, GeneratorConstants, RasterImage, HEIGHT, WIDTH};
use crate::semantics::{check_orthogonal, SemanticBoundary, ORTHOGONALITY_TOL};
use crate::store;
use crate::world::Dimension;

pub const DEFAULT_ALPHA_MAX: f64 = 3.0;
pub const DEFAULT_STEPS: usize = 7;
/// Width of the separator lines between grid cells.
pub const SEPARATOR: usize = 2;
pub const SEPARATOR_VALUE: u8 = 255;
/// Largest decision-value change tolerated along a conditioned direction.
pub const DRIFT_TOL: f64 = 1e-8;

/// Default row order of the single-image grid.
pub const SINGLE_IMAGE_ROWS: [Dimension; 3] = [Dimension::Health, Dimension::Income, Dimension::Education];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    pub steps: usize,
    pub alpha_max: f64,
    pub dimensions: Vec<Dimension>,
}

impl Default for WalkSpec {
    fn default() -> Self {
        WalkSpec {
            steps: DEFAULT_STEPS,
            alpha_max: DEFAULT_ALPHA_MAX,
            dimensions: SINGLE_IMAGE_ROWS.to_vec(),
        }
    }
}

impl WalkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 3 || self.steps % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "walk steps must be odd and at least 3, got {}",
                self.steps
            )));
        }
        if !(self.alpha_max > 0.0) || !self.alpha_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha_max must be positive, got {}",
                self.alpha_max
            )));
        }
        Ok(())
    }

    /// Symmetric grid from `-alpha_max` to `alpha_max`; the center is exactly 0.
    pub fn alphas(&self) -> Vec<f64> {
        let half = (self.steps / 2) as i64;
        (-half..=half)
            .map(|k| self.alpha_max * k as f64 / half as f64)
            .collect()
    }
}

/// `z + alpha * n`.
pub fn walk(z: &LatentCode, n: &LatentCode, alpha: f64) -> Result<LatentCode> {
    z.add_scaled(n, alpha)
}

pub fn find(boundaries: &[SemanticBoundary], dim: Dimension) -> Result<&SemanticBoundary> {
    boundaries
        .iter()
        .find(|b| b.dimension == dim)
        .ok_or_else(|| Error::Unknown {
            kind: "boundary",
            name: dim.to_string(),
        })
}

/// `z + sum(alpha_d * n_d)` over a mutually orthogonal boundary set.
///
/// Terms are added in the boundary set's order, so the result does not
/// depend on how `alphas` was assembled. Zero alphas add nothing.
pub fn condition(
    z: &LatentCode,
    alphas: &BTreeMap<Dimension, f64>,
    boundaries: &[SemanticBoundary],
) -> Result<LatentCode> {
    let normals: Vec<LatentCode> = boundaries.iter().map(|b| b.normal.clone()).collect();
    check_orthogonal(&normals, ORTHOGONALITY_TOL)?;
    for dim in alphas.keys() {
        find(boundaries, *dim)?;
    }
    let mut out = z.clone();
    for b in boundaries {
        match alphas.get(&b.dimension) {
            Some(&a) if a != 0.0 => out = walk(&out, &b.normal, a)?,
            _ => {}
        }
    }
    Ok(out)
}

/// Image for `z` edited by `alphas`.
pub fn render_edit(
    z: &LatentCode,
    alphas: &BTreeMap<Dimension, f64>,
    boundaries: &[SemanticBoundary],
    constants: &GeneratorConstants,
) -> Result<RasterImage> {
    scenegen::generate(&condition(z, alphas, boundaries)?, constants)
}

/// 8-bit grayscale canvas of arbitrary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    pub bytes: Vec<u8>,
}

impl GridImage {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        scenegen::encode_gray_png(self.width as u32, self.height as u32, &self.bytes)
    }

    /// Pixels of cell `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> Vec<u8> {
        let (x0, y0) = cell_origin(row, col);
        let mut out = Vec::with_capacity(WIDTH * HEIGHT);
        for y in 0..HEIGHT {
            let start = (y0 + y) * self.width + x0;
            out.extend_from_slice(&self.bytes[start..start + WIDTH]);
        }
        out
    }
}

fn cell_origin(row: usize, col: usize) -> (usize, usize) {
    (
        SEPARATOR + col * (WIDTH + SEPARATOR),
        SEPARATOR + row * (HEIGHT + SEPARATOR),
    )
}

fn compose(rows: usize, cols: usize, cells: &[RasterImage]) -> GridImage {
    let width = cols * (WIDTH + SEPARATOR) + SEPARATOR;
    let height = rows * (HEIGHT + SEPARATOR) + SEPARATOR;
    let mut bytes = vec![SEPARATOR_VALUE; width * height];
    for (i, cell) in cells.iter().enumerate() {
        let (x0, y0) = cell_origin(i / cols, i % cols);
        let px = cell.to_bytes();
        for y in 0..HEIGHT {
            let start = (y0 + y) * width + x0;
            bytes[start..start + WIDTH].copy_from_slice(&px[y * WIDTH..(y + 1) * WIDTH]);
        }
    }
    GridImage {
        width,
        height,
        bytes,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Rows are dimensions applied to one base latent.
    SingleImage,
    /// Rows are base latents edited along one dimension.
    MultiImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    /// Index into the manifest's base latents.
    pub base: usize,
    pub alphas: BTreeMap<Dimension, f64>,
    /// Relative path of the cell PNG.
    pub image: String,
    pub sha256: String,
    pub x: usize,
    pub y: usize,
    /// Decision value of every boundary at the edited latent.
    pub decision_values: BTreeMap<Dimension, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub kind: GridKind,
    pub rows: usize,
    pub cols: usize,
    pub row_labels: Vec<String>,
    pub alphas: Vec<f64>,
    pub cell_width: usize,
    pub cell_height: usize,
    pub separator: usize,
    pub base_latents: Vec<LatentCode>,
    pub conditioning_order: Vec<Dimension>,
    /// Largest change, across any row, of a boundary's decision value when
    /// walking along another boundary's direction.
    pub max_cross_drift: f64,
    pub cells: Vec<GridCell>,
    pub grid_sha256: String,
}

/// A rendered grid with its cells kept for writing.
#[derive(Clone, Debug)]
pub struct Grid {
    pub image: GridImage,
    pub manifest: GridManifest,
    pub cells: Vec<RasterImage>,
}

struct CellPlan {
    row: usize,
    col: usize,
    base: usize,
    alphas: BTreeMap<Dimension, f64>,
}

fn build_grid(
    kind: GridKind,
    row_labels: Vec<String>,
    zs: &[LatentCode],
    plans: Vec<CellPlan>,
    alphas: Vec<f64>,
    boundaries: &[SemanticBoundary],
    constants: &GeneratorConstants,
) -> Result<Grid> {
    let rows = row_labels.len();
    let cols = alphas.len();
    let mut cells = Vec::with_capacity(plans.len());
    let mut records = Vec::with_capacity(plans.len());
    let mut drift: f64 = 0.0;
    for plan in plans {
        let base = &zs[plan.base];
        let edited = condition(base, &plan.alphas, boundaries)?;
        let image = scenegen::generate(&edited, constants)?;
        let mut decision_values = BTreeMap::new();
        for b in boundaries {
            let v = b.decision(&edited)?;
            if !plan.alphas.contains_key(&b.dimension) {
                drift = drift.max((v - b.decision(base)?).abs());
            }
            decision_values.insert(b.dimension, v);
        }
        let (x, y) = cell_origin(plan.row, plan.col);
        records.push(GridCell {
            row: plan.row,
            col: plan.col,
            base: plan.base,
            alphas: plan.alphas,
            image: format!("cells/r{}_c{}.png", plan.row, plan.col),
            sha256: store::sha256_hex(&image.to_png()?),
            x,
            y,
            decision_values,
        });
        cells.push(image);
    }
    if drift > DRIFT_TOL {
        return Err(Error::NonOrthogonal {
            dot: drift,
            tolerance: DRIFT_TOL,
        });
    }
    let image = compose(rows, cols, &cells);
    let manifest = GridManifest {
        kind,
        rows,
        cols,
        row_labels,
        alphas,
        cell_width: WIDTH,
        cell_height: HEIGHT,
        separator: SEPARATOR,
        base_latents: zs.to_vec(),
        conditioning_order: boundaries.iter().map(|b| b.dimension).collect(),
        max_cross_drift: drift,
        cells: records,
        grid_sha256: store::sha256_hex(&image.to_png()?),
    };
    Ok(Grid {
        image,
        manifest,
        cells,
    })
}

/// One base latent; row `d` walks along dimension `d`'s normal.
pub fn render_matrix_single_image(
    z: &LatentCode,
    boundaries: &[SemanticBoundary],
    spec: &WalkSpec,
    constants: &GeneratorConstants,
) -> Result<Grid> {
    spec.validate()?;
    if spec.dimensions.is_empty() {
        return Err(Error::EmptyInput("grid dimensions"));
    }
    let alphas = spec.alphas();
    let mut plans = Vec::new();
    for (row, &dim) in spec.dimensions.iter().enumerate() {
        find(boundaries, dim)?;
        for (col, &a) in alphas.iter().enumerate() {
            plans.push(CellPlan {
                row,
                col,
                base: 0,
                alphas: BTreeMap::from([(dim, a)]),
            });
        }
    }
    let labels = spec.dimensions.iter().map(|d| d.to_string()).collect();
    build_grid(
        GridKind::SingleImage,
        labels,
        std::slice::from_ref(z),
        plans,
        alphas,
        boundaries,
        constants,
    )
}

/// Row `i` walks base latent `zs[i]` along `dimension`.
pub fn render_matrix_multi_image(
    zs: &[LatentCode],
    dimension: Dimension,
    boundaries: &[SemanticBoundary],
    spec: &WalkSpec,
    constants: &GeneratorConstants,
) -> Result<Grid> {
    spec.validate()?;
    if zs.is_empty() {
        return Err(Error::EmptyInput("grid base latents"));
    }
    find(boundaries, dimension)?;
    let alphas = spec.alphas();
    let mut plans = Vec::new();
    for row in 0..zs.len() {
        for (col, &a) in alphas.iter().enumerate() {
            plans.push(CellPlan {
                row,
                col,
                base: row,
                alphas: BTreeMap::from([(dimension, a)]),
            });
        }
    }
    let labels = (0..zs.len()).map(|i| format!("{dimension} #{i}")).collect();
    build_grid(
        GridKind::MultiImage,
        labels,
        zs,
        plans,
        alphas,
        boundaries,
        constants,
    )
}

/// Re-renders one cell from its manifest entry.
pub fn rerender_cell(
    manifest: &GridManifest,
    cell: &GridCell,
    boundaries: &[SemanticBoundary],
    constants: &GeneratorConstants,
) -> Result<RasterImage> {
    render_edit(&manifest.base_latents[cell.base], &cell.alphas, boundaries, constants)
}

/// Writes `grid.png`, `grid.json` and `cells/` under `dir`.
pub fn write_grid(grid: &Grid, dir: &Path) -> Result<()> {
    store::write_bytes(&dir.join("grid.png"), &grid.image.to_png()?)?;
    for (cell, image) in grid.manifest.cells.iter().zip(&grid.cells) {
        store::write_bytes(&dir.join(&cell.image), &image.to_png()?)?;
    }
    store::write_json(&dir.join("grid.json"), &grid.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{MetricsReport, SolverInfo};
    use crate::latent::latent_for_seed;
    use crate::semantics::LatentSource;

    fn boundary(dim: Dimension, axis: usize) -> SemanticBoundary {
        let n = LatentCode::basis(16, axis);
        SemanticBoundary {
            dimension: dim,
            normal: n.clone(),
            offset: 0.1 * axis as f64,
            conditioned_against: Vec::new(),
            raw_normal: n,
            raw_offset: 0.0,
            latent_source: LatentSource::HiddenTrue,
            train_metrics: MetricsReport::from_counts(1, 0, 1, 0),
            metrics: None,
            solver: SolverInfo {
                c: 1.0,
                tol: 1e-6,
                max_iter: 1,
                step0: 1.0,
                window: 1,
                iterations: 0,
                objective: 0.0,
                converged: true,
            },
        }
    }

    fn set() -> Vec<SemanticBoundary> {
        vec![
            boundary(Dimension::Income, 0),
            boundary(Dimension::Education, 3),
            boundary(Dimension::Health, 7),
        ]
    }

    #[test]
    fn alpha_grid_is_symmetric() {
        let spec = WalkSpec::default();
        let a = spec.alphas();
        assert_eq!(a.len(), 7);
        assert_eq!(a[3], 0.0);
        for i in 0..7 {
            assert_eq!(a[i], -a[6 - i]);
        }
        assert_eq!(a[0], -3.0);
        assert!(WalkSpec { steps: 4, ..spec.clone() }.validate().is_err());
        assert!(WalkSpec { steps: 1, ..spec.clone() }.validate().is_err());
        assert!(WalkSpec { alpha_max: 0.0, ..spec }.validate().is_err());
    }

    #[test]
    fn walk_identities() {
        let z = latent_for_seed(4, 0.5, 16).unwrap();
        let n = LatentCode::basis(16, 2);
        assert_eq!(walk(&z, &n, 0.0).unwrap(), z);
        assert!((walk(&z, &n, -2.5).unwrap().distance(&z).unwrap() - 2.5).abs() < 1e-12);
        let twice = walk(&walk(&z, &n, 0.75).unwrap(), &n, 1.5).unwrap();
        let once = walk(&z, &n, 2.25).unwrap();
        assert!(twice.distance(&once).unwrap() <= 1e-12);
    }

    #[test]
    fn condition_reduces_commutes_and_inverts() {
        let z = latent_for_seed(9, 0.5, 16).unwrap();
        let b = set();
        let one = BTreeMap::from([(Dimension::Health, 1.5)]);
        assert_eq!(condition(&z, &one, &b).unwrap(), walk(&z, &b[2].normal, 1.5).unwrap());
        let mut ab = BTreeMap::new();
        ab.insert(Dimension::Income, 1.0);
        ab.insert(Dimension::Health, 1.0);
        let mut ba = BTreeMap::new();
        ba.insert(Dimension::Health, 1.0);
        ba.insert(Dimension::Income, 1.0);
        let fwd = condition(&z, &ab, &b).unwrap();
        assert_eq!(fwd, condition(&z, &ba, &b).unwrap());
        let back = BTreeMap::from([(Dimension::Income, -1.0), (Dimension::Health, -1.0)]);
        assert!(condition(&fwd, &back, &b).unwrap().distance(&z).unwrap() <= 1e-12);
    }

    #[test]
    fn condition_rejects_non_orthogonal() {
        let mut b = set();
        b[1].normal = LatentCode::new({
            let mut v = vec![0.0; 16];
            v[0] = 0.6;
            v[3] = 0.8;
            v
        })
        .unwrap();
        let z = LatentCode::zeros(16);
        assert!(matches!(
            condition(&z, &BTreeMap::new(), &b),
            Err(Error::NonOrthogonal { .. })
        ));
    }

    #[test]
    fn single_image_grid_center_column() {
        let c = GeneratorConstants::shipped();
        let z = latent_for_seed(1, 0.5, 16).unwrap();
        let spec = WalkSpec {
            steps: 5,
            ..WalkSpec::default()
        };
        let g = render_matrix_single_image(&z, &set(), &spec, &c).unwrap();
        assert_eq!(g.manifest.rows, 3);
        assert_eq!(g.manifest.cells.len(), 15);
        let centers: Vec<&GridCell> = g.manifest.cells.iter().filter(|c| c.col == 2).collect();
        assert!(centers.iter().all(|c| c.sha256 == centers[0].sha256));
        assert_eq!(g.image.cell(1, 2), g.image.cell(0, 2));
        assert_eq!(g.manifest.row_labels, vec!["health", "income", "education"]);
        assert!(g.manifest.max_cross_drift <= DRIFT_TOL);
    }

    #[test]
    fn multi_image_rows_and_cells() {
        let c = GeneratorConstants::shipped();
        let z0 = latent_for_seed(1, 0.5, 16).unwrap();
        let z1 = latent_for_seed(2, 0.5, 16).unwrap();
        let spec = WalkSpec {
            steps: 5,
            ..WalkSpec::default()
        };
        let b = set();
        let g = render_matrix_multi_image(&[z0.clone(), z1, z0], Dimension::Health, &b, &spec, &c).unwrap();
        assert_eq!(g.manifest.cells.len(), 15);
        for col in 0..5 {
            assert_eq!(g.image.cell(0, col), g.image.cell(2, col));
        }
        for (cell, image) in g.manifest.cells.iter().zip(&g.cells) {
            let again = rerender_cell(&g.manifest, cell, &b, &c).unwrap();
            assert_eq!(again.to_png().unwrap(), image.to_png().unwrap());
        }
        assert_eq!(
            g.image.cell(1, 2),
            scenegen::generate(&g.manifest.base_latents[1], &c).unwrap().to_bytes()
        );
    }

    #[test]
    fn unknown_dimension_in_spec() {
        let c = GeneratorConstants::shipped();
        let b = vec![boundary(Dimension::Income, 0), boundary(Dimension::Health, 1)];
        let spec = WalkSpec::default();
        assert!(render_matrix_single_image(&LatentCode::zeros(16), &b, &spec, &c).is_err());
    }
}
