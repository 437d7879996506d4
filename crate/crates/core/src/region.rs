//! Decision-region maps on a 2-D plane through one input, spanned by two random
//! Rademacher (±1) directions.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::{scores_batched, EVAL_BATCH};
use crate::nn::Classifier;
use crate::tensor::{argmax, Tensor};

pub const DEFAULT_RESOLUTION: usize = 51;
pub const DEFAULT_EXTENT: f64 = 2.0;
pub const DEFAULT_CELL_SIZE: u32 = 4;

/// tab10; class `k` uses entry `k mod 10`.
pub const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// i.i.d. ±1 entries, deterministic per seed.
pub fn sample_rademacher(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Where and how finely to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub center: Vec<f64>,
    pub input_shape: [usize; 3],
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub extent: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl Plane {
    /// Both directions come from one stream seeded by `seed`.
    pub fn random(center: &Tensor, seed: u64, extent: f64, resolution: usize) -> Result<Self> {
        let d = center.len();
        let both = sample_rademacher(2 * d, seed);
        Self::with_directions(center, both[..d].to_vec(), both[d..].to_vec(), seed, extent, resolution)
    }

    pub fn with_directions(
        center: &Tensor,
        v1: Vec<f64>,
        v2: Vec<f64>,
        seed: u64,
        extent: f64,
        resolution: usize,
    ) -> Result<Self> {
        let input_shape = sample_shape(center)?;
        if v1.len() != center.len() || v2.len() != center.len() {
            return Err(Error::input(format!(
                "directions have {} and {} entries; the input has {}",
                v1.len(),
                v2.len(),
                center.len()
            )));
        }
        if v1.iter().chain(&v2).any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::input("direction entries must be +1 or -1"));
        }
        if !(extent >= 0.0 && extent.is_finite()) {
            return Err(Error::input(format!("extent must be a finite non-negative number (got {extent})")));
        }
        if resolution < 3 || resolution.is_multiple_of(2) {
            return Err(Error::input(format!(
                "resolution must be odd and >= 3 so a center cell exists (got {resolution})"
            )));
        }
        Ok(Self { center: center.data().to_vec(), input_shape, v1, v2, extent, resolution, seed })
    }

    /// `extent · (2i/(res−1) − 1)`; the middle index gives exactly 0.
    pub fn coordinate(&self, i: usize) -> f64 {
        self.extent * (2.0 * i as f64 / (self.resolution - 1) as f64 - 1.0)
    }

    /// Input at cell `(i, j)`: `center + a_i·v1/√d + b_j·v2/√d`.
    pub fn point(&self, i: usize, j: usize) -> Vec<f64> {
        let scale = 1.0 / (self.center.len() as f64).sqrt();
        let (a, b) = (self.coordinate(i) * scale, self.coordinate(j) * scale);
        self.center.iter().zip(&self.v1).zip(&self.v2).map(|((c, x), y)| c + a * x + b * y).collect()
    }
}

fn sample_shape(center: &Tensor) -> Result<[usize; 3]> {
    match *center.shape() {
        [c, h, w] | [1, c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::input(format!("center must be one C×H×W sample, got shape {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub plane: Plane,
    /// `labels[i][j]`: row `i` follows `v1`, column `j` follows `v2`.
    pub labels: Vec<Vec<usize>>,
    pub num_classes: usize,
    pub model_fingerprint: String,
}

pub fn compute_grid(model: &dyn Classifier, plane: &Plane) -> Result<RegionGrid> {
    if model.input_shape() != plane.input_shape {
        return Err(Error::input(format!(
            "plane lives in {:?} inputs; the model takes {:?}",
            plane.input_shape,
            model.input_shape()
        )));
    }
    let res = plane.resolution;
    let mut data = Vec::with_capacity(res * res * plane.center.len());
    for i in 0..res {
        for j in 0..res {
            data.extend(plane.point(i, j));
        }
    }
    let [c, h, w] = plane.input_shape;
    let inputs = Tensor::new(vec![res * res, c, h, w], data)?;
    let scores = scores_batched(model, &inputs, EVAL_BATCH)?;
    let labels = (0..res).map(|i| (0..res).map(|j| argmax(scores.row(i * res + j))).collect()).collect();
    Ok(RegionGrid { plane: plane.clone(), labels, num_classes: model.num_classes(), model_fingerprint: model.fingerprint() })
}

impl RegionGrid {
    pub fn center_label(&self) -> usize {
        let m = self.plane.resolution / 2;
        self.labels[m][m]
    }

    /// Label changes between 4-adjacent cells.
    pub fn roughness(&self) -> usize {
        let l = &self.labels;
        let n = l.len();
        let mut changes = 0;
        for i in 0..n {
            for j in 0..n {
                if i + 1 < n && l[i][j] != l[i + 1][j] {
                    changes += 1;
                }
                if j + 1 < n && l[i][j] != l[i][j + 1] {
                    changes += 1;
                }
            }
        }
        changes
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            seed: self.plane.seed,
            extent: self.plane.extent,
            resolution: self.plane.resolution,
            num_classes: self.num_classes,
            fingerprint: self.model_fingerprint.clone(),
        }
    }

    /// Metadata line followed by one space-separated row per `i`.
    pub fn to_text(&self) -> String {
        let mut out = self.header().to_line();
        out.push('\n');
        for row in &self.labels {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn to_image(&self, cell_size: u32) -> RgbImage {
        labels_image(&self.labels, cell_size)
    }
}

/// Square label matrix as an image, `cell_size` pixels per cell.
pub fn labels_image(labels: &[Vec<usize>], cell_size: u32) -> RgbImage {
    let res = labels.len() as u32;
    RgbImage::from_fn(res * cell_size, res * cell_size, |x, y| {
        let (i, j) = ((y / cell_size) as usize, (x / cell_size) as usize);
        Rgb(PALETTE[labels[i][j] % PALETTE.len()])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub seed: u64,
    pub extent: f64,
    pub resolution: usize,
    pub num_classes: usize,
    pub fingerprint: String,
}

impl GridHeader {
    pub fn to_line(&self) -> String {
        format!(
            "# seed={} extent={} resolution={} num_classes={} fingerprint={}",
            self.seed, self.extent, self.resolution, self.num_classes, self.fingerprint
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let body = line.strip_prefix("# ").ok_or_else(|| Error::input("grid header must start with '# '"))?;
        // the fingerprint is last and may contain spaces, so it takes the rest of the line
        let (body, fingerprint) =
            body.split_once(" fingerprint=").ok_or_else(|| Error::input("grid header lacks 'fingerprint'"))?;
        let mut fields = std::collections::HashMap::new();
        for f in body.split_whitespace() {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::input(format!("malformed header field '{f}'")))?;
            fields.insert(k, v);
        }
        fn field<T: std::str::FromStr>(fields: &std::collections::HashMap<&str, &str>, k: &str) -> Result<T> {
            let v = fields.get(k).ok_or_else(|| Error::input(format!("grid header lacks '{k}'")))?;
            v.parse().map_err(|_| Error::input(format!("grid header field {k}={v} is malformed")))
        }
        Ok(Self {
            seed: field(&fields, "seed")?,
            extent: field(&fields, "extent")?,
            resolution: field(&fields, "resolution")?,
            num_classes: field(&fields, "num_classes")?,
            fingerprint: fingerprint.to_string(),
        })
    }
}

/// Parses text written by [`RegionGrid::to_text`].
pub fn read_grid_text(text: &str) -> Result<(GridHeader, Vec<Vec<usize>>)> {
    let mut lines = text.lines();
    let header = GridHeader::parse(lines.next().ok_or_else(|| Error::input("empty grid file"))?)?;
    let labels: Vec<Vec<usize>> = lines
        .map(|l| l.split_whitespace().map(|v| v.parse().map_err(|_| Error::input(format!("bad label '{v}'")))).collect())
        .collect::<Result<_>>()?;
    if labels.len() != header.resolution || labels.iter().any(|r| r.len() != header.resolution) {
        return Err(Error::input(format!("grid body is not {0}×{0}", header.resolution)));
    }
    Ok((header, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    header: GridHeader,
    cell_size: u32,
    palette: Vec<[u8; 3]>,
    roughness: usize,
    center_label: usize,
}

/// Files written for one grid.
#[derive(Debug, Clone)]
pub struct ExportedGrid {
    pub text: PathBuf,
    pub image: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes `<stem>.txt`, `<stem>.png` and `<stem>.json` (palette and metadata).
pub fn export_grid(grid: &RegionGrid, dir: &Path, stem: &str, cell_size: u32) -> Result<ExportedGrid> {
    fs::create_dir_all(dir)?;
    let out = ExportedGrid {
        text: dir.join(format!("{stem}.txt")),
        image: dir.join(format!("{stem}.png")),
        sidecar: dir.join(format!("{stem}.json")),
    };
    fs::write(&out.text, grid.to_text())?;
    grid.to_image(cell_size.max(1)).save(&out.image)?;
    let sidecar = Sidecar {
        header: grid.header(),
        cell_size: cell_size.max(1),
        palette: PALETTE.to_vec(),
        roughness: grid.roughness(),
        center_label: grid.center_label(),
    };
    fs::write(&out.sidecar, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(out)
}

/// Errors unless every grid was computed on the same plane.
pub fn check_shared_plane(grids: &[&RegionGrid]) -> Result<()> {
    let Some(first) = grids.first() else { return Ok(()) };
    let a = &first.plane;
    for g in &grids[1..] {
        let b = &g.plane;
        let mut diffs = Vec::new();
        if a.seed != b.seed {
            diffs.push(format!("seed {} vs {}", a.seed, b.seed));
        }
        if a.extent != b.extent {
            diffs.push(format!("extent {} vs {}", a.extent, b.extent));
        }
        if a.resolution != b.resolution {
            diffs.push(format!("resolution {} vs {}", a.resolution, b.resolution));
        }
        if a.center != b.center {
            diffs.push("center input".into());
        }
        if a.v1 != b.v1 || a.v2 != b.v2 {
            diffs.push("directions".into());
        }
        if !diffs.is_empty() {
            return Err(Error::input(format!("grids are not on a shared plane: {}", diffs.join(", "))));
        }
    }
    Ok(())
}

/// Side-by-side panel image of grids on one plane, separated by white gutters.
pub fn comparison_image(grids: &[&RegionGrid], cell_size: u32) -> Result<RgbImage> {
    if grids.is_empty() {
        return Err(Error::input("no grids to compare"));
    }
    check_shared_plane(grids)?;
    let side = grids[0].plane.resolution as u32 * cell_size;
    let gutter = cell_size.max(2);
    let width = side * grids.len() as u32 + gutter * (grids.len() as u32 - 1);
    let mut img = RgbImage::from_pixel(width, side, Rgb([255, 255, 255]));
    for (k, g) in grids.iter().enumerate() {
        let panel = g.to_image(cell_size);
        image::imageops::replace(&mut img, &panel, (k as u32 * (side + gutter)) as i64, 0);
    }
    Ok(img)
}
