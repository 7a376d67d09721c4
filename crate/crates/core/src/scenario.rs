//! Problem instances: candidate sites, weighted targets, sensor model and
//! deployment budget, plus the generator for the three benchmark scales.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{DemGrid, Point3};

/// Instance file format identifier and version.
pub const INSTANCE_FORMAT: &str = "rishm-instance";
pub const INSTANCE_VERSION: u32 = 1;

/// Height of a sensor mast above the terrain surface (km).
pub const MAST_HEIGHT: f64 = 0.01;
/// Absolute altitudes of the three target layers (km).
pub const TARGET_LAYERS: [f64; 3] = [3.0, 10.0, 20.0];
/// Spread of the weight bump around the critical centre (km).
pub const WEIGHT_SIGMA: f64 = 10.0;
pub const DEFAULT_BUDGET_K: usize = 10;

/// Steepness and threshold parameters of the sigmoid membership functions.
///
/// Angles are in degrees, distances in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub beta_d: f64,
    pub beta_p: f64,
    pub beta_t: f64,
    pub t_d: f64,
    pub t_p: f64,
    pub t_t: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            beta_d: 1.0,
            beta_p: 0.15,
            beta_t: 0.15,
            t_d: 25.0,
            t_p: 40.0,
            t_t: 40.0,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_d, self.beta_p, self.beta_t, self.t_d, self.t_p, self.t_t];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("sensor parameters must all be positive"));
        }
        if self.t_p > 180.0 || self.t_t > 90.0 {
            return Err(Error::domain("angular thresholds exceed their ranges"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Point3,
    pub weight: f64,
}

/// Benchmark instance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    pub fn sites(self) -> usize {
        match self {
            Scale::Small => 25,
            Scale::Medium => 50,
            Scale::Large => 100,
        }
    }

    pub fn targets(self) -> usize {
        match self {
            Scale::Small => 300,
            Scale::Medium => 867,
            Scale::Large => 1875,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Small => "small",
            Scale::Medium => "medium",
            Scale::Large => "large",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            "large" => Ok(Scale::Large),
            other => Err(Error::domain(format!(
                "unknown scale `{other}` (expected small, medium or large)"
            ))),
        }
    }
}

/// One coverage optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    id: String,
    grid: DemGrid,
    sites: Vec<Point3>,
    targets: Vec<Target>,
    k: usize,
    params: SensorParams,
}

impl ScenarioInstance {
    pub fn new(
        id: impl Into<String>,
        grid: DemGrid,
        sites: Vec<Point3>,
        targets: Vec<Target>,
        k: usize,
        params: SensorParams,
    ) -> Result<Self> {
        params.validate()?;
        if sites.is_empty() || k == 0 || k > sites.len() {
            return Err(Error::domain(format!(
                "budget k={k} must satisfy 0 < k <= |Z| = {}",
                sites.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::domain("instance needs at least one target"));
        }
        for (i, s) in sites.iter().enumerate() {
            if !s.is_finite() || !grid.contains(s.x, s.y) {
                return Err(Error::domain(format!("site {i} lies outside the grid")));
            }
        }
        for (i, t) in targets.iter().enumerate() {
            if !t.position.is_finite() || !grid.contains(t.position.x, t.position.y) {
                return Err(Error::domain(format!("target {i} lies outside the grid")));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::domain(format!("target {i} has invalid weight {}", t.weight)));
            }
        }
        let total: f64 = targets.iter().map(|t| t.weight).sum();
        if total <= 0.0 {
            return Err(Error::domain("total target weight must be positive"));
        }
        Ok(ScenarioInstance {
            id: id.into(),
            grid,
            sites,
            targets,
            k,
            params,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn grid(&self) -> &DemGrid {
        &self.grid
    }

    pub fn sites(&self) -> &[Point3] {
        &self.sites
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &SensorParams {
        &self.params
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// Decision-space dimension: one binary and two angle genes per site.
    pub fn dimension(&self) -> usize {
        3 * self.sites.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.targets.iter().map(|t| t.weight).sum()
    }

    /// Same instance with sites reordered so that new site `j` is old site `perm[j]`.
    pub fn permute_sites(&self, perm: &[usize]) -> Result<Self> {
        crate::genome::check_permutation(perm, self.sites.len())?;
        let sites = perm.iter().map(|&j| self.sites[j]).collect();
        Ok(ScenarioInstance {
            sites,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> String {
        let doc = InstanceDoc::from_instance(self);
        let mut s = serde_json::to_string_pretty(&doc).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source_name: &str, base_dir: Option<&Path>) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)
            .map_err(|e| Error::parse(source_name, e.line(), e.to_string()))?;
        doc.into_instance(source_name, base_dir)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string(), path.parent())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GridSource {
    Inline(DemGrid),
    /// Path to an ESRI ASCII grid, relative to the instance file.
    EsriAscii(PathBuf),
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    format: String,
    version: u32,
    id: String,
    k: usize,
    params: SensorParams,
    grid: GridSource,
    sites: Vec<[f64; 3]>,
    /// `[x, y, z, weight]`
    targets: Vec<[f64; 4]>,
}

impl InstanceDoc {
    fn from_instance(inst: &ScenarioInstance) -> Self {
        InstanceDoc {
            format: INSTANCE_FORMAT.to_string(),
            version: INSTANCE_VERSION,
            id: inst.id.clone(),
            k: inst.k,
            params: inst.params,
            grid: GridSource::Inline(inst.grid.clone()),
            sites: inst.sites.iter().map(|p| [p.x, p.y, p.z]).collect(),
            targets: inst
                .targets
                .iter()
                .map(|t| [t.position.x, t.position.y, t.position.z, t.weight])
                .collect(),
        }
    }

    fn into_instance(self, source_name: &str, base_dir: Option<&Path>) -> Result<ScenarioInstance> {
        if self.format != INSTANCE_FORMAT {
            return Err(Error::parse(source_name, 1, format!("unexpected format `{}`", self.format)));
        }
        if self.version != INSTANCE_VERSION {
            return Err(Error::parse(
                source_name,
                1,
                format!("unsupported instance version {}", self.version),
            ));
        }
        let grid = match self.grid {
            GridSource::Inline(g) => DemGrid::new(
                g.origin(),
                g.cell_size(),
                g.rows(),
                g.cols(),
                g.elevations().to_vec(),
            )?,
            GridSource::EsriAscii(rel) => {
                let path = match base_dir {
                    Some(dir) if rel.is_relative() => dir.join(rel),
                    _ => rel,
                };
                DemGrid::read_esri_ascii(&path)?
            }
        };
        let sites = self.sites.iter().map(|s| Point3::new(s[0], s[1], s[2])).collect();
        let targets = self
            .targets
            .iter()
            .map(|t| Target {
                position: Point3::new(t[0], t[1], t[2]),
                weight: t[3],
            })
            .collect();
        ScenarioInstance::new(self.id, grid, sites, targets, self.k, self.params)
    }
}

/// Lattice of `n` points over the rectangle, as close to square as possible.
fn layer_lattice(n: usize, x0: f64, y0: f64, width: f64, height: f64) -> Vec<(f64, f64)> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut out = Vec::with_capacity(n);
    'outer: for r in 0..rows {
        for c in 0..cols {
            if out.len() == n {
                break 'outer;
            }
            out.push((
                x0 + (c as f64 + 0.5) * width / cols as f64,
                y0 + (r as f64 + 0.5) * height / rows as f64,
            ));
        }
    }
    out
}

/// Builds a benchmark instance of the given scale on `grid`.
///
/// Sites are placed uniformly at random on the surface with a mast, targets
/// sit on square-ish lattices over the three altitude layers, and weights form
/// a Gaussian bump (peak 5, floor 1) around a random critical centre.
pub fn generate_instance(seed: u64, scale: Scale, grid: &DemGrid) -> Result<ScenarioInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5ce7_a710);
    let (x0, y0) = grid.origin();
    let (w, h) = (grid.width(), grid.height());

    let mut sites = Vec::with_capacity(scale.sites());
    for _ in 0..scale.sites() {
        let x = x0 + rng.random::<f64>() * w;
        let y = y0 + rng.random::<f64>() * h;
        sites.push(Point3::new(x, y, grid.elevation_at(x, y)? + MAST_HEIGHT));
    }

    let center = (x0 + rng.random::<f64>() * w, y0 + rng.random::<f64>() * h);
    let total = scale.targets();
    let layers = TARGET_LAYERS.len();
    let mut targets = Vec::with_capacity(total);
    for (li, &z) in TARGET_LAYERS.iter().enumerate() {
        let n = total / layers + usize::from(li < total % layers);
        for (x, y) in layer_lattice(n, x0, y0, w, h) {
            if grid.elevation_at(x, y)? > z {
                return Err(Error::domain(format!(
                    "terrain at ({x}, {y}) rises above the {z} km target layer"
                )));
            }
            let d2 = (x - center.0).powi(2) + (y - center.1).powi(2);
            let weight = 1.0 + 4.0 * (-d2 / (2.0 * WEIGHT_SIGMA * WEIGHT_SIGMA)).exp();
            targets.push(Target {
                position: Point3::new(x, y, z),
                weight,
            });
        }
    }

    ScenarioInstance::new(
        format!("{scale}-{seed}"),
        grid.clone(),
        sites,
        targets,
        DEFAULT_BUDGET_K,
        SensorParams::default(),
    )
}
