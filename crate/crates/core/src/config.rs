//! Key=value run configuration shared by the command-line front end and the FFI.
//!
//! Every key can be given in a config file (`key = value`, `#` comments) or as a
//! `--key value` flag; flags win. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gconv::ProjectionMeasure;
use crate::haar::{is_chart_key, parse_key_values, QuadratureChart};
use crate::invariance::{reduced_chart, standard_bank, PipelineConfig, SearchBox, REDUCED_K2_WIDTH};
use crate::lifting::gaussian_kernel;
use crate::signal::GridGeometry;
use crate::AffineElement;
use crate::Mat2;

/// Default `threshold` for the invariance verdict.
///
/// Calibration output, not ground truth: the midpoint between the classes chosen by
/// `examples/calibrate_threshold.rs` (seed 7, 25 matched and 25 unmatched pairs,
/// reduced pipeline, unscaled signal amplitudes). The classes overlap, so no value
/// separates them.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1.943669e3;

/// Keys other than the chart keys `{rho,theta,u,w}.{lo,hi,count}`, with help text.
pub const KEYS: &[(&str, &str)] = &[
    ("spatial.height", "rows of the spatial grid of lifted signals"),
    ("spatial.width", "columns of the spatial grid of lifted signals"),
    ("spatial.spacing", "node spacing of the spatial grid"),
    ("lift.sigma", "width of the Gaussian lifting kernel"),
    ("lift.spacing", "sampling step of the lifting kernel"),
    ("lift.radius", "truncation radius of the lifting kernel, in widths"),
    ("k1.spacing", "spacing of the bank's spatial factors"),
    ("k2.width", "width of the bank's matrix bumps"),
    ("bank", "comma-separated bank kernels, or `all`"),
    ("kernel", "bank kernel used by `gconv`"),
    ("threshold", "largest functional gap still reported as invariant"),
    ("measure", "projection measure, `haar` or `lebesgue`"),
    ("search.translation", "alignment search radius for translations"),
    ("search.rho", "alignment search radius for rho"),
    ("search.u", "alignment search radius for u"),
    ("search.w", "alignment search radius for w"),
    ("search.levels", "refinement passes after the coarse alignment grid"),
    ("input", "first input file"),
    ("input2", "second input file"),
    ("output", "first output file"),
    ("output2", "second output file"),
    ("truth", "ground-truth JSON file"),
    ("seed", "random seed"),
    ("g", "group element as `x1,x2,a11,a12,a21,a22`"),
    ("image.size", "side of generated images"),
    ("image.spacing", "node spacing of generated images"),
];

pub fn is_known_key(key: &str) -> bool {
    is_chart_key(key) || KEYS.iter().any(|(k, _)| *k == key)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub chart: QuadratureChart,
    pub spatial: GridGeometry,
    pub lift_sigma: f64,
    pub lift_spacing: f64,
    pub lift_radius: f64,
    pub k1_spacing: f64,
    pub k2_width: f64,
    /// Selected bank kernels; empty means all.
    pub bank: Vec<String>,
    pub kernel: String,
    pub threshold: f64,
    pub measure: ProjectionMeasure,
    /// `[translation, rho, u, w]` radii.
    pub search_radii: [f64; 4],
    pub search_levels: usize,
    pub input: Option<PathBuf>,
    pub input2: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub output2: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub seed: u64,
    pub g: Option<AffineElement>,
    pub image_size: usize,
    pub image_spacing: f64,
}

impl Default for RunConfig {
    /// The reduced pipeline.
    fn default() -> Self {
        RunConfig {
            chart: reduced_chart(),
            spatial: GridGeometry::centered(16, 16, 1.0).expect("valid geometry"),
            lift_sigma: 1.0,
            lift_spacing: 0.5,
            lift_radius: 3.0,
            k1_spacing: 1.0,
            k2_width: REDUCED_K2_WIDTH,
            bank: Vec::new(),
            kernel: "narrow-I".into(),
            threshold: DEFAULT_GAP_THRESHOLD,
            measure: ProjectionMeasure::Haar,
            search_radii: [1.0, 0.3, 0.3, 0.3],
            search_levels: 3,
            input: None,
            input2: None,
            output: None,
            output2: None,
            truth: None,
            seed: 0,
            g: None,
            image_size: 32,
            image_spacing: 1.0,
        }
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("{key}: expected a finite number, got {v:?}")))
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::Config(format!("{key}: must be positive, got {x}")))
    }
}

fn nonnegative(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(Error::Config(format!("{key}: must not be negative, got {x}")))
    }
}

fn integer(key: &str, v: &str) -> Result<u64> {
    v.trim().parse::<u64>().map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
}

fn count(key: &str, v: &str) -> Result<usize> {
    match integer(key, v)? {
        0 => Err(Error::Config(format!("{key}: must be at least 1"))),
        n => Ok(n as usize),
    }
}

/// `x1,x2,a11,a12,a21,a22`.
pub fn parse_element(v: &str) -> Result<AffineElement> {
    let p: Vec<f64> = v.split(',').map(|s| real("g", s)).collect::<Result<_>>()?;
    if p.len() != 6 {
        return Err(Error::Config(format!("g: expected 6 comma-separated numbers, got {}", p.len())));
    }
    AffineElement::new([p[0], p[1]], Mat2::new(p[2], p[3], p[4], p[5]))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply(&parse_key_values(text)?)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_text(&std::fs::read_to_string(path)?)
    }

    /// Applies `map` on top of the current values.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        if let Some(k) = map.keys().find(|k| !is_known_key(k)) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        self.chart.apply_config(map)?;
        let (mut height, mut width, mut spacing) = (self.spatial.height, self.spatial.width, self.spatial.spacing);
        for (key, v) in map {
            match key.as_str() {
                "spatial.height" => height = count(key, v)?,
                "spatial.width" => width = count(key, v)?,
                "spatial.spacing" => spacing = positive(key, v)?,
                "lift.sigma" => self.lift_sigma = positive(key, v)?,
                "lift.spacing" => self.lift_spacing = positive(key, v)?,
                "lift.radius" => self.lift_radius = positive(key, v)?,
                "k1.spacing" => self.k1_spacing = positive(key, v)?,
                "k2.width" => self.k2_width = positive(key, v)?,
                "bank" => {
                    self.bank = if v.trim() == "all" {
                        Vec::new()
                    } else {
                        v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
                    }
                }
                "kernel" => self.kernel = v.trim().to_string(),
                "threshold" => self.threshold = nonnegative(key, v)?,
                "measure" => {
                    self.measure = match v.trim() {
                        "haar" => ProjectionMeasure::Haar,
                        "lebesgue" => ProjectionMeasure::Lebesgue,
                        other => return Err(Error::Config(format!("measure: expected haar or lebesgue, got {other:?}"))),
                    }
                }
                "search.translation" => self.search_radii[0] = nonnegative(key, v)?,
                "search.rho" => self.search_radii[1] = nonnegative(key, v)?,
                "search.u" => self.search_radii[2] = nonnegative(key, v)?,
                "search.w" => self.search_radii[3] = nonnegative(key, v)?,
                "search.levels" => self.search_levels = integer(key, v)? as usize,
                "input" => self.input = Some(PathBuf::from(v)),
                "input2" => self.input2 = Some(PathBuf::from(v)),
                "output" => self.output = Some(PathBuf::from(v)),
                "output2" => self.output2 = Some(PathBuf::from(v)),
                "truth" => self.truth = Some(PathBuf::from(v)),
                "seed" => self.seed = integer(key, v)?,
                "g" => self.g = Some(parse_element(v)?),
                "image.size" => self.image_size = count(key, v)?,
                "image.spacing" => self.image_spacing = positive(key, v)?,
                _ => {}
            }
        }
        self.spatial = GridGeometry::centered(height, width, spacing)?;
        Ok(())
    }

    pub fn search(&self) -> Result<SearchBox> {
        let [t, rho, u, w] = self.search_radii;
        let mut s = SearchBox::centered(t, rho, u, w)?;
        s.levels = self.search_levels;
        Ok(s)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let all = standard_bank(self.k1_spacing, self.k2_width)?;
        let bank = if self.bank.is_empty() {
            all
        } else {
            self.bank
                .iter()
                .map(|name| {
                    all.iter()
                        .find(|(n, _)| n == name)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("bank: unknown kernel {name:?}")))
                })
                .collect::<Result<_>>()?
        };
        Ok(PipelineConfig {
            lift_kernel: gaussian_kernel(self.lift_sigma, self.lift_spacing, self.lift_radius)?,
            spatial: self.spatial,
            chart: self.chart,
            bank,
            search: self.search()?,
        })
    }

    /// Key=value text that [`RunConfig::from_text`] reads back to the same settings.
    pub fn to_text(&self) -> String {
        let mut s = self.chart.to_config();
        let bank = if self.bank.is_empty() { "all".to_string() } else { self.bank.join(",") };
        let measure = match self.measure {
            ProjectionMeasure::Haar => "haar",
            ProjectionMeasure::Lebesgue => "lebesgue",
        };
        let [t, rho, u, w] = self.search_radii;
        let _ = writeln!(s, "spatial.height={}\nspatial.width={}\nspatial.spacing={:?}", self.spatial.height, self.spatial.width, self.spatial.spacing);
        let _ = writeln!(s, "lift.sigma={:?}\nlift.spacing={:?}\nlift.radius={:?}", self.lift_sigma, self.lift_spacing, self.lift_radius);
        let _ = writeln!(s, "k1.spacing={:?}\nk2.width={:?}\nbank={bank}\nkernel={}", self.k1_spacing, self.k2_width, self.kernel);
        let _ = writeln!(s, "threshold={:?}\nmeasure={measure}", self.threshold);
        let _ = writeln!(s, "search.translation={t:?}\nsearch.rho={rho:?}\nsearch.u={u:?}\nsearch.w={w:?}\nsearch.levels={}", self.search_levels);
        let _ = writeln!(s, "seed={}\nimage.size={}\nimage.spacing={:?}", self.seed, self.image_size, self.image_spacing);
        for (key, p) in [("input", &self.input), ("input2", &self.input2), ("output", &self.output), ("output2", &self.output2), ("truth", &self.truth)] {
            if let Some(p) = p {
                let _ = writeln!(s, "{key}={}", p.display());
            }
        }
        if let Some(g) = &self.g {
            let (x, a) = (g.x(), g.matrix());
            let _ = writeln!(s, "g={:?},{:?},{:?},{:?},{:?},{:?}", x[0], x[1], a.a, a.b, a.c, a.d);
        }
        s
    }
}
