//! Experiment configuration files.

use nonlocal::fields::Shape;
use nonlocal::flow::NonlocalOptions;
use nonlocal::kernel::KernelSpec;
use nonlocal::rate::Potential;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One experiment run as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the experiment's default pass tolerance.
    pub tolerance: Option<f64>,
    pub kernel: Option<KernelSpec>,
    pub geometry: Option<Geometry>,
    pub potential: Option<Potential>,
    pub flow: Option<FlowBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Half side of the centered computational box.
    #[serde(default = "unit")]
    pub half: f64,
    /// Cells per axis.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub shape: Option<ShapeSpec>,
    pub domain: Option<ShapeSpec>,
    pub normal: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub levels: Option<usize>,
    pub pairs: Option<usize>,
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Halfspace { normal: Vec<f64>, #[serde(default)] offset: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ellipse { center: Vec<f64>, axes: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
    Whole,
}

impl ShapeSpec {
    pub fn build(&self) -> Result<Shape<f64>, CliError> {
        Ok(match self {
            ShapeSpec::Ball { center, radius } => Shape::ball(center, *radius)?,
            ShapeSpec::Halfspace { normal, offset } => Shape::halfspace(normal, *offset)?,
            ShapeSpec::Box { lo, hi } => Shape::axis_box(lo, hi)?,
            ShapeSpec::Ellipse { center, axes } => Shape::ellipse(center, *axes)?,
            ShapeSpec::Polygon { vertices } => Shape::polygon(vertices)?,
            ShapeSpec::Whole => Shape::Empty.complement(),
        })
    }
}

/// Level-set flow of a clamped disk distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    #[serde(default = "half_unit")]
    pub radius: f64,
    /// Values of the initial datum are clamped to this range; the lower end is its value outside the box.
    #[serde(default = "default_clamp")]
    pub clamp: [f64; 2],
    /// Defaults to the stability limit of the local scheme.
    pub dt: Option<f64>,
    /// Final time as a fraction of the extinction time of the local flow.
    #[serde(default = "default_fraction")]
    pub t_end_fraction: f64,
    #[serde(default = "default_snapshots")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub nonlocal: NonlocalOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
}

fn unit() -> f64 {
    1.0
}

fn half_unit() -> f64 {
    0.5
}

fn default_resolution() -> usize {
    64
}

fn default_clamp() -> [f64; 2] {
    [-0.3, 0.45]
}

fn default_fraction() -> f64 {
    0.91
}

fn default_snapshots() -> usize {
    20
}

/// Blocks an experiment reads.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub kernel: bool,
    pub geometry: bool,
    pub potential: bool,
    pub flow: bool,
    pub eps: bool,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            CliError::Parse { line, message: e.message().to_string() }
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Invalid(e.to_string()))
    }

    pub fn validate(&self, needs: Needs) -> Result<(), CliError> {
        let missing = |name: &str| CliError::Invalid(format!("experiment {} needs a [{name}] block", self.experiment));
        if needs.kernel && self.kernel.is_none() {
            return Err(missing("kernel"));
        }
        if needs.geometry && self.geometry.is_none() {
            return Err(missing("geometry"));
        }
        if needs.potential && self.potential.is_none() {
            return Err(missing("potential"));
        }
        if needs.flow && self.flow.is_none() {
            return Err(missing("flow"));
        }
        if needs.eps || !self.eps.is_empty() {
            if self.eps.is_empty() {
                return Err(CliError::Invalid("the eps list is empty".into()));
            }
            if self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(CliError::Invalid("eps values must be positive".into()));
            }
            if self.eps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(CliError::Invalid("the eps list must be strictly decreasing".into()));
            }
        }
        if let Some(p) = &self.potential {
            p.validate()?;
        }
        Ok(())
    }

    pub fn tolerance_or(&self, default: f64) -> f64 {
        self.tolerance.unwrap_or(default)
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.kernel.as_ref().expect("validated kernel block")
    }

    pub fn geometry(&self) -> &Geometry {
        self.geometry.as_ref().expect("validated geometry block")
    }

    pub fn potential(&self) -> &Potential {
        self.potential.as_ref().expect("validated potential block")
    }

    pub fn flow(&self) -> &FlowBlock {
        self.flow.as_ref().expect("validated flow block")
    }
}
