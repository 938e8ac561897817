//! Run configuration: TOML sections `[model]`, `[solver]`, `[mesh]`,
//! `[diffusion]`, `[initial]` and `[output]`.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::constitutive::{Model, ModelParams};
use crate::entropy::DiffusionMatrixSpec;
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, Mesh, NodalField};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub num_cells: usize,
    pub x_left: f64,
    pub x_right: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { num_cells: 64, x_left: 0.0, x_right: 1.0 }
    }
}

/// Named initial profiles. Boundary nodes always carry `S^Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Equilibrium,
    /// `S^Γ + amplitude · sin(π ξ)` on one species (1-based), `ξ` the
    /// normalized coordinate, clipped into the admissible set.
    SinePerturbation { amplitude: f64, species_index: usize },
    /// `left_state` on the left half of the interior, `right_state` on the rest.
    StepProfile { left_state: Vec<f64>, right_state: Vec<f64> },
}

/// Distance kept from the edges of the admissible set when clipping.
pub const CLIP_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub record_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("capflow-out"), record_every: 1 }
    }
}

/// Raw document layout; `record_every` is read from `[output]` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Document {
    model: ModelParams,
    solver: SolverSection,
    mesh: MeshConfig,
    diffusion: DiffusionMatrixSpec,
    initial: InitialCondition,
    output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    fp_tol: f64,
    fp_max_iters: usize,
    damping: f64,
    homotopy_steps: usize,
    linear_tol: f64,
    t_end: f64,
    strict_entropy: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection::from(&SolverConfig::default())
    }
}

impl From<&SolverConfig> for SolverSection {
    fn from(c: &SolverConfig) -> Self {
        Self {
            fp_tol: c.fp_tol,
            fp_max_iters: c.fp_max_iters,
            damping: c.damping,
            homotopy_steps: c.homotopy_steps,
            linear_tol: c.linear_tol,
            t_end: c.t_end,
            strict_entropy: c.strict_entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub solver: SolverConfig,
    pub mesh: MeshConfig,
    pub diffusion: DiffusionMatrixSpec,
    pub initial: InitialCondition,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Document::default().into()
    }
}

impl From<Document> for RunConfig {
    fn from(d: Document) -> Self {
        let s = d.solver;
        Self {
            solver: SolverConfig {
                fp_tol: s.fp_tol,
                fp_max_iters: s.fp_max_iters,
                damping: s.damping,
                homotopy_steps: s.homotopy_steps,
                linear_tol: s.linear_tol,
                t_end: s.t_end,
                record_every: d.output.record_every,
                strict_entropy: s.strict_entropy,
            },
            model: d.model,
            mesh: d.mesh,
            diffusion: d.diffusion,
            initial: d.initial,
            output: d.output,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses the document without semantic validation.
pub fn parse_config_unchecked(text: &str) -> Result<RunConfig> {
    let doc: Document = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    Ok(doc.into())
}

/// Parses and validates: assumption clauses, solver knobs, diffusion
/// matrix, mesh and the initial profile.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_config_unchecked(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn render_config(cfg: &RunConfig) -> String {
    let doc = Document {
        model: cfg.model.clone(),
        solver: SolverSection::from(&cfg.solver),
        mesh: cfg.mesh.clone(),
        diffusion: cfg.diffusion.clone(),
        initial: cfg.initial.clone(),
        output: OutputConfig { record_every: cfg.solver.record_every, ..cfg.output.clone() },
    };
    toml::to_string(&doc).expect("config documents always serialize")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let model = Model::new(self.model.clone())?;
        self.solver.validate()?;
        self.diffusion.validate()?;
        let mesh = self.build_mesh()?;
        self.initial_state(&model, &mesh)?;
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        build_mesh(self.mesh.num_cells, self.mesh.x_left, self.mesh.x_right)
    }

    pub fn initial_state(&self, model: &Model, mesh: &Mesh) -> Result<NodalField> {
        let field = initial_state(&self.initial, model, mesh)?;
        field.check_species(model, mesh)?;
        Ok(field)
    }
}

/// Nodal initial data for `profile`.
pub fn initial_state(profile: &InitialCondition, model: &Model, mesh: &Mesh) -> Result<NodalField> {
    let n = model.n_species();
    let sg = model.s_gamma();
    let mut field = NodalField::from_nodes(&vec![sg.to_vec(); mesh.num_nodes()])?;
    let interior = 1..mesh.num_nodes() - 1;
    match profile {
        InitialCondition::Equilibrium => {}
        InitialCondition::SinePerturbation { amplitude, species_index } => {
            if *species_index < 1 || *species_index > n {
                return Err(Error::Argument(format!(
                    "species_index {species_index} outside 1..={n}"
                )));
            }
            if !amplitude.is_finite() {
                return Err(Error::Argument(format!("amplitude = {amplitude}")));
            }
            let i = species_index - 1;
            for k in interior {
                let xi = (mesh.nodes()[k] - mesh.x_left()) / mesh.length();
                let s = field.node_mut(k);
                let others: f64 = s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
                let raw = s[i] + amplitude * (PI * xi).sin();
                s[i] = raw.clamp(CLIP_MARGIN, 1.0 - CLIP_MARGIN - others);
            }
        }
        InitialCondition::StepProfile { left_state, right_state } => {
            for st in [left_state, right_state] {
                if st.len() != n {
                    return Err(Error::SizeMismatch { expected: n, got: st.len() });
                }
            }
            let mid = 0.5 * (mesh.x_left() + mesh.x_right());
            for k in interior {
                let src = if mesh.nodes()[k] < mid { left_state } else { right_state };
                field.node_mut(k).copy_from_slice(src);
            }
        }
    }
    Ok(field)
}
