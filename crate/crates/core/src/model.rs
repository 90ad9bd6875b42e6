//! Builds engine models for the structural forms from an encoded dataset
//! and a mesh, and describes how to rebuild the linear predictor elsewhere.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::engine::{
    BlockKind, FitResult, HyperParams, LatentBlock, LatentPrior, Model, ModelSpec, OptimizeOptions, StructuralForm,
};
use crate::error::{Error, Result};
use crate::fields::{PcPrior, QuantileSpec, SplineBasis, SpdeOperator};
use crate::geometry::{assemble_fem, BoundingBox, Mesh, Point};
use crate::likelihoods::FamilySpec;
use crate::sparse::CscMatrix;

/// Tail statements calibrating the hyperparameter priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// `P(range < threshold) = probability`.
    pub range: QuantileSpec,
    /// `P(sd > threshold) = probability`.
    pub sd: QuantileSpec,
    /// `P(spline precision > threshold) = probability`.
    pub spline_precision: QuantileSpec,
    /// `P(rho > threshold) = probability`.
    pub correlation: QuantileSpec,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            range: QuantileSpec::new(1.42, 0.9),
            sd: QuantileSpec::new(1.0, 0.9),
            spline_precision: QuantileSpec::new(0.5, 0.9),
            correlation: QuantileSpec::new(0.0, 0.9),
        }
    }
}

/// Settings for one model component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub form: StructuralForm,
    pub family: FamilySpec,
    #[serde(default)]
    pub priors: PriorConfig,
    /// Adds the log-population offset to the linear predictor.
    #[serde(default)]
    pub use_offset: bool,
    /// Spline basis size for form I; defaults to [`SplineBasis::default_num_basis`].
    #[serde(default)]
    pub num_knots: Option<usize>,
}

impl ComponentSpec {
    pub fn binary(form: StructuralForm) -> Self {
        Self {
            form,
            family: FamilySpec::bernoulli(),
            priors: PriorConfig::default(),
            use_offset: false,
            num_knots: None,
        }
    }

    pub fn count(form: StructuralForm, family: FamilySpec) -> Self {
        Self {
            form,
            family,
            priors: PriorConfig::default(),
            use_offset: true,
            num_knots: None,
        }
    }
}

/// What is needed besides the fit to evaluate the linear predictor at new
/// locations and fitted years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLayout {
    pub form: StructuralForm,
    pub years: Vec<i32>,
    pub spline: Option<SplineBasis>,
    pub fixed_names: Vec<String>,
    pub use_offset: bool,
    pub mesh_nodes: usize,
}

/// A fitted component with its layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFit {
    pub layout: ComponentLayout,
    pub fit: FitResult,
}

impl ComponentFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ComponentFit = serde_json::from_str(s)?;
        if c.fit.schema_version != crate::engine::FIT_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "fit schema version {} is not supported",
                c.fit.schema_version
            )));
        }
        Ok(c)
    }

    /// Sparse map from the latent vector to linear predictors at `points`
    /// in `years`, with the fixed design given by `fixed_rows` (one row per
    /// point, columns as in the fit). Fails for years outside the fit.
    pub fn predictor_map(&self, mesh: &Mesh, points: &[Point], years: &[i32], fixed_rows: &CscMatrix) -> Result<CscMatrix> {
        let n = points.len();
        if years.len() != n || fixed_rows.nrows() != n {
            return Err(Error::Dimension("points, years and fixed rows must have equal length".into()));
        }
        if mesh.num_vertices() != self.layout.mesh_nodes {
            return Err(Error::Dimension(format!(
                "mesh has {} nodes but the fit used {}",
                mesh.num_vertices(),
                self.layout.mesh_nodes
            )));
        }
        let year_index = year_indices(&self.layout.years, years)?;
        let projector = mesh.project(points);
        if projector.num_outside() > 0 {
            return Err(Error::invalid(format!("{} points lie outside the mesh", projector.num_outside())));
        }
        let mut entries = Vec::new();
        for b in &self.fit.blocks {
            match b.kind {
                BlockKind::Fixed => {
                    if fixed_rows.ncols() != b.len {
                        return Err(Error::Dimension(format!(
                            "fixed design has {} columns, fit has {}",
                            fixed_rows.ncols(),
                            b.len
                        )));
                    }
                    entries.extend(fixed_rows.iter().map(|(i, j, v)| (i, b.offset + j, v)));
                }
                BlockKind::Spline => {
                    let spline = self.layout.spline.as_ref().ok_or_else(|| Error::invalid("fit lacks a spline basis"))?;
                    let xs: Vec<f64> = years.iter().map(|&y| y as f64).collect();
                    entries.extend(spline.design(&xs).iter().map(|(i, j, v)| (i, b.offset + j, v)));
                }
                BlockKind::Spatial => {
                    entries.extend(projector.matrix.iter().map(|(i, j, v)| (i, b.offset + j, v)));
                }
                BlockKind::SpatioTemporal => {
                    let k = self.layout.mesh_nodes;
                    entries.extend(
                        projector
                            .matrix
                            .iter()
                            .map(|(i, j, v)| (i, b.offset + year_index[i] * k + j, v)),
                    );
                }
            }
        }
        Ok(CscMatrix::from_triplets(n, self.fit.latent_mode.len(), &entries))
    }
}

fn year_indices(fitted: &[i32], years: &[i32]) -> Result<Vec<usize>> {
    years
        .iter()
        .map(|y| {
            fitted
                .binary_search(y)
                .map_err(|_| Error::invalid(format!("year {y} is outside the fitted years (no temporal extrapolation)")))
        })
        .collect()
}

/// Shared structure for every component fitted to one dataset.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub dataset: Arc<EncodedDataset>,
    pub mesh: Arc<Mesh>,
    operator: Arc<SpdeOperator>,
    projector: CscMatrix,
    years: Vec<i32>,
    year_index: Vec<usize>,
}

impl ModelContext {
    pub fn new(dataset: Arc<EncodedDataset>, mesh: Arc<Mesh>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let proj = mesh.project(&dataset.points);
        if proj.num_outside() > 0 {
            return Err(Error::invalid(format!("{} data points lie outside the mesh", proj.num_outside())));
        }
        let fem = assemble_fem(&mesh)?;
        let years = dataset.distinct_years();
        let year_index = year_indices(&years, &dataset.years)?;
        Ok(Self {
            operator: Arc::new(SpdeOperator::new(&fem)),
            projector: proj.matrix,
            years,
            year_index,
            dataset,
            mesh,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn operator(&self) -> &Arc<SpdeOperator> {
        &self.operator
    }

    pub fn projector(&self) -> &CscMatrix {
        &self.projector
    }

    /// Projector onto the time-major spatio-temporal field.
    pub fn spatio_temporal_projector(&self) -> CscMatrix {
        let k = self.num_nodes();
        let entries: Vec<_> = self
            .projector
            .iter()
            .map(|(i, j, v)| (i, self.year_index[i] * k + j, v))
            .collect();
        CscMatrix::from_triplets(self.dataset.len(), k * self.years.len(), &entries)
    }

    fn initial_range(&self) -> f64 {
        BoundingBox::of(&self.dataset.points)
            .map(|b| b.diameter() / 4.0)
            .filter(|d| *d > 0.0)
            .unwrap_or(1.0)
    }

    pub fn spline_basis(&self, spec: &ComponentSpec) -> Result<SplineBasis> {
        let l = spec
            .num_knots
            .unwrap_or_else(|| SplineBasis::default_num_basis(self.years.len()));
        SplineBasis::for_years(&self.years, l)
    }

    pub fn layout(&self, spec: &ComponentSpec) -> Result<ComponentLayout> {
        Ok(ComponentLayout {
            form: spec.form,
            years: self.years.clone(),
            spline: match spec.form {
                StructuralForm::I => Some(self.spline_basis(spec)?),
                _ => None,
            },
            fixed_names: self.dataset.fixed_names.clone(),
            use_offset: spec.use_offset,
            mesh_nodes: self.num_nodes(),
        })
    }

    /// Engine specification for one component with response `y`
    /// (`None` marks an observation excluded from the likelihood).
    pub fn model_spec(&self, spec: &ComponentSpec, y: Vec<Option<u64>>) -> Result<ModelSpec> {
        let n = self.dataset.len();
        if y.len() != n {
            return Err(Error::Dimension(format!("response has {} entries, dataset has {n}", y.len())));
        }
        let p = &spec.priors;
        let rho0 = 0.5f64.atanh();
        let mut blocks = vec![LatentBlock::fixed(self.dataset.fixed.clone(), self.dataset.fixed_names.clone())];
        match spec.form {
            StructuralForm::Baseline => {}
            StructuralForm::I => {
                let basis = self.spline_basis(spec)?;
                let xs: Vec<f64> = self.dataset.years.iter().map(|&y| y as f64).collect();
                blocks.push(LatentBlock {
                    name: "spline".into(),
                    kind: BlockKind::Spline,
                    design: basis.design(&xs),
                    prior: LatentPrior::Ar1 {
                        len: basis.num_basis(),
                        precision_prior: PcPrior::precision(p.spline_precision)?,
                        correlation_prior: PcPrior::correlation(p.correlation)?,
                    },
                    hyper_init: vec![0.0, rho0],
                    labels: vec![],
                });
                blocks.push(LatentBlock {
                    name: "spatial".into(),
                    kind: BlockKind::Spatial,
                    design: self.projector.clone(),
                    prior: LatentPrior::Spde {
                        operator: self.operator.clone(),
                        range_prior: PcPrior::range(p.range)?,
                        sd_prior: PcPrior::sd(p.sd)?,
                    },
                    hyper_init: vec![self.initial_range().ln(), 0.0],
                    labels: vec![],
                });
            }
            StructuralForm::II => {
                let periods = self.years.len();
                let mut init = vec![self.initial_range().ln(), 0.0];
                if periods >= 2 {
                    init.push(rho0);
                }
                blocks.push(LatentBlock {
                    name: "spatiotemporal".into(),
                    kind: BlockKind::SpatioTemporal,
                    design: self.spatio_temporal_projector(),
                    prior: LatentPrior::SpdeAr1 {
                        operator: self.operator.clone(),
                        periods,
                        range_prior: PcPrior::range(p.range)?,
                        sd_prior: PcPrior::sd(p.sd)?,
                        correlation_prior: PcPrior::correlation(p.correlation)?,
                    },
                    hyper_init: init,
                    labels: vec![],
                });
            }
        }
        Ok(ModelSpec {
            y,
            offset: if spec.use_offset {
                self.dataset.offset.clone()
            } else {
                vec![0.0; n]
            },
            blocks,
            family: spec.family,
            form: spec.form,
            dispersion_init: if spec.family.family.has_dispersion() {
                spec.family.dispersion
            } else {
                1.0
            },
        })
    }

    pub fn assemble(&self, spec: &ComponentSpec, y: Vec<Option<u64>>) -> Result<Model> {
        Model::assemble(self.model_spec(spec, y)?)
    }

    /// Assembles and fits one component, optionally starting the
    /// hyperparameter search from `init`.
    pub fn fit(
        &self,
        spec: &ComponentSpec,
        y: Vec<Option<u64>>,
        init: Option<&HyperParams>,
        opts: &OptimizeOptions,
    ) -> Result<ComponentFit> {
        let model = self.assemble(spec, y)?;
        let start = match init {
            Some(h) if h.0.len() == model.num_hyper() => h.clone(),
            _ => model.initial_hyper(),
        };
        let fit = model.optimize(&start, opts)?;
        Ok(ComponentFit {
            layout: self.layout(spec)?,
            fit,
        })
    }
}
