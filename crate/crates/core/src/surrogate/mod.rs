//! Performance predictors fitted on (architecture, accuracy) pairs.

mod bridge;
mod forest;
mod normalize;

pub use bridge::{BridgeClient, BridgeError, BridgeTimeouts, PROTOCOL_VERSION};
pub use forest::{
    draw_bootstraps, fit_forest, fit_forest_with_bootstraps, ForestModel, ForestParams, RegressionTree, TreeNode,
    FOREST_FORMAT, FOREST_VERSION,
};
pub use normalize::{NormalizationMethod, Normalizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Architecture;
use crate::encoder::Variant;
use crate::features::FeatureVector;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("feature schema mismatch: model has {expected} columns, input has {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("dataset `{0}` was not seen when fitting the normalizer")]
    UnknownDataset(String),
    #[error("surrogate used before fitting")]
    NotFitted,
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

/// One labelled architecture, tagged with the dataset it was measured on.
#[derive(Clone, Debug)]
pub struct TrainingRow {
    pub arch: Architecture,
    pub target: f64,
    pub dataset: String,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fit_normalizer(&self, method: NormalizationMethod) -> Result<Normalizer, SurrogateError> {
        Normalizer::fit(method, self.rows.iter().map(|r| (r.dataset.as_str(), r.target)))
    }

    /// A copy with every target passed through `nrm`.
    pub fn normalized(&self, nrm: &Normalizer) -> Result<TrainingSet, SurrogateError> {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                Ok(TrainingRow {
                    target: nrm.normalize_value(&r.dataset, r.target)?,
                    ..r.clone()
                })
            })
            .collect::<Result<_, SurrogateError>>()?;
        Ok(TrainingSet { rows })
    }

    pub fn pairs(&self) -> Vec<(&Architecture, f64)> {
        self.rows.iter().map(|r| (&r.arch, r.target)).collect()
    }
}

/// A fit/predict performance model. Fit replaces any previous state.
pub trait Surrogate: Send {
    fn fit(&mut self, rows: &[(&Architecture, f64)], seed: u64) -> Result<(), SurrogateError>;

    /// One prediction per architecture, in order.
    fn predict(&mut self, archs: &[&Architecture]) -> Result<Vec<f64>, SurrogateError>;

    fn is_fitted(&self) -> bool;
}

/// Random forest over the architecture feature vectors.
///
/// Architectures that failed to compile carry no features: they are left out
/// of training and predicted as 0.
#[derive(Clone, Debug, Default)]
pub struct ForestSurrogate {
    pub params: ForestParams,
    /// Drop rows whose target is exactly 0 before fitting.
    pub drop_zero_fitness: bool,
    model: Option<ForestModel>,
}

impl ForestSurrogate {
    pub fn new(params: ForestParams) -> Self {
        ForestSurrogate {
            params,
            ..Default::default()
        }
    }

    pub fn model(&self) -> Option<&ForestModel> {
        self.model.as_ref()
    }

    pub fn from_model(model: ForestModel) -> Self {
        ForestSurrogate {
            params: ForestParams {
                n_trees: model.n_trees,
                min_samples_leaf: model.min_samples_leaf,
            },
            drop_zero_fitness: false,
            model: Some(model),
        }
    }
}

impl Surrogate for ForestSurrogate {
    fn fit(&mut self, rows: &[(&Architecture, f64)], seed: u64) -> Result<(), SurrogateError> {
        let (xs, ys): (Vec<FeatureVector>, Vec<f64>) = rows
            .iter()
            .filter(|(_, y)| !(self.drop_zero_fitness && *y == 0.0))
            .filter_map(|(a, y)| a.features.clone().map(|f| (f, *y)))
            .unzip();
        self.model = Some(fit_forest(&xs, &ys, self.params, seed)?);
        Ok(())
    }

    fn predict(&mut self, archs: &[&Architecture]) -> Result<Vec<f64>, SurrogateError> {
        let model = self.model.as_ref().ok_or(SurrogateError::NotFitted)?;
        archs
            .iter()
            .map(|a| match &a.features {
                Some(f) => model.predict(std::slice::from_ref(f)).map(|v| v[0]),
                None => Ok(0.0),
            })
            .collect()
    }

    fn is_fitted(&self) -> bool {
        self.model.is_some()
    }
}

/// A surrogate living in a worker process, fed with architecture strings.
pub struct ExternalSurrogate {
    client: BridgeClient,
    pub variant: Variant,
    fitted: bool,
}

impl ExternalSurrogate {
    pub fn new(client: BridgeClient, variant: Variant) -> Self {
        ExternalSurrogate {
            client,
            variant,
            fitted: false,
        }
    }

    /// The string sent for `a`; non-compiling architectures have no shapes and fall back to the plain form.
    pub fn encoding<'a>(&self, a: &'a Architecture) -> &'a str {
        match (self.variant, &a.shaped) {
            (Variant::WithShapes, Some(s)) => s,
            _ => &a.encoding,
        }
    }

    pub fn shutdown(self) -> Result<(), SurrogateError> {
        Ok(self.client.shutdown()?)
    }
}

impl Surrogate for ExternalSurrogate {
    fn fit(&mut self, rows: &[(&Architecture, f64)], _seed: u64) -> Result<(), SurrogateError> {
        let rows: Vec<(String, f64)> = rows.iter().map(|(a, y)| (self.encoding(a).to_string(), *y)).collect();
        self.client.fit(&rows)?;
        self.fitted = true;
        Ok(())
    }

    fn predict(&mut self, archs: &[&Architecture]) -> Result<Vec<f64>, SurrogateError> {
        let encodings: Vec<String> = archs.iter().map(|a| self.encoding(a).to_string()).collect();
        Ok(self.client.predict(&encodings)?)
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }
}

/// Which surrogate a search or evaluation uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    None,
    Forest,
    External,
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "forest" | "rf" => Ok(Self::Forest),
            "external" => Ok(Self::External),
            other => Err(format!("unknown surrogate `{other}` (none, forest, external)")),
        }
    }
}
