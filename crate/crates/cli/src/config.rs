//! Run configuration shared by every subcommand, echoed back in each report.

use std::path::PathBuf;

use crg_distill::{
    EigenSelection, EmbeddingSize, LossConfig, LossWeights, MaskToggles, RelationSoftmax, SpectralVariant, TermToggles,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NSetting {
    Count(usize),
    Fraction(f64),
}

impl NSetting {
    /// A bare integer is a count; anything else must be a fraction in `(0, 1]`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Ok(n) = s.parse::<usize>() {
            return if n == 0 {
                Err("N must be at least 1".into())
            } else {
                Ok(NSetting::Count(n))
            };
        }
        match s.parse::<f64>() {
            Ok(f) if f > 0.0 && f <= 1.0 => Ok(NSetting::Fraction(f)),
            Ok(f) => Err(format!("fraction {f} outside (0, 1]")),
            Err(_) => Err(format!("{s:?} is neither a count nor a fraction")),
        }
    }
}

impl From<NSetting> for EmbeddingSize {
    fn from(n: NSetting) -> Self {
        match n {
            NSetting::Count(c) => EmbeddingSize::Count(c),
            NSetting::Fraction(f) => EmbeddingSize::Fraction(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub spatial: bool,
    pub channel: bool,
    pub relation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub vertex: bool,
    pub edge: bool,
    pub spectral: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RelationAxis {
    Global,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Largest,
    Smallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[value(name = "vector")]
    Eigenvector,
    #[value(name = "value")]
    Eigenvalue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: NSetting,
    pub masks: Masks,
    pub terms: Terms,
    pub relation_softmax: RelationAxis,
    pub eigen_selection: Selection,
    pub spectral_variant: Variant,
    pub adapter: Option<PathBuf>,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            n: NSetting::Fraction(0.5),
            masks: Masks {
                spatial: true,
                channel: true,
                relation: true,
            },
            terms: Terms {
                vertex: true,
                edge: true,
                spectral: true,
            },
            relation_softmax: RelationAxis::Global,
            eigen_selection: Selection::Largest,
            spectral_variant: Variant::Eigenvector,
            adapter: None,
            seed: 0,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn loss_config(&self) -> crg_distill::Result<LossConfig<f64>> {
        let weights = LossWeights::new(self.alpha, self.beta, self.gamma)?;
        Ok(LossConfig {
            weights,
            n: self.n.into(),
            terms: TermToggles {
                vertex: self.terms.vertex,
                edge: self.terms.edge,
                spectral: self.terms.spectral,
            },
            masks: MaskToggles {
                spatial: self.masks.spatial,
                channel: self.masks.channel,
                relation: self.masks.relation,
            },
            relation_softmax: match self.relation_softmax {
                RelationAxis::Global => RelationSoftmax::Global,
                RelationAxis::Row => RelationSoftmax::Row,
            },
            selection: match self.eigen_selection {
                Selection::Largest => EigenSelection::Largest,
                Selection::Smallest => EigenSelection::Smallest,
            },
            variant: match self.spectral_variant {
                Variant::Eigenvector => SpectralVariant::Eigenvector,
                Variant::Eigenvalue => SpectralVariant::Eigenvalue,
            },
            ..LossConfig::default()
        })
    }
}
