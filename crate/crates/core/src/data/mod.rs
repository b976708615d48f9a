//! Scenes, the synthetic polysemy generator, scene files and word vectors.

mod generator;
mod io;
mod scene;
mod word_vectors;

pub use generator::{generate_dataset, ConfusablePair, GeneratorLayout, GeneratorSpec};
pub use io::{load_scenes, parse_scenes, save_scenes, scenes_to_string};
pub use scene::{Candidate, Scene};
pub use word_vectors::{fallback_vector, WordVectors};

/// Density bin of a scene by its ground-truth relation count `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum DensityBin {
    /// `G ≤ 3`
    VerySparse,
    /// `3 < G ≤ 10`
    Sparse,
    /// `10 < G ≤ 30`
    Medium,
    /// `G > 30`
    Dense,
}

impl DensityBin {
    pub const ALL: [DensityBin; 4] = [
        DensityBin::VerySparse,
        DensityBin::Sparse,
        DensityBin::Medium,
        DensityBin::Dense,
    ];

    pub fn of(gt_count: usize) -> Self {
        match gt_count {
            0..=3 => DensityBin::VerySparse,
            4..=10 => DensityBin::Sparse,
            11..=30 => DensityBin::Medium,
            _ => DensityBin::Dense,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DensityBin::VerySparse => "very_sparse",
            DensityBin::Sparse => "sparse",
            DensityBin::Medium => "medium",
            DensityBin::Dense => "dense",
        }
    }
}
