//! Tools for measuring how fragile pairwise-preference leaderboards are to
//! low-quality votes.
//!
//! The crate is organised around the pipeline of an arena-style leaderboard:
//!
//! - [`prefdata`]: battle records, file ingestion and a ground-truth
//!   synthetic battle generator.
//! - [`btrank`]: win matrices, Bradley-Terry fitting, leaderboards,
//!   bootstrap rank intervals and rank displacement.
//! - [`corruption`]: apathetic and adversarial vote injection plus Monte
//!   Carlo displacement experiments.
//! - [`attribution`]: deciding whether an output was sampled from a given
//!   model by counting tokens that fall inside its top-p cover.
//! - [`arenasim`]: a mock arena that replays the attack loop end to end.
//! - [`agreement`]: Fleiss' kappa over categorical ratings.
//!
//! The guide under `book/` walks through each of these with runnable
//! snippets; those snippets are compiled as doctests of this crate.

pub mod agreement;
pub mod arenasim;
pub mod attribution;
pub mod btrank;
pub mod config;
pub mod corruption;
pub mod prefdata;
pub mod seed;

pub use agreement::{fleiss_kappa, AgreementError, RatingsMatrix};
pub use btrank::{
    bootstrap_ranks, fit_bt, leaderboard, rank_displacement, win_matrix, BtScores, FitError,
    FitOptions, Leaderboard, RankDisplacement, WinMatrix,
};
pub use corruption::{
    corrupt_adversarial, corrupt_apathetic, displacement_experiment, CorruptionError,
    CorruptionMode, CorruptionSpec, DisplacementSummary,
};
pub use prefdata::{
    generate_synthetic, load_dataset, DataError, DatasetFormat, GroundTruthModelSpec, ModelId,
    PreferenceDataset, PreferenceRecord, Provenance, VoteLabel,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/battles.md")]
    mod battles {}
    #[doc = include_str!("../../../book/src/bradley-terry.md")]
    mod bradley_terry {}
    #[doc = include_str!("../../../book/src/corruption.md")]
    mod corruption {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/arena.md")]
    mod arena {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
