//! Progressive scene construction over diffusion latents.
//!
//! The engine turns free-form scene text into an ordered list of directives
//! (synthesize, edit, erase), solves a deterministic box layout for each
//! synthesis directive, and then steers a denoising diffusion loop so that
//! each token's cross-attention concentrates where its object belongs.
//! A linear reference denoiser with closed-form attention makes every stage
//! of the loop checkable against independent numeric oracles.

pub mod diffusion;
pub mod directive;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod layout;
pub mod srf;
