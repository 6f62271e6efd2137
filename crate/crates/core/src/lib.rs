//! One-shot geometric stylization of 3D face meshes.
//!
//! A source deformation field, conditioned on identity and expression
//! latents, reproduces a linear morphable face model. It is adapted to a
//! single paired exemplar (a face and a styled copy) with vertex, embedding
//! and normal-alignment losses. A point-set encoder maps meshes of any
//! connectivity into the same latent space, so a target of one topology can
//! be stylized onto a template of another.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`autodiff`])
//! and a soft rasterizer ([`render`]); there are no external ML runtimes.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod deform;
pub mod embed;
pub mod error;
pub mod losses;
pub mod mage;
pub mod mesh;
pub mod morph;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod style;
pub mod stylize;
pub mod train;

pub use error::{Error, Result};
