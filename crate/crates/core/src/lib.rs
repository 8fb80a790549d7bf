//! Story-driven curation of photo cutouts for collage composition.
//!
//! The pipeline runs in three stages: [`preprocess`] turns a photo
//! collection into a label-indexed cutout library, [`curate`] picks and
//! organizes the cutouts for a story, and [`score`] plus [`layout`] size and
//! arrange them. [`scene`] and [`export`] handle composition and handoff.
//! Model work sits behind [`backend::Backend`].

pub mod backend;
pub mod cli;
pub mod curate;
pub mod error;
pub mod export;
pub mod json;
pub mod layout;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod preprocess;
pub mod scene;
pub mod score;
pub mod service;

pub use error::{Error, Result};
