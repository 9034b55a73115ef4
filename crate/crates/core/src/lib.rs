//! Classification of kidney stone patches from endoscopic images with
//! handcrafted color/texture features and tree ensembles.
//!
//! The pipeline stages mirror the way the library is organised:
//!
//! 1. [`dataset`] — corpus manifests, images, masks and patch persistence.
//! 2. [`patching`] — masked grid extraction, instrument rejection, class
//!    balancing, augmentation and whitening.
//! 3. [`features`] — HSV conversion, per-channel gradient energies,
//!    rotation-invariant LBP, and the 40-/80-component descriptors.
//! 4. [`learners`] — from-scratch CART plus random forest, bagging,
//!    AdaBoost and softmax gradient boosting.
//! 5. [`evaluation`] — stratified k-fold, precision/recall/F1 reports,
//!    ablation sweeps, 3-D PCA embedding export.
//! 6. [`synthcorpus`] — a deterministic synthetic corpus with
//!    class-separable color and texture statistics, used as the
//!    end-to-end oracle in the test suites.

pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod patching;
pub mod raster;
pub mod synthcorpus;

mod error;

pub use error::{Error, Result};
