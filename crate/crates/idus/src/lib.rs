//! Iterative deep unsupervised co-segmentation of textured imagery.
//!
//! The pipeline alternates between clustering superpixel-pooled network
//! features into pseudo-labels and training a convolutional encoder-decoder
//! against those labels. Classical sliding-window texture baselines
//! (GLCM/Haralick, Sobel, HOG, LBP) and a permuted-confusion-matrix
//! evaluation protocol are included, along with a seeded synthetic
//! seabed-texture dataset generator for desk-scale experiments.

pub mod classical;
pub mod clustering;
pub mod driver;
pub mod eval;
pub mod imagery;
pub mod loss;
pub mod net;
pub mod superpixel;
