//! Post-processing CNN for decoded video.
//!
//! A residual generator maps decoded RGB blocks to enhanced blocks. It is
//! trained either on an l1 objective or perceptually, with an MS-SSIM
//! stage followed by a relativistic adversarial stage. One model is kept
//! per codec and QP group, and [`dispatch`] picks one from the QP of the
//! encode.
//!
//! ```
//! use ppnet::frames::{enhance_frame, Geometry, PlanarFrame420};
//! use ppnet::models::{Generator, GeneratorConfig};
//!
//! let g = Generator::<f32>::new(GeneratorConfig {
//!     num_residual_blocks: 1,
//!     feature_width: 4,
//!     kernel_size: 3,
//!     input_block_size: 16,
//! }, 3)?;
//! let frame = PlanarFrame420::filled(Geometry::new(48, 32, 10)?, 600, 500, 520)?;
//! let out = enhance_frame(&g, &frame)?;
//! assert_eq!(out.geometry(), frame.geometry());
//! # Ok::<(), ppnet::Error>(())
//! ```

pub mod dispatch;
pub mod error;
pub mod frames;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

mod binfmt;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor4};

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_introduction => "introduction.md",
    book_tensors => "tensors.md",
    book_models => "models.md",
    book_losses => "losses.md",
    book_frames => "frames.md",
    book_dispatch => "dispatch.md",
    book_metrics => "metrics.md",
    book_training => "training.md",
    book_cli => "cli.md",
    book_formats => "formats.md",
}
