//! Panorama generation from a single perspective image.
//!
//! A square input is embedded in a wider view, outpainted, and then swept
//! around the vertical axis: each new view is rendered from all finished
//! views by mesh warping, its unknown region is inpainted under prompts
//! derived from language-model scene descriptions, and the views are finally
//! merged into an equirectangular panorama. Learned models sit behind the
//! traits in [`backends`]; deterministic mocks make the whole pipeline
//! testable offline.
//!
//! ```
//! use panoweave::geometry::{intrinsics_from_fov, pixel_to_sphere};
//!
//! let k = intrinsics_from_fov(90.0, 512, 512).unwrap();
//! let d = pixel_to_sphere(512.0, 256.0, &k);
//! assert!((d.x() - d.z()).abs() < 1e-12);
//! ```

pub mod backends;
pub mod depth3d;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod orchestrator;
pub mod procedural;
mod raster;
pub mod video;
pub mod warp;

pub use backends::{BackendDescriptor, BackendError, BackendKind, Backends};
pub use depth3d::{DepthAlignment, DepthMap, PointCloud};
pub use fusion::{compose_panorama, PanoramaCanvas};
pub use geometry::{CameraIntrinsics, RotationY, SphereDir};
pub use image::{ImageBuffer, Mask};
pub use orchestrator::{run_pipeline, PanoramaResult, PipelineConfig, SceneDescriptions, ViewSchedule};
pub use warp::ViewRecord;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cameras.md")]
    mod cameras {}
    #[doc = include_str!("../../../book/src/warping.md")]
    mod warping {}
    #[doc = include_str!("../../../book/src/compositing.md")]
    mod compositing {}
    #[doc = include_str!("../../../book/src/orchestration.md")]
    mod orchestration {}
    #[doc = include_str!("../../../book/src/depth.md")]
    mod depth {}
    #[doc = include_str!("../../../book/src/video.md")]
    mod video {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
}
