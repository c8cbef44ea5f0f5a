//! Cameras, rays, images and the encodings every other module builds on.
//!
//! Conventions: camera frame is +x right, +y down, +z forward. Pixel
//! coordinates past image I/O are normalized to [-1,1]² with texel centers at
//! (i+0.5)/N.

mod camera;
mod encoding;
mod image;
pub mod io;
pub mod math;

pub use camera::{pixel_to_normalized, Camera, Projection, Ray, MIN_PROJECT_DEPTH};
pub use encoding::{encoded_width, normalize_inverse_depth, positional_encode, positional_encode_into, DEFAULT_FREQUENCIES};
pub use image::{bilinear_sample, bilinear_sample_into, BilinearTaps, Border, ImageGrid};
pub use math::Vec3;
