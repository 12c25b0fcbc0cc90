//! Training-time augmentation: small random rotation then a coin-flip
//! mirror. Only ever enabled for non-private runs.

use rand::Rng;

use crate::image::{flip_horizontal, rotate_image, GrayImage};

/// Maximum augmentation rotation magnitude in degrees.
pub const MAX_ROTATION_DEG: f64 = 10.0;

/// Rotation angle ~ U[−10, 10] with bilinear resampling, then horizontal
/// flip with probability ½. Disabled, the input passes through bitwise.
pub fn augment<R: Rng>(image: &GrayImage, rng: &mut R, enabled: bool) -> GrayImage {
    if !enabled {
        return image.clone();
    }
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    let rotated = rotate_image(image, angle);
    if rng.random_bool(0.5) {
        flip_horizontal(&rotated)
    } else {
        rotated
    }
}
