use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::{BBox, BinaryMask, GeometryError, Point};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// A cropped sub-image together with the box actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: RgbImage,
    pub bbox: BBox,
}

impl Crop {
    pub fn origin(&self) -> Point {
        self.bbox.top_left()
    }
}

/// Crop to the intersection of `bbox` with the image bounds.
pub fn crop(image: &RgbImage, bbox: &BBox) -> Result<Crop, GeometryError> {
    let b = bbox
        .clamp_to(image.width(), image.height())
        .ok_or(GeometryError::EmptyIntersection(*bbox, image.width(), image.height()))?;
    let sub = image::imageops::crop_imm(image, b.x_top, b.y_top, b.width(), b.height()).to_image();
    Ok(Crop { image: sub, bbox: b })
}

fn check_dims(image: &RgbImage, mask: &BinaryMask) -> Result<(), GeometryError> {
    if image.dimensions() != mask.dimensions() {
        return Err(GeometryError::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    Ok(())
}

/// Pixels outside the mask become white.
pub fn whiteout_outside_mask(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage, GeometryError> {
    check_dims(image, mask)?;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if !mask.get(x, y) {
            *px = WHITE;
        }
    }
    Ok(out)
}

/// Pixels inside the mask become black.
pub fn apply_mask(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage, GeometryError> {
    check_dims(image, mask)?;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            *px = BLACK;
        }
    }
    Ok(out)
}

/// Number of pure-black pixels.
pub fn masked_pixel_count(image: &RgbImage) -> usize {
    image.pixels().filter(|&&p| p == BLACK).count()
}

/// SHA-256 over the dimensions and raw RGB bytes, hex encoded.
pub fn image_hash(image: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image.width().to_le_bytes());
    hasher.update(image.height().to_le_bytes());
    hasher.update(image.as_raw());
    hex::encode(hasher.finalize())
}

/// Load any supported image as 8-bit RGB, compositing alpha over white.
pub fn load_rgb(path: &Path) -> Result<RgbImage, GeometryError> {
    let img = image::open(path).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    Ok(flatten(img))
}

fn flatten(img: DynamicImage) -> RgbImage {
    if !img.color().has_alpha() {
        return img.to_rgb8();
    }
    let rgba = img.to_rgba8();
    RgbImage::from_fn(rgba.width(), rgba.height(), |x, y| {
        let p = rgba.get_pixel(x, y).0;
        let a = p[3] as u32;
        let blend = |c: u8| ((c as u32 * a + 255 * (255 - a) + 127) / 255) as u8;
        Rgb([blend(p[0]), blend(p[1]), blend(p[2])])
    })
}

/// Write PNG or JPEG depending on the extension.
pub fn save_image(image: &RgbImage, path: &Path) -> Result<(), GeometryError> {
    image
        .save(path)
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}
