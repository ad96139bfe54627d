//! Image decoding, manifests, preprocessing, oversampling views, folds and synthetic data.

mod folds;
mod image;
mod manifest;
mod preprocess;
mod synth;

pub use self::image::{
    decode_ppm, decode_tensor_image, encode_ppm, encode_tensor_image, read_image, write_ppm, Image,
};
pub use folds::{split, stratified_kfold};
pub use manifest::{
    load_manifest, read_mean, write_manifest, write_mean, DatasetManifest, Record, NEGATIVE, POSITIVE,
};
pub use preprocess::{
    base_image, preprocess, random_tag, ten_crop, ten_crop_base, view_of, ChannelOrder, ImageView, Mode,
    PreprocessConfig, Region, ViewTag, CENTER, TEN_CROP_ORDER,
};
pub use synth::{generate, render, write_dataset, Pattern, SynthConfig};

/// Per-channel mean over a set of images (each image weighted equally).
pub fn mean_of<'a>(images: impl IntoIterator<Item = &'a Image>) -> [f32; 3] {
    let (mut sum, mut n) = ([0.0f64; 3], 0usize);
    for img in images {
        let m = img.channel_means();
        for c in 0..3 {
            sum[c] += m[c];
        }
        n += 1;
    }
    if n == 0 {
        return [0.0; 3];
    }
    std::array::from_fn(|c| (sum[c] / n as f64) as f32)
}
