use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    #[default]
    Rgb,
    Bgr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Side of the square every image is brought to before cropping.
    pub resize_to: usize,
    pub crop: usize,
    /// Per-channel mean subtracted from every view, in RGB order.
    pub mean: [f32; 3],
    /// Multiplier applied after mean subtraction.
    pub scale: f32,
    pub channel_order: ChannelOrder,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            resize_to: 256,
            crop: 227,
            mean: [0.0; 3],
            scale: 1.0,
            channel_order: ChannelOrder::Rgb,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize_to {
            return Err(Error::Config(format!(
                "preprocess.crop ({}) must be between 1 and resize_to ({})",
                self.crop, self.resize_to
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("preprocess.scale must be positive".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("preprocess.mean must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    /// Random training crop at the given offset.
    Offset { y: usize, x: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewTag {
    pub region: Region,
    pub flipped: bool,
}

/// A network-ready crop: `[3, crop, crop]`, mean subtracted, in the configured channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageView {
    pub tensor: Tensor,
    pub tag: ViewTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// Brings an image to the `resize_to` square all crops are taken from.
pub fn base_image(image: &Image, config: &PreprocessConfig) -> Image {
    image.resize_square(config.resize_to)
}

fn region_offset(region: Region, side: usize, crop: usize) -> (usize, usize) {
    let far = side - crop;
    match region {
        Region::Center => (far / 2, far / 2),
        Region::TopLeft => (0, 0),
        Region::TopRight => (0, far),
        Region::BottomLeft => (far, 0),
        Region::BottomRight => (far, far),
        Region::Offset { y, x } => (y, x),
    }
}

/// Cuts one view out of a base image produced by [`base_image`].
pub fn view_of(base: &Image, config: &PreprocessConfig, tag: ViewTag) -> Result<ImageView> {
    let crop = config.crop;
    if base.width != config.resize_to || base.height != config.resize_to {
        return Err(Error::invalid(format!(
            "base image is {}x{}, expected {}x{}",
            base.width, base.height, config.resize_to, config.resize_to
        )));
    }
    let (y0, x0) = region_offset(tag.region, config.resize_to, crop);
    if y0 + crop > base.height || x0 + crop > base.width {
        return Err(Error::invalid(format!("crop offset ({y0}, {x0}) out of bounds")));
    }
    let mut data = Vec::with_capacity(3 * crop * crop);
    for c in 0..3 {
        let src = match config.channel_order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        };
        let plane = base.plane(src);
        let (mean, k) = (config.mean[src], config.scale);
        for y in y0..y0 + crop {
            let row = &plane[y * base.width + x0..y * base.width + x0 + crop];
            if tag.flipped {
                data.extend(row.iter().rev().map(|&v| (v - mean) * k));
            } else {
                data.extend(row.iter().map(|&v| (v - mean) * k));
            }
        }
    }
    Ok(ImageView {
        tensor: Tensor::new(vec![3, crop, crop], data)?,
        tag,
    })
}

/// Random crop offset and mirror flag for a training view.
pub fn random_tag<R: Rng + ?Sized>(config: &PreprocessConfig, rng: &mut R) -> ViewTag {
    let far = config.resize_to - config.crop;
    let y = rng.gen_range(0..=far);
    let x = rng.gen_range(0..=far);
    ViewTag {
        region: Region::Offset { y, x },
        flipped: rng.gen_bool(0.5),
    }
}

pub const CENTER: ViewTag = ViewTag {
    region: Region::Center,
    flipped: false,
};

/// Test mode: the unflipped centre crop. Train mode: a random crop, mirrored with probability one half.
pub fn preprocess<R: Rng + ?Sized>(image: &Image, config: &PreprocessConfig, mode: Mode, rng: &mut R) -> Result<ImageView> {
    config.validate()?;
    let base = base_image(image, config);
    let tag = match mode {
        Mode::Test => CENTER,
        Mode::Train => random_tag(config, rng),
    };
    view_of(&base, config, tag)
}

/// The fixed order used for test-time oversampling: four corners and the centre, then their mirrors.
pub const TEN_CROP_ORDER: [ViewTag; 10] = {
    const R: [Region; 5] = [
        Region::TopLeft,
        Region::TopRight,
        Region::BottomLeft,
        Region::BottomRight,
        Region::Center,
    ];
    [
        ViewTag { region: R[0], flipped: false },
        ViewTag { region: R[1], flipped: false },
        ViewTag { region: R[2], flipped: false },
        ViewTag { region: R[3], flipped: false },
        ViewTag { region: R[4], flipped: false },
        ViewTag { region: R[0], flipped: true },
        ViewTag { region: R[1], flipped: true },
        ViewTag { region: R[2], flipped: true },
        ViewTag { region: R[3], flipped: true },
        ViewTag { region: R[4], flipped: true },
    ]
};

pub fn ten_crop_base(base: &Image, config: &PreprocessConfig) -> Result<Vec<ImageView>> {
    if config.crop >= config.resize_to {
        return Err(Error::Config(format!(
            "ten-crop needs crop ({}) smaller than resize_to ({})",
            config.crop, config.resize_to
        )));
    }
    TEN_CROP_ORDER.iter().map(|&t| view_of(base, config, t)).collect()
}

pub fn ten_crop(image: &Image, config: &PreprocessConfig) -> Result<Vec<ImageView>> {
    config.validate()?;
    ten_crop_base(&base_image(image, config), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(resize_to: usize, crop: usize) -> PreprocessConfig {
        PreprocessConfig {
            resize_to,
            crop,
            ..Default::default()
        }
    }

    fn indexed(side: usize) -> Image {
        // encodes (row, col) in the value so crops can be located
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    data.push((c * 100_000 + y * 1000 + x) as f32);
                }
            }
        }
        Image::new(side, side, data).unwrap()
    }

    #[test]
    fn mean_gray_gives_zeros() {
        let c = PreprocessConfig {
            mean: [104.0, 117.0, 123.0],
            ..cfg(16, 12)
        };
        let img = Image::filled(20, 16, [104.0, 117.0, 123.0]);
        let v = preprocess(&img, &c, Mode::Test, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(v.tensor.data().iter().all(|&x| x.abs() < 1e-4));
        assert_eq!(v.tensor.shape(), &[3, 12, 12]);
    }

    #[test]
    fn corner_offsets() {
        let c = cfg(256, 227);
        let views = ten_crop(&indexed(256), &c).unwrap();
        assert_eq!(views.len(), 10);
        let first = |v: &ImageView| v.tensor.data()[0] as usize;
        let last = |v: &ImageView| v.tensor.data()[227 * 227 - 1] as usize;
        assert_eq!((first(&views[0]), last(&views[0])), (0, 226 * 1000 + 226));
        assert_eq!((first(&views[3]), last(&views[3])), (29 * 1000 + 29, 255 * 1000 + 255));
        assert_eq!(first(&views[1]), 29);
        assert_eq!(first(&views[2]), 29 * 1000);
    }

    #[test]
    fn ten_crop_needs_margin() {
        assert!(ten_crop(&indexed(8), &cfg(8, 8)).is_err());
    }

    #[test]
    fn bgr_swaps_planes() {
        let img = Image::filled(4, 4, [1.0, 2.0, 3.0]);
        let c = PreprocessConfig {
            channel_order: ChannelOrder::Bgr,
            ..cfg(4, 4)
        };
        let v = preprocess(&img, &c, Mode::Test, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(v.tensor.at(&[0, 0, 0]), 3.0);
        assert_eq!(v.tensor.at(&[2, 0, 0]), 1.0);
    }

    #[test]
    fn train_views_follow_rng() {
        let c = cfg(20, 16);
        let img = indexed(20);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| preprocess(&img, &c, Mode::Train, &mut rng).unwrap().tag)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        // trace oracle: the tag is drawn as y, x, flip in that order
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = rng.gen_range(0..=4usize);
        let x = rng.gen_range(0..=4usize);
        let flipped = rng.gen_bool(0.5);
        assert_eq!(
            run(3)[0],
            ViewTag {
                region: Region::Offset { y, x },
                flipped
            }
        );
    }
}
