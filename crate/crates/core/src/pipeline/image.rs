use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    Bytes(Arc<Vec<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub id: String,
    pub source: ImageSource,
    pub width: u32,
    pub height: u32,
}

fn image_err(id: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Image {
        id: id.to_string(),
        message: e.to_string(),
    }
}

impl ImageRef {
    /// Reads only the header to learn the dimensions.
    pub fn from_path(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let id = id.into();
        let path = path.as_ref();
        let (width, height) = ImageReader::open(path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| image_err(&id, format!("{}: {e}", path.display())))?
            .into_dimensions()
            .map_err(|e| image_err(&id, format!("{}: {e}", path.display())))?;
        Ok(Self {
            id,
            source: ImageSource::Path(path.to_path_buf()),
            width,
            height,
        })
    }

    pub fn from_bytes(id: impl Into<String>, bytes: Vec<u8>) -> Result<Self> {
        let id = id.into();
        let (width, height) = ImageReader::new(Cursor::new(&bytes))
            .with_guessed_format()
            .map_err(|e| image_err(&id, e))?
            .into_dimensions()
            .map_err(|e| image_err(&id, e))?;
        Ok(Self {
            id,
            source: ImageSource::Bytes(Arc::new(bytes)),
            width,
            height,
        })
    }

    pub fn from_image(id: impl Into<String>, img: &DynamicImage) -> Result<Self> {
        let id = id.into();
        let bytes = encode_png(img).map_err(|e| image_err(&id, e))?;
        Self::from_bytes(id, bytes)
    }

    pub fn decode(&self) -> Result<DynamicImage> {
        let img = match &self.source {
            ImageSource::Path(p) => {
                image::open(p).map_err(|e| image_err(&self.id, format!("{}: {e}", p.display())))?
            }
            ImageSource::Bytes(b) => {
                image::load_from_memory(b).map_err(|e| image_err(&self.id, e))?
            }
        };
        Ok(img)
    }

    pub fn rect(&self) -> Rect {
        Rect {
            x: 0,
            y: 0,
            width: self.width,
            height: self.height,
        }
    }
}

pub(crate) fn encode_png(img: &DynamicImage) -> std::result::Result<Vec<u8>, image::ImageError> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
    Ok(buf)
}

/// Pixel rectangle in root-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.width <= self.x + self.width
            && other.y + other.height <= self.y + self.height
    }

    /// Quadrants in `Position::ALL` order. Left and top take the floor half.
    pub fn quadrants(&self) -> Option<[Rect; 4]> {
        if self.width < 2 || self.height < 2 {
            return None;
        }
        let lw = self.width / 2;
        let th = self.height / 2;
        let (rw, bh) = (self.width - lw, self.height - th);
        let r = |x, y, width, height| Rect {
            x,
            y,
            width,
            height,
        };
        Some([
            r(self.x, self.y, lw, th),
            r(self.x + lw, self.y, rw, th),
            r(self.x, self.y + th, lw, bh),
            r(self.x + lw, self.y + th, rw, bh),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Position {
    pub const ALL: [Position; 4] = [
        Position::TopLeft,
        Position::TopRight,
        Position::BottomLeft,
        Position::BottomRight,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Position::TopLeft => "tl",
            Position::TopRight => "tr",
            Position::BottomLeft => "bl",
            Position::BottomRight => "br",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Position::TopLeft => "Top-left",
            Position::TopRight => "Top-right",
            Position::BottomLeft => "Bottom-left",
            Position::BottomRight => "Bottom-right",
        }
    }

    pub fn slot(self) -> &'static str {
        match self {
            Position::TopLeft => "top_left",
            Position::TopRight => "top_right",
            Position::BottomLeft => "bottom_left",
            Position::BottomRight => "bottom_right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    /// `"<image id>/tl/br"` style path from the root.
    pub id: String,
    pub parent: String,
    pub rect: Rect,
    pub position: Position,
    pub depth: u32,
}

/// Splits a region into four tiling quadrants.
pub fn split_rect(parent_id: &str, rect: Rect, depth: u32) -> Result<[Patch; 4]> {
    let quads = rect.quadrants().ok_or(PipelineError::TooSmall {
        id: parent_id.to_string(),
        width: rect.width,
        height: rect.height,
    })?;
    Ok(std::array::from_fn(|i| {
        let position = Position::ALL[i];
        Patch {
            id: format!("{parent_id}/{}", position.short()),
            parent: parent_id.to_string(),
            rect: quads[i],
            position,
            depth: depth + 1,
        }
    }))
}

pub fn split_image(img: &ImageRef) -> Result<[Patch; 4]> {
    split_rect(&img.id, img.rect(), 0)
}

pub fn split_patch(patch: &Patch) -> Result<[Patch; 4]> {
    split_rect(&patch.id, patch.rect, patch.depth)
}

/// Lossless PNG crop of `rect` from an already decoded root image.
pub fn crop_png(img: &DynamicImage, rect: Rect, id: &str) -> Result<Vec<u8>> {
    if rect.x + rect.width > img.width() || rect.y + rect.height > img.height() {
        return Err(image_err(id, "crop rectangle exceeds image bounds"));
    }
    encode_png(&img.crop_imm(rect.x, rect.y, rect.width, rect.height)).map_err(|e| image_err(id, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn leaves(rect: Rect, depth: u32) -> Vec<Rect> {
        if depth == 0 {
            return vec![rect];
        }
        rect.quadrants()
            .unwrap()
            .iter()
            .flat_map(|q| leaves(*q, depth - 1))
            .collect()
    }

    #[test]
    fn even_split() {
        let r = Rect {
            x: 0,
            y: 0,
            width: 100,
            height: 60,
        };
        let q = r.quadrants().unwrap();
        let origins: Vec<_> = q.iter().map(|p| (p.x, p.y, p.width, p.height)).collect();
        assert_eq!(
            origins,
            vec![
                (0, 0, 50, 30),
                (50, 0, 50, 30),
                (0, 30, 50, 30),
                (50, 30, 50, 30)
            ]
        );
    }

    #[test]
    fn odd_split() {
        let r = Rect {
            x: 0,
            y: 0,
            width: 101,
            height: 61,
        };
        let q = r.quadrants().unwrap();
        assert_eq!((q[0].width, q[0].height), (50, 30));
        assert_eq!((q[3].x, q[3].y, q[3].width, q[3].height), (50, 30, 51, 31));
    }

    #[test]
    fn too_small() {
        let img = ImageRef {
            id: "x".into(),
            source: ImageSource::Bytes(Arc::new(vec![])),
            width: 1,
            height: 5,
        };
        assert!(matches!(
            split_image(&img),
            Err(PipelineError::TooSmall { .. })
        ));
    }

    #[test]
    fn crop_is_lossless() {
        let mut img = RgbImage::new(4, 4);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([x as u8 * 10, y as u8 * 10, 7]);
        }
        let dynimg = DynamicImage::ImageRgb8(img.clone());
        let root = ImageRef::from_image("r", &dynimg).unwrap();
        assert_eq!((root.width, root.height), (4, 4));
        let patches = split_image(&root).unwrap();
        let png = crop_png(&root.decode().unwrap(), patches[3].rect, "r").unwrap();
        let back = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (2, 2));
        assert_eq!(back.get_pixel(0, 0), img.get_pixel(2, 2));
        assert_eq!(patches[3].id, "r/br");
    }

    proptest! {
        #[test]
        fn leaves_tile_exactly(w in 4u32..300, h in 4u32..300, depth in 1u32..3) {
            let root = Rect { x: 0, y: 0, width: w, height: h };
            let ls = leaves(root, depth);
            prop_assert_eq!(ls.len(), 4usize.pow(depth));
            prop_assert_eq!(ls.iter().map(Rect::area).sum::<u64>(), root.area());
            for l in &ls {
                prop_assert!(root.contains(l));
            }
            for (i, a) in ls.iter().enumerate() {
                for b in &ls[i + 1..] {
                    let disjoint = a.x + a.width <= b.x || b.x + b.width <= a.x
                        || a.y + a.height <= b.y || b.y + b.height <= a.y;
                    prop_assert!(disjoint);
                }
            }
        }
    }
}
